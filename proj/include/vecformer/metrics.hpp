#pragma once

// Evaluation metrics: accuracy (argmax, ties to the lowest index), exact
// Mann-Whitney ROC AUC, the differential-expression score with top-k
// truncation, and attention-weight diagnostics.

#include <cstdint>
#include <string>
#include <vector>

#include "vecformer/tensor.hpp"

namespace vecformer {

struct MetricReport {
    std::string name;   // accuracy | roc_auc | des
    double value = 0;   // in [0,1]
    std::string split;  // train | val | test | ood_test
    std::int64_t n_evaluated = 0;
};

MetricReport accuracy(const Tensor& logits, const std::vector<std::int64_t>& labels,
                      const std::vector<std::int64_t>& mask, const std::string& split = "test");

// P(score+ > score-) + 0.5 P(tie), computed by rank statistics; exact.
MetricReport roc_auc(const std::vector<double>& scores, const std::vector<std::int64_t>& binary_labels,
                     const std::vector<std::int64_t>& mask, const std::string& split = "test");

// DES = |P intersect true| / |true|. If |P| > |true|, P is replaced by the
// top-|true| indices by predicted probability (ties to the lower index).
MetricReport des_score(const std::vector<double>& predicted_probs,
                       const std::vector<std::int64_t>& predicted_set,
                       const std::vector<std::int64_t>& true_de_set);
// Threshold form: predicted set = { i : prob[i] > threshold }, default 0.5.
MetricReport des_score(const std::vector<double>& predicted_probs,
                       const std::vector<std::int64_t>& true_de_set, double threshold = 0.5);

struct AttnDiagnostics {
    std::vector<double> per_node_std;  // population std of each weight row
    double mean_std = 0;
    double min_qk = 0;            // min pre-softmax Q.K^T entry
    double mean_kl_uniform = 0;   // mean KL(row || uniform)
};

// weights must be row-stochastic within 1e-6 (contract error otherwise).
// q and k may be empty, in which case min_qk is NaN.
AttnDiagnostics attn_diagnostics(const Tensor& weights, const Tensor& q, const Tensor& k);

}  // namespace vecformer
