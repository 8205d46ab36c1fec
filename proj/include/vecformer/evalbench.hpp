#pragma once

// Diagnostics and benchmarks: attention-weight statistics on OOD fixtures,
// the constrained q.k positivity check, wall-time/memory scaling of the two
// attention mechanisms, and the token-count ablation harness.

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "vecformer/metrics.hpp"
#include "vecformer/trainer.hpp"

namespace vecformer {

// ---- model diagnostics ----

struct DiagnosticsReport {
    std::int64_t n = 0;
    std::int64_t m = 0;  // token-list size
    AttnDiagnostics attn;          // actual finetuned model, unconstrained
    double constrained_min_qk = 0; // orthogonal + nonnegative diagnostic mode
    std::string metric_name;
    double test_metric = 0;

    nlohmann::json to_json() const;
};

// Runs an eval forward with the checkpoint parameters, dumps statistics, and
// (optionally) the raw attention matrix. Requires a stage-2 checkpoint.
DiagnosticsReport diagnose(const GraphDataset& ds, const Split& split, const Checkpoint& ckpt,
                           const TrainConfig& cfg);

// Post-softmax weights of the finetuned cross-attention (heads concatenated
// row-wise blockwise is avoided: heads are averaged into one [n x m] matrix).
Tensor attention_weight_matrix(const GraphDataset& ds, const Checkpoint& ckpt, const TrainConfig& cfg);

// Diagnostic-mode bound check: jointly row-orthogonalized codebooks and
// absolute-value-constrained projection/fusion coefficients; queries are the
// fused node tokens, keys the fused token list (identity Q/K projections).
// Requires m + n <= hidden. Returns the min pre-softmax q.k entry.
double qk_positivity_min(const GraphDataset& ds, const TrainConfig& cfg, std::uint64_t seed);

// ---- OOD directional comparison ----

struct OodComparison {
    double vec_ood_metric = 0;
    double base_ood_metric = 0;
    double vec_mean_std_ood = 0;   // mean per-node attention std on OOD rows
    double base_mean_std_ood = 0;
    std::string metric_name;
};

// Trains VecFormer (two stages) and the dense-node baseline on the same
// environment split and compares OOD metrics and attention spread.
OodComparison compare_ood(const GraphDataset& ds, const TrainConfig& cfg);

// ---- scaling benchmark ----

struct ScalingRecord {
    std::int64_t n = 0;
    std::string mechanism;  // dense_node | graph_token
    std::int64_t m = 0;     // token-list size (fixed across the sweep)
    double seconds_per_epoch = 0;
    std::int64_t peak_rss_bytes = 0;
};

// For each n: generates a degree-controlled SBM, then times `epochs`
// training epochs per mechanism, `trials` times; reports the median trial.
std::vector<ScalingRecord> bench_scaling(const std::vector<std::int64_t>& n_values,
                                         const std::vector<std::string>& mechanisms,
                                         const TrainConfig& cfg, std::int64_t epochs,
                                         std::int64_t trials, std::uint64_t seed);

// Least-squares slope of log(seconds) against log(n) for one mechanism.
double loglog_slope(const std::vector<ScalingRecord>& records, const std::string& mechanism);

// ---- token-count ablation ----

struct AblationRecord {
    std::int64_t list_size = 0;
    std::int64_t n_f = 0, n_s = 0;
    std::uint64_t seed = 0;
    double val_metric = 0;
    double test_metric = 0;
};

// Square factorization: every size must be a perfect square (config error
// otherwise). Trains both stages per (size, seed).
std::vector<AblationRecord> ablate_tokens(const GraphDataset& ds, const Split& split,
                                          const std::vector<std::int64_t>& list_sizes,
                                          const TrainConfig& base, const std::vector<std::uint64_t>& seeds);

// ---- artifact files ----

void write_scaling_csv(const std::vector<ScalingRecord>& records, const std::filesystem::path& path);
void write_ablation_csv(const std::vector<AblationRecord>& records, const std::filesystem::path& path);
void write_attn_csv(const Tensor& weights, const std::filesystem::path& path);
void write_metrics_csv(const std::vector<MetricReport>& reports, const std::filesystem::path& path);

// Current resident set size in bytes (0 where unsupported).
std::int64_t current_rss_bytes();

}  // namespace vecformer
