#include "vecformer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "vecformer/errors.hpp"
#include "vecformer/kernels.hpp"

namespace vecformer {

MetricReport accuracy(const Tensor& logits, const std::vector<std::int64_t>& labels,
                      const std::vector<std::int64_t>& mask, const std::string& split) {
    if (mask.empty()) throw ContractError("accuracy: empty mask");
    const std::int64_t c = logits.cols();
    std::int64_t correct = 0;
    for (const std::int64_t row : mask) {
        if (row < 0 || row >= logits.rows()) throw ContractError("accuracy: mask row out of range");
        std::int64_t best = 0;
        for (std::int64_t j = 1; j < c; ++j)
            if (logits.at(row, j) > logits.at(row, best)) best = j;
        if (best == labels[static_cast<std::size_t>(row)]) ++correct;
    }
    return {"accuracy", static_cast<double>(correct) / static_cast<double>(mask.size()), split,
            static_cast<std::int64_t>(mask.size())};
}

MetricReport roc_auc(const std::vector<double>& scores, const std::vector<std::int64_t>& binary_labels,
                     const std::vector<std::int64_t>& mask, const std::string& split) {
    if (mask.empty()) throw ContractError("roc_auc: empty mask");
    std::vector<std::pair<double, std::int64_t>> pts;  // (score, label)
    std::int64_t pos = 0, neg = 0;
    for (const std::int64_t row : mask) {
        const std::int64_t y = binary_labels[static_cast<std::size_t>(row)];
        if (y != 0 && y != 1) throw ContractError("roc_auc: labels must be 0/1");
        pts.emplace_back(scores[static_cast<std::size_t>(row)], y);
        (y == 1 ? pos : neg) += 1;
    }
    if (pos == 0 || neg == 0)
        throw ContractError("roc_auc: undefined metric, mask holds a single class");

    // Mann-Whitney U via average ranks; ties get the midrank, which yields
    // exactly the 0.5-per-tie convention.
    std::sort(pts.begin(), pts.end());
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < pts.size()) {
        std::size_t j = i;
        while (j < pts.size() && pts[j].first == pts[i].first) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));  // 1-based
        for (std::size_t k = i; k < j; ++k)
            if (pts[k].second == 1) rank_sum_pos += avg_rank;
        i = j;
    }
    const double u = rank_sum_pos - static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0;
    const double auc = u / (static_cast<double>(pos) * static_cast<double>(neg));
    return {"roc_auc", auc, split, static_cast<std::int64_t>(mask.size())};
}

MetricReport des_score(const std::vector<double>& predicted_probs,
                       const std::vector<std::int64_t>& predicted_set,
                       const std::vector<std::int64_t>& true_de_set) {
    if (true_de_set.empty()) throw ContractError("des_score: empty true set");
    std::vector<std::int64_t> pred = predicted_set;
    const std::size_t budget = true_de_set.size();
    if (pred.size() > budget) {
        // keep the top-|true| genes by predicted probability
        std::sort(pred.begin(), pred.end(), [&](std::int64_t a, std::int64_t b) {
            const double pa = predicted_probs[static_cast<std::size_t>(a)];
            const double pb = predicted_probs[static_cast<std::size_t>(b)];
            return pa != pb ? pa > pb : a < b;
        });
        pred.resize(budget);
    }
    const std::set<std::int64_t> truth(true_de_set.begin(), true_de_set.end());
    std::int64_t hit = 0;
    for (const auto g : pred)
        if (truth.count(g)) ++hit;
    return {"des", static_cast<double>(hit) / static_cast<double>(truth.size()), "test",
            static_cast<std::int64_t>(pred.size())};
}

MetricReport des_score(const std::vector<double>& predicted_probs,
                       const std::vector<std::int64_t>& true_de_set, double threshold) {
    std::vector<std::int64_t> pred;
    for (std::size_t i = 0; i < predicted_probs.size(); ++i)
        if (predicted_probs[i] > threshold) pred.push_back(static_cast<std::int64_t>(i));
    return des_score(predicted_probs, pred, true_de_set);
}

AttnDiagnostics attn_diagnostics(const Tensor& weights, const Tensor& q, const Tensor& k) {
    const std::int64_t n = weights.rows(), m = weights.cols();
    AttnDiagnostics d;
    d.per_node_std.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        double sum = 0, sumsq = 0, kl = 0;
        for (std::int64_t j = 0; j < m; ++j) {
            const double w = weights.at(i, j);
            if (w < -1e-9) throw ContractError("attn_diagnostics: negative weight");
            sum += w;
            sumsq += w * w;
            if (w > 0) kl += w * std::log(w * static_cast<double>(m));
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw ContractError("attn_diagnostics: row " + std::to_string(i) + " sums to " +
                                std::to_string(sum));
        const double mean = sum / static_cast<double>(m);
        const double var = std::max(0.0, sumsq / static_cast<double>(m) - mean * mean);
        d.per_node_std.push_back(std::sqrt(var));
        d.mean_std += d.per_node_std.back() / static_cast<double>(n);
        d.mean_kl_uniform += kl / static_cast<double>(n);
    }
    if (q.numel() > 0 && k.numel() > 0) {
        double mn = std::numeric_limits<double>::infinity();
        for (std::int64_t i = 0; i < q.rows(); ++i)
            for (std::int64_t j = 0; j < k.rows(); ++j)
                mn = std::min(mn, kernels::dot(q.data() + i * q.cols(), k.data() + j * k.cols(),
                                               static_cast<std::size_t>(q.cols())));
        d.min_qk = mn;
    } else {
        d.min_qk = std::numeric_limits<double>::quiet_NaN();
    }
    return d;
}

}  // namespace vecformer
