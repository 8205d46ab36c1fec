#include "vecformer/generators.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "vecformer/errors.hpp"

namespace vecformer {

GraphDataset gen_sbm(const std::vector<std::int64_t>& block_sizes, double p_in, double p_out,
                     std::int64_t feat_dim, double feat_signal, Rng& rng) {
    if (block_sizes.empty()) throw ConfigError("gen_sbm: no blocks");
    for (auto b : block_sizes)
        if (b <= 0) throw ConfigError("gen_sbm: block sizes must be positive");
    if (p_in < 0 || p_in > 1 || p_out < 0 || p_out > 1)
        throw ConfigError("gen_sbm: probabilities must lie in [0,1]");
    if (feat_dim < 1) throw ConfigError("gen_sbm: feat_dim must be >= 1");

    const std::int64_t n = std::accumulate(block_sizes.begin(), block_sizes.end(), std::int64_t{0});
    std::vector<std::int64_t> label(static_cast<std::size_t>(n));
    {
        std::int64_t node = 0;
        for (std::size_t b = 0; b < block_sizes.size(); ++b)
            for (std::int64_t i = 0; i < block_sizes[b]; ++i) label[static_cast<std::size_t>(node++)] = static_cast<std::int64_t>(b);
    }

    std::vector<Edge> edges;
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = i + 1; j < n; ++j) {
            const double p = label[static_cast<std::size_t>(i)] == label[static_cast<std::size_t>(j)] ? p_in : p_out;
            if (p >= 1.0 || (p > 0.0 && rng.uniform() < p)) edges.emplace_back(i, j);
        }

    Tensor x({n, feat_dim});
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t hot = label[static_cast<std::size_t>(i)] % feat_dim;
        for (std::int64_t j = 0; j < feat_dim; ++j)
            x.at(i, j) = (j == hot ? feat_signal : 0.0) + rng.gaussian();
    }

    GraphDataset ds{SparseAdjacency::symmetrized(n, std::move(edges)), std::move(x), std::move(label),
                    Tensor{}, static_cast<std::int64_t>(block_sizes.size()), {}};
    ds.validate();
    return ds;
}

GraphDataset gen_spurious_shift(const GraphDataset& base, std::int64_t spurious_dim, double id_corr,
                                double ood_corr, Rng& rng) {
    if (spurious_dim < 1) throw ConfigError("gen_spurious_shift: spurious_dim must be >= 1");
    if (base.multilabel()) throw ConfigError("gen_spurious_shift: multiclass labels required");
    const std::int64_t n = base.n();
    const std::int64_t c = base.num_classes;

    std::vector<std::int64_t> env(static_cast<std::size_t>(n), 0);
    {
        std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        for (std::int64_t i = n / 2; i < n; ++i) env[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = 1;
    }

    auto level = [c](std::int64_t lab) {
        return c > 1 ? 2.0 * static_cast<double>(lab) / static_cast<double>(c - 1) - 1.0 : 0.0;
    };

    const std::int64_t d0 = base.feat_dim();
    Tensor x({n, d0 + spurious_dim});
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < d0; ++j) x.at(i, j) = base.features.at(i, j);
        const double corr = env[static_cast<std::size_t>(i)] == 0 ? id_corr : ood_corr;
        for (std::int64_t j = 0; j < spurious_dim; ++j) {
            const std::int64_t encoded = rng.uniform() < corr
                                             ? base.labels[static_cast<std::size_t>(i)]
                                             : static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(c)));
            x.at(i, d0 + j) = level(encoded) + 0.1 * rng.gaussian();
        }
    }

    GraphDataset ds{base.adjacency, std::move(x), base.labels, Tensor{}, c, std::move(env)};
    ds.validate();
    return ds;
}

SparseAdjacency build_knn_correlation_graph(const Tensor& signals, std::int64_t k) {
    const std::int64_t n = signals.rows();
    const std::int64_t s = signals.cols();
    if (k >= n) throw ConfigError("knn graph: k=" + std::to_string(k) + " must be < N=" + std::to_string(n));
    if (k < 1) throw ConfigError("knn graph: k must be >= 1");
    if (s < 2) throw ContractError("knn graph: need at least 2 samples per row");

    // Center rows once; constant rows get zero variance and correlate 0.
    Tensor centered({n, s});
    std::vector<double> norm(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        double mean = 0.0;
        for (std::int64_t t = 0; t < s; ++t) mean += signals.at(i, t);
        mean /= static_cast<double>(s);
        double sq = 0.0;
        for (std::int64_t t = 0; t < s; ++t) {
            centered.at(i, t) = signals.at(i, t) - mean;
            sq += centered.at(i, t) * centered.at(i, t);
        }
        norm[static_cast<std::size_t>(i)] = std::sqrt(sq);
    }
    auto pearson = [&](std::int64_t i, std::int64_t j) {
        const double den = norm[static_cast<std::size_t>(i)] * norm[static_cast<std::size_t>(j)];
        if (den == 0.0) return 0.0;
        double ip = 0.0;
        for (std::int64_t t = 0; t < s; ++t) ip += centered.at(i, t) * centered.at(j, t);
        return ip / den;
    };

    std::vector<Edge> edges;
    std::vector<std::pair<double, std::int64_t>> ranked;
    for (std::int64_t i = 0; i < n; ++i) {
        ranked.clear();
        for (std::int64_t j = 0; j < n; ++j)
            if (j != i) ranked.emplace_back(-pearson(i, j), j);  // descending corr, ties to low index
        std::sort(ranked.begin(), ranked.end());
        for (std::int64_t t = 0; t < k; ++t) edges.emplace_back(i, ranked[static_cast<std::size_t>(t)].second);
    }
    return SparseAdjacency::symmetrized(n, std::move(edges));
}

std::vector<std::int64_t> gen_de_labels(const GraphDataset& dataset, std::int64_t perturb_target,
                                        std::int64_t radius, Rng& rng) {
    (void)rng;  // reserved for noisy labeling variants
    const std::int64_t n = dataset.n();
    if (perturb_target < 0 || perturb_target >= n)
        throw StructuralError("gen_de_labels: target " + std::to_string(perturb_target) +
                              " out of range for n=" + std::to_string(n));
    if (radius < 0) throw ConfigError("gen_de_labels: radius must be >= 0");

    const CsrPtr adj = dataset.adjacency.csr();
    std::vector<std::int64_t> dist(static_cast<std::size_t>(n), -1);
    std::deque<std::int64_t> q{perturb_target};
    dist[static_cast<std::size_t>(perturb_target)] = 0;
    while (!q.empty()) {
        const std::int64_t u = q.front();
        q.pop_front();
        if (dist[static_cast<std::size_t>(u)] >= radius) continue;
        for (std::int64_t e = adj->row_ptr[static_cast<std::size_t>(u)]; e < adj->row_ptr[static_cast<std::size_t>(u) + 1]; ++e) {
            const std::int64_t v = adj->col_idx[static_cast<std::size_t>(e)];
            if (dist[static_cast<std::size_t>(v)] < 0) {
                dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
                q.push_back(v);
            }
        }
    }
    std::vector<std::int64_t> out(static_cast<std::size_t>(n), 0);
    for (std::int64_t i = 0; i < n; ++i)
        if (dist[static_cast<std::size_t>(i)] >= 0 && dist[static_cast<std::size_t>(i)] <= radius) out[static_cast<std::size_t>(i)] = 1;
    return out;
}

}  // namespace vecformer
