#include "vecformer/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "vecformer/errors.hpp"

namespace vecformer {

SparseAdjacency::SparseAdjacency(std::int64_t n, std::vector<Edge> edges, bool symmetric, bool self_loops)
    : n_(n), edges_(std::move(edges)), symmetric_(symmetric), self_loops_(self_loops) {
    if (n < 0) throw StructuralError("negative node count");
    std::sort(edges_.begin(), edges_.end());
    for (std::size_t i = 0; i < edges_.size(); ++i) {
        const auto& [s, d] = edges_[i];
        if (s < 0 || s >= n_ || d < 0 || d >= n_)
            throw StructuralError("edge (" + std::to_string(s) + "," + std::to_string(d) +
                                  ") out of range for n=" + std::to_string(n_));
        if (i > 0 && edges_[i] == edges_[i - 1])
            throw StructuralError("duplicate edge (" + std::to_string(s) + "," + std::to_string(d) + ")");
    }
    if (symmetric_) {
        for (const auto& [s, d] : edges_)
            if (!std::binary_search(edges_.begin(), edges_.end(), Edge{d, s}))
                throw StructuralError("symmetric flag set but (" + std::to_string(d) + "," +
                                      std::to_string(s) + ") is missing");
    }
    if (self_loops_) {
        for (std::int64_t i = 0; i < n_; ++i)
            if (!std::binary_search(edges_.begin(), edges_.end(), Edge{i, i}))
                throw StructuralError("self_loops flag set but (" + std::to_string(i) + "," +
                                      std::to_string(i) + ") is missing");
    }
}

SparseAdjacency SparseAdjacency::symmetrized(std::int64_t n, std::vector<Edge> edges) {
    std::set<Edge> closed;
    for (const auto& [s, d] : edges) {
        closed.insert({s, d});
        closed.insert({d, s});
    }
    return SparseAdjacency(n, std::vector<Edge>(closed.begin(), closed.end()), true, false);
}

bool SparseAdjacency::has_edge(std::int64_t i, std::int64_t j) const {
    return std::binary_search(edges_.begin(), edges_.end(), Edge{i, j});
}

SparseAdjacency SparseAdjacency::with_self_loops() const {
    std::set<Edge> e(edges_.begin(), edges_.end());
    for (std::int64_t i = 0; i < n_; ++i) e.insert({i, i});
    return SparseAdjacency(n_, std::vector<Edge>(e.begin(), e.end()), symmetric_, true);
}

SparseAdjacency add_self_loops(const SparseAdjacency& adj) { return adj.with_self_loops(); }

CsrPtr SparseAdjacency::csr() const {
    if (!csr_cache_) {
        std::vector<std::int64_t> r, c;
        r.reserve(edges_.size());
        c.reserve(edges_.size());
        for (const auto& [s, d] : edges_) {
            r.push_back(s);
            c.push_back(d);
        }
        csr_cache_ = Csr::from_triplets(n_, n_, std::move(r), std::move(c),
                                        std::vector<double>(edges_.size(), 1.0));
    }
    return csr_cache_;
}

CsrPtr SparseAdjacency::normalized_csr() const {
    std::vector<double> deg(static_cast<std::size_t>(n_), 0.0);
    for (const auto& [s, d] : edges_) {
        (void)d;
        deg[static_cast<std::size_t>(s)] += 1.0;
    }
    std::vector<std::int64_t> r, c;
    std::vector<double> v;
    r.reserve(edges_.size());
    for (const auto& [s, d] : edges_) {
        const double ds = deg[static_cast<std::size_t>(s)];
        const double dd = deg[static_cast<std::size_t>(d)];
        r.push_back(s);
        c.push_back(d);
        v.push_back(ds > 0 && dd > 0 ? 1.0 / std::sqrt(ds * dd) : 0.0);
    }
    return Csr::from_triplets(n_, n_, std::move(r), std::move(c), std::move(v));
}

void GraphDataset::validate() const {
    const std::int64_t nn = adjacency.n();
    if (features.ndim() != 2 || features.rows() != nn)
        throw StructuralError("feature rows " + features.shape_str() + " != node count " + std::to_string(nn));
    if (num_classes < 1) throw StructuralError("num_classes must be >= 1");
    if (multilabel()) {
        if (label_matrix.rows() != nn || label_matrix.cols() != num_classes)
            throw StructuralError("label matrix " + label_matrix.shape_str() + " inconsistent with n=" +
                                  std::to_string(nn) + ", c=" + std::to_string(num_classes));
    } else {
        if (static_cast<std::int64_t>(labels.size()) != nn)
            throw StructuralError("label count " + std::to_string(labels.size()) + " != node count " +
                                  std::to_string(nn));
        for (auto l : labels)
            if (l < 0 || l >= num_classes)
                throw StructuralError("label " + std::to_string(l) + " outside [0," +
                                      std::to_string(num_classes) + ")");
    }
    if (!environment_id.empty()) {
        if (static_cast<std::int64_t>(environment_id.size()) != nn)
            throw StructuralError("environment_id count != node count");
        for (auto e : environment_id)
            if (e < 0) throw StructuralError("negative environment id");
    }
    features.require_finite("dataset features");
}

void Split::validate(std::int64_t n) const {
    std::set<std::int64_t> seen;
    auto scan = [&](const std::vector<std::int64_t>& part, const char* name) {
        for (auto i : part) {
            if (i < 0 || i >= n)
                throw StructuralError(std::string(name) + " index " + std::to_string(i) + " out of range");
            if (!seen.insert(i).second)
                throw StructuralError("split parts overlap at node " + std::to_string(i));
        }
    };
    scan(train, "train");
    scan(val, "val");
    scan(test, "test");
    scan(ood_test, "ood_test");
}

Split make_split(std::int64_t n, const SplitRatios& ratios, Rng& rng) {
    if (ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0)
        throw ConfigError("split ratios must be positive");
    const double sum = ratios.train + ratios.val + ratios.test;
    if (sum > 1.0 + 1e-9) throw ConfigError("split ratios sum to " + std::to_string(sum) + " > 1");

    std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);

    const auto n_val = static_cast<std::int64_t>(ratios.val * static_cast<double>(n));
    const auto n_test = static_cast<std::int64_t>(ratios.test * static_cast<double>(n));
    std::int64_t n_train = static_cast<std::int64_t>(ratios.train * static_cast<double>(n));
    if (std::abs(sum - 1.0) < 1e-9) n_train = n - n_val - n_test;  // remainder to train

    Split s;
    auto it = perm.begin();
    s.train.assign(it, it + n_train);
    it += n_train;
    s.val.assign(it, it + n_val);
    it += n_val;
    s.test.assign(it, it + n_test);
    s.validate(n);
    return s;
}

Split make_env_split(const GraphDataset& ds, const SplitRatios& ratios, Rng& rng) {
    if (!ds.has_env()) throw ConfigError("dataset has no environment ids");
    std::vector<std::int64_t> id_nodes, ood_nodes;
    for (std::int64_t i = 0; i < ds.n(); ++i)
        (ds.environment_id[static_cast<std::size_t>(i)] == 0 ? id_nodes : ood_nodes).push_back(i);
    if (id_nodes.empty()) throw ConfigError("environment 0 (ID) is empty");

    Split inner = make_split(static_cast<std::int64_t>(id_nodes.size()), ratios, rng);
    Split s;
    auto map = [&](const std::vector<std::int64_t>& part) {
        std::vector<std::int64_t> out;
        out.reserve(part.size());
        for (auto i : part) out.push_back(id_nodes[static_cast<std::size_t>(i)]);
        return out;
    };
    s.train = map(inner.train);
    s.val = map(inner.val);
    s.test = map(inner.test);
    s.ood_test = std::move(ood_nodes);
    s.validate(ds.n());
    return s;
}

}  // namespace vecformer
