#pragma once

// Graph data model: sparse adjacency, dataset bundle, split protocol.

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "vecformer/rng.hpp"
#include "vecformer/sparse.hpp"
#include "vecformer/tensor.hpp"

namespace vecformer {

using Edge = std::pair<std::int64_t, std::int64_t>;

class SparseAdjacency {
  public:
    // Edges are validated (in range, no duplicates) and stored sorted. When
    // `symmetric` is set the edge set must already be closed under reversal;
    // use `symmetrized` to close an arbitrary set.
    SparseAdjacency(std::int64_t n, std::vector<Edge> edges, bool symmetric, bool self_loops);

    static SparseAdjacency symmetrized(std::int64_t n, std::vector<Edge> edges);

    std::int64_t n() const { return n_; }
    const std::vector<Edge>& edges() const { return edges_; }
    std::int64_t num_edges() const { return static_cast<std::int64_t>(edges_.size()); }
    bool symmetric() const { return symmetric_; }
    bool self_loops() const { return self_loops_; }
    bool has_edge(std::int64_t i, std::int64_t j) const;

    // (i,i) for all i; idempotent.
    SparseAdjacency with_self_loops() const;

    // Binary CSR (weight 1 per stored directed edge).
    CsrPtr csr() const;
    // Symmetric degree normalization D^-1/2 (A) D^-1/2 over the stored edges.
    CsrPtr normalized_csr() const;

  private:
    std::int64_t n_ = 0;
    std::vector<Edge> edges_;  // sorted (src, dst)
    bool symmetric_ = false;
    bool self_loops_ = false;
    mutable CsrPtr csr_cache_;
};

SparseAdjacency add_self_loops(const SparseAdjacency& adj);

struct GraphDataset {
    SparseAdjacency adjacency;
    Tensor features;                       // [n x d]
    std::vector<std::int64_t> labels;      // class per node (multiclass mode)
    Tensor label_matrix;                   // [n x c] 0/1 (multilabel mode); empty otherwise
    std::int64_t num_classes = 0;
    std::vector<std::int64_t> environment_id;  // empty, or one id >= 0 per node

    bool multilabel() const { return label_matrix.numel() > 0; }
    std::int64_t n() const { return adjacency.n(); }
    std::int64_t feat_dim() const { return features.cols(); }
    bool has_env() const { return !environment_id.empty(); }

    // Throws StructuralError on any broken invariant.
    void validate() const;
};

struct Split {
    std::vector<std::int64_t> train, val, test;
    std::vector<std::int64_t> ood_test;  // may be empty

    // Pairwise disjoint, all indices within [0, n).
    void validate(std::int64_t n) const;
};

struct SplitRatios {
    double train = 0.6, val = 0.2, test = 0.2;
};

// Sizes are floor(ratio * n); when the ratios sum to 1 the flooring remainder
// goes to train, otherwise the leftover nodes stay unassigned. Deterministic
// in the rng seed. Ratio sum > 1 is a config error.
Split make_split(std::int64_t n, const SplitRatios& ratios, Rng& rng);

// ID nodes (environment 0) are split by `ratios`; every other environment
// forms the ood_test set.
Split make_env_split(const GraphDataset& ds, const SplitRatios& ratios, Rng& rng);

}  // namespace vecformer
