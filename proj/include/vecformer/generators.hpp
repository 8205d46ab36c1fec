#pragma once

// Synthetic data generators: SBM graphs, spurious-feature distribution
// shifts, correlation k-NN graphs, and BFS-radius differential-expression
// labels. All are pure functions of their arguments and rng seed.

#include <cstdint>
#include <vector>

#include "vecformer/graph.hpp"
#include "vecformer/rng.hpp"

namespace vecformer {

// Undirected stochastic block model. Labels are block indices; node features
// are a class mean (coordinate `label % feat_dim` set to feat_signal) plus
// unit Gaussian noise.
GraphDataset gen_sbm(const std::vector<std::int64_t>& block_sizes, double p_in, double p_out,
                     std::int64_t feat_dim, double feat_signal, Rng& rng);

// Appends `spurious_dim` feature columns and assigns each node to one of two
// environments (0 = ID, 1 = OOD; an even random half each). In environment 0
// a spurious column encodes the node's label with probability id_corr, in
// environment 1 with probability ood_corr; otherwise it encodes a uniformly
// random label. Column values are the encoded label mapped to [-1, 1] plus
// 0.1-sigma noise. Original features and labels are untouched.
GraphDataset gen_spurious_shift(const GraphDataset& base, std::int64_t spurious_dim, double id_corr,
                                double ood_corr, Rng& rng);

// Symmetric k-NN graph over rows of `signals` ranked by Pearson correlation
// (constant rows correlate 0 by convention; ties break toward lower index).
// Edge (i,j) present iff j is in i's top-k or i in j's top-k. No self edges.
SparseAdjacency build_knn_correlation_graph(const Tensor& signals, std::int64_t k);

// 1 for every node within graph distance <= radius of perturb_target, else 0.
std::vector<std::int64_t> gen_de_labels(const GraphDataset& dataset, std::int64_t perturb_target,
                                        std::int64_t radius, Rng& rng);

}  // namespace vecformer
