#pragma once

// Stage-1 self-supervised objective: feature reconstruction (scaled cosine
// error), structure reconstruction (sigmoid inner-product adjacency fit), and
// graph reconstruction (scaled cosine error on H), each behind a single
// affine decoder. The three terms are summed; per-term weights default to 1.

#include <cstdint>

#include "vecformer/graph.hpp"
#include "vecformer/params.hpp"
#include "vecformer/quantizer.hpp"
#include "vecformer/tape.hpp"

namespace vecformer {

enum class StructureMode { dense_exact, negative_sampling };

struct ReconConfig {
    double gamma_f = 2.0;  // scaling exponents, >= 1
    double gamma_g = 2.0;
    std::int64_t d_y = 0;  // structure-decoder width; 0 means d'
    StructureMode structure_mode = StructureMode::dense_exact;
    std::int64_t neg_ratio = 5;       // negative samples per positive pair
    std::int64_t dense_cap = 4096;    // dense_exact permitted up to this n
    double w_feat = 1.0, w_struct = 1.0, w_graph = 1.0;

    void validate() const;
};

// decoder.feature: d' -> d, decoder.structure: d' -> d_y, decoder.graph: d' -> d'.
ParamStore decoder_init(std::int64_t hidden, std::int64_t feat_dim, std::int64_t d_y, Rng& rng);

// Structure term alone; `adj` is the original adjacency (no self loops added).
Var structure_recon_loss(Tape& tape, const SparseAdjacency& adj, Var y_hat, StructureMode mode,
                         std::int64_t neg_ratio, std::int64_t dense_cap, Rng& sample_rng);

struct Stage1Loss {
    Var total;
    Var feature_term;
    Var structure_term;
    Var graph_term;
};

// features: constant [n x d] target; h: encoder output; bundle: quantized
// tokens derived from h under the current codebooks.
Stage1Loss stage1_loss(Tape& tape, const SparseAdjacency& adj, Var features, Var h,
                       const TokenBundle& bundle, const BoundParams& decoders, const ReconConfig& cfg,
                       Rng& sample_rng);

}  // namespace vecformer
