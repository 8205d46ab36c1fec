#pragma once

// Message-passing encoders producing node embeddings H from (X, A+I):
// a GAT with residual connections and a GCN alternative. ELU nonlinearity
// on every layer; residuals use a learned linear shortcut when widths differ.

#include <cstdint>
#include <string>
#include <vector>

#include "vecformer/graph.hpp"
#include "vecformer/params.hpp"
#include "vecformer/tape.hpp"

namespace vecformer {

enum class EncoderKind { gat, gcn };
enum class Mode { train, eval };

struct EncoderConfig {
    EncoderKind kind = EncoderKind::gat;
    std::int64_t layers = 2;
    std::int64_t hidden_dim = 64;
    std::int64_t heads = 1;  // gat only
    double dropout = 0.0;
    bool residual = true;
    double negative_slope = 0.2;  // gat attention activation

    void validate() const;
};

// Preprocessed graph structure shared across epochs: self-loops added,
// GCN normalization and dst-grouped edge arrays precomputed.
struct GraphContext {
    std::int64_t n = 0;
    CsrPtr norm_adj;                        // D^-1/2 (A+I) D^-1/2
    CsrPtr norm_adj_t;
    std::vector<std::int64_t> edge_src;     // grouped by destination
    std::vector<std::int64_t> edge_dst;
    std::vector<std::int64_t> dst_offsets;  // size n+1

    static GraphContext build(const SparseAdjacency& adj);
};

struct EncodeResult {
    Var h;  // [n x hidden_dim]
    // Per layer, per head: post-softmax edge attention [E x 1], grouped by
    // destination (GAT only). Exposed for diagnostics and tests.
    std::vector<std::vector<Var>> gat_attention;
};

// Parameter names are "encoder.l<i>..." (see implementation). Glorot-uniform
// weights, zero biases; deterministic per seed.
ParamStore encoder_param_init(const EncoderConfig& cfg, std::int64_t feat_dim, Rng& rng);

EncodeResult encode(Tape& tape, Var features, const GraphContext& graph, const EncoderConfig& cfg,
                    const BoundParams& params, Mode mode, Rng& dropout_rng);

}  // namespace vecformer
