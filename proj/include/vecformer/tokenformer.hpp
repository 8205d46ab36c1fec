#pragma once

// Stage-2 machinery: projecting the trained codebooks into a context-aware
// graph token list (pairwise-fused, feature-major order), single-layer
// cross-attention with residual, the classifier head, and the dense
// node-level attention baseline.

#include <cstdint>
#include <vector>

#include "vecformer/params.hpp"
#include "vecformer/quantizer.hpp"
#include "vecformer/tape.hpp"

namespace vecformer {

// "tokenlist.W_F" [m x n_f], "tokenlist.W_S" [n x n_s].
ParamStore token_list_init(std::int64_t m, std::int64_t n, std::int64_t n_f, std::int64_t n_s, Rng& rng);

// "attn.W_Q/W_K/W_V" [d' x d'], "classifier.W" [d' x classes], "classifier.b".
ParamStore attention_param_init(std::int64_t hidden, std::int64_t num_classes, Rng& rng);

struct GraphTokenList {
    Var f_t;  // [n_f x d']
    Var s_t;  // [n_s x d']
    Var g_t;  // [n_f * n_s x d'], row (i * n_s + j) = fusion(f_t[i], s_t[j])
};

// F_T = (F_C^T W_F)^T, S_T = (S_C^T W_S)^T, then pairwise token fusion.
GraphTokenList build_token_list(Tape& tape, Var feature_codebook, Var structure_codebook, Var w_f,
                                Var w_s, Var fusion_w, bool normalize_fusion = false);

struct AttentionOut {
    Var z;  // [n x d'], residual included
    // One Var per head; the post-softmax weight matrix [n x m] is that
    // node's aux tensor, read via tape.aux(head_weights[h]).
    std::vector<Var> head_weights;
};

// Z = softmax(Q K^T / sqrt(d_head)) V + G. heads must divide d'.
AttentionOut cross_attention(Tape& tape, Var g, Var g_t, const BoundParams& params, std::int64_t heads = 1);

// The node-level baseline: self-attention of H over all N^2 pairs.
AttentionOut dense_node_attention(Tape& tape, Var h, const BoundParams& params, std::int64_t heads,
                                  std::int64_t dense_cap);

Var classify(Tape& tape, Var z, const BoundParams& params);

}  // namespace vecformer
