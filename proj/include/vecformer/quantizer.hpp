#pragma once

// Codebooks and quantization: differentiable SoftVQ (temperature-controlled
// attention over codes), the nearest-code baseline with straight-through
// gradients, and the token-fusion module combining feature/structure tokens.

#include <cstdint>
#include <vector>

#include "vecformer/params.hpp"
#include "vecformer/tape.hpp"

namespace vecformer {

// Codes drawn from a unit Gaussian scaled by 1/sqrt(width).
Tensor codebook_init(std::int64_t size, std::int64_t width, Rng& rng);

// Linear map R^{2 d'} -> R^2 producing the fusion coefficients; no bias.
Tensor fusion_init(std::int64_t width, Rng& rng);

struct SoftVQOut {
    Var tokens;   // [n x d'] = weights . codes
    Var weights;  // [n x size], rows strictly positive, sum 1
};

// weights[i,j] = softmax_j(h_i . e_j / T). Differentiable in h and codes.
SoftVQOut softvq(Tape& tape, Var h, Var codebook, double temperature);

struct VanillaVQOut {
    Var tokens;  // selected codes; gradient passes straight through to h
    std::vector<std::int64_t> indices;
};

// Nearest code by Euclidean distance, ties to the lowest index.
VanillaVQOut vanilla_vq(Tape& tape, Var h, Var codebook);

// ||x - decoded||^2 + ||sg(encoded) - code||^2 + eta ||sg(code) - encoded||^2
Var vq_loss(Tape& tape, Var x, Var decoded, Var encoded, Var code, double eta);

struct FusionOut {
    Var fused;   // per-row alpha1 * a + alpha2 * b
    Var alphas;  // [n x 2], raw unless normalize is set
};

FusionOut token_fusion(Tape& tape, Var a, Var b, Var fusion_w, bool normalize = false);

struct TokenBundle {
    Var f;                // feature tokens [n x d']
    Var s;                // structure tokens
    Var g;                // fused graph tokens
    Var feature_weights;  // [n x m]
    Var structure_weights;  // [n x n_codes]
    Var alphas;           // [n x 2]
};

TokenBundle quantize_node(Tape& tape, Var h, Var feature_codebook, Var structure_codebook,
                          double temperature, Var fusion_w, bool normalize_fusion = false);

}  // namespace vecformer
