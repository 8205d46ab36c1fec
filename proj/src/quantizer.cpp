#include "vecformer/quantizer.hpp"

#include <cmath>

#include "vecformer/errors.hpp"
#include "vecformer/kernels.hpp"

namespace vecformer {

Tensor codebook_init(std::int64_t size, std::int64_t width, Rng& rng) {
    if (size < 1) throw ConfigError("codebook size must be >= 1");
    if (width < 1) throw ConfigError("codebook width must be >= 1");
    Tensor codes({size, width});
    const double s = 1.0 / std::sqrt(static_cast<double>(width));
    for (std::int64_t i = 0; i < codes.numel(); ++i) codes[i] = rng.gaussian() * s;
    return codes;
}

Tensor fusion_init(std::int64_t width, Rng& rng) { return glorot_uniform(2 * width, 2, rng); }

static void check_widths(const Tensor& h, const Tensor& codes, const char* op) {
    if (h.ndim() != 2 || codes.ndim() != 2 || h.cols() != codes.cols())
        throw ContractError(std::string(op) + ": width mismatch, inputs " + h.shape_str() +
                            " vs codebook " + codes.shape_str());
}

SoftVQOut softvq(Tape& tape, Var h, Var codebook, double temperature) {
    check_widths(tape.value(h), tape.value(codebook), "softvq");
    if (!(temperature > 0.0))
        throw ContractError("softvq: temperature must be positive, got " + std::to_string(temperature));
    Var logits = tape.matmul(h, codebook, false, true);  // h_i . e_j
    Var weights = tape.row_softmax(logits, temperature);
    Var tokens = tape.matmul(weights, codebook);
    return {tokens, weights};
}

VanillaVQOut vanilla_vq(Tape& tape, Var h, Var codebook) {
    const Tensor& vh = tape.value(h);
    const Tensor& codes = tape.value(codebook);
    check_widths(vh, codes, "vanilla_vq");
    const std::int64_t n = vh.rows(), size = codes.rows(), d = vh.cols();

    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    Tensor selected({n, d});
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t best = 0;
        double best_d = kernels::sqdist(vh.data() + i * d, codes.data(), static_cast<std::size_t>(d));
        for (std::int64_t j = 1; j < size; ++j) {
            const double dj = kernels::sqdist(vh.data() + i * d, codes.data() + j * d, static_cast<std::size_t>(d));
            if (dj < best_d) {  // strict: ties keep the lowest index
                best_d = dj;
                best = j;
            }
        }
        idx[static_cast<std::size_t>(i)] = best;
        std::copy_n(codes.data() + best * d, d, selected.data() + i * d);
    }
    Var tokens = tape.st_copy(h, std::move(selected));
    return {tokens, std::move(idx)};
}

Var vq_loss(Tape& tape, Var x, Var decoded, Var encoded, Var code, double eta) {
    if (eta < 0.0) throw ConfigError("vq_loss: eta must be >= 0");
    Var rec = tape.sqnorm(tape.sub(x, decoded));
    Var codebook_term = tape.sqnorm(tape.sub(tape.stopgrad(encoded), code));
    Var commit = tape.sqnorm(tape.sub(tape.stopgrad(code), encoded));
    return tape.add(tape.add(rec, codebook_term), tape.scale(commit, eta));
}

FusionOut token_fusion(Tape& tape, Var a, Var b, Var fusion_w, bool normalize) {
    const Tensor& va = tape.value(a);
    const Tensor& vw = tape.value(fusion_w);
    if (vw.ndim() != 2 || vw.rows() != 2 * va.cols() || vw.cols() != 2)
        throw ContractError("token_fusion: weights " + vw.shape_str() + " incompatible with tokens " +
                            va.shape_str());
    Var alphas = tape.matmul(tape.hconcat({a, b}), fusion_w);  // [n x 2]
    if (normalize) alphas = tape.row_softmax(alphas, 1.0);
    Var fused = tape.add(tape.col_broadcast_mul(a, tape.col_slice(alphas, 0, 1)),
                         tape.col_broadcast_mul(b, tape.col_slice(alphas, 1, 2)));
    return {fused, alphas};
}

TokenBundle quantize_node(Tape& tape, Var h, Var feature_codebook, Var structure_codebook,
                          double temperature, Var fusion_w, bool normalize_fusion) {
    SoftVQOut f = softvq(tape, h, feature_codebook, temperature);
    SoftVQOut s = softvq(tape, h, structure_codebook, temperature);
    FusionOut fu = token_fusion(tape, f.tokens, s.tokens, fusion_w, normalize_fusion);
    return {f.tokens, s.tokens, fu.fused, f.weights, s.weights, fu.alphas};
}

}  // namespace vecformer
