#include "vecformer/reconstruction.hpp"

#include "vecformer/errors.hpp"

namespace vecformer {

void ReconConfig::validate() const {
    if (gamma_f < 1.0 || gamma_g < 1.0) throw ConfigError("recon: scaling exponents must be >= 1");
    if (neg_ratio < 1) throw ConfigError("recon: neg_ratio must be >= 1");
    if (dense_cap < 1) throw ConfigError("recon: dense_cap must be >= 1");
    if (d_y < 0) throw ConfigError("recon: d_y must be >= 0");
    if (w_feat < 0 || w_struct < 0 || w_graph < 0) throw ConfigError("recon: term weights must be >= 0");
}

ParamStore decoder_init(std::int64_t hidden, std::int64_t feat_dim, std::int64_t d_y, Rng& rng) {
    if (d_y == 0) d_y = hidden;
    ParamStore ps;
    ps.insert("decoder.feature.W", glorot_uniform(hidden, feat_dim, rng));
    ps.insert("decoder.feature.b", Tensor({1, feat_dim}));
    ps.insert("decoder.structure.W", glorot_uniform(hidden, d_y, rng));
    ps.insert("decoder.structure.b", Tensor({1, d_y}));
    ps.insert("decoder.graph.W", glorot_uniform(hidden, hidden, rng));
    ps.insert("decoder.graph.b", Tensor({1, hidden}));
    return ps;
}

Var structure_recon_loss(Tape& tape, const SparseAdjacency& adj, Var y_hat, StructureMode mode,
                         std::int64_t neg_ratio, std::int64_t dense_cap, Rng& sample_rng) {
    const std::int64_t n = adj.n();
    if (mode == StructureMode::dense_exact) {
        if (n > dense_cap)
            throw ConfigError("structure_recon_loss: dense_exact needs n <= dense_cap (" +
                              std::to_string(n) + " > " + std::to_string(dense_cap) + ")");
        return tape.structure_recon_dense(adj.csr(), y_hat);
    }
    const std::int64_t n_samples = std::max<std::int64_t>(neg_ratio * std::max<std::int64_t>(adj.num_edges(), 1), n);
    return tape.structure_recon_sampled(adj.csr(), y_hat, n_samples, sample_rng);
}

static Var affine(Tape& tape, Var x, const BoundParams& p, const std::string& base) {
    return tape.add_rowvec(tape.matmul(x, p[base + ".W"]), p[base + ".b"]);
}

Stage1Loss stage1_loss(Tape& tape, const SparseAdjacency& adj, Var features, Var h,
                       const TokenBundle& bundle, const BoundParams& decoders, const ReconConfig& cfg,
                       Rng& sample_rng) {
    cfg.validate();
    Var x_hat = affine(tape, bundle.f, decoders, "decoder.feature");
    Var y_hat = affine(tape, bundle.s, decoders, "decoder.structure");
    Var h_hat = affine(tape, bundle.g, decoders, "decoder.graph");

    Stage1Loss out;
    out.feature_term = tape.scaled_cosine_error(features, x_hat, cfg.gamma_f);
    out.structure_term =
        structure_recon_loss(tape, adj, y_hat, cfg.structure_mode, cfg.neg_ratio, cfg.dense_cap, sample_rng);
    out.graph_term = tape.scaled_cosine_error(h, h_hat, cfg.gamma_g);

    Var total = tape.add(tape.add(tape.scale(out.feature_term, cfg.w_feat),
                                  tape.scale(out.structure_term, cfg.w_struct)),
                         tape.scale(out.graph_term, cfg.w_graph));
    out.total = total;
    return out;
}

}  // namespace vecformer
