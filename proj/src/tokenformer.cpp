#include "vecformer/tokenformer.hpp"

#include "vecformer/errors.hpp"

namespace vecformer {

ParamStore token_list_init(std::int64_t m, std::int64_t n, std::int64_t n_f, std::int64_t n_s, Rng& rng) {
    if (n_f < 1 || n_s < 1) throw ConfigError("token list extents must be >= 1");
    ParamStore ps;
    ps.insert("tokenlist.W_F", glorot_uniform(m, n_f, rng));
    ps.insert("tokenlist.W_S", glorot_uniform(n, n_s, rng));
    return ps;
}

ParamStore attention_param_init(std::int64_t hidden, std::int64_t num_classes, Rng& rng) {
    ParamStore ps;
    ps.insert("attn.W_Q", glorot_uniform(hidden, hidden, rng));
    ps.insert("attn.W_K", glorot_uniform(hidden, hidden, rng));
    ps.insert("attn.W_V", glorot_uniform(hidden, hidden, rng));
    ps.insert("classifier.W", glorot_uniform(hidden, num_classes, rng));
    ps.insert("classifier.b", Tensor({1, num_classes}));
    return ps;
}

GraphTokenList build_token_list(Tape& tape, Var feature_codebook, Var structure_codebook, Var w_f,
                                Var w_s, Var fusion_w, bool normalize_fusion) {
    const Tensor& fc = tape.value(feature_codebook);
    const Tensor& sc = tape.value(structure_codebook);
    const Tensor& pf = tape.value(w_f);
    const Tensor& psv = tape.value(w_s);
    if (pf.ndim() != 2 || pf.rows() != fc.rows())
        throw ContractError("build_token_list: W_F " + pf.shape_str() + " vs feature codebook " +
                            fc.shape_str());
    if (psv.ndim() != 2 || psv.rows() != sc.rows())
        throw ContractError("build_token_list: W_S " + psv.shape_str() + " vs structure codebook " +
                            sc.shape_str());
    if (fc.cols() != sc.cols())
        throw ContractError("build_token_list: codebook widths differ, " + fc.shape_str() + " vs " +
                            sc.shape_str());

    GraphTokenList out;
    out.f_t = tape.matmul(w_f, feature_codebook, true, false);  // (F_C^T W_F)^T = W_F^T F_C
    out.s_t = tape.matmul(w_s, structure_codebook, true, false);
    const std::int64_t n_f = tape.value(out.f_t).rows();
    const std::int64_t n_s = tape.value(out.s_t).rows();

    // Feature-major pairing: rows (i * n_s + j) pair f_t[i] with s_t[j].
    Var f_rep = tape.repeat_rows_each(out.f_t, n_s);
    Var s_rep = tape.tile_rows(out.s_t, n_f);
    out.g_t = token_fusion(tape, f_rep, s_rep, fusion_w, normalize_fusion).fused;
    return out;
}

namespace {

AttentionOut attention_block(Tape& tape, Var queries_src, Var kv_src, Var residual_src,
                             const BoundParams& params, std::int64_t heads) {
    const std::int64_t d = tape.value(queries_src).cols();
    if (heads < 1 || d % heads != 0)
        throw ContractError("attention: heads " + std::to_string(heads) + " must divide width " +
                            std::to_string(d));
    Var q = tape.matmul(queries_src, params["attn.W_Q"]);
    Var k = tape.matmul(kv_src, params["attn.W_K"]);
    Var v = tape.matmul(kv_src, params["attn.W_V"]);

    AttentionOut out;
    if (heads == 1) {
        Var z = tape.attention(q, k, v);
        out.head_weights.push_back(z);  // aux on the attention node
        out.z = tape.add(z, residual_src);
    } else {
        const std::int64_t hd = d / heads;
        std::vector<Var> zs;
        for (std::int64_t h = 0; h < heads; ++h) {
            Var zh = tape.attention(tape.col_slice(q, h * hd, (h + 1) * hd),
                                    tape.col_slice(k, h * hd, (h + 1) * hd),
                                    tape.col_slice(v, h * hd, (h + 1) * hd));
            out.head_weights.push_back(zh);
            zs.push_back(zh);
        }
        out.z = tape.add(tape.hconcat(zs), residual_src);
    }
    return out;
}

}  // namespace

AttentionOut cross_attention(Tape& tape, Var g, Var g_t, const BoundParams& params, std::int64_t heads) {
    if (tape.value(g).cols() != tape.value(g_t).cols())
        throw ContractError("cross_attention: width mismatch " + tape.value(g).shape_str() + " vs " +
                            tape.value(g_t).shape_str());
    return attention_block(tape, g, g_t, g, params, heads);
}

AttentionOut dense_node_attention(Tape& tape, Var h, const BoundParams& params, std::int64_t heads,
                                  std::int64_t dense_cap) {
    const std::int64_t n = tape.value(h).rows();
    if (n > dense_cap)
        throw ConfigError("dense_node_attention: n=" + std::to_string(n) + " exceeds dense_cap=" +
                          std::to_string(dense_cap));
    return attention_block(tape, h, h, h, params, heads);
}

Var classify(Tape& tape, Var z, const BoundParams& params) {
    return tape.add_rowvec(tape.matmul(z, params["classifier.W"]), params["classifier.b"]);
}

}  // namespace vecformer
