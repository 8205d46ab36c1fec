#include "vecformer/encoder.hpp"

#include <algorithm>

#include "vecformer/errors.hpp"

namespace vecformer {

void EncoderConfig::validate() const {
    if (layers < 1) throw ConfigError("encoder: layers must be >= 1");
    if (hidden_dim < 1) throw ConfigError("encoder: hidden_dim must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("encoder: dropout must lie in [0,1)");
    if (kind == EncoderKind::gat) {
        if (heads < 1) throw ConfigError("encoder: heads must be >= 1");
        if (hidden_dim % heads != 0)
            throw ConfigError("encoder: hidden_dim " + std::to_string(hidden_dim) +
                              " not divisible by heads " + std::to_string(heads));
    }
}

GraphContext GraphContext::build(const SparseAdjacency& adj) {
    const SparseAdjacency with_loops = adj.self_loops() ? adj : adj.with_self_loops();
    GraphContext g;
    g.n = with_loops.n();
    g.norm_adj = with_loops.normalized_csr();
    g.norm_adj_t = g.norm_adj->transposed();

    // Edges grouped by destination for per-node attention softmax.
    std::vector<Edge> edges = with_loops.edges();
    std::sort(edges.begin(), edges.end(),
              [](const Edge& a, const Edge& b) { return a.second != b.second ? a.second < b.second : a.first < b.first; });
    g.edge_src.reserve(edges.size());
    g.edge_dst.reserve(edges.size());
    g.dst_offsets.assign(static_cast<std::size_t>(g.n) + 1, 0);
    for (const auto& [s, d] : edges) {
        g.edge_src.push_back(s);
        g.edge_dst.push_back(d);
        ++g.dst_offsets[static_cast<std::size_t>(d) + 1];
    }
    for (std::int64_t i = 0; i < g.n; ++i) g.dst_offsets[static_cast<std::size_t>(i) + 1] += g.dst_offsets[static_cast<std::size_t>(i)];
    return g;
}

namespace {

struct LayerDims {
    std::int64_t in = 0;
    std::int64_t out = 0;
    std::int64_t head_out = 0;  // per-head width (gat)
    bool is_final = false;
};

std::vector<LayerDims> layer_plan(const EncoderConfig& cfg, std::int64_t feat_dim) {
    std::vector<LayerDims> plan;
    for (std::int64_t l = 0; l < cfg.layers; ++l) {
        LayerDims d;
        d.in = l == 0 ? feat_dim : cfg.hidden_dim;
        d.out = cfg.hidden_dim;
        d.is_final = l == cfg.layers - 1;
        // concat heads on hidden layers, mean on the final layer
        d.head_out = cfg.kind == EncoderKind::gat && !d.is_final ? cfg.hidden_dim / cfg.heads : cfg.hidden_dim;
        plan.push_back(d);
    }
    return plan;
}

std::string lname(std::int64_t l, const std::string& suffix) {
    return "encoder.l" + std::to_string(l) + "." + suffix;
}

void expect_shape(const Tensor& t, std::vector<std::int64_t> shape, const std::string& name) {
    if (t.shape() != shape)
        throw ContractError("parameter '" + name + "' has shape " + t.shape_str() + ", expected " +
                            shape_to_string(shape));
}

}  // namespace

ParamStore encoder_param_init(const EncoderConfig& cfg, std::int64_t feat_dim, Rng& rng) {
    cfg.validate();
    ParamStore ps;
    const auto plan = layer_plan(cfg, feat_dim);
    for (std::int64_t l = 0; l < cfg.layers; ++l) {
        const LayerDims& dims = plan[static_cast<std::size_t>(l)];
        if (cfg.kind == EncoderKind::gat) {
            for (std::int64_t h = 0; h < cfg.heads; ++h) {
                const std::string base = lname(l, "h" + std::to_string(h) + ".");
                ps.insert(base + "W", glorot_uniform(dims.in, dims.head_out, rng));
                ps.insert(base + "a_src", glorot_uniform(dims.head_out, 1, rng));
                ps.insert(base + "a_dst", glorot_uniform(dims.head_out, 1, rng));
            }
        } else {
            ps.insert(lname(l, "W"), glorot_uniform(dims.in, dims.out, rng));
        }
        ps.insert(lname(l, "b"), Tensor({1, dims.out}));
        if (cfg.residual && dims.in != dims.out)
            ps.insert(lname(l, "res"), glorot_uniform(dims.in, dims.out, rng));
    }
    return ps;
}

EncodeResult encode(Tape& tape, Var features, const GraphContext& graph, const EncoderConfig& cfg,
                    const BoundParams& params, Mode mode, Rng& dropout_rng) {
    cfg.validate();
    const Tensor& x0 = tape.value(features);
    if (x0.rows() != graph.n)
        throw ContractError("encode: feature rows " + x0.shape_str() + " vs graph n=" + std::to_string(graph.n));

    EncodeResult result;
    Var x = features;
    const auto plan = layer_plan(cfg, x0.cols());

    for (std::int64_t l = 0; l < cfg.layers; ++l) {
        const LayerDims& dims = plan[static_cast<std::size_t>(l)];
        Var mp;  // message-passing output [n x out]

        if (cfg.kind == EncoderKind::gat) {
            std::vector<Var> head_outs;
            std::vector<Var> head_attn;
            for (std::int64_t h = 0; h < cfg.heads; ++h) {
                const std::string base = lname(l, "h" + std::to_string(h) + ".");
                Var w = params[base + "W"];
                expect_shape(tape.value(w), {dims.in, dims.head_out}, base + "W");
                expect_shape(tape.value(params[base + "a_src"]), {dims.head_out, 1}, base + "a_src");
                expect_shape(tape.value(params[base + "a_dst"]), {dims.head_out, 1}, base + "a_dst");

                Var wh = tape.matmul(x, w);                                   // [n x hd]
                Var score_src = tape.matmul(wh, params[base + "a_src"]);      // [n x 1]
                Var score_dst = tape.matmul(wh, params[base + "a_dst"]);
                Var logits = tape.leaky_relu(
                    tape.add(tape.gather_rows(score_dst, graph.edge_dst),
                             tape.gather_rows(score_src, graph.edge_src)),
                    cfg.negative_slope);                                      // [E x 1]
                Var alpha = tape.segment_softmax(logits, graph.dst_offsets);
                Var msg = tape.col_broadcast_mul(tape.gather_rows(wh, graph.edge_src), alpha);
                head_outs.push_back(tape.segment_sum(msg, graph.dst_offsets));
                head_attn.push_back(alpha);
            }
            if (dims.is_final) {
                mp = head_outs[0];
                for (std::size_t h = 1; h < head_outs.size(); ++h) mp = tape.add(mp, head_outs[h]);
                if (head_outs.size() > 1) mp = tape.scale(mp, 1.0 / static_cast<double>(head_outs.size()));
            } else {
                mp = head_outs.size() == 1 ? head_outs[0] : tape.hconcat(head_outs);
            }
            result.gat_attention.push_back(std::move(head_attn));
        } else {
            Var w = params[lname(l, "W")];
            expect_shape(tape.value(w), {dims.in, dims.out}, lname(l, "W"));
            mp = tape.spmm(graph.norm_adj, graph.norm_adj_t, tape.matmul(x, w));
        }

        expect_shape(tape.value(params[lname(l, "b")]), {1, dims.out}, lname(l, "b"));
        mp = tape.add_rowvec(mp, params[lname(l, "b")]);

        Var act = tape.elu(mp);
        if (mode == Mode::train && cfg.dropout > 0.0) act = tape.dropout(act, cfg.dropout, dropout_rng);

        if (cfg.residual) {
            if (dims.in == dims.out) {
                act = tape.add(act, x);
            } else {
                Var res = params[lname(l, "res")];
                expect_shape(tape.value(res), {dims.in, dims.out}, lname(l, "res"));
                act = tape.add(act, tape.matmul(x, res));
            }
        }
        x = act;
    }
    result.h = x;
    return result;
}

}  // namespace vecformer
