#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vecformer/encoder.hpp"
#include "vecformer/errors.hpp"
#include "vecformer/generators.hpp"
#include "vecformer/gradcheck.hpp"
#include "vecformer/reconstruction.hpp"

using namespace vecformer;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::int64_t> shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Straight-line reference for the full objective: no tape, plain loops.
struct Stage1Oracle {
    double feature, structure, graph, total;
};

Stage1Oracle stage1_oracle(const SparseAdjacency& adj, const Tensor& x, const Tensor& h, const Tensor& f,
                           const Tensor& s, const Tensor& g, const ParamStore& dec, double gamma_f,
                           double gamma_g) {
    auto affine = [&](const Tensor& in, const std::string& base) {
        const Tensor& w = dec.at(base + ".W");
        const Tensor& b = dec.at(base + ".b");
        Tensor out({in.rows(), w.cols()});
        for (std::int64_t i = 0; i < in.rows(); ++i)
            for (std::int64_t j = 0; j < w.cols(); ++j) {
                double acc = b.at(0, j);
                for (std::int64_t k = 0; k < in.cols(); ++k) acc += in.at(i, k) * w.at(k, j);
                out.at(i, j) = acc;
            }
        return out;
    };
    auto sce = [](const Tensor& target, const Tensor& recon, double gamma) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < target.rows(); ++i) {
            double tt = 0, rr = 0, tr = 0;
            for (std::int64_t j = 0; j < target.cols(); ++j) {
                tt += target.at(i, j) * target.at(i, j);
                rr += recon.at(i, j) * recon.at(i, j);
                tr += target.at(i, j) * recon.at(i, j);
            }
            const double c = tr / (std::max(std::sqrt(tt), 1e-8) * std::max(std::sqrt(rr), 1e-8));
            acc += std::pow(1.0 - c, gamma);
        }
        return acc / static_cast<double>(target.rows());
    };
    Stage1Oracle o{};
    o.feature = sce(x, affine(f, "decoder.feature"), gamma_f);
    o.graph = sce(h, affine(g, "decoder.graph"), gamma_g);
    Tensor y = affine(s, "decoder.structure");
    o.structure = 0.0;
    for (std::int64_t i = 0; i < y.rows(); ++i)
        for (std::int64_t j = 0; j < y.rows(); ++j) {
            double ip = 0.0;
            for (std::int64_t k = 0; k < y.cols(); ++k) ip += y.at(i, k) * y.at(j, k);
            const double a = adj.has_edge(i, j) ? 1.0 : 0.0;
            const double e = a - sigmoid(ip);
            o.structure += e * e;
        }
    o.total = o.feature + o.structure + o.graph;
    return o;
}

}  // namespace

TEST_CASE("scaled_cosine_error: aligned 0, anti-aligned 2^gamma, row oracle") {
    Rng rng(1);
    Tape t;
    Tensor x = random_tensor(rng, {3, 4});
    Var xv = t.constant(x);
    CHECK(t.value(t.scaled_cosine_error(xv, t.constant(x), 2.0))[0] == doctest::Approx(0.0).epsilon(1e-12));

    Tensor neg(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) neg[i] = -x[i];
    CHECK(t.value(t.scaled_cosine_error(xv, t.constant(neg), 2.0))[0] ==
          doctest::Approx(4.0).epsilon(1e-12));

    Tensor r = random_tensor(rng, {3, 4});
    const double got = t.value(t.scaled_cosine_error(xv, t.constant(r), 2.0))[0];
    double expect = 0.0;
    for (std::int64_t i = 0; i < 3; ++i) {
        double tt = 0, rr2 = 0, tr = 0;
        for (std::int64_t j = 0; j < 4; ++j) {
            tt += x.at(i, j) * x.at(i, j);
            rr2 += r.at(i, j) * r.at(i, j);
            tr += x.at(i, j) * r.at(i, j);
        }
        const double c = tr / (std::sqrt(tt) * std::sqrt(rr2));
        expect += (1.0 - c) * (1.0 - c);
    }
    expect /= 3.0;
    CHECK(std::abs(got - expect) < 1e-12);
}

TEST_CASE("scaled_cosine_error: gamma below 1 is a domain error") {
    Tape t;
    Var x = t.constant(Tensor({1, 2}, {1, 0}));
    CHECK_THROWS_AS(t.scaled_cosine_error(x, x, 0.5), DomainError);
}

TEST_CASE("structure loss: zero decoder on an empty graph gives N^2/4") {
    const std::int64_t n = 7;
    SparseAdjacency empty(n, {}, true, false);
    Tape t;
    Rng rng(0);
    Var y = t.constant(Tensor({n, 3}));  // sigma(0) = 0.5 everywhere
    const double loss = t.value(structure_recon_loss(t, empty, y, StructureMode::dense_exact, 1, 4096, rng))[0];
    CHECK(loss == doctest::Approx(0.25 * static_cast<double>(n * n)).epsilon(1e-12));
}

TEST_CASE("structure loss: N=2 fixture matches the 4-entry hand evaluation") {
    SparseAdjacency adj(2, {{0, 1}, {1, 0}}, true, false);
    Tensor y({2, 2}, {0.3, -1.0, 0.7, 0.2});
    Tape t;
    Rng rng(0);
    const double got = t.value(structure_recon_loss(t, adj, t.constant(y), StructureMode::dense_exact, 1, 4096, rng))[0];
    const double s00 = sigmoid(0.3 * 0.3 + 1.0);
    const double s01 = sigmoid(0.3 * 0.7 - 0.2);
    const double s11 = sigmoid(0.49 + 0.04);
    const double expect = (0 - s00) * (0 - s00) + 2.0 * (1 - s01) * (1 - s01) + (0 - s11) * (0 - s11);
    CHECK(std::abs(got - expect) < 1e-12);
}

TEST_CASE("structure loss: exhaustive sampling equals dense within 1e-10") {
    Rng rng(5);
    GraphDataset ds = gen_sbm({25, 25}, 0.3, 0.05, 2, 1.0, rng);
    Tensor y = random_tensor(rng, {50, 4});
    Tape t;
    Rng s1(1), s2(1);
    const double dense =
        t.value(structure_recon_loss(t, ds.adjacency, t.constant(y), StructureMode::dense_exact, 1, 4096, s1))[0];
    // neg_ratio large enough to cover every non-edge -> exhaustive branch
    const double sampled = t.value(structure_recon_loss(t, ds.adjacency, t.constant(y),
                                                        StructureMode::negative_sampling, 2500, 4096, s2))[0];
    CHECK(std::abs(dense - sampled) < 1e-10);
}

TEST_CASE("structure loss: dense mode beyond dense_cap is a config error") {
    SparseAdjacency adj(10, {}, true, false);
    Tape t;
    Rng rng(0);
    Var y = t.constant(Tensor({10, 2}));
    CHECK_THROWS_AS(structure_recon_loss(t, adj, y, StructureMode::dense_exact, 1, 9, rng), ConfigError);
}

TEST_CASE("stage1_loss: identity decoders on aligned tokens zero two terms") {
    const std::int64_t n = 4, d = 3;
    SparseAdjacency adj(n, {}, true, false);
    Rng rng(3);
    Tensor x = random_tensor(rng, {n, d});
    Tensor h = random_tensor(rng, {n, d});

    ParamStore dec;
    dec.insert("decoder.feature.W", Tensor::identity(d));
    dec.insert("decoder.feature.b", Tensor({1, d}));
    dec.insert("decoder.structure.W", Tensor::identity(d));
    dec.insert("decoder.structure.b", Tensor({1, d}));
    dec.insert("decoder.graph.W", Tensor::identity(d));
    dec.insert("decoder.graph.b", Tensor({1, d}));

    Tape t;
    BoundParams bound(t, dec);
    TokenBundle b;
    b.f = t.constant(x);  // feature decoder reproduces X exactly
    b.s = t.constant(random_tensor(rng, {n, d}));
    b.g = t.constant(h);  // graph decoder reproduces H exactly
    ReconConfig cfg;
    Rng srng(0);
    Stage1Loss loss = stage1_loss(t, adj, t.constant(x), t.constant(h), b, bound, cfg, srng);
    CHECK(t.value(loss.feature_term)[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(t.value(loss.graph_term)[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(t.value(loss.structure_term)[0] > 0.0);
}

TEST_CASE("stage1_loss: component sum equals total; matches the oracle on 100 fixtures") {
    Rng rng(11);
    for (int iter = 0; iter < 100; ++iter) {
        const std::int64_t n = 3 + static_cast<std::int64_t>(rng.below(6));
        const std::int64_t d = 2 + static_cast<std::int64_t>(rng.below(3));
        const std::int64_t hidden = 2 + static_cast<std::int64_t>(rng.below(3));
        std::vector<Edge> edges;
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = i + 1; j < n; ++j)
                if (rng.bernoulli(0.4)) edges.emplace_back(i, j);
        SparseAdjacency adj = SparseAdjacency::symmetrized(n, std::move(edges));

        Tensor x = random_tensor(rng, {n, d});
        Tensor h = random_tensor(rng, {n, hidden});
        Tensor f = random_tensor(rng, {n, hidden});
        Tensor s = random_tensor(rng, {n, hidden});
        Tensor g = random_tensor(rng, {n, hidden});
        Rng drng(iter);
        ParamStore dec = decoder_init(hidden, d, hidden, drng);
        for (const auto& nm : dec.names())  // nonzero biases to exercise the affine path
            if (nm.ends_with(".b"))
                for (std::int64_t i = 0; i < dec.at(nm).numel(); ++i) dec.at(nm)[i] = rng.uniform(-0.3, 0.3);

        Tape t;
        BoundParams bound(t, dec);
        TokenBundle b;
        b.f = t.constant(f);
        b.s = t.constant(s);
        b.g = t.constant(g);
        ReconConfig cfg;
        Rng srng(0);
        Stage1Loss loss = stage1_loss(t, adj, t.constant(x), t.constant(h), b, bound, cfg, srng);

        const double total = t.value(loss.total)[0];
        const double sum = t.value(loss.feature_term)[0] + t.value(loss.structure_term)[0] +
                           t.value(loss.graph_term)[0];
        CHECK(std::abs(total - sum) < 1e-12);

        Stage1Oracle o = stage1_oracle(adj, x, h, f, s, g, dec, cfg.gamma_f, cfg.gamma_g);
        CHECK(std::abs(t.value(loss.feature_term)[0] - o.feature) < 1e-10);
        CHECK(std::abs(t.value(loss.structure_term)[0] - o.structure) < 1e-10);
        CHECK(std::abs(t.value(loss.graph_term)[0] - o.graph) < 1e-10);
        CHECK(std::abs(total - o.total) < 1e-10);
    }
}

TEST_CASE("grad_check: stage-1 objective through encoder, codebooks, fusion, decoders") {
    // Draw fixtures until the forward stays clear of activation kinks, where
    // the central-difference oracle is valid.
    for (std::uint64_t seed = 41;; ++seed) {
        Rng rng(seed);
        GraphDataset ds = gen_sbm({3, 3}, 0.8, 0.3, 3, 1.0, rng);
        GraphContext graph = GraphContext::build(ds.adjacency);

        EncoderConfig ecfg;
        ecfg.kind = EncoderKind::gat;
        ecfg.layers = 1;
        ecfg.hidden_dim = 4;

        ParamStore ps = encoder_param_init(ecfg, 3, rng);
        ps.insert("codebook.feature", codebook_init(3, 4, rng));
        ps.insert("codebook.structure", codebook_init(2, 4, rng));
        ps.insert("fusion.w", fusion_init(4, rng));
        {
            Rng drng(7);
            ps.merge(decoder_init(4, 3, 4, drng));
        }
        const auto names = ps.names();
        std::vector<Tensor> xs;
        for (const auto& nm : names) xs.push_back(ps.at(nm));

        auto f = [&](Tape& t, const std::vector<Var>& vs) {
            std::unordered_map<std::string, Var> m;
            for (std::size_t i = 0; i < names.size(); ++i) m.emplace(names[i], vs[i]);
            BoundParams bound(std::move(m));
            Rng drop(0), srng(0);
            EncodeResult enc = encode(t, t.constant(ds.features), graph, ecfg, bound, Mode::eval, drop);
            TokenBundle b = quantize_node(t, enc.h, bound["codebook.feature"], bound["codebook.structure"],
                                          1.0, bound["fusion.w"]);
            ReconConfig cfg;
            Stage1Loss loss = stage1_loss(t, ds.adjacency, t.constant(ds.features), enc.h, b, bound, cfg, srng);
            return loss.total;
        };
        {
            Tape probe;
            std::vector<Var> vs;
            for (const auto& x : xs) vs.push_back(probe.constant(x));
            f(probe, vs);
            if (probe.kink_margin() < 1e-2) continue;
        }
        CHECK(grad_check_multi(f, xs, 1e-4) < 1e-4);
        break;
    }
}
