#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vecformer/errors.hpp"
#include "vecformer/gradcheck.hpp"
#include "vecformer/tokenformer.hpp"

using namespace vecformer;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::int64_t> shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("build_token_list: identity projection returns the codebook verbatim") {
    Rng rng(1);
    Tape t;
    Tensor fc = codebook_init(4, 3, rng);
    Var fcv = t.constant(fc);
    Var scv = t.constant(codebook_init(2, 3, rng));
    GraphTokenList tl = build_token_list(t, fcv, scv, t.constant(Tensor::identity(4)),
                                         t.constant(Tensor::identity(2)), t.constant(fusion_init(3, rng)));
    CHECK(t.value(tl.f_t).vec() == fc.vec());
    CHECK(t.value(tl.g_t).rows() == 8);
}

TEST_CASE("build_token_list: table sizes 16x16 -> 256 and 64x64 -> 4096") {
    Rng rng(2);
    Tape t;
    Var fc = t.constant(codebook_init(64, 4, rng));
    Var sc = t.constant(codebook_init(64, 4, rng));
    Var fw = t.constant(fusion_init(4, rng));
    {
        GraphTokenList tl = build_token_list(t, fc, sc, t.constant(random_tensor(rng, {64, 16})),
                                             t.constant(random_tensor(rng, {64, 16})), fw);
        CHECK(t.value(tl.g_t).rows() == 256);
    }
    {
        GraphTokenList tl = build_token_list(t, fc, sc, t.constant(random_tensor(rng, {64, 64})),
                                             t.constant(random_tensor(rng, {64, 64})), fw);
        CHECK(t.value(tl.g_t).rows() == 4096);
    }
}

TEST_CASE("build_token_list: feature-major pairwise fusion matches direct recomputation") {
    Rng rng(3);
    Tape t;
    const std::int64_t n_f = 3, n_s = 2, d = 4;
    Var fc = t.constant(codebook_init(5, d, rng));
    Var sc = t.constant(codebook_init(4, d, rng));
    Tensor fw = fusion_init(d, rng);
    GraphTokenList tl = build_token_list(t, fc, sc, t.constant(random_tensor(rng, {5, n_f})),
                                         t.constant(random_tensor(rng, {4, n_s})), t.constant(fw));
    const Tensor& ft = t.value(tl.f_t);
    const Tensor& st = t.value(tl.s_t);
    const Tensor& gt = t.value(tl.g_t);
    REQUIRE(gt.rows() == n_f * n_s);
    for (std::int64_t i = 0; i < n_f; ++i)
        for (std::int64_t j = 0; j < n_s; ++j) {
            // alpha = [f ; s] . w, g = a1 f + a2 s
            double a1 = 0, a2 = 0;
            for (std::int64_t k = 0; k < d; ++k) {
                a1 += ft.at(i, k) * fw.at(k, 0) + st.at(j, k) * fw.at(d + k, 0);
                a2 += ft.at(i, k) * fw.at(k, 1) + st.at(j, k) * fw.at(d + k, 1);
            }
            for (std::int64_t k = 0; k < d; ++k) {
                const double expect = a1 * ft.at(i, k) + a2 * st.at(j, k);
                CHECK(std::abs(gt.at(i * n_s + j, k) - expect) < 1e-12);
            }
        }
}

TEST_CASE("cross_attention: M=1 gives weight 1 and V-row plus residual") {
    Rng rng(5);
    Tape t;
    ParamStore ps = attention_param_init(4, 3, rng);
    BoundParams bound(t, ps);
    Tensor g = random_tensor(rng, {3, 4});
    Tensor tok = random_tensor(rng, {1, 4});
    AttentionOut out = cross_attention(t, t.constant(g), t.constant(tok), bound);
    const Tensor& w = t.aux(out.head_weights[0]);
    for (std::int64_t i = 0; i < 3; ++i) CHECK(w.at(i, 0) == 1.0);

    // z = v + g with v the single projected token row
    double v[4] = {0, 0, 0, 0};
    for (std::int64_t j = 0; j < 4; ++j)
        for (std::int64_t k = 0; k < 4; ++k) v[j] += tok.at(0, k) * ps.at("attn.W_V").at(k, j);
    const Tensor& z = t.value(out.z);
    for (std::int64_t i = 0; i < 3; ++i)
        for (std::int64_t j = 0; j < 4; ++j)
            CHECK(z.at(i, j) == doctest::Approx(g.at(i, j) + v[j]).epsilon(1e-12));
}

TEST_CASE("cross_attention: zero W_V passes the residual through exactly") {
    Rng rng(6);
    Tape t;
    ParamStore ps = attention_param_init(4, 2, rng);
    for (std::int64_t i = 0; i < ps.at("attn.W_V").numel(); ++i) ps.at("attn.W_V")[i] = 0.0;
    BoundParams bound(t, ps);
    Tensor g = random_tensor(rng, {5, 4});
    AttentionOut out = cross_attention(t, t.constant(g), t.constant(random_tensor(rng, {6, 4})), bound);
    CHECK(t.value(out.z).vec() == g.vec());
}

TEST_CASE("cross_attention: matches a per-node loop oracle within 1e-10") {
    Rng rng(7);
    Tape t;
    const std::int64_t n = 3, m = 4, d = 4;
    ParamStore ps = attention_param_init(d, 2, rng);
    BoundParams bound(t, ps);
    Tensor g = random_tensor(rng, {n, d});
    Tensor gt = random_tensor(rng, {m, d});
    AttentionOut out = cross_attention(t, t.constant(g), t.constant(gt), bound);

    auto matvec = [&](const Tensor& x, const Tensor& w, std::int64_t row, std::int64_t col) {
        double acc = 0.0;
        for (std::int64_t k = 0; k < d; ++k) acc += x.at(row, k) * w.at(k, col);
        return acc;
    };
    const Tensor& wq = ps.at("attn.W_Q");
    const Tensor& wk = ps.at("attn.W_K");
    const Tensor& wv = ps.at("attn.W_V");
    for (std::int64_t i = 0; i < n; ++i) {
        std::vector<double> scores(static_cast<std::size_t>(m), 0.0);
        for (std::int64_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::int64_t c = 0; c < d; ++c) acc += matvec(g, wq, i, c) * matvec(gt, wk, j, c);
            scores[static_cast<std::size_t>(j)] = acc / std::sqrt(static_cast<double>(d));
        }
        const double mx = *std::max_element(scores.begin(), scores.end());
        double den = 0.0;
        for (auto& sv : scores) {
            sv = std::exp(sv - mx);
            den += sv;
        }
        for (auto& sv : scores) sv /= den;
        for (std::int64_t c = 0; c < d; ++c) {
            double acc = g.at(i, c);
            for (std::int64_t j = 0; j < m; ++j) acc += scores[static_cast<std::size_t>(j)] * matvec(gt, wv, j, c);
            CHECK(std::abs(t.value(out.z).at(i, c) - acc) < 1e-10);
        }
    }
}

TEST_CASE("attention invariants: rows sum to 1 and are strictly positive") {
    Rng rng(8);
    Tape t;
    ParamStore ps = attention_param_init(6, 2, rng);
    BoundParams bound(t, ps);
    AttentionOut out = cross_attention(t, t.constant(random_tensor(rng, {10, 6})),
                                       t.constant(random_tensor(rng, {9, 6})), bound, 2);
    for (const Var hw : out.head_weights) {
        const Tensor& w = t.aux(hw);
        for (std::int64_t i = 0; i < w.rows(); ++i) {
            double s = 0.0;
            for (std::int64_t j = 0; j < w.cols(); ++j) {
                REQUIRE(w.at(i, j) > 0.0);
                s += w.at(i, j);
            }
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("dense_node_attention: N=1, identical rows, oracle, cap") {
    Rng rng(9);
    {
        Tape t;
        ParamStore ps = attention_param_init(3, 2, rng);
        BoundParams bound(t, ps);
        AttentionOut out = dense_node_attention(t, t.constant(random_tensor(rng, {1, 3})), bound, 1, 64);
        CHECK(t.aux(out.head_weights[0]).at(0, 0) == 1.0);
    }
    {
        Tape t;
        ParamStore ps = attention_param_init(3, 2, rng);
        BoundParams bound(t, ps);
        Tensor h({4, 3});
        for (std::int64_t i = 0; i < 4; ++i)
            for (std::int64_t j = 0; j < 3; ++j) h.at(i, j) = 0.3 * static_cast<double>(j);
        AttentionOut out = dense_node_attention(t, t.constant(h), bound, 1, 64);
        const Tensor& w = t.aux(out.head_weights[0]);
        for (std::int64_t i = 0; i < w.numel(); ++i) CHECK(w[i] == doctest::Approx(0.25).epsilon(1e-12));
    }
    {
        Tape t;
        ParamStore ps = attention_param_init(3, 2, rng);
        BoundParams bound(t, ps);
        CHECK_THROWS_AS(dense_node_attention(t, t.constant(Tensor({65, 3})), bound, 1, 64), ConfigError);
    }
    {
        // N=5 against the cross_attention oracle machinery: dense is
        // self-cross-attention by construction.
        Tape t;
        ParamStore ps = attention_param_init(4, 2, rng);
        BoundParams bound(t, ps);
        Tensor h = random_tensor(rng, {5, 4});
        AttentionOut dense = dense_node_attention(t, t.constant(h), bound, 1, 64);
        AttentionOut cross = cross_attention(t, t.constant(h), t.constant(h), bound);
        for (std::int64_t i = 0; i < t.value(dense.z).numel(); ++i)
            CHECK(std::abs(t.value(dense.z)[i] - t.value(cross.z)[i]) < 1e-10);
    }
}

TEST_CASE("classify: zero weights give uniform probabilities; argmax predicts") {
    Rng rng(10);
    Tape t;
    ParamStore ps;
    ps.insert("classifier.W", Tensor({4, 3}));
    ps.insert("classifier.b", Tensor({1, 3}));
    BoundParams bound(t, ps);
    Var logits = classify(t, t.constant(random_tensor(rng, {5, 4})), bound);
    const Tensor& probs = t.value(t.row_softmax(logits, 1.0));
    for (std::int64_t i = 0; i < probs.numel(); ++i)
        CHECK(probs[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("classify: cross entropy on a hand-labeled fixture matches the scalar oracle") {
    Tape t;
    ParamStore ps;
    ps.insert("classifier.W", Tensor::identity(2));
    ps.insert("classifier.b", Tensor({1, 2}));
    BoundParams bound(t, ps);
    Tensor z({4, 2}, {2, -1, 0.5, 0.5, -3, 1, 0, 2});
    std::vector<std::int64_t> labels{0, 1, 1, 0};
    std::vector<std::int64_t> mask{0, 1, 2, 3};
    Var logits = classify(t, t.constant(z), bound);
    const double got = t.value(t.cross_entropy(logits, labels, mask))[0];
    double expect = 0.0;
    for (std::int64_t i = 0; i < 4; ++i) {
        const double a = z.at(i, 0), b = z.at(i, 1);
        const double lse = std::log(std::exp(a) + std::exp(b));
        expect += lse - (labels[static_cast<std::size_t>(i)] == 0 ? a : b);
    }
    expect /= 4.0;
    CHECK(std::abs(got - expect) < 1e-12);
}

TEST_CASE("grad_check: token list -> cross attention -> classifier") {
    Rng rng(11);
    const std::int64_t d = 4, m = 3, nc = 3, n_f = 2, n_s = 2;
    ParamStore ps;
    ps.insert("codebook.feature", codebook_init(m, d, rng));
    ps.insert("codebook.structure", codebook_init(nc, d, rng));
    ps.insert("fusion.w", fusion_init(d, rng));
    {
        Rng r2(12);
        ps.merge(token_list_init(m, nc, n_f, n_s, r2));
        ps.merge(attention_param_init(d, 2, r2));
    }
    Tensor g_nodes = random_tensor(rng, {5, d});
    std::vector<std::int64_t> labels{0, 1, 0, 1, 1};
    std::vector<std::int64_t> mask{0, 2, 3};

    const auto names = ps.names();
    std::vector<Tensor> xs;
    for (const auto& nm : names) xs.push_back(ps.at(nm));
    auto f = [&](Tape& t, const std::vector<Var>& vs) {
        std::unordered_map<std::string, Var> mm;
        for (std::size_t i = 0; i < names.size(); ++i) mm.emplace(names[i], vs[i]);
        BoundParams bound(std::move(mm));
        GraphTokenList tl = build_token_list(t, bound["codebook.feature"], bound["codebook.structure"],
                                             bound["tokenlist.W_F"], bound["tokenlist.W_S"], bound["fusion.w"]);
        AttentionOut at = cross_attention(t, t.constant(g_nodes), tl.g_t, bound);
        return t.cross_entropy(classify(t, at.z, bound), labels, mask);
    };
    CHECK(grad_check_multi(f, xs, 1e-4) < 1e-4);
}
