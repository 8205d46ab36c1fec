#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "vecformer/errors.hpp"
#include "vecformer/generators.hpp"
#include "vecformer/graphio.hpp"

using namespace vecformer;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    auto p = fs::temp_directory_path() / ("vf_graphio_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    f << text;
}

void write_triangle_fixture(const fs::path& dir, const std::string& edges) {
    write_file(dir / "graph.json",
               R"({"version":1,"n":3,"d":2,"num_classes":2,"symmetric":true,)"
               R"("fields":{"labels":"int","env":false}})");
    write_file(dir / "edges.csv", edges);
    write_file(dir / "features.csv", "0.5,1\n-1,0.25\n2,3\n");
    write_file(dir / "labels.csv", "0\n1\n0\n");
}

}  // namespace

TEST_CASE("load_graph: triangle fixture symmetrizes to 6 directed edges") {
    auto dir = temp_dir("tri");
    write_triangle_fixture(dir, "0,1\n0,2\n1,2\n");
    GraphDataset ds = load_graph(dir);
    CHECK(ds.n() == 3);
    CHECK(ds.adjacency.num_edges() == 6);
    CHECK(ds.adjacency.symmetric());
    CHECK(ds.features.at(0, 0) == 0.5);
    CHECK(ds.labels == std::vector<std::int64_t>{0, 1, 0});
}

TEST_CASE("load_graph: dangling edge index is a format error naming the line") {
    auto dir = temp_dir("dangling");
    write_triangle_fixture(dir, "0,1\n0,5\n");
    try {
        load_graph(dir);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("edges.csv:2") != std::string::npos);
    }
}

TEST_CASE("load_graph: feature row mismatch is a format error") {
    auto dir = temp_dir("featmismatch");
    write_triangle_fixture(dir, "0,1\n");
    write_file(dir / "features.csv", "0.5,1\n-1,0.25\n");  // only 2 rows for n=3
    CHECK_THROWS_AS(load_graph(dir), FormatError);
}

TEST_CASE("load_graph: malformed header is a format error") {
    auto dir = temp_dir("badheader");
    write_triangle_fixture(dir, "0,1\n");
    write_file(dir / "graph.json", "{not json");
    CHECK_THROWS_AS(load_graph(dir), FormatError);
}

TEST_CASE("round-trip: save then load of a generated SBM graph is identity") {
    Rng rng(7);
    GraphDataset ds = gen_sbm({5, 7}, 0.8, 0.1, 4, 2.0, rng);
    auto dir = temp_dir("roundtrip");
    save_graph(ds, dir);
    GraphDataset back = load_graph(dir);
    CHECK(back.n() == ds.n());
    CHECK(back.adjacency.edges() == ds.adjacency.edges());
    CHECK(back.labels == ds.labels);
    CHECK(back.num_classes == ds.num_classes);
    REQUIRE(back.features.shape() == ds.features.shape());
    for (std::int64_t i = 0; i < ds.features.numel(); ++i)
        CHECK(back.features[i] == ds.features[i]);  // %.17g round-trips doubles
}

TEST_CASE("add_self_loops: empty 2-node graph gains exactly the diagonal") {
    SparseAdjacency adj(2, {}, true, false);
    SparseAdjacency looped = add_self_loops(adj);
    CHECK(looped.edges() == std::vector<Edge>{{0, 0}, {1, 1}});
    CHECK(looped.self_loops());
}

TEST_CASE("add_self_loops: idempotent") {
    SparseAdjacency adj(2, {{0, 1}, {1, 0}}, true, false);
    SparseAdjacency once = add_self_loops(adj);
    SparseAdjacency twice = add_self_loops(once);
    CHECK(once.edges() == twice.edges());
}

TEST_CASE("add_self_loops: triangle becomes 9 directed pairs") {
    SparseAdjacency tri = SparseAdjacency::symmetrized(3, {{0, 1}, {0, 2}, {1, 2}});
    CHECK(add_self_loops(tri).num_edges() == 9);
}

TEST_CASE("make_split: paper ratios at n=10 and n=4") {
    Rng rng(1);
    Split a = make_split(10, {0.6, 0.2, 0.2}, rng);
    CHECK(a.train.size() == 6);
    CHECK(a.val.size() == 2);
    CHECK(a.test.size() == 2);

    Split b = make_split(4, {0.5, 0.25, 0.25}, rng);
    CHECK(b.train.size() == 2);
    CHECK(b.val.size() == 1);
    CHECK(b.test.size() == 1);
}

TEST_CASE("make_split: deterministic per seed") {
    Rng r1(42), r2(42);
    Split a = make_split(37, {0.6, 0.2, 0.2}, r1);
    Split b = make_split(37, {0.6, 0.2, 0.2}, r2);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    CHECK(a.test == b.test);
}

TEST_CASE("make_split: ratio sum above 1 is a config error") {
    Rng rng(0);
    CHECK_THROWS_AS(make_split(10, {0.8, 0.2, 0.2}, rng), ConfigError);
}

TEST_CASE("property: splits partition without overlap over 1000 random configs") {
    Rng rng(99);
    for (int iter = 0; iter < 1000; ++iter) {
        const std::int64_t n = 3 + static_cast<std::int64_t>(rng.below(200));
        double a = rng.uniform(0.05, 0.6);
        double b = rng.uniform(0.05, (1.0 - a) / 2.0);
        double c = rng.uniform(0.05, 1.0 - a - b);  // 1-a-b >= 0.2 by construction
        Split s = make_split(n, {a, b, c}, rng);
        std::set<std::int64_t> seen;
        for (const auto* part : {&s.train, &s.val, &s.test})
            for (auto i : *part) {
                REQUIRE(i >= 0);
                REQUIRE(i < n);
                REQUIRE(seen.insert(i).second);  // no overlap
            }
    }
}

TEST_CASE("gen_sbm: degenerate probabilities give cliques and no cross edges") {
    Rng rng(3);
    GraphDataset ds = gen_sbm({3, 3}, 1.0, 0.0, 2, 1.0, rng);
    // two 3-cliques: 2 * 3 undirected = 12 directed edges
    CHECK(ds.adjacency.num_edges() == 12);
    for (const auto& [s, d] : ds.adjacency.edges())
        CHECK(ds.labels[static_cast<std::size_t>(s)] == ds.labels[static_cast<std::size_t>(d)]);
}

TEST_CASE("gen_sbm: zero probabilities give an edgeless graph") {
    Rng rng(3);
    CHECK(gen_sbm({4, 4}, 0.0, 0.0, 2, 1.0, rng).adjacency.num_edges() == 0);
}

TEST_CASE("gen_sbm: cross-block edge count within 4 sigma of the binomial mean") {
    Rng rng(12345);
    GraphDataset ds = gen_sbm({50, 50}, 0.2, 0.02, 4, 1.0, rng);
    std::int64_t cross = 0;
    for (const auto& [s, d] : ds.adjacency.edges())
        if (ds.labels[static_cast<std::size_t>(s)] != ds.labels[static_cast<std::size_t>(d)] && s < d) ++cross;
    const double mean = 50.0 * 50.0 * 0.02;
    const double sigma = std::sqrt(50.0 * 50.0 * 0.02 * 0.98);
    CHECK(std::abs(static_cast<double>(cross) - mean) < 4.0 * sigma);
}

TEST_CASE("gen_sbm: deterministic per seed") {
    Rng r1(5), r2(5);
    GraphDataset a = gen_sbm({10, 10}, 0.5, 0.1, 3, 1.5, r1);
    GraphDataset b = gen_sbm({10, 10}, 0.5, 0.1, 3, 1.5, r2);
    CHECK(a.adjacency.edges() == b.adjacency.edges());
    CHECK(a.features.vec() == b.features.vec());
}

TEST_CASE("symmetric adjacency passes a full (i,j)<->(j,i) scan") {
    Rng rng(8);
    GraphDataset ds = gen_sbm({20, 20}, 0.3, 0.05, 2, 1.0, rng);
    for (const auto& [s, d] : ds.adjacency.edges()) CHECK(ds.adjacency.has_edge(d, s));
}

namespace {

double column_label_corr(const GraphDataset& ds, std::int64_t col, const std::vector<std::int64_t>& nodes) {
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    const auto n = static_cast<double>(nodes.size());
    for (auto i : nodes) {
        const double x = ds.features.at(i, col);
        const double y = static_cast<double>(ds.labels[static_cast<std::size_t>(i)]);
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    const double cov = sxy / n - sx / n * (sy / n);
    const double vx = sxx / n - (sx / n) * (sx / n);
    const double vy = syy / n - (sy / n) * (sy / n);
    return vx > 0 && vy > 0 ? cov / std::sqrt(vx * vy) : 0.0;
}

}  // namespace

TEST_CASE("gen_spurious_shift: widths, env coverage, and correlation contract") {
    Rng rng(21);
    GraphDataset base = gen_sbm({300, 300, 300, 300}, 0.05, 0.01, 8, 1.0, rng);
    GraphDataset shifted = gen_spurious_shift(base, 2, 1.0, 0.0, rng);
    CHECK(shifted.feat_dim() == 10);  // 8 + 2
    CHECK(shifted.has_env());

    std::vector<std::int64_t> id_nodes, ood_nodes;
    for (std::int64_t i = 0; i < shifted.n(); ++i)
        (shifted.environment_id[static_cast<std::size_t>(i)] == 0 ? id_nodes : ood_nodes).push_back(i);
    CHECK(id_nodes.size() >= 500);
    CHECK(ood_nodes.size() >= 500);

    // id_corr=1: spurious column tracks the label on ID nodes.
    CHECK(column_label_corr(shifted, 8, id_nodes) > 0.9);
    // ood_corr=0: independent of labels on OOD nodes.
    CHECK(std::abs(column_label_corr(shifted, 8, ood_nodes)) < 0.1);

    // Original label-relevant features untouched.
    for (std::int64_t i = 0; i < shifted.n(); ++i)
        for (std::int64_t j = 0; j < 8; ++j) REQUIRE(shifted.features.at(i, j) == base.features.at(i, j));
}

TEST_CASE("gen_spurious_shift: equal correlations mean no measurable shift") {
    Rng rng(22);
    GraphDataset base = gen_sbm({400, 400}, 0.05, 0.01, 4, 1.0, rng);
    GraphDataset shifted = gen_spurious_shift(base, 1, 0.7, 0.7, rng);
    std::vector<std::int64_t> id_nodes, ood_nodes;
    for (std::int64_t i = 0; i < shifted.n(); ++i)
        (shifted.environment_id[static_cast<std::size_t>(i)] == 0 ? id_nodes : ood_nodes).push_back(i);
    const double c_id = column_label_corr(shifted, 4, id_nodes);
    const double c_ood = column_label_corr(shifted, 4, ood_nodes);
    CHECK(std::abs(c_id - c_ood) < 0.15);  // equal in expectation, noise-sized gap
}

TEST_CASE("gen_spurious_shift: deterministic per seed") {
    Rng rng(31);
    GraphDataset base = gen_sbm({20, 20}, 0.3, 0.05, 4, 1.0, rng);
    Rng r1(5), r2(5);
    GraphDataset a = gen_spurious_shift(base, 2, 0.8, 0.2, r1);
    GraphDataset b = gen_spurious_shift(base, 2, 0.8, 0.2, r2);
    CHECK(a.features.vec() == b.features.vec());
    CHECK(a.environment_id == b.environment_id);
}

TEST_CASE("knn graph: identical rows link mutually at k=1") {
    Tensor sig({3, 4}, {1, 2, 3, 4, 1, 2, 3, 4, 4, -1, 0, 2});
    SparseAdjacency adj = build_knn_correlation_graph(sig, 1);
    CHECK(adj.has_edge(0, 1));
    CHECK(adj.has_edge(1, 0));
    for (std::int64_t i = 0; i < 3; ++i) CHECK_FALSE(adj.has_edge(i, i));
}

TEST_CASE("knn graph: supports the k in {5,10,20} sweep") {
    Rng rng(31);
    Tensor sig({25, 12});
    for (std::int64_t i = 0; i < sig.numel(); ++i) sig[i] = rng.uniform(-1, 1);
    for (std::int64_t k : {5, 10, 20}) {
        SparseAdjacency adj = build_knn_correlation_graph(sig, k);
        CHECK(adj.symmetric());
        CHECK(adj.num_edges() >= 25 * k);  // union can only add
    }
}

TEST_CASE("knn graph: matches the all-pairs ranking oracle on N=6, k=2") {
    Rng rng(77);
    Tensor sig({6, 10});
    for (std::int64_t i = 0; i < sig.numel(); ++i) sig[i] = rng.uniform(-2, 2);
    SparseAdjacency adj = build_knn_correlation_graph(sig, 2);

    // Oracle: textbook Pearson formula, independent ranking, union symmetry.
    auto pearson = [&](std::int64_t a, std::int64_t b) {
        const auto s = static_cast<double>(sig.cols());
        double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
        for (std::int64_t t = 0; t < sig.cols(); ++t) {
            sx += sig.at(a, t);
            sy += sig.at(b, t);
            sxx += sig.at(a, t) * sig.at(a, t);
            syy += sig.at(b, t) * sig.at(b, t);
            sxy += sig.at(a, t) * sig.at(b, t);
        }
        const double num = sxy - sx * sy / s;
        const double den = std::sqrt((sxx - sx * sx / s) * (syy - sy * sy / s));
        return den > 0 ? num / den : 0.0;
    };
    std::set<Edge> expect;
    for (std::int64_t i = 0; i < 6; ++i) {
        std::vector<std::pair<double, std::int64_t>> rank;
        for (std::int64_t j = 0; j < 6; ++j)
            if (j != i) rank.emplace_back(-pearson(i, j), j);
        std::sort(rank.begin(), rank.end());
        for (int t = 0; t < 2; ++t) {
            expect.insert({i, rank[static_cast<std::size_t>(t)].second});
            expect.insert({rank[static_cast<std::size_t>(t)].second, i});
        }
    }
    CHECK(std::set<Edge>(adj.edges().begin(), adj.edges().end()) == expect);
}

TEST_CASE("knn graph: out-degree before union is exactly k") {
    // The union-symmetrized degree may exceed k; the guaranteed property is
    // that each node nominates exactly k neighbours. Nominations are the
    // directed pairs before closure, recovered here by re-ranking.
    Rng rng(13);
    Tensor sig({12, 8});
    for (std::int64_t i = 0; i < sig.numel(); ++i) sig[i] = rng.uniform(-1, 1);
    const std::int64_t k = 3;
    SparseAdjacency adj = build_knn_correlation_graph(sig, k);
    std::int64_t min_deg = 12;
    for (std::int64_t i = 0; i < 12; ++i) {
        std::int64_t deg = 0;
        for (std::int64_t j = 0; j < 12; ++j)
            if (adj.has_edge(i, j)) ++deg;
        min_deg = std::min(min_deg, deg);
        CHECK(deg >= k);  // union adds, never removes
    }
    CHECK(min_deg >= k);
}

TEST_CASE("knn graph: k >= N is a config error") {
    Tensor sig({3, 4});
    CHECK_THROWS_AS(build_knn_correlation_graph(sig, 3), ConfigError);
}

TEST_CASE("gen_de_labels: radius 0 marks only the target") {
    Rng rng(1);
    GraphDataset ds = gen_sbm({6}, 1.0, 0.0, 2, 1.0, rng);
    auto lab = gen_de_labels(ds, 2, 0, rng);
    for (std::int64_t i = 0; i < 6; ++i) CHECK(lab[static_cast<std::size_t>(i)] == (i == 2 ? 1 : 0));
}

TEST_CASE("gen_de_labels: unbounded radius on a connected graph marks all") {
    Rng rng(1);
    GraphDataset ds = gen_sbm({8}, 1.0, 0.0, 2, 1.0, rng);
    auto lab = gen_de_labels(ds, 0, 1'000'000, rng);
    for (auto v : lab) CHECK(v == 1);
}

TEST_CASE("gen_de_labels: radius 2 on a path graph matches a BFS oracle") {
    // path 0-1-2-3-4-5
    std::vector<Edge> e;
    for (std::int64_t i = 0; i + 1 < 6; ++i) e.emplace_back(i, i + 1);
    GraphDataset ds{SparseAdjacency::symmetrized(6, std::move(e)), Tensor({6, 1}),
                    std::vector<std::int64_t>(6, 0), Tensor{}, 1, {}};
    Rng rng(0);
    auto lab = gen_de_labels(ds, 1, 2, rng);
    // BFS distances from node 1 on a path: 1,0,1,2,3,4
    CHECK(lab == std::vector<std::int64_t>{1, 1, 1, 1, 0, 0});
}

TEST_CASE("gen_de_labels: target out of range is a structural error") {
    Rng rng(1);
    GraphDataset ds = gen_sbm({4}, 0.5, 0.0, 2, 1.0, rng);
    CHECK_THROWS_AS(gen_de_labels(ds, 9, 1, rng), StructuralError);
}
