#include "vecformer/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "vecformer/errors.hpp"
#include "vecformer/generators.hpp"
#include "vecformer/kernels.hpp"

namespace vecformer {

using nlohmann::json;

std::int64_t current_rss_bytes() {
#if defined(__linux__)
    std::ifstream f("/proc/self/status");
    std::string line;
    while (std::getline(f, line)) {
        if (line.rfind("VmRSS:", 0) == 0) {
            std::int64_t kb = 0;
            std::sscanf(line.c_str(), "VmRSS: %ld", &kb);
            return kb * 1024;
        }
    }
#endif
    return 0;
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

namespace {

Tensor mean_head_weights(Tape& tape, const AttentionOut& attn) {
    Tensor acc = tape.aux(attn.head_weights[0]);
    for (std::size_t h = 1; h < attn.head_weights.size(); ++h) {
        const Tensor& w = tape.aux(attn.head_weights[h]);
        kernels::axpy(1.0, w.data(), acc.data(), static_cast<std::size_t>(acc.numel()));
    }
    if (attn.head_weights.size() > 1)
        kernels::scale(acc.data(), 1.0 / static_cast<double>(attn.head_weights.size()), acc.data(),
                       static_cast<std::size_t>(acc.numel()));
    return acc;
}

// Modified Gram-Schmidt over the stacked codebook rows; rows renormalized.
void orthonormalize_rows(Tensor& m) {
    const std::int64_t r = m.rows(), d = m.cols();
    for (std::int64_t i = 0; i < r; ++i) {
        double* row = m.data() + i * d;
        for (std::int64_t j = 0; j < i; ++j) {
            const double* prev = m.data() + j * d;
            const double ip = kernels::dot(row, prev, static_cast<std::size_t>(d));
            kernels::axpy(-ip, prev, row, static_cast<std::size_t>(d));
        }
        const double nrm = std::sqrt(kernels::dot(row, row, static_cast<std::size_t>(d)));
        if (nrm < 1e-12) throw NumericError("orthonormalize_rows: rank-deficient stack at row " + std::to_string(i));
        kernels::scale(row, 1.0 / nrm, row, static_cast<std::size_t>(d));
    }
}

}  // namespace

Tensor attention_weight_matrix(const GraphDataset& ds, const Checkpoint& ckpt, const TrainConfig& cfg) {
    Tape tape;
    BoundParams bound(tape, ckpt.params, {""});
    GraphContext graph = GraphContext::build(ds.adjacency);
    Rng drop(0);
    ModelForward fwd = model_forward(tape, ds, graph, cfg, bound, Mode::eval, drop);
    return mean_head_weights(tape, fwd.attn);
}

DiagnosticsReport diagnose(const GraphDataset& ds, const Split& split, const Checkpoint& ckpt,
                           const TrainConfig& cfg) {
    if (ckpt.stage != 2) throw ContractError("diagnose: needs a stage-2 checkpoint");
    Tape tape;
    BoundParams bound(tape, ckpt.params, {""});
    GraphContext graph = GraphContext::build(ds.adjacency);
    Rng drop(0);
    ModelForward fwd = model_forward(tape, ds, graph, cfg, bound, Mode::eval, drop);

    Tensor weights = mean_head_weights(tape, fwd.attn);
    // Unconstrained q.k from the actual projections (reported, not asserted).
    Tensor q({ds.n(), cfg.hidden_dim});
    kernels::matmul(tape.value(fwd.bundle.g).data(), ckpt.params.at("attn.W_Q").data(), q.data(),
                    static_cast<std::size_t>(ds.n()), static_cast<std::size_t>(cfg.hidden_dim),
                    static_cast<std::size_t>(cfg.hidden_dim), false, false);
    const Tensor& gt = tape.value(fwd.token_list.g_t);
    Tensor k({gt.rows(), cfg.hidden_dim});
    kernels::matmul(gt.data(), ckpt.params.at("attn.W_K").data(), k.data(),
                    static_cast<std::size_t>(gt.rows()), static_cast<std::size_t>(cfg.hidden_dim),
                    static_cast<std::size_t>(cfg.hidden_dim), false, false);

    DiagnosticsReport rep;
    rep.n = ds.n();
    rep.m = gt.rows();
    rep.attn = attn_diagnostics(weights, q, k);
    rep.metric_name = resolve_metric(cfg, ds);
    rep.test_metric = evaluate_metric(rep.metric_name, tape.value(fwd.logits), ds, split.test, "test");
    // The constrained bound needs jointly orthogonalizable codebooks.
    rep.constrained_min_qk = cfg.m + cfg.n <= cfg.hidden_dim
                                 ? qk_positivity_min(ds, cfg, cfg.seed)
                                 : std::numeric_limits<double>::quiet_NaN();
    return rep;
}

json DiagnosticsReport::to_json() const {
    json j;
    j["n"] = n;
    j["m"] = m;
    j["mean_attention_std"] = attn.mean_std;
    j["mean_kl_to_uniform"] = attn.mean_kl_uniform;
    j["min_qk_unconstrained"] = attn.min_qk;
    if (std::isnan(constrained_min_qk)) j["min_qk_constrained"] = nullptr;
    else j["min_qk_constrained"] = constrained_min_qk;
    j["metric"] = metric_name;
    j["test_metric"] = test_metric;
    return j;
}

double qk_positivity_min(const GraphDataset& ds, const TrainConfig& cfg, std::uint64_t seed) {
    if (cfg.m + cfg.n > cfg.hidden_dim)
        throw ConfigError("qk positivity diagnostic needs m + n <= hidden_dim (" + std::to_string(cfg.m) +
                          " + " + std::to_string(cfg.n) + " > " + std::to_string(cfg.hidden_dim) + ")");
    Rng rng(seed);

    // Encoder output on the fixture with freshly initialized weights.
    Tape tape;
    const EncoderConfig ecfg = cfg.encoder_config();
    ParamStore eps = encoder_param_init(ecfg, ds.feat_dim(), rng);
    BoundParams ebound(tape, eps, {""});
    GraphContext graph = GraphContext::build(ds.adjacency);
    Rng drop(0);
    Var h = encode(tape, tape.constant(ds.features), graph, ecfg, ebound, Mode::eval, drop).h;

    // Jointly orthonormalized codebooks: every code orthogonal to every other.
    Tensor stacked = codebook_init(cfg.m + cfg.n, cfg.hidden_dim, rng);
    orthonormalize_rows(stacked);
    Tensor fc({cfg.m, cfg.hidden_dim}), sc({cfg.n, cfg.hidden_dim});
    std::copy_n(stacked.data(), cfg.m * cfg.hidden_dim, fc.data());
    std::copy_n(stacked.data() + cfg.m * cfg.hidden_dim, cfg.n * cfg.hidden_dim, sc.data());

    Var fcv = tape.constant(fc);
    Var scv = tape.constant(sc);
    Var fusion_w = tape.constant(fusion_init(cfg.hidden_dim, rng));

    // Nonnegative fusion: alphas pass through |.|; identity Q/K projections.
    auto fuse_nonneg = [&](Var a, Var b) {
        Var alphas = tape.abs(tape.matmul(tape.hconcat({a, b}), fusion_w));
        return tape.add(tape.col_broadcast_mul(a, tape.col_slice(alphas, 0, 1)),
                        tape.col_broadcast_mul(b, tape.col_slice(alphas, 1, 2)));
    };

    SoftVQOut f = softvq(tape, h, fcv, cfg.temperature);
    SoftVQOut s = softvq(tape, h, scv, cfg.temperature);
    Var g = fuse_nonneg(f.tokens, s.tokens);

    Var wf = tape.abs(tape.constant(glorot_uniform(cfg.m, cfg.n_f, rng)));
    Var ws = tape.abs(tape.constant(glorot_uniform(cfg.n, cfg.n_s, rng)));
    Var f_t = tape.matmul(wf, fcv, true, false);
    Var s_t = tape.matmul(ws, scv, true, false);
    Var g_t = fuse_nonneg(tape.repeat_rows_each(f_t, cfg.n_s), tape.tile_rows(s_t, cfg.n_f));

    const Tensor& qv = tape.value(g);
    const Tensor& kv = tape.value(g_t);
    double mn = std::numeric_limits<double>::infinity();
    for (std::int64_t i = 0; i < qv.rows(); ++i)
        for (std::int64_t j = 0; j < kv.rows(); ++j)
            mn = std::min(mn, kernels::dot(qv.data() + i * qv.cols(), kv.data() + j * kv.cols(),
                                           static_cast<std::size_t>(qv.cols())));
    return mn;
}

// ---------------------------------------------------------------------------
// OOD comparison
// ---------------------------------------------------------------------------

namespace {

double mean_row_std(const Tensor& weights, const std::vector<std::int64_t>& rows) {
    if (rows.empty()) throw ContractError("mean_row_std: empty row set");
    const std::int64_t m = weights.cols();
    double acc = 0.0;
    for (const auto r : rows) {
        double sum = 0, sumsq = 0;
        for (std::int64_t j = 0; j < m; ++j) {
            const double w = weights.at(r, j);
            sum += w;
            sumsq += w * w;
        }
        const double mean = sum / static_cast<double>(m);
        acc += std::sqrt(std::max(0.0, sumsq / static_cast<double>(m) - mean * mean));
    }
    return acc / static_cast<double>(rows.size());
}

}  // namespace

OodComparison compare_ood(const GraphDataset& ds, const TrainConfig& cfg) {
    if (!ds.has_env()) throw ConfigError("compare_ood: dataset has no environment ids");
    Split split = derive_split(ds, cfg);

    OodComparison cmp;

    Stage1Result s1 = train_stage1(ds, cfg);
    Stage2Result vec = train_stage2(ds, split, s1.checkpoint, cfg);
    cmp.metric_name = vec.metric_name;
    cmp.vec_ood_metric = vec.history[static_cast<std::size_t>(vec.best_epoch)].ood_metric;
    {
        Tensor w = attention_weight_matrix(ds, vec.checkpoint, cfg);
        cmp.vec_mean_std_ood = mean_row_std(w, split.ood_test);
    }

    Stage2Result base = train_dense_baseline(ds, split, cfg);
    cmp.base_ood_metric = base.history[static_cast<std::size_t>(base.best_epoch)].ood_metric;
    {
        Tape tape;
        BoundParams bound(tape, base.checkpoint.params, {""});
        GraphContext graph = GraphContext::build(ds.adjacency);
        Rng drop(0);
        EncodeResult enc = encode(tape, tape.constant(ds.features), graph, cfg.encoder_config(), bound,
                                  Mode::eval, drop);
        AttentionOut attn = dense_node_attention(tape, enc.h, bound, cfg.attn_heads, cfg.dense_cap);
        cmp.base_mean_std_ood = mean_row_std(mean_head_weights(tape, attn), split.ood_test);
    }
    return cmp;
}

// ---------------------------------------------------------------------------
// Scaling benchmark
// ---------------------------------------------------------------------------

namespace {

GraphDataset bench_graph(std::int64_t n, std::uint64_t seed) {
    // Degree-controlled SBM: probabilities shrink with n so |E| grows
    // linearly and the attention term dominates the sweep.
    Rng rng(seed);
    const std::int64_t b = n / 4;
    std::vector<std::int64_t> blocks{b, b, b, n - 3 * b};
    const double p_in = std::min(1.0, 24.0 / static_cast<double>(n));
    const double p_out = 8.0 / (3.0 * static_cast<double>(n));
    return gen_sbm(blocks, p_in, p_out, 16, 2.0, rng);
}

}  // namespace

std::vector<ScalingRecord> bench_scaling(const std::vector<std::int64_t>& n_values,
                                         const std::vector<std::string>& mechanisms,
                                         const TrainConfig& cfg, std::int64_t epochs,
                                         std::int64_t trials, std::uint64_t seed) {
    if (epochs < 1 || trials < 1) throw ConfigError("bench: epochs and trials must be >= 1");
    for (const auto& m : mechanisms)
        if (m != "dense_node" && m != "graph_token")
            throw ConfigError("bench: unknown mechanism '" + m + "'");

#if defined(__GLIBC__)
    // Quiesce the allocator: keep per-epoch tensor churn on the freelist
    // rather than mmap round-trips, so timings reflect arithmetic cost.
    mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
#endif

    std::vector<ScalingRecord> records;
    for (const std::int64_t n : n_values) {
        const GraphDataset ds = bench_graph(n, seed);
        const GraphContext graph = GraphContext::build(ds.adjacency);
        std::vector<std::int64_t> all_nodes(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) all_nodes[static_cast<std::size_t>(i)] = i;

        for (const auto& mechanism : mechanisms) {
            if (mechanism == "dense_node" && n > cfg.dense_cap)
                throw ConfigError("bench: dense_node at n=" + std::to_string(n) + " exceeds dense_cap=" +
                                  std::to_string(cfg.dense_cap));
            std::vector<double> trial_secs;
            std::int64_t peak_rss = 0;
            for (std::int64_t trial = 0; trial < trials; ++trial) {
                TrainConfig run_cfg = cfg;
                run_cfg.seed = seed + static_cast<std::uint64_t>(trial);

                Rng init(run_cfg.seed);
                ParamStore params;
                if (mechanism == "graph_token") {
                    params = encoder_param_init(run_cfg.encoder_config(), ds.feat_dim(), init);
                    params.insert("codebook.feature", codebook_init(run_cfg.m, run_cfg.hidden_dim, init));
                    params.insert("codebook.structure", codebook_init(run_cfg.n, run_cfg.hidden_dim, init));
                    params.insert("fusion.w", fusion_init(run_cfg.hidden_dim, init));
                    params.merge(token_list_init(run_cfg.m, run_cfg.n, run_cfg.n_f, run_cfg.n_s, init));
                    params.merge(attention_param_init(run_cfg.hidden_dim, ds.num_classes, init));
                } else {
                    params = encoder_param_init(run_cfg.encoder_config(), ds.feat_dim(), init);
                    params.merge(attention_param_init(run_cfg.hidden_dim, ds.num_classes, init));
                }
                Adam opt(run_cfg.lr, run_cfg.weight_decay);
                Rng drop(run_cfg.seed);

                const auto t0 = std::chrono::steady_clock::now();
                for (std::int64_t e = 0; e < epochs; ++e) {
                    Tape tape;
                    BoundParams bound(tape, params);
                    Var logits;
                    if (mechanism == "graph_token") {
                        logits = model_forward(tape, ds, graph, run_cfg, bound, Mode::train, drop).logits;
                    } else {
                        EncodeResult enc = encode(tape, tape.constant(ds.features), graph,
                                                  run_cfg.encoder_config(), bound, Mode::train, drop);
                        logits = classify(tape, dense_node_attention(tape, enc.h, bound, run_cfg.attn_heads,
                                                                     run_cfg.dense_cap).z, bound);
                    }
                    Var loss = tape.cross_entropy(logits, ds.labels, all_nodes);
                    tape.backward(loss);
                    std::vector<std::pair<std::string, Tensor>> grads;
                    for (const auto& nm : params.names()) grads.emplace_back(nm, tape.grad(bound[nm]));
                    opt.step(params, grads);
                    peak_rss = std::max(peak_rss, current_rss_bytes());
                }
                const auto t1 = std::chrono::steady_clock::now();
                trial_secs.push_back(std::chrono::duration<double>(t1 - t0).count() /
                                     static_cast<double>(epochs));
            }
            std::sort(trial_secs.begin(), trial_secs.end());
            ScalingRecord rec;
            rec.n = n;
            rec.mechanism = mechanism;
            rec.m = mechanism == "graph_token" ? cfg.n_f * cfg.n_s : n;
            rec.seconds_per_epoch = trial_secs[trial_secs.size() / 2];
            rec.peak_rss_bytes = peak_rss;
            records.push_back(rec);
#if defined(__GLIBC__)
            malloc_trim(0);  // keep RSS samples comparable across cells
#endif
        }
    }
    return records;
}

double loglog_slope(const std::vector<ScalingRecord>& records, const std::string& mechanism) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& r : records)
        if (r.mechanism == mechanism) pts.emplace_back(std::log(static_cast<double>(r.n)), std::log(r.seconds_per_epoch));
    if (pts.size() < 2) throw ContractError("loglog_slope: need at least two points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& [x, y] : pts) {
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double k = static_cast<double>(pts.size());
    return (sxy - sx * sy / k) / (sxx - sx * sx / k);
}

// ---------------------------------------------------------------------------
// Token-count ablation
// ---------------------------------------------------------------------------

std::vector<AblationRecord> ablate_tokens(const GraphDataset& ds, const Split& split,
                                          const std::vector<std::int64_t>& list_sizes,
                                          const TrainConfig& base, const std::vector<std::uint64_t>& seeds) {
    if (list_sizes.empty() || seeds.empty()) throw ConfigError("ablate: sizes and seeds must be nonempty");
    std::vector<AblationRecord> out;
    for (const std::int64_t size : list_sizes) {
        const auto root = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(size))));
        if (root * root != size)
            throw ConfigError("ablate: list size " + std::to_string(size) +
                              " is not a perfect square (square factorization rule)");
        for (const std::uint64_t seed : seeds) {
            TrainConfig cfg = base;
            cfg.n_f = cfg.n_s = root;
            cfg.seed = seed;
            Stage1Result s1 = train_stage1(ds, cfg);
            Stage2Result s2 = train_stage2(ds, split, s1.checkpoint, cfg);
            AblationRecord rec;
            rec.list_size = size;
            rec.n_f = rec.n_s = root;
            rec.seed = seed;
            rec.val_metric = s2.best_val;
            rec.test_metric = s2.best_epoch >= 0
                                  ? s2.history[static_cast<std::size_t>(s2.best_epoch)].test_metric
                                  : 0.0;
            out.push_back(rec);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Artifact files
// ---------------------------------------------------------------------------

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    return f;
}

}  // namespace

void write_scaling_csv(const std::vector<ScalingRecord>& records, const std::filesystem::path& path) {
    auto f = open_out(path);
    f << "n,mechanism,m,seconds,bytes\n";
    for (const auto& r : records)
        f << r.n << "," << r.mechanism << "," << r.m << "," << format_double(r.seconds_per_epoch) << ","
          << r.peak_rss_bytes << "\n";
}

void write_ablation_csv(const std::vector<AblationRecord>& records, const std::filesystem::path& path) {
    auto f = open_out(path);
    f << "list_size,n_f,n_s,seed,val_metric,test_metric\n";
    for (const auto& r : records)
        f << r.list_size << "," << r.n_f << "," << r.n_s << "," << r.seed << ","
          << format_double(r.val_metric) << "," << format_double(r.test_metric) << "\n";
}

void write_attn_csv(const Tensor& weights, const std::filesystem::path& path) {
    auto f = open_out(path);
    for (std::int64_t i = 0; i < weights.rows(); ++i) {
        for (std::int64_t j = 0; j < weights.cols(); ++j) {
            if (j) f << ",";
            f << format_double(weights.at(i, j));
        }
        f << "\n";
    }
}

void write_metrics_csv(const std::vector<MetricReport>& reports, const std::filesystem::path& path) {
    auto f = open_out(path);
    f << "name,split,value,n_evaluated\n";
    for (const auto& r : reports)
        f << r.name << "," << r.split << "," << format_double(r.value) << "," << r.n_evaluated << "\n";
}

}  // namespace vecformer
