// Command-line entry point binding the library pipelines: data generation,
// two-stage training, evaluation, diagnostics, ablations and benchmarks.
// Exit codes: 0 success, 1 runtime failure (one-line error on stderr),
// 2 usage error.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "vecformer/errors.hpp"
#include "vecformer/evalbench.hpp"
#include "vecformer/generators.hpp"
#include "vecformer/graphio.hpp"
#include "vecformer/trainer.hpp"

namespace fs = std::filesystem;
using namespace vecformer;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<std::int64_t> parse_int_list(const std::string& s, const char* flag) {
    std::vector<std::int64_t> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const std::size_t comma = s.find(',', pos);
        const std::string item = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        try {
            std::size_t used = 0;
            out.push_back(std::stoll(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError(std::string("bad integer list for ") + flag + ": '" + s + "'");
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

std::vector<std::string> parse_str_list(const std::string& s) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const std::size_t comma = s.find(',', pos);
        out.push_back(s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

TrainConfig load_config(const std::string& config_path, bool have_seed, std::uint64_t seed) {
    TrainConfig cfg = config_path.empty() ? TrainConfig{} : TrainConfig::load(config_path);
    if (have_seed) cfg.seed = seed;  // explicit flag overrides the config file
    return cfg;
}

fs::path stage1_file(const fs::path& p) { return fs::is_directory(p) ? p / "stage1.vfck" : p; }

void cmd_gen_sbm(const std::string& blocks, double p_in, double p_out, std::int64_t feat_dim,
                 double feat_signal, std::uint64_t seed, const fs::path& out) {
    Rng rng(seed);
    GraphDataset ds = gen_sbm(parse_int_list(blocks, "--blocks"), p_in, p_out, feat_dim, feat_signal, rng);
    save_graph(ds, out);
    std::cout << "wrote sbm graph: n=" << ds.n() << " edges=" << ds.adjacency.num_edges()
              << " classes=" << ds.num_classes << " -> " << out.string() << "\n";
}

void cmd_gen_spurious(const fs::path& base, std::int64_t spurious_dim, double id_corr, double ood_corr,
                      std::uint64_t seed, const fs::path& out) {
    Rng rng(seed);
    GraphDataset ds = gen_spurious_shift(load_graph(base), spurious_dim, id_corr, ood_corr, rng);
    save_graph(ds, out);
    std::cout << "wrote spurious-shift graph: n=" << ds.n() << " d=" << ds.feat_dim() << " -> "
              << out.string() << "\n";
}

void cmd_gen_knn(const fs::path& signals_path, std::int64_t k, std::int64_t de_target,
                 std::int64_t de_radius, std::uint64_t seed, const fs::path& out) {
    Tensor signals = load_csv_matrix(signals_path);
    SparseAdjacency adj = build_knn_correlation_graph(signals, k);
    GraphDataset ds{std::move(adj), std::move(signals), {}, Tensor{}, 1, {}};
    Rng rng(seed);
    if (de_target >= 0) {
        ds.labels = gen_de_labels(ds, de_target, de_radius, rng);
        ds.num_classes = 2;
    } else {
        ds.labels.assign(static_cast<std::size_t>(ds.n()), 0);
    }
    save_graph(ds, out);
    std::cout << "wrote knn graph: n=" << ds.n() << " edges=" << ds.adjacency.num_edges() << " -> "
              << out.string() << "\n";
}

void cmd_train_codebook(const fs::path& data, const std::string& config, bool have_seed,
                        std::uint64_t seed, const fs::path& out) {
    GraphDataset ds = load_graph(data);
    TrainConfig cfg = load_config(config, have_seed, seed);
    Stage1Result r = train_stage1(ds, cfg);
    write_stage1_csv(r.history, out / "stage1_loss.csv");
    r.checkpoint.save(out / "stage1.vfck");
    if (!r.history.empty())
        std::cout << "stage1: epochs=" << r.history.size() << " initial=" << format_double(r.history.front().total)
                  << " final=" << format_double(r.history.back().total) << "\n";
    std::cout << "wrote " << (out / "stage1.vfck").string() << "\n";
}

void cmd_finetune(const fs::path& data, const std::string& stage1, const std::string& config,
                  bool have_seed, std::uint64_t seed, const fs::path& out) {
    GraphDataset ds = load_graph(data);
    TrainConfig cfg = load_config(config, have_seed, seed);
    Split split = derive_split(ds, cfg);

    if (!cfg.grid.is_null()) {
        GridSpace space = GridSpace::from_json(cfg.grid);
        GridResult gr = grid_search(ds, split, space, cfg);
        write_leaderboard_csv(gr.rows, out / "leaderboard.csv");
        Stage1Result s1 = train_stage1(ds, gr.best);
        Stage2Result s2 = train_stage2(ds, split, s1.checkpoint, gr.best);
        write_stage2_csv(s2.history, out / "stage2_metrics.csv");
        s2.checkpoint.save(out / "stage2.vfck");
        std::cout << "grid: " << gr.rows.size() << " configs, best " << s2.metric_name << "="
                  << format_double(gr.rows.front().val_metric) << "\n";
        return;
    }

    if (stage1.empty()) throw UsageError("finetune: --stage1 is required unless the config has a grid");
    Checkpoint ck = Checkpoint::load(stage1_file(stage1));
    Stage2Result s2 = train_stage2(ds, split, ck, cfg);
    write_stage2_csv(s2.history, out / "stage2_metrics.csv");
    s2.checkpoint.save(out / "stage2.vfck");
    std::cout << "stage2: best " << s2.metric_name << "=" << format_double(s2.best_val) << " at epoch "
              << s2.best_epoch << "\n";
}

void cmd_eval(const fs::path& data, const fs::path& checkpoint, const std::string& config,
              const fs::path& out) {
    GraphDataset ds = load_graph(data);
    Checkpoint ck = Checkpoint::load(checkpoint);
    TrainConfig cfg = config.empty() ? TrainConfig::from_json(ck.config) : TrainConfig::load(config);
    Split split = derive_split(ds, cfg);

    Tape tape;
    BoundParams bound(tape, ck.params, {""});
    GraphContext graph = GraphContext::build(ds.adjacency);
    Rng drop(0);
    ModelForward fwd = model_forward(tape, ds, graph, cfg, bound, Mode::eval, drop);
    const Tensor& logits = tape.value(fwd.logits);

    const std::string metric = resolve_metric(cfg, ds);
    std::vector<MetricReport> reports;
    auto add = [&](const std::vector<std::int64_t>& mask, const std::string& name) {
        if (mask.empty()) return;
        reports.push_back({metric, evaluate_metric(metric, logits, ds, mask, name), name,
                           static_cast<std::int64_t>(mask.size())});
    };
    add(split.train, "train");
    add(split.val, "val");
    add(split.test, "test");
    add(split.ood_test, "ood_test");
    write_metrics_csv(reports, out / "metrics.csv");
    for (const auto& r : reports)
        std::cout << r.split << " " << r.name << "=" << format_double(r.value) << " (n=" << r.n_evaluated
                  << ")\n";
}

void cmd_diagnose(const fs::path& data, const fs::path& checkpoint, const std::string& config,
                  const fs::path& out) {
    GraphDataset ds = load_graph(data);
    Checkpoint ck = Checkpoint::load(checkpoint);
    TrainConfig cfg = config.empty() ? TrainConfig::from_json(ck.config) : TrainConfig::load(config);
    Split split = derive_split(ds, cfg);

    DiagnosticsReport rep = diagnose(ds, split, ck, cfg);
    fs::create_directories(out);
    std::ofstream f(out / "diagnostics.json", std::ios::binary);
    f << rep.to_json().dump(2) << "\n";
    write_attn_csv(attention_weight_matrix(ds, ck, cfg), out / "attn.csv");
    std::cout << "diagnostics: mean_attn_std=" << format_double(rep.attn.mean_std)
              << " min_qk_constrained=" << format_double(rep.constrained_min_qk) << "\n";
}

void cmd_ablate(const fs::path& data, const std::string& config, const std::string& sizes,
                const std::string& seeds, bool have_seed, std::uint64_t seed, const fs::path& out) {
    GraphDataset ds = load_graph(data);
    TrainConfig cfg = load_config(config, have_seed, seed);
    Split split = derive_split(ds, cfg);
    std::vector<std::uint64_t> seed_list;
    for (const auto v : parse_int_list(seeds, "--seeds")) seed_list.push_back(static_cast<std::uint64_t>(v));
    auto records = ablate_tokens(ds, split, parse_int_list(sizes, "--sizes"), cfg, seed_list);
    write_ablation_csv(records, out / "ablation_tokens.csv");
    std::cout << "ablation: " << records.size() << " runs -> " << (out / "ablation_tokens.csv").string()
              << "\n";
}

void cmd_bench(const std::string& n_list, const std::string& mechanisms, const std::string& config,
               std::int64_t epochs, std::int64_t trials, std::int64_t list_size, bool have_seed,
               std::uint64_t seed, const fs::path& out) {
    TrainConfig cfg = load_config(config, have_seed, seed);
    const auto ns = parse_int_list(n_list, "--n");
    const auto root = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(list_size))));
    if (root * root != list_size) throw UsageError("--list-size must be a perfect square");
    cfg.n_f = cfg.n_s = root;
    // The sweep sizes are explicit; lift the dense cap to cover them.
    for (const auto n : ns) cfg.dense_cap = std::max(cfg.dense_cap, n);
    auto records = bench_scaling(ns, parse_str_list(mechanisms), cfg, epochs, trials, cfg.seed);
    write_scaling_csv(records, out / "scaling.csv");
    for (const auto& r : records)
        std::cout << r.mechanism << " n=" << r.n << " sec/epoch=" << format_double(r.seconds_per_epoch)
                  << " rss=" << r.peak_rss_bytes << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vecformer: two-stage vector-quantized graph transformer toolkit"};
    app.require_subcommand(1);
    std::function<void()> action;

    std::uint64_t seed = 0;
    std::string config, out;

    // ---- gen ----
    auto* gen = app.add_subcommand("gen", "generate synthetic graph containers");
    gen->require_subcommand(1);
    {
        auto* sbm = gen->add_subcommand("sbm", "stochastic block model graph");
        auto blocks = std::make_shared<std::string>();
        auto p_in = std::make_shared<double>(0.5);
        auto p_out = std::make_shared<double>(0.05);
        auto feat_dim = std::make_shared<std::int64_t>(8);
        auto feat_signal = std::make_shared<double>(2.0);
        sbm->add_option("--blocks", *blocks, "comma-separated block sizes")->required();
        sbm->add_option("--p-in", *p_in, "within-block edge probability");
        sbm->add_option("--p-out", *p_out, "cross-block edge probability");
        sbm->add_option("--feat-dim", *feat_dim, "feature width");
        sbm->add_option("--feat-signal", *feat_signal, "class-coordinate magnitude");
        sbm->add_option("--seed", seed, "rng seed");
        sbm->add_option("--out", out, "output directory")->required();
        sbm->callback([=, &action, &seed, &out] {
            action = [=, &seed, &out] {
                cmd_gen_sbm(*blocks, *p_in, *p_out, *feat_dim, *feat_signal, seed, out);
            };
        });
    }
    {
        auto* sp = gen->add_subcommand("spurious", "append spurious-feature distribution shift");
        auto base = std::make_shared<std::string>();
        auto dim = std::make_shared<std::int64_t>(1);
        auto id_corr = std::make_shared<double>(0.95);
        auto ood_corr = std::make_shared<double>(0.05);
        sp->add_option("--base", *base, "source graph container")->required();
        sp->add_option("--spurious-dim", *dim, "number of appended columns");
        sp->add_option("--id-corr", *id_corr, "label correlation on ID nodes");
        sp->add_option("--ood-corr", *ood_corr, "label correlation on OOD nodes");
        sp->add_option("--seed", seed, "rng seed");
        sp->add_option("--out", out, "output directory")->required();
        sp->callback([=, &action, &seed, &out] {
            action = [=, &seed, &out] { cmd_gen_spurious(*base, *dim, *id_corr, *ood_corr, seed, out); };
        });
    }
    {
        auto* knn = gen->add_subcommand("knn", "correlation k-NN graph from a signal matrix");
        auto signals = std::make_shared<std::string>();
        auto k = std::make_shared<std::int64_t>(5);
        auto de_target = std::make_shared<std::int64_t>(-1);
        auto de_radius = std::make_shared<std::int64_t>(2);
        knn->add_option("--signals", *signals, "CSV of per-node signal rows")->required();
        knn->add_option("--k", *k, "neighbours per node before union");
        knn->add_option("--de-target", *de_target, "perturbation target node (omit for no labels)");
        knn->add_option("--de-radius", *de_radius, "BFS radius labeled as differentially expressed");
        knn->add_option("--seed", seed, "rng seed");
        knn->add_option("--out", out, "output directory")->required();
        knn->callback([=, &action, &seed, &out] {
            action = [=, &seed, &out] { cmd_gen_knn(*signals, *k, *de_target, *de_radius, seed, out); };
        });
    }

    // ---- training and evaluation ----
    {
        auto* tc = app.add_subcommand("train-codebook", "stage 1: codebook pretraining");
        auto data = std::make_shared<std::string>();
        tc->add_option("--data", *data, "graph container")->required();
        auto* seed_opt = tc->add_option("--seed", seed, "overrides the config seed");
        tc->add_option("--config", config, "config JSON");
        tc->add_option("--out", out, "output directory")->required();
        tc->callback([=, &action, &seed, &config, &out] {
            const bool have_seed = seed_opt->count() > 0;
            action = [=, &seed, &config, &out] { cmd_train_codebook(*data, config, have_seed, seed, out); };
        });
    }
    {
        auto* ft = app.add_subcommand("finetune", "stage 2: classification finetuning");
        auto data = std::make_shared<std::string>();
        auto stage1 = std::make_shared<std::string>();
        ft->add_option("--data", *data, "graph container")->required();
        ft->add_option("--stage1", *stage1, "stage-1 checkpoint file or its directory");
        auto* seed_opt = ft->add_option("--seed", seed, "overrides the config seed");
        ft->add_option("--config", config, "config JSON (a 'grid' key triggers grid search)");
        ft->add_option("--out", out, "output directory")->required();
        ft->callback([=, &action, &seed, &config, &out] {
            const bool have_seed = seed_opt->count() > 0;
            action = [=, &seed, &config, &out] {
                cmd_finetune(*data, *stage1, config, have_seed, seed, out);
            };
        });
    }
    {
        auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the derived split");
        auto data = std::make_shared<std::string>();
        auto ckpt = std::make_shared<std::string>();
        ev->add_option("--data", *data, "graph container")->required();
        ev->add_option("--checkpoint", *ckpt, "stage-2 checkpoint file")->required();
        ev->add_option("--config", config, "config JSON (defaults to the checkpoint snapshot)");
        ev->add_option("--out", out, "output directory")->required();
        ev->callback([=, &action, &config, &out] {
            action = [=, &config, &out] { cmd_eval(*data, *ckpt, config, out); };
        });
    }
    {
        auto* dg = app.add_subcommand("diagnose", "attention diagnostics and raw weight dump");
        auto data = std::make_shared<std::string>();
        auto ckpt = std::make_shared<std::string>();
        dg->add_option("--data", *data, "graph container")->required();
        dg->add_option("--checkpoint", *ckpt, "stage-2 checkpoint file")->required();
        dg->add_option("--config", config, "config JSON (defaults to the checkpoint snapshot)");
        dg->add_option("--out", out, "output directory")->required();
        dg->callback([=, &action, &config, &out] {
            action = [=, &config, &out] { cmd_diagnose(*data, *ckpt, config, out); };
        });
    }
    {
        auto* ab = app.add_subcommand("ablate", "token-count ablation sweep");
        auto data = std::make_shared<std::string>();
        auto sizes = std::make_shared<std::string>("4,16,64,256");
        auto seeds = std::make_shared<std::string>("0,1,2,3,4");
        ab->add_option("--data", *data, "graph container")->required();
        ab->add_option("--sizes", *sizes, "token-list sizes (perfect squares)");
        ab->add_option("--seeds", *seeds, "comma-separated seeds");
        auto* seed_opt = ab->add_option("--seed", seed, "overrides the config seed (split derivation)");
        ab->add_option("--config", config, "config JSON");
        ab->add_option("--out", out, "output directory")->required();
        ab->callback([=, &action, &seed, &config, &out] {
            const bool have_seed = seed_opt->count() > 0;
            action = [=, &seed, &config, &out] {
                cmd_ablate(*data, config, *sizes, *seeds, have_seed, seed, out);
            };
        });
    }
    {
        auto* be = app.add_subcommand("bench", "attention-mechanism scaling benchmark");
        auto n_list = std::make_shared<std::string>();
        auto mechanisms = std::make_shared<std::string>("dense_node,graph_token");
        auto epochs = std::make_shared<std::int64_t>(3);
        auto trials = std::make_shared<std::int64_t>(3);
        auto list_size = std::make_shared<std::int64_t>(256);
        be->add_option("--n", *n_list, "comma-separated node counts")->required();
        be->add_option("--mechanisms", *mechanisms, "dense_node,graph_token");
        be->add_option("--epochs", *epochs, "epochs per trial");
        be->add_option("--trials", *trials, "trials per cell (median reported)");
        be->add_option("--list-size", *list_size, "graph token list size M (perfect square)");
        auto* seed_opt = be->add_option("--seed", seed, "rng seed");
        be->add_option("--config", config, "config JSON");
        be->add_option("--out", out, "output directory")->required();
        be->callback([=, &action, &seed, &config, &out] {
            const bool have_seed = seed_opt->count() > 0;
            action = [=, &seed, &config, &out] {
                cmd_bench(*n_list, *mechanisms, config, *epochs, *trials, *list_size, have_seed, seed, out);
            };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }

    try {
        action();
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
