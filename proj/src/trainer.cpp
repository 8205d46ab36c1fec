#include "vecformer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "vecformer/errors.hpp"
#include "vecformer/metrics.hpp"

namespace vecformer {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (lr <= 0) throw ConfigError("lr must be positive");
    if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
    if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must lie in [0,1)");
    if (hidden_dim < 1 || m < 1 || n < 1 || n_f < 1 || n_s < 1)
        throw ConfigError("dims and codebook/token sizes must be >= 1");
    if (temperature <= 0) throw ConfigError("temperature must be positive");
    if (gamma_f < 1 || gamma_g < 1) throw ConfigError("gamma exponents must be >= 1");
    if (stage1_epochs < 0 || stage2_epochs < 0 || patience < 0)
        throw ConfigError("epochs and patience must be >= 0");
    if (eta < 0) throw ConfigError("eta must be >= 0");
    if (metric != "auto" && metric != "accuracy" && metric != "auc")
        throw ConfigError("metric must be auto|accuracy|auc, got '" + metric + "'");
    encoder_config().validate();
    recon_config().validate();
}

EncoderConfig TrainConfig::encoder_config() const {
    EncoderConfig e;
    e.kind = encoder_kind;
    e.layers = encoder_layers;
    e.hidden_dim = hidden_dim;
    e.heads = encoder_heads;
    e.dropout = dropout;
    e.residual = encoder_residual;
    e.negative_slope = negative_slope;
    return e;
}

ReconConfig TrainConfig::recon_config() const {
    ReconConfig r;
    r.gamma_f = gamma_f;
    r.gamma_g = gamma_g;
    r.structure_mode = structure_mode;
    r.neg_ratio = neg_ratio;
    r.dense_cap = dense_cap;
    r.w_feat = w_feat;
    r.w_struct = w_struct;
    r.w_graph = w_graph;
    return r;
}

json TrainConfig::to_json() const {
    json j;
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["dropout"] = dropout;
    j["hidden_dim"] = hidden_dim;
    j["m"] = m;
    j["n"] = n;
    j["n_f"] = n_f;
    j["n_s"] = n_s;
    j["temperature"] = temperature;
    j["gamma_f"] = gamma_f;
    j["gamma_g"] = gamma_g;
    j["stage1_epochs"] = stage1_epochs;
    j["stage2_epochs"] = stage2_epochs;
    j["patience"] = patience;
    j["seed"] = seed;
    j["freeze_encoder"] = freeze_encoder;
    j["freeze_codebooks"] = freeze_codebooks;
    j["freeze_fusion"] = freeze_fusion;
    j["encoder_kind"] = encoder_kind == EncoderKind::gat ? "gat" : "gcn";
    j["encoder_layers"] = encoder_layers;
    j["encoder_heads"] = encoder_heads;
    j["negative_slope"] = negative_slope;
    j["encoder_residual"] = encoder_residual;
    j["structure_mode"] = structure_mode == StructureMode::dense_exact ? "dense_exact" : "negative_sampling";
    j["neg_ratio"] = neg_ratio;
    j["dense_cap"] = dense_cap;
    j["w_feat"] = w_feat;
    j["w_struct"] = w_struct;
    j["w_graph"] = w_graph;
    j["attn_heads"] = attn_heads;
    j["fusion_normalize"] = fusion_normalize;
    j["eta"] = eta;
    j["train_ratio"] = split.train;
    j["val_ratio"] = split.val;
    j["test_ratio"] = split.test;
    j["metric"] = metric;
    if (!grid.is_null()) j["grid"] = grid;
    return j;
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    for (const auto& [key, value] : j.items()) {
        if (key == "lr") c.lr = value.get<double>();
        else if (key == "weight_decay") c.weight_decay = value.get<double>();
        else if (key == "dropout") c.dropout = value.get<double>();
        else if (key == "hidden_dim") c.hidden_dim = value.get<std::int64_t>();
        else if (key == "m") c.m = value.get<std::int64_t>();
        else if (key == "n") c.n = value.get<std::int64_t>();
        else if (key == "n_f") c.n_f = value.get<std::int64_t>();
        else if (key == "n_s") c.n_s = value.get<std::int64_t>();
        else if (key == "temperature") c.temperature = value.get<double>();
        else if (key == "gamma_f") c.gamma_f = value.get<double>();
        else if (key == "gamma_g") c.gamma_g = value.get<double>();
        else if (key == "stage1_epochs") c.stage1_epochs = value.get<std::int64_t>();
        else if (key == "stage2_epochs") c.stage2_epochs = value.get<std::int64_t>();
        else if (key == "patience") c.patience = value.get<std::int64_t>();
        else if (key == "seed") c.seed = value.get<std::uint64_t>();
        else if (key == "freeze_encoder") c.freeze_encoder = value.get<bool>();
        else if (key == "freeze_codebooks") c.freeze_codebooks = value.get<bool>();
        else if (key == "freeze_fusion") c.freeze_fusion = value.get<bool>();
        else if (key == "encoder_kind") {
            const std::string k = value.get<std::string>();
            if (k == "gat") c.encoder_kind = EncoderKind::gat;
            else if (k == "gcn") c.encoder_kind = EncoderKind::gcn;
            else throw ConfigError("encoder_kind must be gat|gcn, got '" + k + "'");
        } else if (key == "encoder_layers") c.encoder_layers = value.get<std::int64_t>();
        else if (key == "encoder_heads") c.encoder_heads = value.get<std::int64_t>();
        else if (key == "negative_slope") c.negative_slope = value.get<double>();
        else if (key == "encoder_residual") c.encoder_residual = value.get<bool>();
        else if (key == "structure_mode") {
            const std::string mode = value.get<std::string>();
            if (mode == "dense_exact") c.structure_mode = StructureMode::dense_exact;
            else if (mode == "negative_sampling") c.structure_mode = StructureMode::negative_sampling;
            else throw ConfigError("structure_mode must be dense_exact|negative_sampling, got '" + mode + "'");
        } else if (key == "neg_ratio") c.neg_ratio = value.get<std::int64_t>();
        else if (key == "dense_cap") c.dense_cap = value.get<std::int64_t>();
        else if (key == "w_feat") c.w_feat = value.get<double>();
        else if (key == "w_struct") c.w_struct = value.get<double>();
        else if (key == "w_graph") c.w_graph = value.get<double>();
        else if (key == "attn_heads") c.attn_heads = value.get<std::int64_t>();
        else if (key == "fusion_normalize") c.fusion_normalize = value.get<bool>();
        else if (key == "eta") c.eta = value.get<double>();
        else if (key == "train_ratio") c.split.train = value.get<double>();
        else if (key == "val_ratio") c.split.val = value.get<double>();
        else if (key == "test_ratio") c.split.test = value.get<double>();
        else if (key == "metric") c.metric = value.get<std::string>();
        else if (key == "grid") c.grid = value;
        else throw ConfigError("unknown config key '" + key + "'");
    }
    c.validate();
    return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& file) {
    std::ifstream f(file);
    if (!f) throw IoError("cannot open config " + file.string());
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw FormatError(file.string() + ": " + e.what());
    }
    return from_json(j);
}

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay
// ---------------------------------------------------------------------------

Adam::Adam(double lr, double weight_decay, double beta1, double beta2, double eps)
    : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::step(ParamStore& params, const std::vector<std::pair<std::string, Tensor>>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
        Tensor& p = params.at(name);
        if (!p.same_shape(g))
            throw ContractError("adam: gradient shape " + g.shape_str() + " vs parameter " + p.shape_str());
        Tensor& m = m_.try_emplace(name, Tensor(p.shape())).first->second;
        Tensor& v = v_.try_emplace(name, Tensor(p.shape())).first->second;
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
            v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            p[i] -= lr_ * (mh / (std::sqrt(vh) + eps_) + wd_ * p[i]);
        }
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

namespace {

bool is_frozen(const std::string& name, const std::vector<std::string>& frozen) {
    for (const auto& p : frozen)
        if (name.rfind(p, 0) == 0) return true;
    return false;
}

std::vector<std::pair<std::string, Tensor>> collect_grads(Tape& tape, const BoundParams& bound,
                                                          const ParamStore& params,
                                                          const std::vector<std::string>& frozen) {
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(params.size());
    for (const auto& name : params.names()) {
        if (is_frozen(name, frozen)) continue;
        out.emplace_back(name, tape.grad(bound[name]));
    }
    return out;
}

std::vector<std::string> frozen_prefixes(const TrainConfig& cfg) {
    std::vector<std::string> out;
    if (cfg.freeze_encoder) out.push_back("encoder.");
    if (cfg.freeze_codebooks) out.push_back("codebook.");
    if (cfg.freeze_fusion) out.push_back("fusion.");
    return out;
}

Var classification_loss(Tape& tape, Var logits, const GraphDataset& ds,
                        const std::vector<std::int64_t>& mask) {
    if (ds.multilabel()) return tape.bce_with_logits(logits, ds.label_matrix, mask);
    return tape.cross_entropy(logits, ds.labels, mask);
}

}  // namespace

Split derive_split(const GraphDataset& ds, const TrainConfig& cfg) {
    Rng rng(cfg.seed ^ 0x5917e11ull);
    if (ds.has_env()) return make_env_split(ds, cfg.split, rng);
    return make_split(ds.n(), cfg.split, rng);
}

std::string resolve_metric(const TrainConfig& cfg, const GraphDataset& ds) {
    if (cfg.metric != "auto") return cfg.metric == "auc" ? "roc_auc" : cfg.metric;
    if (ds.multilabel() || ds.num_classes == 2) return "roc_auc";
    return "accuracy";
}

double evaluate_metric(const std::string& metric, const Tensor& logits, const GraphDataset& ds,
                       const std::vector<std::int64_t>& mask, const std::string& split) {
    if (metric == "accuracy") return accuracy(logits, ds.labels, mask, split).value;
    if (ds.multilabel()) {
        // mean ROC AUC over label columns that carry both classes in the mask
        double acc = 0.0;
        std::int64_t used = 0;
        for (std::int64_t c = 0; c < ds.num_classes; ++c) {
            std::vector<double> scores(static_cast<std::size_t>(ds.n()), 0.0);
            std::vector<std::int64_t> lab(static_cast<std::size_t>(ds.n()), 0);
            std::int64_t pos = 0, neg = 0;
            for (const auto row : mask) {
                const double z = logits.at(row, c);
                scores[static_cast<std::size_t>(row)] = 1.0 / (1.0 + std::exp(-z));
                lab[static_cast<std::size_t>(row)] = ds.label_matrix.at(row, c) > 0.5 ? 1 : 0;
                (lab[static_cast<std::size_t>(row)] == 1 ? pos : neg) += 1;
            }
            if (pos == 0 || neg == 0) continue;
            acc += roc_auc(scores, lab, mask, split).value;
            ++used;
        }
        if (used == 0) throw ContractError("roc_auc: no label column carries both classes in the mask");
        return acc / static_cast<double>(used);
    }
    if (ds.num_classes != 2)
        throw ContractError("roc_auc needs binary labels; dataset has " + std::to_string(ds.num_classes) +
                            " classes");
    std::vector<double> scores(static_cast<std::size_t>(ds.n()), 0.0);
    for (const auto row : mask) {
        const double margin = logits.at(row, 1) - logits.at(row, 0);
        scores[static_cast<std::size_t>(row)] = 1.0 / (1.0 + std::exp(-margin));
    }
    return roc_auc(scores, ds.labels, mask, split).value;
}

// ---------------------------------------------------------------------------
// Stage 1
// ---------------------------------------------------------------------------

Stage1Result train_stage1(const GraphDataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    ds.validate();

    Rng root(cfg.seed);
    Rng init_rng = root.fork(1);
    Rng dropout_rng = root.fork(2);
    Rng sample_rng = root.fork(3);

    const EncoderConfig ecfg = cfg.encoder_config();
    const ReconConfig rcfg = cfg.recon_config();

    ParamStore params = encoder_param_init(ecfg, ds.feat_dim(), init_rng);
    params.insert("codebook.feature", codebook_init(cfg.m, cfg.hidden_dim, init_rng));
    params.insert("codebook.structure", codebook_init(cfg.n, cfg.hidden_dim, init_rng));
    params.insert("fusion.w", fusion_init(cfg.hidden_dim, init_rng));
    params.merge(decoder_init(cfg.hidden_dim, ds.feat_dim(), cfg.hidden_dim, init_rng));

    const GraphContext graph = GraphContext::build(ds.adjacency);
    Adam opt(cfg.lr, cfg.weight_decay);

    Stage1Result result;
    for (std::int64_t epoch = 0; epoch < cfg.stage1_epochs; ++epoch) {
        Tape tape;
        BoundParams bound(tape, params);
        Var features = tape.constant(ds.features);
        EncodeResult enc = encode(tape, features, graph, ecfg, bound, Mode::train, dropout_rng);
        TokenBundle bundle = quantize_node(tape, enc.h, bound["codebook.feature"],
                                           bound["codebook.structure"], cfg.temperature, bound["fusion.w"],
                                           cfg.fusion_normalize);
        Stage1Loss loss = stage1_loss(tape, ds.adjacency, features, enc.h, bundle, bound, rcfg, sample_rng);

        Stage1EpochRecord rec{epoch, tape.value(loss.feature_term)[0], tape.value(loss.structure_term)[0],
                              tape.value(loss.graph_term)[0], tape.value(loss.total)[0]};
        if (!std::isfinite(rec.total))
            throw NumericError("stage1: non-finite loss at epoch " + std::to_string(epoch));
        result.history.push_back(rec);

        tape.backward(loss.total);
        opt.step(params, collect_grads(tape, bound, params, {}));
    }

    result.checkpoint.stage = 1;
    result.checkpoint.config = cfg.to_json();
    result.checkpoint.rng_state = root.state();
    result.checkpoint.params = std::move(params);
    return result;
}

// ---------------------------------------------------------------------------
// Stage 2 and the dense baseline
// ---------------------------------------------------------------------------

ModelForward model_forward(Tape& tape, const GraphDataset& ds, const GraphContext& graph,
                           const TrainConfig& cfg, const BoundParams& params, Mode mode,
                           Rng& dropout_rng) {
    ModelForward out;
    EncodeResult enc = encode(tape, tape.constant(ds.features), graph, cfg.encoder_config(), params, mode,
                              dropout_rng);
    out.h = enc.h;
    out.bundle = quantize_node(tape, enc.h, params["codebook.feature"], params["codebook.structure"],
                               cfg.temperature, params["fusion.w"], cfg.fusion_normalize);
    out.token_list = build_token_list(tape, params["codebook.feature"], params["codebook.structure"],
                                      params["tokenlist.W_F"], params["tokenlist.W_S"], params["fusion.w"],
                                      cfg.fusion_normalize);
    out.attn = cross_attention(tape, out.bundle.g, out.token_list.g_t, params, cfg.attn_heads);
    out.logits = classify(tape, out.attn.z, params);
    return out;
}

namespace {

// Shared finetuning loop; `forward` produces logits for the current mode.
template <typename ForwardFn>
Stage2Result finetune_loop(const GraphDataset& ds, const Split& split, const TrainConfig& cfg,
                           ParamStore params, const std::vector<std::string>& frozen, Rng& root,
                           ForwardFn&& forward) {
    split.validate(ds.n());
    if (split.train.empty() || split.val.empty() || split.test.empty())
        throw ContractError("finetune: train/val/test must be nonempty");

    const std::string metric = resolve_metric(cfg, ds);
    Adam opt(cfg.lr, cfg.weight_decay);

    Stage2Result result;
    result.metric_name = metric;
    ParamStore best_params = params;

    for (std::int64_t epoch = 0; epoch < cfg.stage2_epochs; ++epoch) {
        double train_loss;
        {
            Tape tape;
            BoundParams bound(tape, params, frozen);
            Var logits = forward(tape, bound, Mode::train);
            Var loss = classification_loss(tape, logits, ds, split.train);
            train_loss = tape.value(loss)[0];
            if (!std::isfinite(train_loss))
                throw NumericError("finetune: non-finite loss at epoch " + std::to_string(epoch));
            tape.backward(loss);
            opt.step(params, collect_grads(tape, bound, params, frozen));
        }

        Stage2EpochRecord rec{};
        rec.epoch = epoch;
        rec.train_loss = train_loss;
        {
            Tape tape;
            BoundParams bound(tape, params, {""});  // all frozen: evaluation only
            Var logits = forward(tape, bound, Mode::eval);
            const Tensor& z = tape.value(logits);
            rec.train_metric = evaluate_metric(metric, z, ds, split.train, "train");
            rec.val_metric = evaluate_metric(metric, z, ds, split.val, "val");
            rec.test_metric = evaluate_metric(metric, z, ds, split.test, "test");
            rec.ood_metric = split.ood_test.empty()
                                 ? std::numeric_limits<double>::quiet_NaN()
                                 : evaluate_metric(metric, z, ds, split.ood_test, "ood_test");
        }
        result.history.push_back(rec);

        if (rec.val_metric > result.best_val || result.best_epoch < 0) {
            result.best_val = rec.val_metric;
            result.best_epoch = epoch;
            best_params = params;
        } else if (epoch - result.best_epoch > cfg.patience) {
            break;
        }
    }

    result.checkpoint.stage = 2;
    result.checkpoint.config = cfg.to_json();
    result.checkpoint.rng_state = root.state();
    result.checkpoint.params = std::move(best_params);
    return result;
}

}  // namespace

Stage2Result train_stage2(const GraphDataset& ds, const Split& split, const Checkpoint& stage1,
                          const TrainConfig& cfg) {
    cfg.validate();
    ds.validate();
    if (stage1.stage != 1) throw ContractError("train_stage2: checkpoint is not a stage-1 checkpoint");

    // Dimensional compatibility with the requested config.
    const auto check_shape = [&](const std::string& name, std::vector<std::int64_t> shape) {
        if (!stage1.params.contains(name))
            throw ContractError("train_stage2: checkpoint lacks '" + name + "'");
        if (stage1.params.at(name).shape() != shape)
            throw ContractError("train_stage2: '" + name + "' has shape " +
                                stage1.params.at(name).shape_str() + ", config expects " +
                                shape_to_string(shape));
    };
    check_shape("codebook.feature", {cfg.m, cfg.hidden_dim});
    check_shape("codebook.structure", {cfg.n, cfg.hidden_dim});
    check_shape("fusion.w", {2 * cfg.hidden_dim, 2});

    Rng root(cfg.seed + 0x5747u);  // stage-2 stream, distinct from stage 1
    Rng init_rng = root.fork(1);
    Rng dropout_rng = root.fork(2);

    // Pretrained groups carried over; decoders are stage-1 only.
    ParamStore params;
    for (const auto& name : stage1.params.names())
        if (name.rfind("decoder.", 0) != 0) params.insert(name, stage1.params.at(name));
    params.merge(token_list_init(cfg.m, cfg.n, cfg.n_f, cfg.n_s, init_rng));
    params.merge(attention_param_init(cfg.hidden_dim, ds.num_classes, init_rng));

    const GraphContext graph = GraphContext::build(ds.adjacency);
    auto forward = [&](Tape& tape, const BoundParams& bound, Mode mode) {
        return model_forward(tape, ds, graph, cfg, bound, mode, dropout_rng).logits;
    };
    return finetune_loop(ds, split, cfg, std::move(params), frozen_prefixes(cfg), root, forward);
}

Stage2Result train_dense_baseline(const GraphDataset& ds, const Split& split, const TrainConfig& cfg) {
    cfg.validate();
    ds.validate();

    Rng root(cfg.seed + 0xba5eu);
    Rng init_rng = root.fork(1);
    Rng dropout_rng = root.fork(2);

    ParamStore params = encoder_param_init(cfg.encoder_config(), ds.feat_dim(), init_rng);
    params.merge(attention_param_init(cfg.hidden_dim, ds.num_classes, init_rng));

    const GraphContext graph = GraphContext::build(ds.adjacency);
    auto forward = [&](Tape& tape, const BoundParams& bound, Mode mode) {
        EncodeResult enc = encode(tape, tape.constant(ds.features), graph, cfg.encoder_config(), bound,
                                  mode, dropout_rng);
        AttentionOut attn = dense_node_attention(tape, enc.h, bound, cfg.attn_heads, cfg.dense_cap);
        return classify(tape, attn.z, bound);
    };
    return finetune_loop(ds, split, cfg, std::move(params), {}, root, forward);
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

namespace {

const std::vector<double> kGridLr{0.001, 0.005, 0.01};
const std::vector<std::int64_t> kGridHidden{64, 128, 256};
const std::vector<double> kGridWd{1e-3, 5e-4, 1e-4};
const std::vector<double> kGridDropout{0.1, 0.3, 0.5, 0.7};
const std::vector<double> kGridT{0.5, 1.0, 2.0};
const std::vector<double> kGridGamma{1.0, 2.0, 4.0};

template <typename T>
void check_axis(const std::vector<T>& vals, const std::vector<T>& declared, const char* axis) {
    for (const auto& v : vals)
        if (std::find(declared.begin(), declared.end(), v) == declared.end())
            throw ConfigError(std::string("grid: value outside the declared ") + axis + " space");
}

}  // namespace

void GridSpace::validate() const {
    if (lr.empty() && weight_decay.empty() && dropout.empty() && temperature.empty() && gamma.empty() &&
        hidden_dim.empty())
        throw ConfigError("grid: empty space");
    check_axis(lr, kGridLr, "lr");
    check_axis(hidden_dim, kGridHidden, "hidden_dim");
    check_axis(weight_decay, kGridWd, "weight_decay");
    check_axis(dropout, kGridDropout, "dropout");
    check_axis(temperature, kGridT, "temperature");
    check_axis(gamma, kGridGamma, "gamma");
    if (budget < 0) throw ConfigError("grid: budget must be >= 0");
}

GridSpace GridSpace::from_json(const json& j) {
    GridSpace s;
    for (const auto& [key, value] : j.items()) {
        if (key == "lr") s.lr = value.get<std::vector<double>>();
        else if (key == "hidden_dim") s.hidden_dim = value.get<std::vector<std::int64_t>>();
        else if (key == "weight_decay") s.weight_decay = value.get<std::vector<double>>();
        else if (key == "dropout") s.dropout = value.get<std::vector<double>>();
        else if (key == "temperature") s.temperature = value.get<std::vector<double>>();
        else if (key == "gamma") s.gamma = value.get<std::vector<double>>();
        else if (key == "budget") s.budget = value.get<std::int64_t>();
        else throw ConfigError("grid: unknown axis '" + key + "'");
    }
    s.validate();
    return s;
}

GridResult grid_search(const GraphDataset& ds, const Split& split, const GridSpace& space,
                       const TrainConfig& base) {
    space.validate();
    const auto lr_axis = space.lr.empty() ? std::vector<double>{base.lr} : space.lr;
    const auto hid_axis = space.hidden_dim.empty() ? std::vector<std::int64_t>{base.hidden_dim} : space.hidden_dim;
    const auto wd_axis = space.weight_decay.empty() ? std::vector<double>{base.weight_decay} : space.weight_decay;
    const auto do_axis = space.dropout.empty() ? std::vector<double>{base.dropout} : space.dropout;
    const auto t_axis = space.temperature.empty() ? std::vector<double>{base.temperature} : space.temperature;
    const auto g_axis = space.gamma.empty() ? std::vector<double>{0.0} : space.gamma;  // 0 = keep base

    GridResult result;
    std::int64_t budget = space.budget;
    for (const double lr : lr_axis)
        for (const std::int64_t hid : hid_axis)
            for (const double wd : wd_axis)
                for (const double dr : do_axis)
                    for (const double tt : t_axis)
                        for (const double gm : g_axis) {
                            if (budget > 0 && static_cast<std::int64_t>(result.rows.size()) >= budget)
                                goto done;
                            TrainConfig cfg = base;
                            cfg.grid = json();
                            cfg.lr = lr;
                            cfg.hidden_dim = hid;
                            cfg.weight_decay = wd;
                            cfg.dropout = dr;
                            cfg.temperature = tt;
                            if (gm > 0) cfg.gamma_f = cfg.gamma_g = gm;

                            Stage1Result s1 = train_stage1(ds, cfg);
                            Stage2Result s2 = train_stage2(ds, split, s1.checkpoint, cfg);
                            const double test = s2.best_epoch >= 0
                                                    ? s2.history[static_cast<std::size_t>(s2.best_epoch)].test_metric
                                                    : 0.0;
                            result.rows.push_back({cfg, s2.best_val, test});
                        }
done:
    if (result.rows.empty()) throw ConfigError("grid: no configurations enumerated");
    std::stable_sort(result.rows.begin(), result.rows.end(),
                     [](const LeaderboardRow& a, const LeaderboardRow& b) { return a.val_metric > b.val_metric; });
    result.best = result.rows.front().config;
    return result;
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

static std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    return f;
}

void write_stage1_csv(const std::vector<Stage1EpochRecord>& history, const std::filesystem::path& path) {
    auto f = open_out(path);
    f << "epoch,feature_term,structure_term,graph_term,total\n";
    for (const auto& r : history)
        f << r.epoch << "," << format_double(r.feature_term) << "," << format_double(r.structure_term)
          << "," << format_double(r.graph_term) << "," << format_double(r.total) << "\n";
}

void write_stage2_csv(const std::vector<Stage2EpochRecord>& history, const std::filesystem::path& path) {
    auto f = open_out(path);
    const bool has_ood = !history.empty() && !std::isnan(history.front().ood_metric);
    f << "epoch,train_loss,train_metric,val_metric,test_metric" << (has_ood ? ",ood_metric" : "") << "\n";
    for (const auto& r : history) {
        f << r.epoch << "," << format_double(r.train_loss) << "," << format_double(r.train_metric) << ","
          << format_double(r.val_metric) << "," << format_double(r.test_metric);
        if (has_ood) f << "," << format_double(r.ood_metric);
        f << "\n";
    }
}

void write_leaderboard_csv(const std::vector<LeaderboardRow>& rows, const std::filesystem::path& path) {
    auto f = open_out(path);
    f << "rank,lr,hidden_dim,weight_decay,dropout,temperature,gamma_f,gamma_g,val_metric,test_metric\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const TrainConfig& c = rows[i].config;
        f << (i + 1) << "," << format_double(c.lr) << "," << c.hidden_dim << ","
          << format_double(c.weight_decay) << "," << format_double(c.dropout) << ","
          << format_double(c.temperature) << "," << format_double(c.gamma_f) << ","
          << format_double(c.gamma_g) << "," << format_double(rows[i].val_metric) << ","
          << format_double(rows[i].test_metric) << "\n";
    }
}

}  // namespace vecformer
