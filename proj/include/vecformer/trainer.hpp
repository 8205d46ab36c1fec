#pragma once

// Two-stage training orchestration: stage 1 optimizes encoder, codebooks,
// fusion and decoders on the reconstruction objective; stage 2 builds the
// graph token list and finetunes on a classification loss with early
// stopping. Adam (beta1 0.9, beta2 0.999, eps 1e-8) with decoupled weight
// decay throughout. Everything is deterministic in (seed, config, data).

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "vecformer/checkpoint.hpp"
#include "vecformer/encoder.hpp"
#include "vecformer/graph.hpp"
#include "vecformer/quantizer.hpp"
#include "vecformer/reconstruction.hpp"
#include "vecformer/tokenformer.hpp"

namespace vecformer {

struct TrainConfig {
    double lr = 0.005;
    double weight_decay = 5e-4;
    double dropout = 0.1;
    std::int64_t hidden_dim = 64;
    std::int64_t m = 256;   // feature codebook size
    std::int64_t n = 256;   // structure codebook size
    std::int64_t n_f = 64;  // token-list extents
    std::int64_t n_s = 64;
    double temperature = 1.0;
    double gamma_f = 2.0;
    double gamma_g = 2.0;
    std::int64_t stage1_epochs = 100;
    std::int64_t stage2_epochs = 300;
    std::int64_t patience = 50;
    std::uint64_t seed = 0;
    bool freeze_encoder = false;
    bool freeze_codebooks = false;
    bool freeze_fusion = false;

    EncoderKind encoder_kind = EncoderKind::gat;
    std::int64_t encoder_layers = 2;
    std::int64_t encoder_heads = 1;
    double negative_slope = 0.2;
    bool encoder_residual = true;

    StructureMode structure_mode = StructureMode::dense_exact;
    std::int64_t neg_ratio = 5;
    std::int64_t dense_cap = 4096;
    double w_feat = 1.0, w_struct = 1.0, w_graph = 1.0;

    std::int64_t attn_heads = 1;
    bool fusion_normalize = false;
    double eta = 0.25;  // commitment weight of the vanilla-VQ baseline

    SplitRatios split;
    std::string metric = "auto";  // auto | accuracy | auc

    nlohmann::json grid;  // optional grid-search request (see GridSpace)

    void validate() const;
    nlohmann::json to_json() const;
    // Unknown keys are rejected with a config error naming the key.
    static TrainConfig from_json(const nlohmann::json& j);
    static TrainConfig load(const std::filesystem::path& file);

    EncoderConfig encoder_config() const;
    ReconConfig recon_config() const;
};

class Adam {
  public:
    Adam(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    // Applies one update; `grads` pairs parameter names with gradients, in
    // deterministic order. Decoupled weight decay on every updated tensor.
    void step(ParamStore& params, const std::vector<std::pair<std::string, Tensor>>& grads);

  private:
    double lr_, wd_, b1_, b2_, eps_;
    std::int64_t t_ = 0;
    std::unordered_map<std::string, Tensor> m_, v_;
};

struct Stage1EpochRecord {
    std::int64_t epoch;
    double feature_term, structure_term, graph_term, total;
};

struct Stage1Result {
    Checkpoint checkpoint;
    std::vector<Stage1EpochRecord> history;
};

Stage1Result train_stage1(const GraphDataset& ds, const TrainConfig& cfg);

struct Stage2EpochRecord {
    std::int64_t epoch;
    double train_loss;
    double train_metric, val_metric, test_metric;
    double ood_metric;  // NaN when the split has no ood_test
};

struct Stage2Result {
    Checkpoint checkpoint;  // best-validation parameters
    std::vector<Stage2EpochRecord> history;
    std::int64_t best_epoch = -1;
    double best_val = 0.0;
    std::string metric_name;
};

Stage2Result train_stage2(const GraphDataset& ds, const Split& split, const Checkpoint& stage1,
                          const TrainConfig& cfg);

// Node-level dense-attention transformer over the same encoder: the
// comparison baseline. Trained single-stage on the classification loss.
Stage2Result train_dense_baseline(const GraphDataset& ds, const Split& split, const TrainConfig& cfg);

// One forward pass of the finetuned model; reusable by evaluation and
// diagnostics. Parameters must contain encoder, codebooks, fusion, token
// list, attention and classifier tensors.
struct ModelForward {
    Var h;
    TokenBundle bundle;
    GraphTokenList token_list;
    AttentionOut attn;
    Var logits;
};
ModelForward model_forward(Tape& tape, const GraphDataset& ds, const GraphContext& graph,
                           const TrainConfig& cfg, const BoundParams& params, Mode mode,
                           Rng& dropout_rng);

// Canonical split derivation: environment split (ID ratios + OOD set) when
// the dataset carries environment ids, plain ratio split otherwise. The rng
// stream is a fixed function of the config seed, so (seed, config, data)
// fully determines the split.
Split derive_split(const GraphDataset& ds, const TrainConfig& cfg);

// Metric resolution: "auto" picks roc_auc for binary or multilabel data,
// accuracy otherwise.
std::string resolve_metric(const TrainConfig& cfg, const GraphDataset& ds);

// Computes the resolved metric ("accuracy" or "roc_auc") from logits over a
// node mask. Binary AUC scores are softmax class-1 probabilities; multilabel
// AUC averages per-column AUCs over columns holding both classes.
double evaluate_metric(const std::string& metric, const Tensor& logits, const GraphDataset& ds,
                       const std::vector<std::int64_t>& mask, const std::string& split);

// ---- grid search ----

struct GridSpace {
    std::vector<double> lr, weight_decay, dropout, temperature, gamma;
    std::vector<std::int64_t> hidden_dim;
    std::int64_t budget = 0;  // 0 = exhaustive

    // Values must lie inside the declared search spaces:
    //   lr {0.001, 0.005, 0.01}, hidden {64, 128, 256},
    //   weight decay {1e-3, 5e-4, 1e-4}, dropout {0.1, 0.3, 0.5, 0.7},
    //   temperature {0.5, 1.0, 2.0}, gamma {1, 2, 4}.
    void validate() const;
    static GridSpace from_json(const nlohmann::json& j);
};

struct LeaderboardRow {
    TrainConfig config;
    double val_metric;
    double test_metric;
};

struct GridResult {
    TrainConfig best;
    std::vector<LeaderboardRow> rows;  // sorted by val metric, descending
};

GridResult grid_search(const GraphDataset& ds, const Split& split, const GridSpace& space,
                       const TrainConfig& base);

// ---- CSV emission (uses %.17g so reruns are byte-identical) ----
void write_stage1_csv(const std::vector<Stage1EpochRecord>& history, const std::filesystem::path& path);
void write_stage2_csv(const std::vector<Stage2EpochRecord>& history, const std::filesystem::path& path);
void write_leaderboard_csv(const std::vector<LeaderboardRow>& rows, const std::filesystem::path& path);

std::string format_double(double v);

}  // namespace vecformer
