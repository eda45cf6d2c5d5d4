#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tlc/data.hpp"
#include "tlc/evaluation.hpp"
#include "tlc/losses.hpp"
#include "tlc/models.hpp"

namespace tlc::training {

struct TrainConfig {
    int epochs = 20;
    double lr_mono = 1e-4;
    double lr_temporal = 1e-5;
    double lr_decay_gamma = 0.1;
    int lr_decay_interval_epochs = 1;
    LossKind loss = LossKind::KL;
    double focal_gamma = kDefaultFocalGamma;
    int batch_size = 64;
    std::uint64_t seed = 0;
    double weight_decay = 0.0;
    // Threshold used for validation micro-F1 during checkpoint selection.
    double tau = 0.1;
    int reference_month = data::kDefaultReferenceMonth;
    data::SplitFractions split;
    models::EncoderConfig encoder;
    models::TemporalHeadConfig temporal;
    // Optional, so a config file can name its corpus.
    std::string manifest;
    ontology::Level level = ontology::Level::Level2;

    void validate() const;
    nlohmann::json to_json() const;
    // Unknown keys raise ConfigError naming the key.
    static TrainConfig from_json(const nlohmann::json& doc);
    static TrainConfig load(const std::filesystem::path& path);
};

// lr0 * gamma^floor(epoch / interval), epoch counted from zero.
double scheduled_lr(double lr0, double gamma, int interval, int epoch);

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_micro_f1 = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    int best_epoch = -1;
    double wall_seconds = 0.0;

    void save_jsonl(const std::filesystem::path& path) const;
    static TrainLog load_jsonl(const std::filesystem::path& path);
};

struct MonoResult {
    std::shared_ptr<models::MonoModel> model;
    TrainLog log;
    data::DatasetSplit split;
};

struct TemporalResult {
    std::shared_ptr<models::TemporalModel> model;
    TrainLog log;
    data::DatasetSplit split;
    std::uint64_t encoder_hash_before = 0;
    std::uint64_t encoder_hash_after = 0;
};

struct TrainOptions {
    // Reuse a fixed split instead of drawing one from the config seed.
    std::optional<data::DatasetSplit> split;
    // Where train_temporal writes its feature cache; empty keeps it in memory.
    std::filesystem::path feature_cache;
    bool verbose = false;
};

// End-to-end encoder + head training on the reference month. Keeps the
// checkpoint with the best validation micro-F1.
MonoResult train_mono(const std::vector<data::PatchRecord>& records, const TrainConfig& config,
                      ontology::Level level, const TrainOptions& options = {});

// Trains only the recurrent head over frozen encoder features of all 12 months.
TemporalResult train_temporal(const std::vector<data::PatchRecord>& records, const TrainConfig& config,
                              std::shared_ptr<const models::MonoModel> encoder,
                              const TrainOptions& options = {});

// Writes model, split.json and train_log.jsonl into dir.
void save_run(const std::filesystem::path& dir, const models::Model& model, const TrainLog& log,
              const data::DatasetSplit& split);

}  // namespace tlc::training
