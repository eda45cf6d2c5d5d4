#include "tlc/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

#include "tlc/error.hpp"
#include "tlc/preprocess.hpp"

namespace tlc::training {

namespace fs = std::filesystem;
using nlohmann::json;
using ontology::LabelDistribution;
using ontology::Level;

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs", "epochs must be >= 1");
    if (!(lr_mono > 0.0)) throw ConfigError("lr_mono", "lr_mono must be > 0");
    if (!(lr_temporal > 0.0)) throw ConfigError("lr_temporal", "lr_temporal must be > 0");
    if (!(lr_decay_gamma > 0.0 && lr_decay_gamma <= 1.0))
        throw ConfigError("lr_decay_gamma", "lr_decay_gamma must be in (0, 1]");
    if (lr_decay_interval_epochs < 1)
        throw ConfigError("lr_decay_interval_epochs", "lr_decay_interval_epochs must be >= 1");
    if (!(focal_gamma >= 0.0)) throw ConfigError("focal_gamma", "focal_gamma must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size", "batch_size must be >= 1");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay", "weight_decay must be >= 0");
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau", "tau must lie in (0, 1)");
    if (reference_month < 1 || reference_month > data::kMonths)
        throw ConfigError("reference_month", "reference_month must be in 1..12");
    const double s = split.train + split.val + split.test;
    if (!(split.train > 0 && split.val > 0 && split.test > 0) || std::abs(s - 1.0) > 1e-9)
        throw ConfigError("split", "split fractions must be positive and sum to 1");
    encoder.validate();
    temporal.validate();
}

json TrainConfig::to_json() const {
    return {{"epochs", epochs},
            {"lr_mono", lr_mono},
            {"lr_temporal", lr_temporal},
            {"lr_decay_gamma", lr_decay_gamma},
            {"lr_decay_interval_epochs", lr_decay_interval_epochs},
            {"loss", to_string(loss)},
            {"focal_gamma", focal_gamma},
            {"batch_size", batch_size},
            {"seed", seed},
            {"weight_decay", weight_decay},
            {"tau", tau},
            {"reference_month", reference_month},
            {"split", {split.train, split.val, split.test}},
            {"encoder", encoder.to_json()},
            {"temporal", temporal.to_json()},
            {"manifest", manifest},
            {"level", ontology::to_string(level)}};
}

namespace {

template <typename T>
void read_field(const json& doc, const char* key, T& into) {
    if (!doc.contains(key)) return;
    try {
        into = doc.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(key, std::string("invalid value for '") + key + "'");
    }
}

}  // namespace

TrainConfig TrainConfig::from_json(const json& doc) {
    static const std::vector<std::string> known = {
        "epochs", "lr_mono", "lr_temporal", "lr_decay_gamma", "lr_decay_interval_epochs", "loss",
        "focal_gamma", "batch_size", "seed", "weight_decay", "tau", "reference_month", "split",
        "encoder", "temporal", "manifest", "level"};
    if (!doc.is_object()) throw ConfigError("<root>", "config must be a JSON object");
    for (const auto& [key, value] : doc.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ConfigError(key, "unknown config key '" + key + "'");
    TrainConfig c;
    read_field(doc, "epochs", c.epochs);
    read_field(doc, "lr_mono", c.lr_mono);
    read_field(doc, "lr_temporal", c.lr_temporal);
    read_field(doc, "lr_decay_gamma", c.lr_decay_gamma);
    read_field(doc, "lr_decay_interval_epochs", c.lr_decay_interval_epochs);
    if (doc.contains("loss")) {
        std::string name;
        read_field(doc, "loss", name);
        try {
            c.loss = parse_loss(name);
        } catch (const Error&) {
            throw ConfigError("loss", "loss must be KL, BCE or FOCAL");
        }
    }
    read_field(doc, "focal_gamma", c.focal_gamma);
    read_field(doc, "batch_size", c.batch_size);
    read_field(doc, "seed", c.seed);
    read_field(doc, "weight_decay", c.weight_decay);
    read_field(doc, "tau", c.tau);
    read_field(doc, "reference_month", c.reference_month);
    if (doc.contains("split")) {
        std::vector<double> f;
        read_field(doc, "split", f);
        if (f.size() != 3) throw ConfigError("split", "split needs three fractions");
        c.split = {f[0], f[1], f[2]};
    }
    if (doc.contains("encoder")) c.encoder = models::EncoderConfig::from_json(doc.at("encoder"));
    if (doc.contains("temporal")) c.temporal = models::TemporalHeadConfig::from_json(doc.at("temporal"));
    read_field(doc, "manifest", c.manifest);
    if (doc.contains("level")) {
        std::string name;
        read_field(doc, "level", name);
        try {
            c.level = ontology::parse_level(name);
        } catch (const Error&) {
            throw ConfigError("level", "level must be LEVEL1, LEVEL1_5 or LEVEL2");
        }
    }
    c.validate();
    return c;
}

TrainConfig TrainConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open config file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config", std::string("config is not valid JSON: ") + e.what());
    }
    auto c = from_json(doc);
    if (!c.manifest.empty() && fs::path(c.manifest).is_relative())
        c.manifest = (path.parent_path() / c.manifest).string();
    return c;
}

double scheduled_lr(double lr0, double gamma, int interval, int epoch) {
    return lr0 * std::pow(gamma, static_cast<double>(epoch / interval));
}

// ---------------------------------------------------------------------------
// Log

void TrainLog::save_jsonl(const fs::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write train log: " + path.string());
    for (const auto& e : epochs)
        out << json{{"epoch", e.epoch},
                    {"train_loss", e.train_loss},
                    {"val_loss", e.val_loss},
                    {"val_micro_f1", e.val_micro_f1},
                    {"lr", e.lr},
                    {"seconds", e.seconds},
                    {"best", e.epoch == best_epoch}}
                   .dump()
            << '\n';
}

TrainLog TrainLog::load_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open train log: " + path.string());
    TrainLog log;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        EpochLog e;
        e.epoch = j.at("epoch").get<int>();
        e.train_loss = j.at("train_loss").get<double>();
        e.val_loss = j.at("val_loss").get<double>();
        e.val_micro_f1 = j.at("val_micro_f1").get<double>();
        e.lr = j.at("lr").get<double>();
        e.seconds = j.at("seconds").get<double>();
        if (j.value("best", false)) log.best_epoch = e.epoch;
        log.epochs.push_back(e);
    }
    return log;
}

// ---------------------------------------------------------------------------
// Shared loop pieces

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<std::vector<double>> targets_at(const std::vector<data::PatchRecord>& records, Level level) {
    std::vector<std::vector<double>> out;
    out.reserve(records.size());
    if (level == Level::Level2) {
        for (const auto& r : records) out.push_back(r.label.probs());
        return out;
    }
    const auto map = ontology::Ontology::builtin().aggregation(Level::Level2, level);
    for (const auto& r : records) out.push_back(ontology::aggregate_probs(r.label.probs(), map));
    return out;
}

// Loss and d(loss)/d(logits) averaged over the batch columns.
double batch_loss(const TrainConfig& cfg, const models::Mat& logits,
                  const std::vector<std::vector<double>>& targets, std::span<const std::size_t> items,
                  models::Mat* grad) {
    const auto rows = logits.rows();
    const auto cols = logits.cols();
    if (grad) grad->resize(rows, cols);
    std::vector<double> z(static_cast<std::size_t>(rows));
    double total = 0.0;
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) z[i] = logits(i, j);
        const auto r = loss_from_logits(cfg.loss, targets[items[j]], z, cfg.focal_gamma);
        total += r.loss;
        if (grad)
            for (Eigen::Index i = 0; i < rows; ++i)
                (*grad)(i, j) = static_cast<float>(r.grad_logits[i] / static_cast<double>(cols));
    }
    return total;
}

struct ValScore {
    double loss = 0.0;
    double micro_f1 = 0.0;
};

ValScore score(const TrainConfig& cfg, const std::vector<LabelDistribution>& predicted,
               const std::vector<data::PatchRecord>& records,
               const std::vector<std::vector<double>>& targets, Level level) {
    ValScore s;
    if (records.empty()) return s;
    for (std::size_t i = 0; i < predicted.size(); ++i)
        s.loss += loss_value(cfg.loss, targets[i], predicted[i].probs(), cfg.focal_gamma);
    s.loss /= static_cast<double>(predicted.size());
    std::vector<LabelDistribution> truth;
    truth.reserve(records.size());
    for (const auto& r : records) truth.push_back(r.label);
    s.micro_f1 = evaluation::evaluate_distributions(predicted, truth, level, {cfg.tau}).micro_f1;
    return s;
}

std::vector<models::Mat> snapshot(const std::vector<nn::Param*>& params) {
    std::vector<models::Mat> out;
    out.reserve(params.size());
    for (const auto* p : params) out.push_back(p->value);
    return out;
}

void restore(const std::vector<nn::Param*>& params, const std::vector<models::Mat>& values) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

data::DatasetSplit choose_split(const std::vector<data::PatchRecord>& records, const TrainConfig& cfg,
                                const TrainOptions& options) {
    if (options.split) return *options.split;
    return data::stratified_split(records, cfg.split, cfg.seed);
}

// Epoch-level driver shared by both trainers. `step` runs one minibatch and
// returns its summed loss; `validate` scores the current weights.
template <typename StepFn, typename ValidateFn>
TrainLog run_epochs(const TrainConfig& cfg, double lr0, std::size_t n_train, std::vector<nn::Param*> params,
                    nn::Adam& adam, StepFn&& step, ValidateFn&& validate, bool has_val, bool verbose) {
    TrainLog log;
    const auto t_start = Clock::now();
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<models::Mat> best;
    double best_f1 = -1.0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = Clock::now();
        const double lr = scheduled_lr(lr0, cfg.lr_decay_gamma, cfg.lr_decay_interval_epochs, epoch);
        std::mt19937_64 shuffle_rng(cfg.seed * 1000003ull + static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double train_loss = 0.0;
        for (std::size_t start = 0; start < n_train; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(n_train, start + static_cast<std::size_t>(cfg.batch_size));
            adam.zero_grad();
            train_loss += step(std::span<const std::size_t>(order.data() + start, end - start));
            adam.step(lr);
        }
        const ValScore v = validate();
        EpochLog e{epoch, train_loss / static_cast<double>(n_train), v.loss, v.micro_f1, lr,
                   seconds_since(t0)};
        log.epochs.push_back(e);
        // Without a validation split the last epoch wins.
        if (!has_val || v.micro_f1 > best_f1) {
            best_f1 = v.micro_f1;
            best = snapshot(params);
            log.best_epoch = epoch;
        }
        if (verbose)
            std::cerr << "epoch " << epoch << " lr " << lr << " train_loss " << e.train_loss << " val_loss "
                      << e.val_loss << " val_micro_f1 " << e.val_micro_f1 << " (" << e.seconds << " s)\n";
    }
    restore(params, best);
    log.wall_seconds = seconds_since(t_start);
    return log;
}

}  // namespace

// ---------------------------------------------------------------------------
// Mono-temporal

MonoResult train_mono(const std::vector<data::PatchRecord>& records, const TrainConfig& config, Level level,
                      const TrainOptions& options) {
    config.validate();
    MonoResult result;
    result.split = choose_split(records, config, options);
    const auto train = data::select(records, result.split.train);
    const auto val = data::select(records, result.split.val);
    if (train.empty()) throw Error("empty train split");

    const int month = config.reference_month;
    data::PatchReader reader(static_cast<std::uint32_t>(config.encoder.patch_px));
    const auto read_all = [&](const std::vector<data::PatchRecord>& recs) {
        std::vector<Raster> out;
        out.reserve(recs.size());
        for (const auto& r : recs) out.push_back(reader.read(r, month));
        return out;
    };
    std::vector<Raster> train_px = read_all(train);
    const std::vector<Raster> val_raw = read_all(val);
    const auto stats = preprocess::compute_channel_stats(train_px);
    for (auto& r : train_px) r = preprocess::normalize_patch(r, stats);

    const auto train_targets = targets_at(train, level);
    const auto val_targets = targets_at(val, level);

    models::MonoNet net(config.encoder, ontology::expected_cardinality(level), config.seed);

    models::ArtifactInfo info;
    info.level = level;
    info.seed = config.seed;
    info.code_version = models::code_version();
    info.reference_month = month;
    info.train_config = config.to_json();
    // The model object owns the net from here on; training mutates it in place.
    auto model = std::make_shared<models::MonoModel>(std::move(net), stats, info);
    models::MonoNet& live = model->net();
    const auto params = live.params();
    nn::Adam live_adam(params, {.weight_decay = config.weight_decay});

    const std::size_t sample = train_px.front().data.size();
    const auto step = [&](std::span<const std::size_t> items) {
        models::Act batch;
        batch.n = static_cast<int>(items.size());
        batch.h = static_cast<int>(train_px.front().height);
        batch.w = static_cast<int>(train_px.front().width);
        batch.m.resize(train_px.front().channels, static_cast<Eigen::Index>(batch.n) * batch.h * batch.w);
        for (std::size_t b = 0; b < items.size(); ++b)
            std::copy_n(train_px[items[b]].data.data(), sample, batch.m.data() + b * sample);
        const models::Mat logits = live.logits_train(batch);
        models::Mat grad;
        const double loss = batch_loss(config, logits, train_targets, items, &grad);
        live.backward(grad);
        return loss;
    };
    const auto validate = [&] {
        if (val.empty()) return ValScore{};
        const auto predicted = model->predict(val.size(), [&](std::size_t i, int) { return val_raw[i]; });
        return score(config, predicted, val, val_targets, level);
    };
    result.log = run_epochs(config, config.lr_mono, train.size(), params, live_adam, step, validate,
                            !val.empty(), options.verbose);
    result.model = model;
    return result;
}

// ---------------------------------------------------------------------------
// Multi-temporal

TemporalResult train_temporal(const std::vector<data::PatchRecord>& records, const TrainConfig& config,
                              std::shared_ptr<const models::MonoModel> encoder, const TrainOptions& options) {
    config.validate();
    if (!encoder) throw Error("train_temporal needs an encoder model");
    for (const auto& r : records) {
        const auto missing = r.missing_months();
        if (!missing.empty())
            throw Error("patch " + r.patch_id + " is missing month " + std::to_string(missing.front()));
    }
    TemporalResult result;
    result.split = choose_split(records, config, options);
    const auto train = data::select(records, result.split.train);
    const auto val = data::select(records, result.split.val);
    if (train.empty()) throw Error("empty train split");

    const Level level = encoder->level();
    result.encoder_hash_before = encoder->weights_hash();

    data::PatchReader reader(static_cast<std::uint32_t>(encoder->patch_px()));
    const auto features_of = [&](const std::vector<data::PatchRecord>& recs) {
        return encoder->extract_feature_sequences(
            recs.size(), [&](std::size_t i, int month) { return reader.read(recs[i], month); });
    };
    std::vector<models::Mat> train_seq = features_of(train);
    std::vector<models::Mat> val_seq = features_of(val);
    if (!options.feature_cache.empty()) {
        fs::create_directories(options.feature_cache);
        models::save_feature_cache(options.feature_cache / "train_features.bin", train_seq);
        models::save_feature_cache(options.feature_cache / "val_features.bin", val_seq);
        train_seq = models::load_feature_cache(options.feature_cache / "train_features.bin");
        val_seq = models::load_feature_cache(options.feature_cache / "val_features.bin");
    }

    const auto train_targets = targets_at(train, level);
    const auto val_targets = targets_at(val, level);

    auto head_cfg = config.temporal;
    head_cfg.feature_dim = encoder->net().encoder().config().feature_dim();
    models::TemporalNet net(head_cfg, ontology::expected_cardinality(level), config.seed);

    models::ArtifactInfo info;
    info.level = level;
    info.seed = config.seed;
    info.code_version = models::code_version();
    info.reference_month = encoder->info().reference_month;
    auto cfg_json = config.to_json();
    cfg_json["temporal"] = head_cfg.to_json();
    info.train_config = cfg_json;
    auto model = std::make_shared<models::TemporalModel>(std::move(net), encoder, info);
    models::TemporalNet& live = model->net();
    auto params = live.params();
    nn::Adam adam(params, {.weight_decay = config.weight_decay});

    const auto step = [&](std::span<const std::size_t> items) {
        const auto seq = models::sequence_batch(train_seq, items);
        const models::Mat logits = live.logits_train(seq);
        models::Mat grad;
        const double loss = batch_loss(config, logits, train_targets, items, &grad);
        live.backward(grad);
        return loss;
    };
    const auto validate = [&] {
        if (val.empty()) return ValScore{};
        return score(config, model->predict_sequences(val_seq), val, val_targets, level);
    };
    result.log = run_epochs(config, config.lr_temporal, train.size(), params, adam, step, validate,
                            !val.empty(), options.verbose);

    result.encoder_hash_after = encoder->weights_hash();
    if (result.encoder_hash_after != result.encoder_hash_before)
        throw Error("encoder weights changed during temporal training");
    result.model = model;
    return result;
}

void save_run(const fs::path& dir, const models::Model& model, const TrainLog& log,
              const data::DatasetSplit& split) {
    model.save(dir);
    log.save_jsonl(dir / "train_log.jsonl");
    std::ofstream out(dir / "split.json", std::ios::trunc);
    if (!out) throw Error("cannot write split.json in " + dir.string());
    out << split.to_json().dump() << '\n';
}

}  // namespace tlc::training
