#include "tlc/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "tlc/error.hpp"

#ifndef TLC_CODE_VERSION
#define TLC_CODE_VERSION "unknown"
#endif

namespace tlc::models {

namespace fs = std::filesystem;
using nlohmann::json;
using ontology::LabelDistribution;
using ontology::Level;

std::string code_version() { return TLC_CODE_VERSION; }

// ---------------------------------------------------------------------------
// Configs

namespace {

struct StageLayout {
    bool bottleneck;
    std::vector<int> depths;
};

StageLayout layout_for(const std::string& backbone) {
    if (backbone == "resnet50") return {true, {3, 4, 6, 3}};
    if (backbone == "resnet18") return {false, {2, 2, 2, 2}};
    throw ConfigError("backbone", "unknown backbone '" + backbone + "' (resnet50 or resnet18)");
}

template <typename T>
void read_opt(const json& doc, const char* key, T& into) {
    if (doc.contains(key)) {
        try {
            into = doc.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(key, std::string("invalid value for '") + key + "'");
        }
    }
}

void reject_unknown(const json& doc, std::initializer_list<const char*> known, const char* where) {
    for (const auto& [key, value] : doc.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw ConfigError(key, std::string("unknown ") + where + " key '" + key + "'");
    }
}

}  // namespace

int EncoderConfig::feature_dim() const {
    const auto layout = layout_for(backbone);
    return layout.bottleneck ? 32 * base_width : 8 * base_width;
}

void EncoderConfig::validate() const {
    layout_for(backbone);
    if (input_channels != 4) throw ConfigError("input_channels", "encoder takes 4-channel RGB-N input");
    if (base_width <= 0) throw ConfigError("base_width", "base_width must be positive");
    if (stem_kernel <= 0 || stem_kernel % 2 == 0)
        throw ConfigError("stem_kernel", "stem_kernel must be a positive odd number");
    if (stem_stride <= 0) throw ConfigError("stem_stride", "stem_stride must be positive");
    if (patch_px <= 0) throw ConfigError("patch_px", "patch_px must be positive");
    if (nir_init != "rgb_mean" && nir_init != "random")
        throw ConfigError("nir_init", "nir_init must be rgb_mean or random");
    if (pretrained_init && pretrained_stem.empty())
        throw ConfigError("pretrained_stem", "pretrained_init needs a pretrained_stem weights file");
}

json EncoderConfig::to_json() const {
    return {{"backbone", backbone},           {"input_channels", input_channels},
            {"base_width", base_width},       {"stem_kernel", stem_kernel},
            {"stem_stride", stem_stride},     {"patch_px", patch_px},
            {"residual_scale_init", residual_scale_init},
            {"pretrained_init", pretrained_init}, {"pretrained_stem", pretrained_stem},
            {"nir_init", nir_init},           {"feature_dim", feature_dim()}};
}

EncoderConfig EncoderConfig::from_json(const json& doc) {
    reject_unknown(doc,
                   {"backbone", "input_channels", "base_width", "stem_kernel", "stem_stride",
                    "patch_px", "residual_scale_init", "pretrained_init", "pretrained_stem",
                    "nir_init", "feature_dim"},
                   "encoder");
    EncoderConfig c;
    read_opt(doc, "backbone", c.backbone);
    read_opt(doc, "input_channels", c.input_channels);
    read_opt(doc, "base_width", c.base_width);
    read_opt(doc, "stem_kernel", c.stem_kernel);
    read_opt(doc, "stem_stride", c.stem_stride);
    read_opt(doc, "patch_px", c.patch_px);
    read_opt(doc, "residual_scale_init", c.residual_scale_init);
    read_opt(doc, "pretrained_init", c.pretrained_init);
    read_opt(doc, "pretrained_stem", c.pretrained_stem);
    read_opt(doc, "nir_init", c.nir_init);
    c.validate();
    if (doc.contains("feature_dim") && doc.at("feature_dim").get<int>() != c.feature_dim())
        throw ConfigError("feature_dim", "feature_dim does not match the backbone layout");
    return c;
}

void TemporalHeadConfig::validate() const {
    if (sequence_length <= 0) throw ConfigError("sequence_length", "sequence_length must be positive");
    if (feature_dim <= 0) throw ConfigError("feature_dim", "feature_dim must be positive");
    if (lstm_hidden <= 0) throw ConfigError("lstm_hidden", "lstm_hidden must be positive");
    if (lstm_layers <= 0) throw ConfigError("lstm_layers", "lstm_layers must be positive");
    if (fc_dim <= 0) throw ConfigError("fc_dim", "fc_dim must be positive");
}

json TemporalHeadConfig::to_json() const {
    return {{"sequence_length", sequence_length}, {"feature_dim", feature_dim},
            {"lstm_hidden", lstm_hidden},         {"lstm_layers", lstm_layers},
            {"fc_dim", fc_dim}};
}

TemporalHeadConfig TemporalHeadConfig::from_json(const json& doc) {
    reject_unknown(doc, {"sequence_length", "feature_dim", "lstm_hidden", "lstm_layers", "fc_dim"},
                   "temporal");
    TemporalHeadConfig c;
    read_opt(doc, "sequence_length", c.sequence_length);
    read_opt(doc, "feature_dim", c.feature_dim);
    read_opt(doc, "lstm_hidden", c.lstm_hidden);
    read_opt(doc, "lstm_layers", c.lstm_layers);
    read_opt(doc, "fc_dim", c.fc_dim);
    c.validate();
    return c;
}

Mat adapt_input_channels(const Mat& rgb_weights, int kernel) {
    if (kernel <= 0 || rgb_weights.cols() != static_cast<Eigen::Index>(kernel) * kernel * 3)
        throw Error("first-layer weights must be out x (k*k*3) for kernel " + std::to_string(kernel) +
                    ", got " + std::to_string(rgb_weights.rows()) + "x" +
                    std::to_string(rgb_weights.cols()));
    const Eigen::Index taps = static_cast<Eigen::Index>(kernel) * kernel;
    Mat out(rgb_weights.rows(), taps * 4);
    for (Eigen::Index o = 0; o < rgb_weights.rows(); ++o)
        for (Eigen::Index t = 0; t < taps; ++t) {
            const float r = rgb_weights(o, t * 3 + 0);
            const float g = rgb_weights(o, t * 3 + 1);
            const float b = rgb_weights(o, t * 3 + 2);
            out(o, t * 4 + 0) = r;
            out(o, t * 4 + 1) = g;
            out(o, t * 4 + 2) = b;
            out(o, t * 4 + 3) = (r + g + b) / 3.0f;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Encoder

namespace {

void init_conv(nn::Conv2d& conv, nn::Rng& rng) {
    nn::he_normal(conv.weight, conv.kernel() * conv.kernel() * conv.in_channels(), rng);
}

Mat global_average_pool(const Act& x) {
    const Eigen::Index hw = static_cast<Eigen::Index>(x.h) * x.w;
    Mat f(x.m.rows(), x.n);
    for (int n = 0; n < x.n; ++n)
        f.col(n) = x.m.middleCols(n * hw, hw).rowwise().sum() / static_cast<float>(hw);
    return f;
}

Act global_average_pool_backward(const Mat& df, int n, int h, int w) {
    const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
    Act dx;
    dx.n = n;
    dx.h = h;
    dx.w = w;
    dx.m.resize(df.rows(), n * hw);
    for (int i = 0; i < n; ++i)
        dx.m.middleCols(i * hw, hw) = (df.col(i) / static_cast<float>(hw)).replicate(1, hw);
    return dx;
}

}  // namespace

Encoder::Encoder(const EncoderConfig& config, nn::Rng& rng) : config_(config) {
    config_.validate();
    const auto layout = layout_for(config_.backbone);
    const int w = config_.base_width;
    stem_ = nn::Conv2d("stem", config_.input_channels, w, config_.stem_kernel, config_.stem_stride,
                       config_.stem_kernel / 2, true);
    init_conv(stem_, rng);
    if (config_.pretrained_init) {
        nn::Param rgb("stem.weight", w, static_cast<Eigen::Index>(config_.stem_kernel) * config_.stem_kernel * 3);
        nn::load_params(config_.pretrained_stem, {&rgb});
        Mat adapted = adapt_input_channels(rgb.value, config_.stem_kernel);
        if (config_.nir_init == "random") {
            const Eigen::Index taps = static_cast<Eigen::Index>(config_.stem_kernel) * config_.stem_kernel;
            for (Eigen::Index t = 0; t < taps; ++t) adapted.col(t * 4 + 3) = stem_.weight.value.col(t * 4 + 3);
        }
        stem_.weight.value = adapted;
    }

    int in = w;
    for (std::size_t s = 0; s < layout.depths.size(); ++s) {
        const int mid = w << s;
        const int out = layout.bottleneck ? 4 * mid : mid;
        for (int d = 0; d < layout.depths[s]; ++d) {
            const int stride = (s > 0 && d == 0) ? 2 : 1;
            const std::string name = "layer" + std::to_string(s + 1) + "." + std::to_string(d);
            Block b;
            if (layout.bottleneck) {
                b.branch.emplace_back(name + ".conv1", in, mid, 1, 1, 0, true);
                b.branch.emplace_back(name + ".conv2", mid, mid, 3, stride, 1, true);
                b.branch.emplace_back(name + ".conv3", mid, out, 1, 1, 0, true);
            } else {
                b.branch.emplace_back(name + ".conv1", in, out, 3, stride, 1, true);
                b.branch.emplace_back(name + ".conv2", out, out, 3, 1, 1, true);
            }
            for (auto& conv : b.branch) init_conv(conv, rng);
            if (stride != 1 || in != out) {
                b.shortcut.emplace(name + ".shortcut", in, out, 1, stride, 0, true);
                init_conv(*b.shortcut, rng);
            }
            b.scale = nn::Param(name + ".scale", 1, 1);
            b.scale.value(0, 0) = config_.residual_scale_init;
            blocks_.push_back(std::move(b));
            in = out;
        }
    }
}

Act Encoder::block_forward(const Block& b, const Act& x) const {
    Act h = x;
    for (std::size_t j = 0; j < b.branch.size(); ++j) {
        h = b.branch[j].forward(h);
        if (j + 1 < b.branch.size()) h.m = nn::relu(h.m);
    }
    Act out = b.shortcut ? b.shortcut->forward(x) : x;
    out.m = (out.m + b.scale.value(0, 0) * h.m).cwiseMax(0.0f);
    return out;
}

Act Encoder::block_forward_train(Block& b, const Act& x) {
    b.branch_out.clear();
    Act h = x;
    for (std::size_t j = 0; j < b.branch.size(); ++j) {
        h = b.branch[j].forward_train(h);
        if (j + 1 < b.branch.size()) h.m = nn::relu(h.m);
        b.branch_out.push_back(h);
    }
    Act out = b.shortcut ? b.shortcut->forward_train(x) : x;
    out.m = (out.m + b.scale.value(0, 0) * h.m).cwiseMax(0.0f);
    b.output = out;
    return out;
}

Act Encoder::block_backward(Block& b, const Act& dy) {
    Act d = dy;
    d.m = nn::relu_backward(dy.m, b.output.m);
    b.scale.grad(0, 0) += d.m.cwiseProduct(b.branch_out.back().m).sum();
    Act dh = d;
    dh.m = b.scale.value(0, 0) * d.m;
    for (std::size_t j = b.branch.size(); j-- > 0;) {
        if (j + 1 < b.branch.size()) dh.m = nn::relu_backward(dh.m, b.branch_out[j].m);
        dh = b.branch[j].backward(dh);
    }
    Act dx = b.shortcut ? b.shortcut->backward(d) : d;
    dx.m += dh.m;
    return dx;
}

Mat Encoder::features(const Act& x) const {
    if (x.channels() != config_.input_channels)
        throw Error("encoder expects " + std::to_string(config_.input_channels) + " channels, got " +
                    std::to_string(x.channels()));
    Act h = stem_.forward(x);
    h.m = nn::relu(h.m);
    for (const auto& b : blocks_) h = block_forward(b, h);
    return global_average_pool(h);
}

Mat Encoder::features_train(const Act& x) {
    if (x.channels() != config_.input_channels)
        throw Error("encoder expects " + std::to_string(config_.input_channels) + " channels, got " +
                    std::to_string(x.channels()));
    Act h = stem_.forward_train(x);
    h.m = nn::relu(h.m);
    stem_out_ = h;
    for (auto& b : blocks_) h = block_forward_train(b, h);
    last_out_ = h;
    return global_average_pool(h);
}

void Encoder::backward(const Mat& d_features) {
    Act d = global_average_pool_backward(d_features, last_out_.n, last_out_.h, last_out_.w);
    for (std::size_t i = blocks_.size(); i-- > 0;) d = block_backward(blocks_[i], d);
    d.m = nn::relu_backward(d.m, stem_out_.m);
    stem_.backward(d);
}

void Encoder::collect(std::vector<nn::Param*>& out) {
    stem_.collect(out);
    for (auto& b : blocks_) {
        for (auto& conv : b.branch) conv.collect(out);
        if (b.shortcut) b.shortcut->collect(out);
        out.push_back(&b.scale);
    }
}

std::vector<const nn::Param*> Encoder::const_params() const {
    std::vector<nn::Param*> tmp;
    const_cast<Encoder*>(this)->collect(tmp);
    return {tmp.begin(), tmp.end()};
}

// ---------------------------------------------------------------------------
// Networks

MonoNet::MonoNet(const EncoderConfig& config, std::size_t n_classes, std::uint64_t seed)
    : n_classes_(n_classes),
      encoder_([&] {
          nn::Rng rng(seed);
          return Encoder(config, rng);
      }()),
      head_("head", config.feature_dim(), static_cast<int>(n_classes)) {
    nn::Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    nn::uniform_init(head_.weight, 1.0f / std::sqrt(static_cast<float>(config.feature_dim())), rng);
}

Mat MonoNet::logits(const Act& x) const { return head_.forward(encoder_.features(x)); }

Mat MonoNet::logits_train(const Act& x) { return head_.forward_train(encoder_.features_train(x)); }

void MonoNet::backward(const Mat& d_logits) { encoder_.backward(head_.backward(d_logits)); }

std::vector<Param*> MonoNet::params() {
    std::vector<Param*> out;
    encoder_.collect(out);
    head_.collect(out);
    return out;
}

std::vector<const Param*> MonoNet::const_params() const {
    auto tmp = const_cast<MonoNet*>(this)->params();
    return {tmp.begin(), tmp.end()};
}

TemporalNet::TemporalNet(const TemporalHeadConfig& config, std::size_t n_classes, std::uint64_t seed)
    : config_(config) {
    config_.validate();
    nn::Rng rng(seed);
    int in = config_.feature_dim;
    for (int l = 0; l < config_.lstm_layers; ++l) {
        nn::Lstm layer("lstm" + std::to_string(l), in, config_.lstm_hidden);
        const float bound = 1.0f / std::sqrt(static_cast<float>(config_.lstm_hidden));
        nn::uniform_init(layer.w_ih, bound, rng);
        nn::uniform_init(layer.w_hh, bound, rng);
        // Forget-gate bias starts at one.
        layer.bias.value.middleRows(config_.lstm_hidden, config_.lstm_hidden).setOnes();
        lstm_.push_back(std::move(layer));
        in = config_.lstm_hidden;
    }
    fc1_ = nn::Linear("fc1", config_.lstm_hidden, config_.fc_dim);
    fc2_ = nn::Linear("fc2", config_.fc_dim, static_cast<int>(n_classes));
    nn::he_normal(fc1_.weight, config_.lstm_hidden, rng);
    nn::uniform_init(fc2_.weight, 1.0f / std::sqrt(static_cast<float>(config_.fc_dim)), rng);
}

void TemporalNet::check(const std::vector<Mat>& sequence) const {
    if (static_cast<int>(sequence.size()) != config_.sequence_length)
        throw Error("temporal head expects " + std::to_string(config_.sequence_length) +
                    " steps, got " + std::to_string(sequence.size()));
    for (const auto& step : sequence)
        if (step.rows() != config_.feature_dim)
            throw Error("temporal head expects feature_dim " + std::to_string(config_.feature_dim) +
                        ", got " + std::to_string(step.rows()));
}

Mat TemporalNet::logits(const std::vector<Mat>& sequence) const {
    check(sequence);
    std::vector<Mat> h = sequence;
    for (const auto& layer : lstm_) h = layer.forward(h);
    return fc2_.forward(nn::relu(fc1_.forward(h.back())));
}

Mat TemporalNet::logits_train(const std::vector<Mat>& sequence) {
    check(sequence);
    std::vector<Mat> h = sequence;
    for (auto& layer : lstm_) h = layer.forward_train(h);
    fc1_out_ = nn::relu(fc1_.forward_train(h.back()));
    return fc2_.forward_train(fc1_out_);
}

void TemporalNet::backward(const Mat& d_logits) {
    Mat d = nn::relu_backward(fc2_.backward(d_logits), fc1_out_);
    const Mat dh_last = fc1_.backward(d);
    std::vector<Mat> dh(config_.sequence_length, Mat::Zero(dh_last.rows(), dh_last.cols()));
    dh.back() = dh_last;
    for (std::size_t l = lstm_.size(); l-- > 0;) dh = lstm_[l].backward(dh);
}

std::vector<Param*> TemporalNet::params() {
    std::vector<Param*> out;
    for (auto& layer : lstm_) layer.collect(out);
    fc1_.collect(out);
    fc2_.collect(out);
    return out;
}

std::vector<const Param*> TemporalNet::const_params() const {
    auto tmp = const_cast<TemporalNet*>(this)->params();
    return {tmp.begin(), tmp.end()};
}

// ---------------------------------------------------------------------------
// Batching and outputs

Act batch_from_rasters(std::span<const Raster> rasters) {
    if (rasters.empty()) throw Error("empty batch");
    const auto& first = rasters.front();
    Act a;
    a.n = static_cast<int>(rasters.size());
    a.h = static_cast<int>(first.height);
    a.w = static_cast<int>(first.width);
    const Eigen::Index per = static_cast<Eigen::Index>(first.pixel_count());
    a.m.resize(first.channels, per * a.n);
    for (std::size_t i = 0; i < rasters.size(); ++i) {
        const auto& r = rasters[i];
        if (r.height != first.height || r.width != first.width || r.channels != first.channels)
            throw Error("batch rasters differ in shape");
        std::memcpy(a.m.data() + static_cast<Eigen::Index>(i) * per * first.channels, r.data.data(),
                    r.data.size() * sizeof(float));
    }
    return a;
}

std::vector<LabelDistribution> distributions_from_logits(const Mat& logits, Level level) {
    std::vector<LabelDistribution> out;
    out.reserve(static_cast<std::size_t>(logits.cols()));
    std::vector<double> z(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        for (Eigen::Index i = 0; i < logits.rows(); ++i) z[i] = logits(i, j);
        const double top = *std::max_element(z.begin(), z.end());
        std::vector<double> p(z.size());
        double sum = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) sum += (p[i] = std::exp(z[i] - top));
        for (double& v : p) v /= sum;
        out.push_back(LabelDistribution::trusted(level, std::move(p)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Artifacts

namespace {

constexpr std::size_t kInferenceBatch = 256;

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    return json::parse(in);
}

void write_json(const fs::path& path, const json& doc) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

json info_to_json(const ArtifactInfo& info) {
    return {{"kind", info.kind},
            {"level", ontology::to_string(info.level)},
            {"seed", info.seed},
            {"code_version", info.code_version},
            {"reference_month", info.reference_month},
            {"optimizer", info.optimizer},
            {"train", info.train_config}};
}

ArtifactInfo info_from_json(const json& doc) {
    ArtifactInfo info;
    info.kind = doc.at("kind").get<std::string>();
    info.level = ontology::parse_level(doc.at("level").get<std::string>());
    info.seed = doc.at("seed").get<std::uint64_t>();
    info.code_version = doc.value("code_version", std::string("unknown"));
    info.reference_month = doc.value("reference_month", data::kDefaultReferenceMonth);
    info.optimizer = doc.value("optimizer", info.optimizer);
    info.train_config = doc.value("train", json::object());
    return info;
}

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

MonoModel::MonoModel(MonoNet net, preprocess::ChannelStats stats, ArtifactInfo info)
    : net_(std::move(net)), stats_(stats), info_(std::move(info)) {
    info_.kind = "mono";
    if (info_.reference_month < 1 || info_.reference_month > data::kMonths)
        throw ConfigError("reference_month", "reference_month must be in 1..12");
}

Mat MonoModel::encode(std::span<const Raster> raw_patches) const {
    std::vector<Raster> norm;
    norm.reserve(raw_patches.size());
    for (const auto& r : raw_patches) norm.push_back(preprocess::normalize_patch(r, stats_));
    return net_.encoder().features(batch_from_rasters(norm));
}

std::vector<LabelDistribution> MonoModel::predict(std::size_t count, const PatchFetcher& fetch) const {
    std::vector<LabelDistribution> out;
    out.reserve(count);
    for (std::size_t start = 0; start < count; start += kInferenceBatch) {
        const std::size_t end = std::min(count, start + kInferenceBatch);
        std::vector<Raster> batch;
        batch.reserve(end - start);
        for (std::size_t i = start; i < end; ++i)
            batch.push_back(preprocess::normalize_patch(fetch(i, info_.reference_month), stats_));
        auto d = distributions_from_logits(net_.logits(batch_from_rasters(batch)), info_.level);
        std::move(d.begin(), d.end(), std::back_inserter(out));
    }
    return out;
}

std::vector<Mat> MonoModel::extract_feature_sequences(std::size_t count, const PatchFetcher& fetch) const {
    const int dim = net_.encoder().config().feature_dim();
    std::vector<Mat> out(count, Mat(dim, data::kMonths));
    for (std::size_t start = 0; start < count; start += kInferenceBatch) {
        const std::size_t end = std::min(count, start + kInferenceBatch);
        for (int month = 1; month <= data::kMonths; ++month) {
            std::vector<Raster> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(fetch(i, month));
            const Mat f = encode(batch);
            for (std::size_t i = start; i < end; ++i) out[i].col(month - 1) = f.col(static_cast<Eigen::Index>(i - start));
        }
    }
    return out;
}

std::uint64_t MonoModel::weights_hash() const { return nn::hash_params(net_.const_params()); }

void MonoModel::save(const fs::path& dir) const {
    fs::create_directories(dir);
    json cfg = info_to_json(info_);
    cfg["encoder"] = net_.encoder().config().to_json();
    cfg["n_classes"] = net_.n_classes();
    cfg["weights_hash"] = hex(weights_hash());
    write_json(dir / "config.json", cfg);
    nn::save_params(dir / "weights.bin", net_.const_params());
    stats_.save(dir / "stats.json");
    write_json(dir / "ontology.json", ontology::Ontology::builtin().to_json());
}

MonoModel MonoModel::load(const fs::path& dir) {
    const json cfg = read_json(dir / "config.json");
    ArtifactInfo info = info_from_json(cfg);
    if (info.kind != "mono") throw Error(dir.string() + " is not a mono-temporal model");
    const auto enc = EncoderConfig::from_json(cfg.at("encoder"));
    const auto n_classes = cfg.at("n_classes").get<std::size_t>();
    if (n_classes != ontology::expected_cardinality(info.level))
        throw Error("model class count does not match its level");
    MonoNet net(enc, n_classes, info.seed);
    auto params = net.params();
    nn::load_params(dir / "weights.bin", params);
    return MonoModel(std::move(net), preprocess::ChannelStats::load(dir / "stats.json"), std::move(info));
}

Mat extract_feature_sequence(const data::PatchRecord& record, const MonoModel& encoder,
                             data::PatchReader& reader) {
    const auto missing = record.missing_months();
    if (!missing.empty())
        throw Error("patch " + record.patch_id + " is missing month " + std::to_string(missing.front()));
    const auto seq = encoder.extract_feature_sequences(
        1, [&](std::size_t, int month) { return reader.read(record, month); });
    return seq.front().transpose();
}

TemporalModel::TemporalModel(TemporalNet net, std::shared_ptr<const MonoModel> encoder, ArtifactInfo info)
    : net_(std::move(net)), encoder_(std::move(encoder)), info_(std::move(info)) {
    info_.kind = "temporal";
    if (net_.config().feature_dim != encoder_->net().encoder().config().feature_dim())
        throw Error("temporal head feature_dim does not match the encoder");
}

std::vector<int> TemporalModel::months() const {
    std::vector<int> m(data::kMonths);
    for (int i = 0; i < data::kMonths; ++i) m[i] = i + 1;
    return m;
}

std::vector<LabelDistribution> TemporalModel::predict_sequences(const std::vector<Mat>& sequences) const {
    std::vector<LabelDistribution> out;
    out.reserve(sequences.size());
    for (std::size_t start = 0; start < sequences.size(); start += kInferenceBatch) {
        const std::size_t end = std::min(sequences.size(), start + kInferenceBatch);
        std::vector<std::size_t> items(end - start);
        for (std::size_t i = start; i < end; ++i) items[i - start] = i;
        auto d = distributions_from_logits(net_.logits(sequence_batch(sequences, items)), info_.level);
        std::move(d.begin(), d.end(), std::back_inserter(out));
    }
    return out;
}

std::vector<LabelDistribution> TemporalModel::predict(std::size_t count, const PatchFetcher& fetch) const {
    return predict_sequences(encoder_->extract_feature_sequences(count, fetch));
}

void TemporalModel::save(const fs::path& dir) const {
    fs::create_directories(dir);
    json cfg = info_to_json(info_);
    cfg["temporal_head"] = net_.config().to_json();
    cfg["n_classes"] = ontology::expected_cardinality(info_.level);
    cfg["weights_hash"] = hex(nn::hash_params(net_.const_params()));
    cfg["encoder_weights_hash"] = hex(encoder_->weights_hash());
    write_json(dir / "config.json", cfg);
    nn::save_params(dir / "weights.bin", net_.const_params());
    encoder_->stats().save(dir / "stats.json");
    write_json(dir / "ontology.json", ontology::Ontology::builtin().to_json());
    encoder_->save(dir / "encoder");
}

TemporalModel TemporalModel::load(const fs::path& dir) {
    const json cfg = read_json(dir / "config.json");
    ArtifactInfo info = info_from_json(cfg);
    if (info.kind != "temporal") throw Error(dir.string() + " is not a temporal model");
    const auto head = TemporalHeadConfig::from_json(cfg.at("temporal_head"));
    TemporalNet net(head, ontology::expected_cardinality(info.level), info.seed);
    auto params = net.params();
    nn::load_params(dir / "weights.bin", params);
    auto encoder = std::make_shared<const MonoModel>(MonoModel::load(dir / "encoder"));
    return TemporalModel(std::move(net), std::move(encoder), std::move(info));
}

std::unique_ptr<Model> load_model(const fs::path& dir) {
    const json cfg = read_json(dir / "config.json");
    const auto kind = cfg.at("kind").get<std::string>();
    if (kind == "mono") return std::make_unique<MonoModel>(MonoModel::load(dir));
    if (kind == "temporal") return std::make_unique<TemporalModel>(TemporalModel::load(dir));
    throw Error("unknown model kind '" + kind + "' in " + dir.string());
}

// ---------------------------------------------------------------------------
// Feature cache

void save_feature_cache(const fs::path& path, const std::vector<Mat>& sequences) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write feature cache: " + path.string());
    const std::uint32_t header[3] = {
        static_cast<std::uint32_t>(sequences.size()),
        sequences.empty() ? 0u : static_cast<std::uint32_t>(sequences.front().rows()),
        sequences.empty() ? 0u : static_cast<std::uint32_t>(sequences.front().cols())};
    out.write("TLCF", 4);
    out.write(reinterpret_cast<const char*>(header), sizeof header);
    for (const auto& s : sequences) {
        if (s.rows() != header[1] || s.cols() != header[2]) throw Error("ragged feature cache");
        out.write(reinterpret_cast<const char*>(s.data()),
                  static_cast<std::streamsize>(s.size() * sizeof(float)));
    }
    if (!out) throw Error("failed writing feature cache: " + path.string());
}

std::vector<Mat> load_feature_cache(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open feature cache: " + path.string());
    char magic[4];
    std::uint32_t header[3];
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(header), sizeof header);
    if (!in || std::memcmp(magic, "TLCF", 4) != 0) throw Error("not a feature cache: " + path.string());
    std::vector<Mat> out(header[0], Mat(header[1], header[2]));
    for (auto& s : out) {
        in.read(reinterpret_cast<char*>(s.data()), static_cast<std::streamsize>(s.size() * sizeof(float)));
        if (!in) throw Error("truncated feature cache: " + path.string());
    }
    return out;
}

std::vector<Mat> sequence_batch(const std::vector<Mat>& sequences, std::span<const std::size_t> items) {
    if (items.empty()) throw Error("empty sequence batch");
    const Eigen::Index dim = sequences.at(items.front()).rows();
    const Eigen::Index steps = sequences.at(items.front()).cols();
    std::vector<Mat> out(static_cast<std::size_t>(steps), Mat(dim, static_cast<Eigen::Index>(items.size())));
    for (std::size_t b = 0; b < items.size(); ++b) {
        const Mat& s = sequences.at(items[b]);
        if (s.rows() != dim || s.cols() != steps) throw Error("ragged sequence batch");
        for (Eigen::Index t = 0; t < steps; ++t) out[static_cast<std::size_t>(t)].col(static_cast<Eigen::Index>(b)) = s.col(t);
    }
    return out;
}

}  // namespace tlc::models
