#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tlc/data.hpp"
#include "tlc/nn.hpp"
#include "tlc/ontology.hpp"
#include "tlc/preprocess.hpp"
#include "tlc/raster.hpp"

namespace tlc::models {

using nn::Act;
using nn::Mat;

// Residual convolutional encoder. "resnet50" stacks bottleneck blocks
// [3,4,6,3] and yields 32 * base_width features (2048 at width 64);
// "resnet18" stacks basic blocks [2,2,2,2] and yields 8 * base_width.
struct EncoderConfig {
    std::string backbone = "resnet50";
    int input_channels = 4;
    int base_width = 64;
    int stem_kernel = 7;
    int stem_stride = 2;
    int patch_px = 64;
    // Residual branches are scaled by a learnable scalar starting here; the
    // networks carry no batch normalisation.
    float residual_scale_init = 0.0f;
    // Initialise the stem from 3-channel RGB weights (adapt_input_channels).
    bool pretrained_init = false;
    std::string pretrained_stem;       // TLCW file with a "stem.weight" tensor
    std::string nir_init = "rgb_mean";  // or "random"

    int feature_dim() const;
    nlohmann::json to_json() const;
    static EncoderConfig from_json(const nlohmann::json& doc);
    void validate() const;
};

struct TemporalHeadConfig {
    int sequence_length = data::kMonths;
    int feature_dim = 2048;
    int lstm_hidden = 512;
    int lstm_layers = 1;
    int fc_dim = 256;

    nlohmann::json to_json() const;
    static TemporalHeadConfig from_json(const nlohmann::json& doc);
    void validate() const;
};

// 3-channel first-layer weights (out x k*k*3, column (ky*k+kx)*3+c) to a
// 4-channel layer whose N kernel is the mean of the R, G and B kernels.
Mat adapt_input_channels(const Mat& rgb_weights, int kernel);

class Encoder {
public:
    Encoder(const EncoderConfig& config, nn::Rng& rng);

    Mat features(const Act& x) const;  // feature_dim x batch
    Mat features_train(const Act& x);
    void backward(const Mat& d_features);
    void collect(std::vector<nn::Param*>& out);
    std::vector<const nn::Param*> const_params() const;

    const EncoderConfig& config() const { return config_; }
    nn::Conv2d& stem() { return stem_; }

private:
    struct Block {
        std::vector<nn::Conv2d> branch;
        std::optional<nn::Conv2d> shortcut;
        nn::Param scale;
        // training tape
        std::vector<Act> branch_out;  // post-ReLU outputs of inner convs, then raw last conv
        Act output;
    };

    Act block_forward(const Block& b, const Act& x) const;
    Act block_forward_train(Block& b, const Act& x);
    Act block_backward(Block& b, const Act& dy);

    EncoderConfig config_;
    nn::Conv2d stem_;
    std::vector<Block> blocks_;
    Act stem_out_;
    Act last_out_;
};

using nn::Param;

class MonoNet {
public:
    MonoNet(const EncoderConfig& config, std::size_t n_classes, std::uint64_t seed);

    Mat logits(const Act& x) const;
    Mat logits_train(const Act& x);
    void backward(const Mat& d_logits);
    std::vector<Param*> params();
    std::vector<const Param*> const_params() const;

    const Encoder& encoder() const { return encoder_; }
    Encoder& encoder() { return encoder_; }
    std::size_t n_classes() const { return n_classes_; }

private:
    std::size_t n_classes_;
    Encoder encoder_;
    nn::Linear head_;
};

class TemporalNet {
public:
    TemporalNet(const TemporalHeadConfig& config, std::size_t n_classes, std::uint64_t seed);

    // sequence[t] is feature_dim x batch.
    Mat logits(const std::vector<Mat>& sequence) const;
    Mat logits_train(const std::vector<Mat>& sequence);
    void backward(const Mat& d_logits);
    std::vector<Param*> params();
    std::vector<const Param*> const_params() const;

    const TemporalHeadConfig& config() const { return config_; }

private:
    void check(const std::vector<Mat>& sequence) const;

    TemporalHeadConfig config_;
    std::vector<nn::Lstm> lstm_;
    nn::Linear fc1_;
    nn::Linear fc2_;
    Mat fc1_out_;
};

// Builds a batch from equally sized, already normalised channel-last rasters.
Act batch_from_rasters(std::span<const Raster> rasters);

// Column-wise softmax in double precision.
std::vector<ontology::LabelDistribution> distributions_from_logits(const Mat& logits,
                                                                   ontology::Level level);

// Returns the raw (un-normalised) patch raster for item `index` at `month`.
using PatchFetcher = std::function<Raster(std::size_t index, int month)>;

struct ArtifactInfo {
    std::string kind;  // "mono" or "temporal"
    ontology::Level level = ontology::Level::Level2;
    std::uint64_t seed = 0;
    std::string code_version;
    int reference_month = data::kDefaultReferenceMonth;
    nlohmann::json train_config = nlohmann::json::object();
    std::string optimizer = "adam(beta1=0.9,beta2=0.999,eps=1e-8)";
};

std::string code_version();

class Model {
public:
    virtual ~Model() = default;
    virtual const ArtifactInfo& info() const = 0;
    virtual int patch_px() const = 0;
    virtual const preprocess::ChannelStats& stats() const = 0;
    // Months each prediction reads.
    virtual std::vector<int> months() const = 0;
    virtual std::vector<ontology::LabelDistribution> predict(std::size_t count,
                                                             const PatchFetcher& fetch) const = 0;
    virtual void save(const std::filesystem::path& dir) const = 0;

    ontology::Level level() const { return info().level; }
};

class MonoModel final : public Model {
public:
    MonoModel(MonoNet net, preprocess::ChannelStats stats, ArtifactInfo info);

    const ArtifactInfo& info() const override { return info_; }
    int patch_px() const override { return net_.encoder().config().patch_px; }
    const preprocess::ChannelStats& stats() const override { return stats_; }
    std::vector<int> months() const override { return {info_.reference_month}; }
    std::vector<ontology::LabelDistribution> predict(std::size_t count,
                                                     const PatchFetcher& fetch) const override;
    void save(const std::filesystem::path& dir) const override;
    static MonoModel load(const std::filesystem::path& dir);

    // Pooled encoder features of one normalised batch.
    Mat encode(std::span<const Raster> raw_patches) const;
    // feature_dim x 12 per item, column t-1 for month t.
    std::vector<Mat> extract_feature_sequences(std::size_t count, const PatchFetcher& fetch) const;

    const MonoNet& net() const { return net_; }
    MonoNet& net() { return net_; }
    std::uint64_t weights_hash() const;

private:
    MonoNet net_;
    preprocess::ChannelStats stats_;
    ArtifactInfo info_;
};

// One patch-year of encoder features, rows ordered by month.
Mat extract_feature_sequence(const data::PatchRecord& record, const MonoModel& encoder,
                             data::PatchReader& reader);

class TemporalModel final : public Model {
public:
    TemporalModel(TemporalNet net, std::shared_ptr<const MonoModel> encoder, ArtifactInfo info);

    const ArtifactInfo& info() const override { return info_; }
    int patch_px() const override { return encoder_->patch_px(); }
    const preprocess::ChannelStats& stats() const override { return encoder_->stats(); }
    std::vector<int> months() const override;
    std::vector<ontology::LabelDistribution> predict(std::size_t count,
                                                     const PatchFetcher& fetch) const override;
    std::vector<ontology::LabelDistribution> predict_sequences(const std::vector<Mat>& sequences) const;
    void save(const std::filesystem::path& dir) const override;
    static TemporalModel load(const std::filesystem::path& dir);

    const TemporalNet& net() const { return net_; }
    TemporalNet& net() { return net_; }
    const MonoModel& encoder() const { return *encoder_; }

private:
    TemporalNet net_;
    std::shared_ptr<const MonoModel> encoder_;
    ArtifactInfo info_;
};

std::unique_ptr<Model> load_model(const std::filesystem::path& dir);

// Feature cache: "TLCF", u32 items, u32 feature_dim, u32 steps, f32 values.
void save_feature_cache(const std::filesystem::path& path, const std::vector<Mat>& sequences);
std::vector<Mat> load_feature_cache(const std::filesystem::path& path);

// Sequence batch for TemporalNet from per-item feature_dim x T matrices.
std::vector<Mat> sequence_batch(const std::vector<Mat>& sequences, std::span<const std::size_t> items);

}  // namespace tlc::models
