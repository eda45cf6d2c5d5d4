#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace tlc::nn {

using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>;

// Batch of feature maps stored channels x (n * h * w); column index is
// (sample * h + y) * w + x, so each column holds one pixel's channel vector.
// A channel-last patch raster maps onto a contiguous block of columns.
struct Act {
    Mat m;
    int n = 0;
    int h = 1;
    int w = 1;

    int channels() const { return static_cast<int>(m.rows()); }
};

struct Param {
    std::string name;
    Mat value;
    Mat grad;

    Param() = default;
    Param(std::string n, Eigen::Index rows, Eigen::Index cols)
        : name(std::move(n)), value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}
};

using Rng = std::mt19937_64;

void he_normal(Param& p, int fan_in, Rng& rng);
void uniform_init(Param& p, float bound, Rng& rng);

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(const std::string& name, int in_ch, int out_ch, int kernel, int stride, int pad,
           bool bias);

    Act forward(const Act& x) const;
    Act forward_train(const Act& x);
    Act backward(const Act& dy);
    void collect(std::vector<Param*>& out);

    int in_channels() const { return in_ch_; }
    int out_channels() const { return out_ch_; }
    int kernel() const { return k_; }
    int output_size(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

    // Weight layout: out_ch x (k * k * in_ch), column = (ky * k + kx) * in_ch + c.
    Param weight;
    Param bias;

private:
    bool pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }
    Mat im2col(const Act& x, int oh, int ow) const;
    void col2im(const Mat& col, Act& dx, int oh, int ow) const;
    Act apply(const Act& x, const Mat& col, int oh, int ow) const;

    int in_ch_ = 0, out_ch_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
    bool has_bias_ = false;
    Mat col_cache_;
    int cache_n_ = 0, cache_h_ = 0, cache_w_ = 0;
};

class Linear {
public:
    Linear() = default;
    Linear(const std::string& name, int in, int out);

    Mat forward(const Mat& x) const;
    Mat forward_train(const Mat& x);
    Mat backward(const Mat& dy);
    void collect(std::vector<Param*>& out);

    Param weight;  // out x in
    Param bias;    // out x 1

private:
    Mat x_cache_;
};

// In-place friendly ReLU helpers.
Mat relu(const Mat& x);
Mat relu_backward(const Mat& dy, const Mat& y);

// Single LSTM layer, gate order (input, forget, cell, output).
class Lstm {
public:
    Lstm() = default;
    Lstm(const std::string& name, int input, int hidden);

    // inputs[t] is input x batch; returns hidden x batch for every step.
    std::vector<Mat> forward(const std::vector<Mat>& inputs) const;
    std::vector<Mat> forward_train(const std::vector<Mat>& inputs);
    // d_hidden[t] is the gradient flowing into h_t from above.
    std::vector<Mat> backward(const std::vector<Mat>& d_hidden);
    void collect(std::vector<Param*>& out);

    int hidden() const { return hidden_; }

    Param w_ih;  // 4H x input
    Param w_hh;  // 4H x H
    Param bias;  // 4H x 1

private:
    struct Step {
        Mat x, h_prev, c_prev, i, f, g, o, c, tanh_c;
    };
    std::vector<Mat> run(const std::vector<Mat>& inputs, std::vector<Step>* tape) const;

    int input_ = 0, hidden_ = 0;
    std::vector<Step> tape_;
};

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

class Adam {
public:
    Adam(std::vector<Param*> params, AdamOptions options = {});
    void step(double lr);
    void zero_grad();
    long steps() const { return t_; }

private:
    std::vector<Param*> params_;
    std::vector<Mat> m_, v_;
    AdamOptions opt_;
    long t_ = 0;
};

// Named-tensor container: "TLCW", u32 count, then per tensor u32 name
// length, name bytes, u32 rows, u32 cols, f32 column-major values.
void save_params(const std::filesystem::path& path, const std::vector<const Param*>& params);
void load_params(const std::filesystem::path& path, const std::vector<Param*>& params);

// FNV-1a over names, shapes and raw bytes of the values.
std::uint64_t hash_params(const std::vector<const Param*>& params);

}  // namespace tlc::nn
