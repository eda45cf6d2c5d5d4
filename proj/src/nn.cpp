#include "tlc/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "tlc/error.hpp"

namespace tlc::nn {

void he_normal(Param& p, int fan_in, Rng& rng) {
    std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = dist(rng);
}

void uniform_init(Param& p, float bound, Rng& rng) {
    std::uniform_real_distribution<float> dist(-bound, bound);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = dist(rng);
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(const std::string& name, int in_ch, int out_ch, int kernel, int stride, int pad,
               bool bias)
    : weight(name + ".weight", out_ch, kernel * kernel * in_ch),
      in_ch_(in_ch), out_ch_(out_ch), k_(kernel), stride_(stride), pad_(pad), has_bias_(bias) {
    if (in_ch <= 0 || out_ch <= 0 || kernel <= 0 || stride <= 0 || pad < 0)
        throw Error("invalid convolution geometry for " + name);
    if (bias) this->bias = Param(name + ".bias", out_ch, 1);
}

Mat Conv2d::im2col(const Act& x, int oh, int ow) const {
    const Eigen::Index rows = static_cast<Eigen::Index>(k_) * k_ * in_ch_;
    Mat col(rows, static_cast<Eigen::Index>(x.n) * oh * ow);
    const float* src = x.m.data();
    float* dst = col.data();
    const std::size_t block = static_cast<std::size_t>(in_ch_) * sizeof(float);
    for (int n = 0; n < x.n; ++n)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                float* column = dst + ((static_cast<Eigen::Index>(n) * oh + oy) * ow + ox) * rows;
                for (int ky = 0; ky < k_; ++ky) {
                    const int iy = oy * stride_ + ky - pad_;
                    for (int kx = 0; kx < k_; ++kx) {
                        const int ix = ox * stride_ + kx - pad_;
                        float* slot = column + (ky * k_ + kx) * in_ch_;
                        if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) {
                            std::memset(slot, 0, block);
                        } else {
                            const Eigen::Index pix = (static_cast<Eigen::Index>(n) * x.h + iy) * x.w + ix;
                            std::memcpy(slot, src + pix * in_ch_, block);
                        }
                    }
                }
            }
    return col;
}

void Conv2d::col2im(const Mat& col, Act& dx, int oh, int ow) const {
    const Eigen::Index rows = col.rows();
    const float* src = col.data();
    float* dst = dx.m.data();
    for (int n = 0; n < dx.n; ++n)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const float* column = src + ((static_cast<Eigen::Index>(n) * oh + oy) * ow + ox) * rows;
                for (int ky = 0; ky < k_; ++ky) {
                    const int iy = oy * stride_ + ky - pad_;
                    if (iy < 0 || iy >= dx.h) continue;
                    for (int kx = 0; kx < k_; ++kx) {
                        const int ix = ox * stride_ + kx - pad_;
                        if (ix < 0 || ix >= dx.w) continue;
                        const float* slot = column + (ky * k_ + kx) * in_ch_;
                        float* out = dst + ((static_cast<Eigen::Index>(n) * dx.h + iy) * dx.w + ix) * in_ch_;
                        for (int c = 0; c < in_ch_; ++c) out[c] += slot[c];
                    }
                }
            }
}

Act Conv2d::apply(const Act& x, const Mat& col, int oh, int ow) const {
    Act y;
    y.n = x.n;
    y.h = oh;
    y.w = ow;
    y.m.noalias() = weight.value * col;
    if (has_bias_) y.m.colwise() += bias.value.col(0);
    return y;
}

Act Conv2d::forward(const Act& x) const {
    if (x.channels() != in_ch_)
        throw Error("convolution " + weight.name + " expects " + std::to_string(in_ch_) +
                    " channels, got " + std::to_string(x.channels()));
    const int oh = output_size(x.h), ow = output_size(x.w);
    if (oh <= 0 || ow <= 0) throw Error("input too small for " + weight.name);
    if (pointwise()) return apply(x, x.m, oh, ow);
    return apply(x, im2col(x, oh, ow), oh, ow);
}

Act Conv2d::forward_train(const Act& x) {
    if (x.channels() != in_ch_)
        throw Error("convolution " + weight.name + " expects " + std::to_string(in_ch_) +
                    " channels, got " + std::to_string(x.channels()));
    const int oh = output_size(x.h), ow = output_size(x.w);
    if (oh <= 0 || ow <= 0) throw Error("input too small for " + weight.name);
    cache_n_ = x.n;
    cache_h_ = x.h;
    cache_w_ = x.w;
    col_cache_ = pointwise() ? x.m : im2col(x, oh, ow);
    return apply(x, col_cache_, oh, ow);
}

Act Conv2d::backward(const Act& dy) {
    weight.grad.noalias() += dy.m * col_cache_.transpose();
    if (has_bias_) bias.grad.col(0) += dy.m.rowwise().sum();
    Act dx;
    dx.n = cache_n_;
    dx.h = cache_h_;
    dx.w = cache_w_;
    if (pointwise()) {
        dx.m.noalias() = weight.value.transpose() * dy.m;
        return dx;
    }
    const Mat dcol = weight.value.transpose() * dy.m;
    dx.m = Mat::Zero(in_ch_, static_cast<Eigen::Index>(dx.n) * dx.h * dx.w);
    col2im(dcol, dx, dy.h, dy.w);
    return dx;
}

void Conv2d::collect(std::vector<Param*>& out) {
    out.push_back(&weight);
    if (has_bias_) out.push_back(&bias);
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(const std::string& name, int in, int out)
    : weight(name + ".weight", out, in), bias(name + ".bias", out, 1) {
    if (in <= 0 || out <= 0) throw Error("invalid linear layer shape for " + name);
}

Mat Linear::forward(const Mat& x) const {
    if (x.rows() != weight.value.cols())
        throw Error("linear " + weight.name + " expects " + std::to_string(weight.value.cols()) +
                    " inputs, got " + std::to_string(x.rows()));
    Mat y = weight.value * x;
    y.colwise() += bias.value.col(0);
    return y;
}

Mat Linear::forward_train(const Mat& x) {
    x_cache_ = x;
    return forward(x);
}

Mat Linear::backward(const Mat& dy) {
    weight.grad.noalias() += dy * x_cache_.transpose();
    bias.grad.col(0) += dy.rowwise().sum();
    return weight.value.transpose() * dy;
}

void Linear::collect(std::vector<Param*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

Mat relu(const Mat& x) { return x.cwiseMax(0.0f); }

Mat relu_backward(const Mat& dy, const Mat& y) {
    return (y.array() > 0.0f).select(dy, 0.0f);
}

// ---------------------------------------------------------------------------
// LSTM

namespace {

Mat sigmoid(const Mat& x) { return (1.0f + (-x.array()).exp()).inverse().matrix(); }

}  // namespace

Lstm::Lstm(const std::string& name, int input, int hidden)
    : w_ih(name + ".w_ih", 4 * hidden, input),
      w_hh(name + ".w_hh", 4 * hidden, hidden),
      bias(name + ".bias", 4 * hidden, 1),
      input_(input),
      hidden_(hidden) {
    if (input <= 0 || hidden <= 0) throw Error("invalid LSTM shape for " + name);
}

std::vector<Mat> Lstm::run(const std::vector<Mat>& inputs, std::vector<Step>* tape) const {
    if (inputs.empty()) throw Error("LSTM needs at least one step");
    const Eigen::Index batch = inputs.front().cols();
    const int hd = hidden_;
    Mat h = Mat::Zero(hd, batch);
    Mat c = Mat::Zero(hd, batch);
    std::vector<Mat> outputs;
    outputs.reserve(inputs.size());
    if (tape) tape->clear();
    for (const Mat& x : inputs) {
        if (x.rows() != input_ || x.cols() != batch)
            throw Error("LSTM step input has shape " + std::to_string(x.rows()) + "x" +
                        std::to_string(x.cols()) + ", expected " + std::to_string(input_) + "x" +
                        std::to_string(batch));
        Mat gates = w_ih.value * x;
        gates.noalias() += w_hh.value * h;
        gates.colwise() += bias.value.col(0);
        Mat i = sigmoid(gates.topRows(hd));
        Mat f = sigmoid(gates.middleRows(hd, hd));
        Mat g = gates.middleRows(2 * hd, hd).array().tanh().matrix();
        Mat o = sigmoid(gates.bottomRows(hd));
        Mat c_new = f.cwiseProduct(c) + i.cwiseProduct(g);
        Mat tanh_c = c_new.array().tanh().matrix();
        Mat h_new = o.cwiseProduct(tanh_c);
        if (tape) tape->push_back({x, h, c, i, f, g, o, c_new, tanh_c});
        h = std::move(h_new);
        c = std::move(c_new);
        outputs.push_back(h);
    }
    return outputs;
}

std::vector<Mat> Lstm::forward(const std::vector<Mat>& inputs) const { return run(inputs, nullptr); }

std::vector<Mat> Lstm::forward_train(const std::vector<Mat>& inputs) { return run(inputs, &tape_); }

std::vector<Mat> Lstm::backward(const std::vector<Mat>& d_hidden) {
    if (d_hidden.size() != tape_.size()) throw Error("LSTM backward length mismatch");
    const int hd = hidden_;
    const Eigen::Index batch = tape_.front().x.cols();
    Mat dh_next = Mat::Zero(hd, batch);
    Mat dc_next = Mat::Zero(hd, batch);
    std::vector<Mat> dx(tape_.size());
    Mat d_gates(4 * hd, batch);
    for (std::size_t t = tape_.size(); t-- > 0;) {
        const Step& s = tape_[t];
        const Mat dh = d_hidden[t] + dh_next;
        const Mat d_o = dh.cwiseProduct(s.tanh_c);
        const Mat dc = dh.cwiseProduct(s.o).cwiseProduct(
                           (1.0f - s.tanh_c.array().square()).matrix()) + dc_next;
        d_gates.topRows(hd) = dc.cwiseProduct(s.g).cwiseProduct(
            (s.i.array() * (1.0f - s.i.array())).matrix());
        d_gates.middleRows(hd, hd) = dc.cwiseProduct(s.c_prev).cwiseProduct(
            (s.f.array() * (1.0f - s.f.array())).matrix());
        d_gates.middleRows(2 * hd, hd) =
            dc.cwiseProduct(s.i).cwiseProduct((1.0f - s.g.array().square()).matrix());
        d_gates.bottomRows(hd) =
            d_o.cwiseProduct((s.o.array() * (1.0f - s.o.array())).matrix());
        dc_next = dc.cwiseProduct(s.f);
        w_ih.grad.noalias() += d_gates * s.x.transpose();
        w_hh.grad.noalias() += d_gates * s.h_prev.transpose();
        bias.grad.col(0) += d_gates.rowwise().sum();
        dx[t].noalias() = w_ih.value.transpose() * d_gates;
        dh_next.noalias() = w_hh.value.transpose() * d_gates;
    }
    return dx;
}

void Lstm::collect(std::vector<Param*>& out) {
    out.push_back(&w_ih);
    out.push_back(&w_hh);
    out.push_back(&bias);
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(std::vector<Param*> params, AdamOptions options)
    : params_(std::move(params)), opt_(options) {
    for (const Param* p : params_) {
        m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
}

void Adam::zero_grad() {
    for (Param* p : params_) p->grad.setZero();
}

void Adam::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<float>(opt_.beta1);
    const auto b2 = static_cast<float>(opt_.beta2);
    const auto step = static_cast<float>(lr / bc1);
    const auto inv_bc2 = static_cast<float>(1.0 / bc2);
    const auto eps = static_cast<float>(opt_.eps);
    const auto wd = static_cast<float>(opt_.weight_decay);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Param& p = *params_[k];
        Mat g = p.grad;
        if (wd != 0.0f) g += wd * p.value;
        m_[k] = b1 * m_[k] + (1.0f - b1) * g;
        v_[k] = b2 * v_[k] + (1.0f - b2) * g.cwiseProduct(g);
        p.value.array() -= step * m_[k].array() / ((v_[k].array() * inv_bc2).sqrt() + eps);
    }
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw Error("truncated weights file");
    return v;
}

constexpr char kWeightsMagic[4] = {'T', 'L', 'C', 'W'};

}  // namespace

void save_params(const std::filesystem::path& path, const std::vector<const Param*>& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write weights: " + path.string());
    out.write(kWeightsMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const Param* p : params) {
        put_u32(out, static_cast<std::uint32_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        put_u32(out, static_cast<std::uint32_t>(p->value.rows()));
        put_u32(out, static_cast<std::uint32_t>(p->value.cols()));
        out.write(reinterpret_cast<const char*>(p->value.data()),
                  static_cast<std::streamsize>(p->value.size() * sizeof(float)));
    }
    if (!out) throw Error("failed writing weights: " + path.string());
}

void load_params(const std::filesystem::path& path, const std::vector<Param*>& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open weights: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kWeightsMagic, 4) != 0)
        throw Error("not a weights file: " + path.string());
    std::map<std::string, Param*> by_name;
    for (Param* p : params) by_name[p->name] = p;
    const std::uint32_t count = get_u32(in);
    if (count != params.size())
        throw Error("weights file holds " + std::to_string(count) + " tensors, model has " +
                    std::to_string(params.size()));
    for (std::uint32_t k = 0; k < count; ++k) {
        std::string name(get_u32(in), '\0');
        in.read(name.data(), static_cast<std::streamsize>(name.size()));
        const std::uint32_t rows = get_u32(in);
        const std::uint32_t cols = get_u32(in);
        auto it = by_name.find(name);
        if (it == by_name.end()) throw Error("unexpected tensor in weights: " + name);
        Param& p = *it->second;
        if (p.value.rows() != rows || p.value.cols() != cols)
            throw Error("shape mismatch for tensor " + name);
        in.read(reinterpret_cast<char*>(p.value.data()),
                static_cast<std::streamsize>(p.value.size() * sizeof(float)));
        if (!in) throw Error("truncated tensor " + name);
    }
}

std::uint64_t hash_params(const std::vector<const Param*>& params) {
    std::uint64_t h = 1469598103934665603ull;
    const auto mix = [&](const void* data, std::size_t len) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    };
    for (const Param* p : params) {
        mix(p->name.data(), p->name.size());
        const std::uint64_t shape[2] = {static_cast<std::uint64_t>(p->value.rows()),
                                        static_cast<std::uint64_t>(p->value.cols())};
        mix(shape, sizeof shape);
        mix(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(float));
    }
    return h;
}

}  // namespace tlc::nn
