#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "helpers.hpp"
#include "tlc/models.hpp"
#include "tlc/nn.hpp"

using namespace tlc::nn;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, float scale = 1.0f) {
    std::normal_distribution<float> n(0.0f, scale);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

double dot(const Mat& a, const Mat& b) { return (a.cast<double>().array() * b.cast<double>().array()).sum(); }

// Compares accumulated parameter gradients with central differences on a
// sample of entries; returns the worst norm-relative error over parameters.
double param_grad_error(const std::vector<Param*>& params, const std::function<double()>& loss, double h,
                        Rng& rng, int samples = 12) {
    double worst = 0.0;
    for (Param* p : params) {
        const Mat analytic = p->grad;
        double diff = 0, na = 0, nn = 0;
        for (int s = 0; s < samples; ++s) {
            const auto idx = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(p->value.size()));
            float& w = p->value.data()[idx];
            const float keep = w;
            w = keep + static_cast<float>(h);
            const double lp = loss();
            w = keep - static_cast<float>(h);
            const double lm = loss();
            w = keep;
            const double numeric = (lp - lm) / (2 * h);
            const double a = analytic.data()[idx];
            diff += (a - numeric) * (a - numeric);
            na += a * a;
            nn += numeric * numeric;
        }
        const double scale = std::max({std::sqrt(na), std::sqrt(nn), 1e-6});
        const double err = std::sqrt(diff) / scale;
        if (err > worst) {
            worst = err;
            MESSAGE(p->name, " rel err ", err);
        }
    }
    return worst;
}

}  // namespace

TEST_SUITE("nn") {
    TEST_CASE("conv2d gradients (stride 2, padding 1)") {
        Rng rng(41);
        Conv2d conv("c", 3, 5, 3, 2, 1, true);
        he_normal(conv.weight, 27, rng);
        conv.bias.value = random_mat(5, 1, rng);
        Act x{random_mat(3, 2 * 7 * 7, rng), 2, 7, 7};
        const auto y = conv.forward_train(x);
        CHECK(y.h == 4);
        CHECK(y.w == 4);
        const Mat r = random_mat(y.m.rows(), y.m.cols(), rng);
        std::vector<Param*> ps;
        conv.collect(ps);
        for (auto* p : ps) p->grad.setZero();
        const Act dx = conv.backward(Act{r, y.n, y.h, y.w});
        auto loss = [&] { return dot(conv.forward(x).m, r); };
        CHECK(param_grad_error(ps, loss, 1e-2, rng) < 1e-3);
        // Input gradient.
        double diff = 0, norm = 0;
        for (int s = 0; s < 20; ++s) {
            const auto i = static_cast<Eigen::Index>(rng() % x.m.size());
            const float keep = x.m.data()[i];
            x.m.data()[i] = keep + 1e-2f;
            const double lp = loss();
            x.m.data()[i] = keep - 1e-2f;
            const double lm = loss();
            x.m.data()[i] = keep;
            const double numeric = (lp - lm) / 2e-2;
            diff += std::pow(dx.m.data()[i] - numeric, 2);
            norm += numeric * numeric;
        }
        CHECK(std::sqrt(diff / norm) < 1e-3);
        // forward and forward_train agree.
        CHECK((conv.forward(x).m - y.m).cwiseAbs().maxCoeff() < 1e-6f);
    }

    TEST_CASE("pointwise conv matches a linear map per pixel") {
        Rng rng(42);
        Conv2d conv("p", 4, 3, 1, 1, 0, false);
        he_normal(conv.weight, 4, rng);
        Act x{random_mat(4, 10, rng), 1, 2, 5};
        const auto y = conv.forward(x);
        CHECK((y.m - conv.weight.value * x.m).cwiseAbs().maxCoeff() < 1e-5f);
    }

    TEST_CASE("linear and lstm gradients") {
        Rng rng(43);
        Lstm lstm("l", 3, 4);
        uniform_init(lstm.w_ih, 0.5f, rng);
        uniform_init(lstm.w_hh, 0.5f, rng);
        uniform_init(lstm.bias, 0.5f, rng);
        Linear fc("fc", 4, 2);
        uniform_init(fc.weight, 0.5f, rng);
        std::vector<Mat> xs;
        for (int t = 0; t < 5; ++t) xs.push_back(random_mat(3, 2, rng));
        const Mat r = random_mat(2, 2, rng);

        std::vector<Param*> ps;
        lstm.collect(ps);
        fc.collect(ps);
        for (auto* p : ps) p->grad.setZero();
        const auto hs = lstm.forward_train(xs);
        fc.forward_train(hs.back());
        const Mat dh = fc.backward(r);
        std::vector<Mat> d_hidden(hs.size());
        for (auto& d : d_hidden) d = Mat::Zero(4, 2);
        d_hidden.back() = dh;
        const auto dxs = lstm.backward(d_hidden);
        CHECK(dxs.size() == xs.size());

        auto loss = [&] { return dot(fc.forward(lstm.forward(xs).back()), r); };
        CHECK(param_grad_error(ps, loss, 1e-2, rng, 20) < 5e-3);
    }

    TEST_CASE("whole mono network gradients") {
        tlc::models::EncoderConfig cfg;
        cfg.backbone = "resnet18";
        cfg.base_width = 2;
        cfg.stem_kernel = 3;
        cfg.stem_stride = 1;
        cfg.patch_px = 4;
        cfg.residual_scale_init = 0.5f;
        tlc::models::MonoNet net(cfg, 3, 44);
        Rng rng(45);
        Act x{random_mat(4, 2 * 16, rng), 2, 4, 4};
        const Mat r = random_mat(3, 2, rng);
        auto ps = net.params();
        for (auto* p : ps) p->grad.setZero();
        net.logits_train(x);
        net.backward(r);
        auto loss = [&] { return dot(net.logits(x), r); };
        // ReLU kinks make a few finite differences unreliable; small step, loose bound.
        CHECK(param_grad_error(ps, loss, 1e-3, rng, 6) < 5e-2);
    }

    TEST_CASE("adam moves parameters against the gradient") {
        Param p("w", 2, 1);
        p.value << 1.0f, -1.0f;
        Adam adam({&p});
        for (int i = 0; i < 100; ++i) {
            adam.zero_grad();
            p.grad = 2.0f * p.value;  // d/dw of |w|^2
            adam.step(0.05);
        }
        CHECK(p.value.norm() < 0.2f);
        CHECK(adam.steps() == 100);
    }

    TEST_CASE("parameter files round-trip and hashes see every byte") {
        test::TempDir dir("params");
        Rng rng(46);
        Param a("a", 3, 2), b("b", 1, 4);
        a.value = random_mat(3, 2, rng);
        b.value = random_mat(1, 4, rng);
        save_params(dir / "w.bin", {&a, &b});
        Param a2("a", 3, 2), b2("b", 1, 4);
        load_params(dir / "w.bin", {&a2, &b2});
        CHECK(a2.value == a.value);
        CHECK(b2.value == b.value);
        const auto h = hash_params({&a, &b});
        CHECK(h == hash_params({&a2, &b2}));
        b2.value(0, 3) = std::nextafter(b2.value(0, 3), 10.0f);
        CHECK(h != hash_params({&a2, &b2}));
        Param wrong("a", 2, 2);
        CHECK_THROWS(load_params(dir / "w.bin", {&wrong, &b2}));
    }
}
