#include "tlc/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tlc/error.hpp"

namespace tlc::training {

namespace {

void check_lengths(std::span<const double> t, std::span<const double> p) {
    if (t.size() != p.size())
        throw Error("loss inputs differ in length: " + std::to_string(t.size()) + " vs " +
                    std::to_string(p.size()));
    if (t.empty()) throw Error("loss inputs are empty");
}

void check_gamma(double gamma) {
    if (!(gamma >= 0.0)) throw Error("focal gamma must be >= 0");
}

double clamp_prob(double p) { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }

}  // namespace

std::string_view to_string(LossKind kind) {
    switch (kind) {
        case LossKind::KL: return "KL";
        case LossKind::BCE: return "BCE";
        case LossKind::Focal: return "FOCAL";
    }
    return "?";
}

LossKind parse_loss(std::string_view name) {
    if (name == "KL") return LossKind::KL;
    if (name == "BCE") return LossKind::BCE;
    if (name == "FOCAL") return LossKind::Focal;
    throw Error("unknown loss: " + std::string(name));
}

double kl_loss(std::span<const double> target, std::span<const double> predicted) {
    check_lengths(target, predicted);
    double sum = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (target[i] <= 0.0) continue;
        sum += target[i] * (std::log(target[i]) - std::log(std::max(predicted[i], kProbEpsilon)));
    }
    return std::max(sum, 0.0);
}

double bce_loss(std::span<const double> target, std::span<const double> predicted) {
    return focal_loss(target, predicted, 0.0);
}

double focal_loss(std::span<const double> target, std::span<const double> predicted, double gamma) {
    check_lengths(target, predicted);
    check_gamma(gamma);
    double sum = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double t = target[i];
        const double p = clamp_prob(predicted[i]);
        const double pos = gamma == 0.0 ? 1.0 : std::pow(1.0 - p, gamma);
        const double neg = gamma == 0.0 ? 1.0 : std::pow(p, gamma);
        sum -= t * pos * std::log(p) + (1.0 - t) * neg * std::log(1.0 - p);
    }
    return sum / static_cast<double>(target.size());
}

double loss_value(LossKind kind, std::span<const double> target, std::span<const double> predicted,
                  double gamma) {
    switch (kind) {
        case LossKind::KL: return kl_loss(target, predicted);
        case LossKind::BCE: return bce_loss(target, predicted);
        case LossKind::Focal: return focal_loss(target, predicted, gamma);
    }
    throw Error("unknown loss kind");
}

std::vector<double> loss_grad_probs(LossKind kind, std::span<const double> target,
                                    std::span<const double> predicted, double gamma) {
    check_lengths(target, predicted);
    const std::size_t n = target.size();
    std::vector<double> g(n, 0.0);
    if (kind == LossKind::KL) {
        for (std::size_t i = 0; i < n; ++i)
            if (target[i] > 0.0 && predicted[i] >= kProbEpsilon) g[i] = -target[i] / predicted[i];
        return g;
    }
    const double gm = kind == LossKind::BCE ? 0.0 : gamma;
    check_gamma(gm);
    for (std::size_t i = 0; i < n; ++i) {
        const double p = predicted[i];
        if (p < kProbEpsilon || p > 1.0 - kProbEpsilon) continue;
        const double t = target[i];
        const double lp = std::log(p);
        const double lq = std::log(1.0 - p);
        double d_pos;  // d/dp of (1-p)^g ln p
        double d_neg;  // d/dp of p^g ln(1-p)
        if (gm == 0.0) {
            d_pos = 1.0 / p;
            d_neg = -1.0 / (1.0 - p);
        } else {
            d_pos = -gm * std::pow(1.0 - p, gm - 1.0) * lp + std::pow(1.0 - p, gm) / p;
            d_neg = gm * std::pow(p, gm - 1.0) * lq - std::pow(p, gm) / (1.0 - p);
        }
        g[i] = -(t * d_pos + (1.0 - t) * d_neg) / static_cast<double>(n);
    }
    return g;
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw Error("softmax of an empty vector");
    const double top = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - top);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

LossAndGrad loss_from_logits(LossKind kind, std::span<const double> target,
                             std::span<const double> logits, double gamma) {
    LossAndGrad r;
    r.probs = softmax(logits);
    r.loss = loss_value(kind, target, r.probs, gamma);
    const auto g = loss_grad_probs(kind, target, r.probs, gamma);
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * r.probs[i];
    r.grad_logits.resize(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) r.grad_logits[j] = r.probs[j] * (g[j] - dot);
    return r;
}

}  // namespace tlc::training
