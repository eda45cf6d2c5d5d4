#pragma once

#include <span>
#include <string_view>
#include <vector>

namespace tlc::training {

inline constexpr double kProbEpsilon = 1e-12;
inline constexpr double kDefaultFocalGamma = 2.0;

enum class LossKind { KL, BCE, Focal };

std::string_view to_string(LossKind kind);
LossKind parse_loss(std::string_view name);

// sum_i t_i ln(t_i / p_i) with 0 ln 0 := 0 and p clamped below at 1e-12.
double kl_loss(std::span<const double> target, std::span<const double> predicted);

// Mean over classes of -[t ln p + (1-t) ln(1-p)], p clamped to [eps, 1-eps].
double bce_loss(std::span<const double> target, std::span<const double> predicted);

// Mean over classes of -[t (1-p)^g ln p + (1-t) p^g ln(1-p)]; g = 0 is BCE.
double focal_loss(std::span<const double> target, std::span<const double> predicted,
                  double gamma = kDefaultFocalGamma);

// dLoss/dp, zero where the clamp is active.
std::vector<double> loss_grad_probs(LossKind kind, std::span<const double> target,
                                    std::span<const double> predicted,
                                    double gamma = kDefaultFocalGamma);

double loss_value(LossKind kind, std::span<const double> target, std::span<const double> predicted,
                  double gamma = kDefaultFocalGamma);

std::vector<double> softmax(std::span<const double> logits);

struct LossAndGrad {
    double loss = 0.0;
    std::vector<double> grad_logits;
    std::vector<double> probs;
};

// Loss of softmax(logits) against target and its gradient w.r.t. the logits.
LossAndGrad loss_from_logits(LossKind kind, std::span<const double> target,
                             std::span<const double> logits, double gamma = kDefaultFocalGamma);

}  // namespace tlc::training
