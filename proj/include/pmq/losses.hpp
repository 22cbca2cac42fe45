#pragma once

#include <cmath>
#include <string>

#include "pmq/errors.hpp"
#include "pmq/tensor.hpp"

namespace pmq {

// The three regression quantiles, lower < 0.5 < upper.
struct QuantileSpec {
  double lower = 0.1;
  double median = 0.5;
  double upper = 0.9;

  void validate() const {
    if (!(lower > 0.0 && lower < 0.5))
      throw DomainError("QuantileSpec: lower quantile must lie in (0, 0.5)");
    if (median != 0.5)
      throw DomainError("QuantileSpec: median quantile is fixed at 0.5");
    if (!(upper > 0.5 && upper < 1.0))
      throw DomainError("QuantileSpec: upper quantile must lie in (0.5, 1)");
  }
};

enum class Smoothing { exact_check, smoothed };

struct LossConfig {
  QuantileSpec quantiles;
  double gamma_lower = 1.0;
  double gamma_upper = 1.0;
  double alpha = 2.0;
  Smoothing smoothing = Smoothing::smoothed;

  void validate() const {
    quantiles.validate();
    if (gamma_lower < 0.0 || gamma_upper < 0.0)
      throw DomainError("LossConfig: aggregate weights must be nonnegative");
    if (smoothing == Smoothing::smoothed && !(alpha > 0.0))
      throw DomainError("LossConfig: alpha must be positive for smoothed loss");
  }
};

// Per-pixel lower/median/upper prediction planes on one grid.
struct QuantileTriple {
  Plane lower;
  Plane median;
  Plane upper;
};

namespace detail {
inline void require_quantile(double q) {
  if (!(q > 0.0 && q < 1.0))
    throw DomainError("quantile level must lie in (0, 1), got " + std::to_string(q));
}
inline void require_finite(double r) {
  if (!std::isfinite(r)) throw DomainError("residual must be finite");
}
}  // namespace detail

// Check (pinball) function: rho_q(r) = r*[r >= 0] - (1-q)*r.
inline double check_loss(double r, double q) {
  detail::require_quantile(q);
  detail::require_finite(r);
  return (r >= 0.0 ? r : 0.0) - (1.0 - q) * r;
}

// Asymmetric Huber: r^2 - (r - dl)_+^2 - (-r - du)_+^2. Quadratic on
// [-du, dl], linear with slopes 2*dl / -2*du outside, C1 everywhere.
inline double asymmetric_huber(double r, double delta_lower, double delta_upper) {
  if (!(delta_lower > 0.0) || !(delta_upper > 0.0))
    throw DomainError("asymmetric_huber: deltas must be positive");
  detail::require_finite(r);
  const double pos = std::max(r - delta_lower, 0.0);
  const double neg = std::max(-r - delta_upper, 0.0);
  return r * r - pos * pos - neg * neg;
}

inline double asymmetric_huber_grad(double r, double delta_lower, double delta_upper) {
  if (!(delta_lower > 0.0) || !(delta_upper > 0.0))
    throw DomainError("asymmetric_huber: deltas must be positive");
  const double pos = std::max(r - delta_lower, 0.0);
  const double neg = std::max(-r - delta_upper, 0.0);
  return 2.0 * r - 2.0 * pos + 2.0 * neg;
}

// Smooth surrogate for the check function: alpha * H(r | q/2a, (1-q)/2a).
// Matches the check function's tail slopes q and -(1-q) exactly.
inline double smoothed_check(double r, double q, double alpha) {
  detail::require_quantile(q);
  if (!(alpha > 0.0)) throw DomainError("smoothed_check: alpha must be positive");
  return alpha * asymmetric_huber(r, q / (2.0 * alpha), (1.0 - q) / (2.0 * alpha));
}

inline double smoothed_check_grad(double r, double q, double alpha) {
  detail::require_quantile(q);
  if (!(alpha > 0.0)) throw DomainError("smoothed_check: alpha must be positive");
  return alpha * asymmetric_huber_grad(r, q / (2.0 * alpha), (1.0 - q) / (2.0 * alpha));
}

// Derivative of the configured pointwise loss w.r.t. the residual.
// Exact check at r=0 is nondifferentiable; we return the 0 subgradient
// (see loss_gradient_strict for the throwing variant).
inline double loss_gradient(double r, double q, const LossConfig& cfg) {
  if (cfg.smoothing == Smoothing::smoothed) return smoothed_check_grad(r, q, cfg.alpha);
  detail::require_quantile(q);
  detail::require_finite(r);
  if (r > 0.0) return q;
  if (r < 0.0) return -(1.0 - q);
  return 0.0;
}

inline double loss_gradient_strict(double r, double q, const LossConfig& cfg) {
  if (cfg.smoothing == Smoothing::exact_check && r == 0.0)
    throw DomainError("check loss is not differentiable at r = 0");
  return loss_gradient(r, q, cfg);
}

inline double pointwise_loss(double r, double q, const LossConfig& cfg) {
  return cfg.smoothing == Smoothing::smoothed ? smoothed_check(r, q, cfg.alpha)
                                              : check_loss(r, q);
}

// Mean pointwise loss over valid pixels. Residual r = target - pred.
// Accumulation in 64-bit.
inline double masked_quantile_loss(const Plane& pred, const Plane& target,
                                   const Mask& mask, double q, const LossConfig& cfg) {
  require_same_shape(pred, target, "masked_quantile_loss");
  require_same_shape(pred, mask, "masked_quantile_loss");
  detail::require_quantile(q);
  double sum = 0.0;
  size_t n = 0;
  for (size_t i = 0; i < mask.valid.size(); ++i) {
    if (!mask.valid[i]) continue;
    sum += pointwise_loss(static_cast<double>(target.values[i]) - pred.values[i], q, cfg);
    ++n;
  }
  if (n == 0) throw EmptySampleError("masked_quantile_loss: no valid pixels");
  return sum / static_cast<double>(n);
}

// L_aggr = gamma_l * L_{q_l} + L_{0.5} + gamma_u * L_{q_u}.
inline double aggregate_loss(const QuantileTriple& preds, const Plane& target,
                             const Mask& mask, const LossConfig& cfg) {
  cfg.validate();
  return cfg.gamma_lower * masked_quantile_loss(preds.lower, target, mask, cfg.quantiles.lower, cfg) +
         masked_quantile_loss(preds.median, target, mask, cfg.quantiles.median, cfg) +
         cfg.gamma_upper * masked_quantile_loss(preds.upper, target, mask, cfg.quantiles.upper, cfg);
}

}  // namespace pmq
