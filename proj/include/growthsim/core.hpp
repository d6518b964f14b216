#pragma once

#include <cmath>
#include <stdexcept>

namespace growthsim {

// Hard cap on the growth rate k (1/day). Well above any plausible daily rate;
// keeps model predictions from running away.
inline constexpr double kGrowthRateCap = 5.0;
// Floor used when clamping k: the curve math requires k > 0.
inline constexpr double kGrowthRateFloor = 1e-6;

// Parameters of the logistic growth curve
//   cc(t) = cc_max / (1 + exp(-k * (t - t0)))
// where cc is canopy cover as a fraction of image area.
struct GrowthParams {
  double cc_max = 1.0;  // maximum cover fraction, (0, 1]
  double k = 0.2;       // growth rate, (0, kGrowthRateCap] (1/day)
  double t0 = 20.0;     // midpoint day, [0, 100]; cc(t0) = cc_max / 2

  bool valid() const {
    return cc_max > 0.0 && cc_max <= 1.0 && k > 0.0 && k <= kGrowthRateCap &&
           t0 >= 0.0 && t0 <= 100.0;
  }
};

// Canopy cover at day t. Total over finite t; result in (0, cc_max).
inline double logistic_cc(double t, const GrowthParams& p) {
  return p.cc_max / (1.0 + std::exp(-p.k * (t - p.t0)));
}

// Day at which the curve reaches cover cc. Inverse of logistic_cc:
//   t = t0 - ln(cc_max / cc - 1) / k
inline double inverse_logistic(double cc, const GrowthParams& p) {
  if (!(cc > 0.0 && cc < p.cc_max)) {
    throw std::domain_error("inverse_logistic: cc must lie in (0, cc_max)");
  }
  return p.t0 - std::log(p.cc_max / cc - 1.0) / p.k;
}

struct RewardConfig {
  double k_target = 0.2;  // desired growth rate (1/day), > 0
  double scale = 100.0;   // penalty multiplier, > 0

  bool valid() const { return k_target > 0.0 && scale > 0.0; }
};

// Quadratic penalty for missing the target growth rate; zero only at k_target.
inline double reward(double k, const RewardConfig& cfg) {
  const double d = k - cfg.k_target;
  return -cfg.scale * d * d;
}

}  // namespace growthsim
