#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "growthsim/core.hpp"
#include "growthsim/ingest.hpp"

namespace growthsim {

struct CcPoint {
  double t = 0.0;   // day
  double cc = 0.0;  // cover fraction
};

// Box bounds for the fit parameters. t0_hi <= t0_lo means "derive from the
// data": the fit uses 2 * max(t).
struct FitBounds {
  double cc_max_lo = 1e-6, cc_max_hi = 1.0;
  double k_lo = 1e-6, k_hi = kGrowthRateCap;
  double t0_lo = 0.0, t0_hi = 0.0;
};

struct FitResult {
  GrowthParams params;
  double rss = 0.0;  // residual sum of squares at params
  int n_points = 0;
  bool converged = false;
  int iterations = 0;
  std::vector<double> rss_trace;  // rss after each accepted step (diagnostics)
};

// Gradient of logistic_cc with respect to (cc_max, k, t0).
std::array<double, 3> logistic_gradient(double t, const GrowthParams& p);

// Data-driven warm start: cc_max from the largest observation, t0 from the
// first day at half of that, k = 0.2.
GrowthParams default_init(std::span<const CcPoint> series);

// Least-squares logistic fit by Levenberg-Marquardt with projection onto the
// box bounds after each step. Damping: x0.1 on an accepted step, x10 on a
// rejected one, starting at 1e-3. Converged when the projected gradient norm
// drops below 1e-10 or an accepted step is shorter than 1e-12, within 200
// iterations. Input order does not matter (points are sorted internally).
// Throws InsufficientDataError (< 3 points) and DegenerateDataError (all cc
// equal).
FitResult fit_logistic(std::span<const CcPoint> series, const FitBounds& bounds = {},
                       std::optional<GrowthParams> init = std::nullopt);

// Fits over day prefixes 0..t for t = 5 .. D-1, warm-starting each fit from
// the previous one. Requires duration >= 6 days.
struct RollingFitSeries {
  std::string batch_id;
  std::vector<std::pair<int, FitResult>> entries;
};
RollingFitSeries rolling_fits(const Batch& batch, const FitBounds& bounds = {});

// Cover predicted for day t+1 from a converged fit; refuses non-converged
// fits with NotConvergedError.
double extrapolate_next_day(const FitResult& fit, double t);

// CSV report: batch_id,t,cc_max,k,t0,rss,converged - one row per rolling entry.
void write_fit_report_csv(std::ostream& out, std::span<const RollingFitSeries> series);
std::vector<RollingFitSeries> read_fit_report_csv(std::istream& in);

// Fit series taken straight from a synthetic batch's known growth rates
// instead of an optimizer: the oracle counterpart of rolling_fits.
RollingFitSeries oracle_fit_series(const SyntheticBatch& sb,
                                   const SyntheticGroundTruth& truth);

}  // namespace growthsim
