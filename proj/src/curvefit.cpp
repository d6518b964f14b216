#include "growthsim/curvefit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "growthsim/errors.hpp"

namespace growthsim {

std::array<double, 3> logistic_gradient(double t, const GrowthParams& p) {
  const double s = 1.0 / (1.0 + std::exp(-p.k * (t - p.t0)));
  const double core = p.cc_max * s * (1.0 - s);
  return {s, core * (t - p.t0), -core * p.k};
}

GrowthParams default_init(std::span<const CcPoint> series) {
  double cc_peak = 0.0;
  for (const auto& pt : series) cc_peak = std::max(cc_peak, pt.cc);
  GrowthParams init;
  init.cc_max = std::clamp(cc_peak, 1e-3, 1.0);
  init.k = 0.2;
  init.t0 = series.empty() ? 0.0 : series.front().t;
  for (const auto& pt : series) {
    if (pt.cc >= cc_peak / 2.0) {
      init.t0 = pt.t;
      break;
    }
  }
  return init;
}

namespace {

struct Vec3 {
  std::array<double, 3> v{};
  double& operator[](int i) { return v[static_cast<std::size_t>(i)]; }
  double operator[](int i) const { return v[static_cast<std::size_t>(i)]; }
};

Vec3 to_vec(const GrowthParams& p) { return Vec3{{p.cc_max, p.k, p.t0}}; }
GrowthParams to_params(const Vec3& v) { return GrowthParams{v[0], v[1], v[2]}; }

Vec3 project(Vec3 x, const FitBounds& b, double t0_hi) {
  x[0] = std::clamp(x[0], b.cc_max_lo, b.cc_max_hi);
  x[1] = std::clamp(x[1], b.k_lo, b.k_hi);
  x[2] = std::clamp(x[2], b.t0_lo, t0_hi);
  return x;
}

double rss_at(std::span<const CcPoint> pts, const GrowthParams& p) {
  double rss = 0.0;
  for (const auto& pt : pts) {
    const double r = pt.cc - logistic_cc(pt.t, p);
    rss += r * r;
  }
  return rss;
}

// Solves the damped normal equations A x = b by Cholesky; A is SPD once the
// positive diagonal damping is added. Returns false when A degenerates.
bool solve3(const std::array<std::array<double, 3>, 3>& a, const Vec3& b, Vec3& x) {
  const double l00 = std::sqrt(a[0][0]);
  if (!(l00 > 0.0)) return false;
  const double l10 = a[1][0] / l00;
  const double l20 = a[2][0] / l00;
  const double d11 = a[1][1] - l10 * l10;
  if (!(d11 > 0.0)) return false;
  const double l11 = std::sqrt(d11);
  const double l21 = (a[2][1] - l20 * l10) / l11;
  const double d22 = a[2][2] - l20 * l20 - l21 * l21;
  if (!(d22 > 0.0)) return false;
  const double l22 = std::sqrt(d22);

  const double y0 = b[0] / l00;
  const double y1 = (b[1] - l10 * y0) / l11;
  const double y2 = (b[2] - l20 * y0 - l21 * y1) / l22;
  x[2] = y2 / l22;
  x[1] = (y1 - l21 * x[2]) / l11;
  x[0] = (y0 - l10 * x[1] - l20 * x[2]) / l00;
  return std::isfinite(x[0]) && std::isfinite(x[1]) && std::isfinite(x[2]);
}

}  // namespace

FitResult fit_logistic(std::span<const CcPoint> series, const FitBounds& bounds,
                       std::optional<GrowthParams> init) {
  if (series.size() < 3) {
    throw InsufficientDataError("fit_logistic: need at least 3 points, got " +
                                std::to_string(series.size()));
  }
  std::vector<CcPoint> pts(series.begin(), series.end());
  // Sorting makes the fit exactly permutation-invariant.
  std::sort(pts.begin(), pts.end(), [](const CcPoint& a, const CcPoint& b) {
    return a.t != b.t ? a.t < b.t : a.cc < b.cc;
  });
  const bool flat = std::all_of(pts.begin(), pts.end(), [&](const CcPoint& p) {
    return p.cc == pts.front().cc;
  });
  if (flat) {
    throw DegenerateDataError(
        "fit_logistic: all cover values identical; growth rate unidentifiable");
  }

  double max_t = 0.0;
  for (const auto& p : pts) max_t = std::max(max_t, p.t);
  const double t0_hi = bounds.t0_hi > bounds.t0_lo ? bounds.t0_hi
                                                   : std::max(1.0, 2.0 * max_t);

  Vec3 x = to_vec(init.value_or(default_init(pts)));
  x = project(x, bounds, t0_hi);

  FitResult result;
  result.n_points = static_cast<int>(pts.size());
  double rss = rss_at(pts, to_params(x));
  result.rss_trace.push_back(rss);

  constexpr int kMaxIterations = 200;
  constexpr double kGradTol = 1e-10;
  constexpr double kStepTol = 1e-12;
  double lambda = 1e-3;
  int iter = 0;
  bool converged = false;

  while (iter < kMaxIterations) {
    ++iter;
    // normal equations from the analytic gradient
    std::array<std::array<double, 3>, 3> jtj{};
    Vec3 jtr;  // J^T r with r_i = cc_i - model_i and J_i = -grad model_i
    const GrowthParams p = to_params(x);
    for (const auto& pt : pts) {
      const auto g = logistic_gradient(pt.t, p);
      const double r = pt.cc - logistic_cc(pt.t, p);
      for (int a = 0; a < 3; ++a) {
        jtr[a] += -g[static_cast<std::size_t>(a)] * r;
        for (int b = a; b < 3; ++b) {
          jtj[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] +=
              g[static_cast<std::size_t>(a)] * g[static_cast<std::size_t>(b)];
        }
      }
    }
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < a; ++b) {
        jtj[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] =
            jtj[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)];
      }
    }
    // projected gradient accounts for active bounds
    Vec3 pg;
    {
      Vec3 probe = x;
      for (int a = 0; a < 3; ++a) probe[a] -= jtr[a];
      probe = project(probe, bounds, t0_hi);
      for (int a = 0; a < 3; ++a) pg[a] = probe[a] - x[a];
    }
    if (std::sqrt(pg[0] * pg[0] + pg[1] * pg[1] + pg[2] * pg[2]) < kGradTol) {
      converged = true;
      break;
    }

    bool accepted = false;
    while (lambda <= 1e12) {
      auto damped = jtj;
      for (int a = 0; a < 3; ++a) {
        const auto ai = static_cast<std::size_t>(a);
        damped[ai][ai] += lambda * std::max(jtj[ai][ai], 1e-12);
      }
      Vec3 rhs{{-jtr[0], -jtr[1], -jtr[2]}};
      Vec3 delta;
      if (solve3(damped, rhs, delta)) {
        Vec3 trial = x;
        for (int a = 0; a < 3; ++a) trial[a] += delta[a];
        trial = project(trial, bounds, t0_hi);
        const double trial_rss = rss_at(pts, to_params(trial));
        if (trial_rss < rss) {
          const double dx0 = trial[0] - x[0], dx1 = trial[1] - x[1],
                       dx2 = trial[2] - x[2];
          const double step = std::sqrt(dx0 * dx0 + dx1 * dx1 + dx2 * dx2);
          x = trial;
          rss = trial_rss;
          result.rss_trace.push_back(rss);
          lambda = std::max(lambda * 0.1, 1e-12);
          accepted = true;
          if (step < kStepTol) converged = true;
          break;
        }
      }
      lambda *= 10.0;
    }
    if (!accepted || converged) {
      // no step improves rss within the damping range: stationary point
      converged = converged || !accepted;
      break;
    }
  }

  result.params = to_params(x);
  result.rss = rss;
  result.converged = converged;
  result.iterations = iter;
  return result;
}

RollingFitSeries rolling_fits(const Batch& batch, const FitBounds& bounds) {
  const int duration = batch.duration_days();
  if (duration < 6) {
    throw InsufficientDataError("rolling_fits: batch \"" + batch.batch_id +
                                "\" has " + std::to_string(duration) +
                                " days; need at least 6");
  }
  RollingFitSeries series;
  series.batch_id = batch.batch_id;
  std::vector<CcPoint> pts;
  pts.reserve(static_cast<std::size_t>(duration));
  for (int i = 0; i <= 5; ++i) {
    pts.push_back(CcPoint{static_cast<double>(batch.days[static_cast<std::size_t>(i)].day),
                          batch.days[static_cast<std::size_t>(i)].cc});
  }
  std::optional<GrowthParams> warm;
  for (int t = 5; t < duration; ++t) {
    FitResult fit = fit_logistic(pts, bounds, warm);
    warm = fit.params;
    series.entries.emplace_back(t, std::move(fit));
    if (t + 1 < duration) {
      pts.push_back(
          CcPoint{static_cast<double>(batch.days[static_cast<std::size_t>(t) + 1].day),
                  batch.days[static_cast<std::size_t>(t) + 1].cc});
    }
  }
  return series;
}

RollingFitSeries oracle_fit_series(const SyntheticBatch& sb,
                                   const SyntheticGroundTruth& truth) {
  RollingFitSeries series;
  series.batch_id = sb.batch.batch_id;
  const int duration = sb.batch.duration_days();
  for (int t = 5; t < duration; ++t) {
    FitResult fit;
    fit.params = GrowthParams{truth.cc_max,
                              sb.k_series[static_cast<std::size_t>(t)], truth.t0};
    fit.rss = 0.0;
    fit.n_points = t + 1;
    fit.converged = true;
    series.entries.emplace_back(t, std::move(fit));
  }
  return series;
}

double extrapolate_next_day(const FitResult& fit, double t) {
  if (!fit.converged) {
    throw NotConvergedError("extrapolate_next_day: fit did not converge");
  }
  return logistic_cc(t + 1.0, fit.params);
}

namespace {

std::string fmt_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace

void write_fit_report_csv(std::ostream& out,
                          std::span<const RollingFitSeries> series) {
  out << "batch_id,t,cc_max,k,t0,rss,converged\n";
  for (const auto& s : series) {
    for (const auto& [t, fit] : s.entries) {
      out << s.batch_id << ',' << t << ',' << fmt_double(fit.params.cc_max) << ','
          << fmt_double(fit.params.k) << ',' << fmt_double(fit.params.t0) << ','
          << fmt_double(fit.rss) << ',' << (fit.converged ? "true" : "false")
          << '\n';
    }
  }
}

std::vector<RollingFitSeries> read_fit_report_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("fit report is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "batch_id,t,cc_max,k,t0,rss,converged") {
    throw SchemaError("fit report header mismatch");
  }
  std::vector<RollingFitSeries> all;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 7) throw RowError(row, "(row)", "expected 7 fields");
    if (all.empty() || all.back().batch_id != fields[0]) {
      all.push_back(RollingFitSeries{fields[0], {}});
    }
    FitResult fit;
    try {
      fit.params.cc_max = std::stod(fields[2]);
      fit.params.k = std::stod(fields[3]);
      fit.params.t0 = std::stod(fields[4]);
      fit.rss = std::stod(fields[5]);
    } catch (const std::exception&) {
      throw RowError(row, "(params)", "cannot parse numeric field");
    }
    fit.converged = fields[6] == "true";
    all.back().entries.emplace_back(std::stoi(fields[1]), std::move(fit));
  }
  return all;
}

}  // namespace growthsim
