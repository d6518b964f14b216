#include "growthsim/envmodel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>

#include "growthsim/errors.hpp"
#include "growthsim/rng.hpp"

namespace growthsim {

std::string to_string(Family f) {
  switch (f) {
    case Family::linear: return "linear";
    case Family::huber: return "huber";
    case Family::polynomial: return "polynomial";
    case Family::knn: return "knn";
    case Family::linear_svr: return "linear_svr";
  }
  return "?";
}

std::string to_string(BinKind b) {
  switch (b) {
    case BinKind::none: return "none";
    case BinKind::sequential: return "sequential";
    case BinKind::overlapping: return "overlapping";
  }
  return "?";
}

std::string to_string(TargetKind t) {
  return t == TargetKind::k ? "k" : "delta_k";
}

Family family_from_string(const std::string& s) {
  for (Family f : kAllFamilies) {
    if (to_string(f) == s) return f;
  }
  throw ConfigError("unknown model family \"" + s + "\"");
}

BinKind bin_kind_from_string(const std::string& s) {
  for (BinKind b : kAllBinKinds) {
    if (to_string(b) == s) return b;
  }
  throw ConfigError("unknown binning \"" + s + "\"");
}

TargetKind target_kind_from_string(const std::string& s) {
  if (s == "k") return TargetKind::k;
  if (s == "delta_k") return TargetKind::delta_k;
  throw ConfigError("unknown target kind \"" + s + "\"");
}

// --- bins -------------------------------------------------------------------

namespace {
constexpr double kAxisLo = 0.05;
constexpr double kAxisHi = 1.0;
}  // namespace

BinScheme make_bins(BinKind kind) {
  BinScheme scheme;
  scheme.kind = kind;
  switch (kind) {
    case BinKind::none:
      scheme.bins.push_back(Bin{kAxisLo, kAxisHi, (kAxisLo + kAxisHi) / 2.0});
      break;
    case BinKind::sequential: {
      const double width = (kAxisHi - kAxisLo) / 4.0;
      for (int i = 0; i < 4; ++i) {
        Bin b;
        b.lower = i == 0 ? kAxisLo : kAxisLo + i * width;
        b.upper = i == 3 ? kAxisHi : kAxisLo + (i + 1) * width;
        b.center = kAxisLo + (i + 0.5) * width;
        scheme.bins.push_back(b);
      }
      break;
    }
    case BinKind::overlapping: {
      // 15 windows of 40% of the axis span; clipping shrinks the end windows.
      const double half = 0.2 * (kAxisHi - kAxisLo);
      for (int i = 0; i < 15; ++i) {
        Bin b;
        b.center = i == 14 ? kAxisHi : kAxisLo + i * (kAxisHi - kAxisLo) / 14.0;
        b.lower = std::max(kAxisLo, b.center - half);
        b.upper = std::min(kAxisHi, b.center + half);
        scheme.bins.push_back(b);
      }
      break;
    }
  }
  return scheme;
}

std::vector<std::vector<std::size_t>> assign_rows_to_bins(
    std::span<const FeatureRow> rows, const BinScheme& scheme) {
  std::vector<std::vector<std::size_t>> assignment(scheme.bins.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double cc = rows[r].cc;
    if (cc < kAxisLo) continue;
    for (std::size_t b = 0; b < scheme.bins.size(); ++b) {
      const Bin& bin = scheme.bins[b];
      const bool inside = cc >= bin.lower &&
                          (cc < bin.upper || (cc == bin.upper && bin.upper == kAxisHi));
      if (inside) assignment[b].push_back(r);
    }
  }
  return assignment;
}

// --- features ----------------------------------------------------------------

std::vector<std::string> feature_names(const FeatureConfig& config) {
  std::vector<std::string> names;
  for (const auto& n : env_field_names()) names.emplace_back(n);
  if (config.include_k) names.emplace_back("k");
  if (config.include_k_env) {
    for (const auto& n : env_field_names()) names.push_back("k_x_" + std::string(n));
  }
  for (int w : config.ma_windows) {
    if (w < 2 || w > 6) {
      throw ConfigError("moving-average windows must lie in 2..6");
    }
    for (const auto& n : env_field_names()) {
      names.push_back(std::string(n) + "_ma" + std::to_string(w));
    }
  }
  return names;
}

FeatureConfig feature_config_from_names(std::span<const std::string> names,
                                        TargetKind target) {
  FeatureConfig config;
  config.target = target;
  for (const auto& n : names) {
    if (n == "k") {
      config.include_k = true;
    } else if (n.starts_with("k_x_")) {
      config.include_k_env = true;
    } else if (const auto pos = n.rfind("_ma"); pos != std::string::npos &&
                                                pos + 3 < n.size()) {
      const int w = n[pos + 3] - '0';
      if (config.ma_windows.empty() || config.ma_windows.back() != w) {
        config.ma_windows.push_back(w);
      }
    }
  }
  if (feature_names(config) !=
      std::vector<std::string>(names.begin(), names.end())) {
    throw ContractError("feature name list is not a canonical layout");
  }
  return config;
}

std::vector<double> assemble_feature_vector(const FeatureConfig& config,
                                            std::span<const EnvVector> history,
                                            double k_now) {
  if (history.empty()) throw ContractError("feature assembly needs >= 1 day of env");
  const EnvVector& now = history.back();
  std::vector<double> f;
  for (int i = 0; i < kEnvDim; ++i) f.push_back(now[i]);
  if (config.include_k) f.push_back(k_now);
  if (config.include_k_env) {
    for (int i = 0; i < kEnvDim; ++i) f.push_back(k_now * now[i]);
  }
  for (int w : config.ma_windows) {
    const std::size_t span = std::min<std::size_t>(static_cast<std::size_t>(w),
                                                   history.size());
    for (int i = 0; i < kEnvDim; ++i) {
      double sum = 0.0;
      for (std::size_t j = history.size() - span; j < history.size(); ++j) {
        sum += history[j][i];
      }
      f.push_back(sum / static_cast<double>(span));
    }
  }
  return f;
}

std::vector<FeatureRow> build_features(const Batch& batch,
                                       const RollingFitSeries& fits,
                                       const FeatureConfig& config) {
  std::vector<FeatureRow> rows;
  std::vector<EnvVector> history;
  const auto& entries = fits.entries;
  for (std::size_t i = 0; i + 1 < entries.size(); ++i) {
    const int t = entries[i].first;
    if (entries[i + 1].first != t + 1) continue;  // need the fit at t+1
    if (t >= batch.duration_days()) break;
    history.clear();
    for (int d = 0; d <= t; ++d) {
      history.push_back(batch.days[static_cast<std::size_t>(d)].env);
    }
    const double k_now = entries[i].second.params.k;
    const double k_next = entries[i + 1].second.params.k;
    FeatureRow row;
    row.batch_id = batch.batch_id;
    row.day = t;
    row.features = assemble_feature_vector(config, history, k_now);
    row.cc = batch.days[static_cast<std::size_t>(t)].cc;
    row.k_now = k_now;
    row.k_next = k_next;
    row.target = config.target == TargetKind::k ? k_next : k_next - k_now;
    rows.push_back(std::move(row));
  }
  return rows;
}

// --- split ---------------------------------------------------------------------

SplitResult split_train_test(std::span<const FeatureRow> rows, double ratio,
                             std::uint64_t seed) {
  if (rows.size() < 5) {
    throw InsufficientDataError("split_train_test: need >= 5 rows, got " +
                                std::to_string(rows.size()));
  }
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ConfigError("split ratio must lie in (0, 1)");
  }
  std::vector<std::string> batch_order;
  std::vector<std::size_t> row_count;
  for (const auto& row : rows) {
    const auto it = std::find(batch_order.begin(), batch_order.end(), row.batch_id);
    if (it == batch_order.end()) {
      batch_order.push_back(row.batch_id);
      row_count.push_back(1);
    } else {
      ++row_count[static_cast<std::size_t>(it - batch_order.begin())];
    }
  }

  SplitResult result;
  if (batch_order.size() == 1) {
    // One batch: fall back to contiguous day blocks, earliest days train.
    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return rows[a].day < rows[b].day;
    });
    const auto cut = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(ratio * static_cast<double>(rows.size()))),
        1, rows.size() - 1);
    for (std::size_t i = 0; i < order.size(); ++i) {
      (i < cut ? result.train : result.test).push_back(rows[order[i]]);
    }
    result.day_block_fallback = true;
    return result;
  }

  std::vector<std::size_t> shuffled(batch_order.size());
  std::iota(shuffled.begin(), shuffled.end(), 0);
  Rng rng(Rng::mix(seed, 0));
  rng.shuffle(std::span<std::size_t>(shuffled));

  // Prefix of the shuffled batches whose row share is nearest the ratio.
  std::size_t best_prefix = 1;
  double best_gap = std::numeric_limits<double>::infinity();
  std::size_t cum = 0;
  for (std::size_t p = 1; p < shuffled.size(); ++p) {
    cum += row_count[shuffled[p - 1]];
    const double gap =
        std::fabs(static_cast<double>(cum) / static_cast<double>(rows.size()) - ratio);
    if (gap < best_gap) {
      best_gap = gap;
      best_prefix = p;
    }
  }
  std::vector<bool> in_train(batch_order.size(), false);
  for (std::size_t p = 0; p < best_prefix; ++p) in_train[shuffled[p]] = true;
  for (const auto& row : rows) {
    const auto it = std::find(batch_order.begin(), batch_order.end(), row.batch_id);
    const auto g = static_cast<std::size_t>(it - batch_order.begin());
    (in_train[g] ? result.train : result.test).push_back(row);
  }
  return result;
}

// --- dense least squares ----------------------------------------------------------

namespace {

// Solves A x = b (general square) by Gaussian elimination with partial
// pivoting. A is overwritten. Throws on numerical singularity.
std::vector<double> solve_dense(std::vector<std::vector<double>>& a,
                                std::vector<double> b) {
  const std::size_t n = a.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
    }
    if (std::fabs(a[pivot][col]) < 1e-300) {
      throw UnderDeterminedError("normal equations are singular");
    }
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t r = n; r-- > 0;) {
    double s = b[r];
    for (std::size_t c = r + 1; c < n; ++c) s -= a[r][c] * x[c];
    x[r] = s / a[r][r];
    if (!std::isfinite(x[r])) {
      throw UnderDeterminedError("normal equations are singular");
    }
  }
  return x;
}

constexpr double kRidgeJitter = 1e-8;

// Weighted least squares with an intercept; returns (coef, intercept).
std::pair<std::vector<double>, double> weighted_ols(
    const std::vector<std::vector<double>>& x, const std::vector<double>& y,
    const std::vector<double>* w) {
  const std::size_t n = x.size();
  const std::size_t m = x.empty() ? 0 : x[0].size();
  if (n < m + 1) {
    throw UnderDeterminedError("least squares: " + std::to_string(n) +
                               " rows for " + std::to_string(m + 1) +
                               " coefficients");
  }
  const std::size_t dim = m + 1;  // intercept last
  std::vector<std::vector<double>> ata(dim, std::vector<double>(dim, 0.0));
  std::vector<double> atb(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double wi = w ? (*w)[i] : 1.0;
    for (std::size_t a = 0; a < dim; ++a) {
      const double xa = a < m ? x[i][a] : 1.0;
      atb[a] += wi * xa * y[i];
      for (std::size_t b = a; b < dim; ++b) {
        const double xb = b < m ? x[i][b] : 1.0;
        ata[a][b] += wi * xa * xb;
      }
    }
  }
  for (std::size_t a = 0; a < dim; ++a) {
    for (std::size_t b = 0; b < a; ++b) ata[a][b] = ata[b][a];
    ata[a][a] += kRidgeJitter;
  }
  auto beta = solve_dense(ata, std::move(atb));
  const double intercept = beta[m];
  beta.resize(m);
  return {std::move(beta), intercept};
}

std::vector<std::vector<double>> expand_powers(
    const std::vector<std::vector<double>>& x, int degree) {
  if (degree <= 1) return x;
  std::vector<std::vector<double>> out;
  out.reserve(x.size());
  for (const auto& row : x) {
    std::vector<double> e;
    e.reserve(row.size() * static_cast<std::size_t>(degree));
    for (int p = 1; p <= degree; ++p) {
      for (const double v : row) e.push_back(std::pow(v, p));
    }
    out.push_back(std::move(e));
  }
  return out;
}

double predict_linear(const Regressor& r, std::span<const double> z) {
  double acc = r.intercept;
  if (r.degree <= 1) {
    for (std::size_t i = 0; i < z.size(); ++i) acc += r.coef[i] * z[i];
    return acc;
  }
  std::size_t c = 0;
  for (int p = 1; p <= r.degree; ++p) {
    for (const double v : z) acc += r.coef[c++] * std::pow(v, p);
  }
  return acc;
}

Regressor fit_linear_family(const std::vector<std::vector<double>>& x,
                            const std::vector<double>& y, Family family,
                            int degree) {
  const auto expanded = expand_powers(x, degree);
  auto [coef, intercept] = weighted_ols(expanded, y, nullptr);
  Regressor r;
  r.family = family;
  r.degree = degree;
  r.coef = std::move(coef);
  r.intercept = intercept;
  return r;
}

// Iteratively reweighted least squares with the Huber weight function;
// residuals are standardized by the MAD scale each round.
Regressor fit_huber(const std::vector<std::vector<double>>& x,
                    const std::vector<double>& y) {
  constexpr double kDelta = 1.35;
  Regressor r = fit_linear_family(x, y, Family::huber, 1);
  std::vector<double> w(x.size(), 1.0), res(x.size());
  for (int iter = 0; iter < 100; ++iter) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      res[i] = std::fabs(y[i] - predict_linear(r, x[i]));
    }
    std::vector<double> sorted = res;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2,
                     sorted.end());
    const double scale = sorted[sorted.size() / 2] / 0.6745;
    if (scale < 1e-12) break;  // interpolating fit
    for (std::size_t i = 0; i < x.size(); ++i) {
      w[i] = res[i] <= kDelta * scale ? 1.0 : kDelta * scale / res[i];
    }
    auto [coef, intercept] = weighted_ols(x, y, &w);
    double change = std::fabs(intercept - r.intercept);
    for (std::size_t c = 0; c < coef.size(); ++c) {
      change = std::max(change, std::fabs(coef[c] - r.coef[c]));
    }
    r.coef = std::move(coef);
    r.intercept = intercept;
    if (change < 1e-10) break;
  }
  return r;
}

// Degree picked from {1,2,3,4} by MSE on a deterministic 20% validation shard
// (every fifth row), then refit on all rows.
Regressor fit_polynomial(const std::vector<std::vector<double>>& x,
                         const std::vector<double>& y, int forced_degree) {
  if (forced_degree > 0) {
    return fit_linear_family(x, y, Family::polynomial, forced_degree);
  }
  std::vector<std::vector<double>> xt, xv;
  std::vector<double> yt, yv;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (i % 5 == 4) {
      xv.push_back(x[i]);
      yv.push_back(y[i]);
    } else {
      xt.push_back(x[i]);
      yt.push_back(y[i]);
    }
  }
  int best_degree = 0;
  double best_mse = std::numeric_limits<double>::infinity();
  for (int degree = 1; degree <= 4; ++degree) {
    Regressor cand;
    try {
      cand = fit_linear_family(xt, yt, Family::polynomial, degree);
    } catch (const UnderDeterminedError&) {
      continue;
    }
    double mse = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double e = yv[i] - predict_linear(cand, xv[i]);
      mse += e * e;
    }
    mse = xv.empty() ? 0.0 : mse / static_cast<double>(xv.size());
    if (mse < best_mse) {
      best_mse = mse;
      best_degree = degree;
    }
  }
  if (best_degree == 0) {
    throw UnderDeterminedError("polynomial: no degree is identifiable");
  }
  return fit_linear_family(x, y, Family::polynomial, best_degree);
}

// epsilon-insensitive linear regression fit by full-batch subgradient descent.
Regressor fit_linear_svr(const std::vector<std::vector<double>>& x,
                         const std::vector<double>& y, const Hyper& hyper) {
  const std::size_t n = x.size();
  const std::size_t m = x[0].size();
  Regressor r;
  r.family = Family::linear_svr;
  r.coef.assign(m, 0.0);
  r.intercept = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);

  constexpr double kStep = 1e-3;
  constexpr int kEpochs = 500;
  std::vector<double> gw(m);
  for (int epoch = 0; epoch < kEpochs; ++epoch) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double pred = r.intercept;
      for (std::size_t c = 0; c < m; ++c) pred += r.coef[c] * x[i][c];
      const double res = y[i] - pred;
      if (std::fabs(res) <= hyper.svr_epsilon) continue;
      const double sign = res > 0.0 ? -1.0 : 1.0;  // d|res|-side subgradient
      for (std::size_t c = 0; c < m; ++c) gw[c] += sign * x[i][c];
      gb += sign;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t c = 0; c < m; ++c) {
      gw[c] = gw[c] * inv_n + r.coef[c] / (hyper.svr_c * static_cast<double>(n));
      r.coef[c] -= kStep * gw[c];
    }
    r.intercept -= kStep * gb * inv_n;
  }
  return r;
}

Regressor fit_knn(const std::vector<std::vector<double>>& x,
                  const std::vector<double>& y, int n_neighbors) {
  Regressor r;
  r.family = Family::knn;
  r.n_neighbors = n_neighbors;
  r.train_x = x;
  r.train_y = y;
  return r;
}

double predict_knn(const Regressor& r, std::span<const double> z) {
  const std::size_t n = r.train_x.size();
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(r.n_neighbors), n);
  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d2 = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) {
      const double d = r.train_x[i][c] - z[c];
      d2 += d * d;
    }
    dist.emplace_back(d2, i);
  }
  // index tiebreak keeps equal-distance neighbors deterministic
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k),
                    dist.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) sum += r.train_y[dist[i].second];
  return sum / static_cast<double>(k);
}

double in_sample_mse(const Regressor& r, const std::vector<std::vector<double>>& x,
                     const std::vector<double>& y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - r.predict(x[i]);
    acc += e * e;
  }
  return x.empty() ? 0.0 : acc / static_cast<double>(x.size());
}

}  // namespace

double Regressor::predict(std::span<const double> z) const {
  if (family == Family::knn) return predict_knn(*this, z);
  return predict_linear(*this, z);
}

Regressor train_regressor(const std::vector<std::vector<double>>& x_std,
                          const std::vector<double>& y, Family family,
                          const Hyper& hyper) {
  if (x_std.empty() || x_std.size() != y.size()) {
    throw ContractError("train_regressor: empty or mismatched rows");
  }
  switch (family) {
    case Family::linear: return fit_linear_family(x_std, y, Family::linear, 1);
    case Family::huber: return fit_huber(x_std, y);
    case Family::polynomial: return fit_polynomial(x_std, y, hyper.poly_degree);
    case Family::knn: return fit_knn(x_std, y, hyper.knn_neighbors);
    case Family::linear_svr: return fit_linear_svr(x_std, y, hyper);
  }
  throw ContractError("train_regressor: unknown family");
}

// --- trained model -----------------------------------------------------------------

FeatureConfig TrainedGrowthModel::feature_config() const {
  return feature_config_from_names(feature_spec.names, target_kind);
}

std::size_t TrainedGrowthModel::pick_bin(double cc_now) const {
  std::size_t best = 0;
  double best_gap = std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < scheme.bins.size(); ++b) {
    const double gap = std::fabs(scheme.bins[b].center - cc_now);
    if (gap < best_gap) {
      best_gap = gap;
      best = b;
    }
  }
  return best;
}

namespace {

std::vector<double> standardize(const FeatureSpec& spec,
                                std::span<const double> raw) {
  if (raw.size() != spec.names.size()) {
    throw ContractError("feature vector length " + std::to_string(raw.size()) +
                        " does not match the model's " +
                        std::to_string(spec.names.size()));
  }
  std::vector<double> z(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    z[i] = (raw[i] - spec.means[i]) / spec.sds[i];
  }
  return z;
}

}  // namespace

double TrainedGrowthModel::predict_target(std::span<const double> raw_features,
                                          double cc_now) const {
  const auto z = standardize(feature_spec, raw_features);
  return per_bin[pick_bin(cc_now)].predict(z);
}

double TrainedGrowthModel::predict_k(std::span<const double> raw_features,
                                     double cc_now, double k_now) const {
  const double pred = predict_target(raw_features, cc_now);
  const double k = target_kind == TargetKind::k ? pred : k_now + pred;
  return std::clamp(k, kGrowthRateFloor, kGrowthRateCap);
}

TrainedGrowthModel train_growth_model(std::span<const FeatureRow> train_rows,
                                      Family family, const Hyper& hyper,
                                      BinKind binning, const FeatureConfig& config) {
  if (train_rows.empty()) {
    throw InsufficientDataError("train_growth_model: no training rows");
  }
  TrainedGrowthModel model;
  model.family = family;
  model.hyper = hyper;
  model.target_kind = config.target;
  model.scheme = make_bins(binning);
  model.feature_spec.names = feature_names(config);

  const std::size_t m = model.feature_spec.names.size();
  for (const auto& row : train_rows) {
    if (row.features.size() != m) {
      throw ContractError("feature row length does not match the config layout");
    }
  }

  // standardization constants from the training rows only
  model.feature_spec.means.assign(m, 0.0);
  model.feature_spec.sds.assign(m, 0.0);
  const double n = static_cast<double>(train_rows.size());
  for (const auto& row : train_rows) {
    for (std::size_t c = 0; c < m; ++c) model.feature_spec.means[c] += row.features[c];
  }
  for (std::size_t c = 0; c < m; ++c) model.feature_spec.means[c] /= n;
  for (const auto& row : train_rows) {
    for (std::size_t c = 0; c < m; ++c) {
      const double d = row.features[c] - model.feature_spec.means[c];
      model.feature_spec.sds[c] += d * d;
    }
  }
  for (std::size_t c = 0; c < m; ++c) {
    model.feature_spec.sds[c] = std::sqrt(model.feature_spec.sds[c] / n);
    if (model.feature_spec.sds[c] == 0.0) model.feature_spec.sds[c] = 1.0;
  }

  std::vector<std::vector<double>> x;
  std::vector<double> y;
  x.reserve(train_rows.size());
  y.reserve(train_rows.size());
  for (const auto& row : train_rows) {
    x.push_back(standardize(model.feature_spec, row.features));
    y.push_back(row.target);
    model.norm.delta_k_max =
        std::max(model.norm.delta_k_max, std::fabs(row.k_next - row.k_now));
    model.norm.k_max = std::max({model.norm.k_max, row.k_now, row.k_next});
  }

  const Regressor pooled = train_regressor(x, y, family, hyper);

  const auto assignment = assign_rows_to_bins(train_rows, model.scheme);
  for (std::size_t b = 0; b < model.scheme.bins.size(); ++b) {
    const auto& idx = assignment[b];
    std::vector<std::vector<double>> xb;
    std::vector<double> yb;
    xb.reserve(idx.size());
    yb.reserve(idx.size());
    for (const std::size_t i : idx) {
      xb.push_back(x[i]);
      yb.push_back(y[i]);
    }
    Regressor r;
    if (idx.size() < kMinRowsPerBin) {
      r = pooled;
      r.fallback = true;
    } else {
      try {
        r = train_regressor(xb, yb, family, hyper);
      } catch (const UnderDeterminedError&) {
        r = pooled;
        r.fallback = true;
      }
    }
    if (!r.fallback && !xb.empty()) {
      r.insample_worse = in_sample_mse(r, xb, yb) > in_sample_mse(pooled, xb, yb);
    }
    model.per_bin.push_back(std::move(r));
  }
  return model;
}

// --- metrics & benchmark --------------------------------------------------------------

Metrics metrics(std::span<const double> y_true, std::span<const double> y_pred) {
  if (y_true.empty() || y_true.size() != y_pred.size()) {
    throw ContractError("metrics: inputs must have equal nonzero length");
  }
  const double n = static_cast<double>(y_true.size());
  double mean = 0.0;
  for (const double v : y_true) mean += v;
  mean /= n;
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const double e = y_true[i] - y_pred[i];
    ss_res += e * e;
    const double d = y_true[i] - mean;
    ss_tot += d * d;
  }
  Metrics m;
  m.mse = ss_res / n;
  m.r2 = ss_tot == 0.0 ? std::numeric_limits<double>::quiet_NaN()
                       : 1.0 - ss_res / ss_tot;
  return m;
}

BenchmarkTable benchmark_grid(const SplitResult& split, const FeatureConfig& config,
                              const Hyper& hyper) {
  BenchmarkTable table;
  for (const Family family : kAllFamilies) {
    for (const BinKind binning : kAllBinKinds) {
      BenchmarkCell cell;
      cell.family = family;
      cell.binning = binning;
      try {
        const auto model =
            train_growth_model(split.train, family, hyper, binning, config);
        std::vector<double> y_true, y_pred;
        y_true.reserve(split.test.size());
        y_pred.reserve(split.test.size());
        for (const auto& row : split.test) {
          y_true.push_back(row.target);
          y_pred.push_back(model.predict_target(row.features, row.cc));
        }
        cell.m = metrics(y_true, y_pred);
      } catch (const std::exception& e) {
        cell.failed = true;
        cell.error = e.what();
      }
      table.push_back(std::move(cell));
    }
  }
  return table;
}

std::pair<Family, BinKind> select_best(const BenchmarkTable& table,
                                       SelectCriterion criterion) {
  const BenchmarkCell* best = nullptr;
  for (const auto& cell : table) {
    if (cell.failed) continue;
    if (criterion == SelectCriterion::r2 && std::isnan(cell.m.r2)) continue;
    if (best == nullptr) {
      best = &cell;
      continue;
    }
    if (criterion == SelectCriterion::mse ? cell.m.mse < best->m.mse
                                          : cell.m.r2 > best->m.r2) {
      best = &cell;
    }
  }
  if (best == nullptr) {
    throw SelectionError("select_best: every benchmark cell failed");
  }
  return {best->family, best->binning};
}

namespace {

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace

void write_benchmark_csv(std::ostream& out, const BenchmarkTable& table) {
  out << "family,binning,r2,mse\n";
  for (const auto& cell : table) {
    out << to_string(cell.family) << ',' << to_string(cell.binning) << ',';
    if (cell.failed) {
      out << "error,error\n";
    } else {
      out << fmt_double(cell.m.r2) << ',' << fmt_double(cell.m.mse) << '\n';
    }
  }
}

// --- model artifact -----------------------------------------------------------------

nlohmann::ordered_json model_to_json(const TrainedGrowthModel& model) {
  nlohmann::ordered_json bins = nlohmann::ordered_json::array();
  for (const auto& b : model.scheme.bins) {
    bins.push_back({{"lower", b.lower}, {"upper", b.upper}, {"center", b.center}});
  }
  nlohmann::ordered_json per_bin = nlohmann::ordered_json::array();
  for (const auto& r : model.per_bin) {
    nlohmann::ordered_json jr;
    jr["family"] = to_string(r.family);
    if (r.family == Family::knn) {
      jr["n_neighbors"] = r.n_neighbors;
      jr["x"] = r.train_x;
      jr["y"] = r.train_y;
    } else {
      jr["degree"] = r.degree;
      jr["intercept"] = r.intercept;
      jr["coef"] = r.coef;
    }
    jr["fallback"] = r.fallback;
    per_bin.push_back(std::move(jr));
  }
  return {{"version", model.version},
          {"family", to_string(model.family)},
          {"hyper",
           {{"poly_degree", model.hyper.poly_degree},
            {"knn_neighbors", model.hyper.knn_neighbors},
            {"svr_epsilon", model.hyper.svr_epsilon},
            {"svr_c", model.hyper.svr_c}}},
          {"target_kind", to_string(model.target_kind)},
          {"feature_spec",
           {{"names", model.feature_spec.names},
            {"means", model.feature_spec.means},
            {"sds", model.feature_spec.sds}}},
          {"scheme", {{"kind", to_string(model.scheme.kind)}, {"bins", std::move(bins)}}},
          {"per_bin", std::move(per_bin)},
          {"norm",
           {{"delta_k_max", model.norm.delta_k_max}, {"k_max", model.norm.k_max}}}};
}

TrainedGrowthModel model_from_json(const nlohmann::json& j) {
  TrainedGrowthModel model;
  model.version = j.at("version").get<int>();
  model.family = family_from_string(j.at("family").get<std::string>());
  model.hyper.poly_degree = j.at("hyper").at("poly_degree").get<int>();
  model.hyper.knn_neighbors = j.at("hyper").at("knn_neighbors").get<int>();
  model.hyper.svr_epsilon = j.at("hyper").at("svr_epsilon").get<double>();
  model.hyper.svr_c = j.at("hyper").at("svr_c").get<double>();
  model.target_kind = target_kind_from_string(j.at("target_kind").get<std::string>());
  model.feature_spec.names =
      j.at("feature_spec").at("names").get<std::vector<std::string>>();
  model.feature_spec.means =
      j.at("feature_spec").at("means").get<std::vector<double>>();
  model.feature_spec.sds = j.at("feature_spec").at("sds").get<std::vector<double>>();
  model.scheme.kind = bin_kind_from_string(j.at("scheme").at("kind").get<std::string>());
  for (const auto& jb : j.at("scheme").at("bins")) {
    model.scheme.bins.push_back(Bin{jb.at("lower").get<double>(),
                                    jb.at("upper").get<double>(),
                                    jb.at("center").get<double>()});
  }
  for (const auto& jr : j.at("per_bin")) {
    Regressor r;
    r.family = family_from_string(jr.at("family").get<std::string>());
    if (r.family == Family::knn) {
      r.n_neighbors = jr.at("n_neighbors").get<int>();
      r.train_x = jr.at("x").get<std::vector<std::vector<double>>>();
      r.train_y = jr.at("y").get<std::vector<double>>();
    } else {
      r.degree = jr.at("degree").get<int>();
      r.intercept = jr.at("intercept").get<double>();
      r.coef = jr.at("coef").get<std::vector<double>>();
    }
    r.fallback = jr.at("fallback").get<bool>();
    model.per_bin.push_back(std::move(r));
  }
  model.norm.delta_k_max = j.at("norm").at("delta_k_max").get<double>();
  model.norm.k_max = j.at("norm").at("k_max").get<double>();
  return model;
}

}  // namespace growthsim
