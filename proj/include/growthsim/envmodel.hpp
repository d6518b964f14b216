#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "growthsim/curvefit.hpp"
#include "growthsim/ingest.hpp"

namespace growthsim {

enum class Family { linear, huber, polynomial, knn, linear_svr };
enum class BinKind { none, sequential, overlapping };
enum class TargetKind { k, delta_k };
enum class SelectCriterion { mse, r2 };

std::string to_string(Family f);
std::string to_string(BinKind b);
std::string to_string(TargetKind t);
Family family_from_string(const std::string& s);
BinKind bin_kind_from_string(const std::string& s);
TargetKind target_kind_from_string(const std::string& s);

inline constexpr std::array<Family, 5> kAllFamilies = {
    Family::linear, Family::huber, Family::polynomial, Family::knn,
    Family::linear_svr};
inline constexpr std::array<BinKind, 3> kAllBinKinds = {
    BinKind::none, BinKind::sequential, BinKind::overlapping};

// --- plant-size bins ---------------------------------------------------------

// Interval of the cover axis owning its own regressor. Center is the nominal
// window center, even when clipping made the interval asymmetric.
struct Bin {
  double lower = 0.0, upper = 0.0, center = 0.0;
};

struct BinScheme {
  BinKind kind = BinKind::none;
  std::vector<Bin> bins;
};

// none: one bin over [0.05, 1]. sequential: 4 equal-width bins partitioning
// [0.05, 1]. overlapping: 15 windows of nominal half-width 0.19 with centers
// evenly spaced on [0.05, 1], clipped to the axis (so the end windows are
// smaller).
BinScheme make_bins(BinKind kind);

// --- feature assembly ----------------------------------------------------------

struct FeatureConfig {
  bool include_k = false;            // current growth rate as a feature
  bool include_k_env = false;        // elementwise k * env products
  std::vector<int> ma_windows;       // env moving-average windows, each in 2..6
  TargetKind target = TargetKind::k;
};

std::vector<std::string> feature_names(const FeatureConfig& config);
// Inverse of feature_names (the name list fully determines the layout).
FeatureConfig feature_config_from_names(std::span<const std::string> names,
                                        TargetKind target);

// Raw (unstandardized) feature vector for one day. history holds the daily env
// vectors up to and including the current day; moving averages fall back to
// the available prefix when a window is longer than the history.
std::vector<double> assemble_feature_vector(const FeatureConfig& config,
                                            std::span<const EnvVector> history,
                                            double k_now);

struct FeatureRow {
  std::string batch_id;
  int day = 0;                    // the day t the features describe
  std::vector<double> features;   // raw units
  double cc = 0.0;                // plant size at t
  double k_now = 0.0;             // growth rate at t
  double k_next = 0.0;            // growth rate at t+1 (the prediction target)
  double target = 0.0;            // k_next or k_next - k_now per config
};

// One row per day t with a fit at both t and t+1.
std::vector<FeatureRow> build_features(const Batch& batch,
                                       const RollingFitSeries& fits,
                                       const FeatureConfig& config);

// Row index lists per bin. A row joins every bin whose interval contains its
// cc (upper-inclusive where the interval is clipped at the axis top); rows
// below the 0.05 floor are dropped.
std::vector<std::vector<std::size_t>> assign_rows_to_bins(
    std::span<const FeatureRow> rows, const BinScheme& scheme);

// Bins with fewer training rows than this fall back to the pooled model.
inline constexpr std::size_t kMinRowsPerBin = 5;

// --- train/test split ------------------------------------------------------------

struct SplitResult {
  std::vector<FeatureRow> train, test;
  bool day_block_fallback = false;  // single batch: split by day blocks instead
};

// Splits by whole batch (rows of one batch never straddle the split), picking
// the shuffled batch prefix whose row share is nearest the ratio.
SplitResult split_train_test(std::span<const FeatureRow> rows, double ratio,
                             std::uint64_t seed);

// --- regressors -----------------------------------------------------------------

struct Hyper {
  int poly_degree = 0;      // 0: choose from {1,2,3,4} on a validation shard
  int knn_neighbors = 5;
  double svr_epsilon = 0.01;
  double svr_c = 1.0;
};

// A fitted per-bin regressor over standardized features. Linear-coefficient
// families use coef/intercept (polynomial over per-feature powers up to
// degree); knn stores its training rows.
struct Regressor {
  Family family = Family::linear;
  int degree = 1;
  double intercept = 0.0;
  std::vector<double> coef;
  int n_neighbors = 5;
  std::vector<std::vector<double>> train_x;
  std::vector<double> train_y;
  bool fallback = false;        // bin was under-populated; pooled model copied in
  bool insample_worse = false;  // bin model lost to the pooled model on its own rows

  double predict(std::span<const double> z) const;
};

Regressor train_regressor(const std::vector<std::vector<double>>& x_std,
                          const std::vector<double>& y, Family family,
                          const Hyper& hyper);

// --- trained model ----------------------------------------------------------------

struct FeatureSpec {
  std::vector<std::string> names;
  std::vector<double> means, sds;
};

struct NormConstants {
  double delta_k_max = 0.0;  // max |k_next - k_now| over training rows
  double k_max = 0.0;        // max growth rate seen in training rows
};

struct TrainedGrowthModel {
  int version = 1;
  Family family = Family::linear;
  Hyper hyper;
  TargetKind target_kind = TargetKind::k;
  BinScheme scheme;
  FeatureSpec feature_spec;
  std::vector<Regressor> per_bin;
  NormConstants norm;

  FeatureConfig feature_config() const;
  // Bin whose center is nearest cc_now; ties resolve to the lower center.
  std::size_t pick_bin(double cc_now) const;
  // Raw model output in target space (k or delta-k), without clamping.
  double predict_target(std::span<const double> raw_features, double cc_now) const;
  // Next-day growth rate: adds k_now back for delta-k models and clamps the
  // result into (0, kGrowthRateCap].
  double predict_k(std::span<const double> raw_features, double cc_now,
                   double k_now) const;
};

TrainedGrowthModel train_growth_model(std::span<const FeatureRow> train_rows,
                                      Family family, const Hyper& hyper,
                                      BinKind binning, const FeatureConfig& config);

nlohmann::ordered_json model_to_json(const TrainedGrowthModel& model);
TrainedGrowthModel model_from_json(const nlohmann::json& j);

// --- metrics & benchmark -----------------------------------------------------------

struct Metrics {
  double r2 = 0.0;  // NaN when y_true is constant (undefined)
  double mse = 0.0;
};

Metrics metrics(std::span<const double> y_true, std::span<const double> y_pred);

struct BenchmarkCell {
  Family family = Family::linear;
  BinKind binning = BinKind::none;
  Metrics m;
  bool failed = false;
  std::string error;
};
using BenchmarkTable = std::vector<BenchmarkCell>;

// Trains every family x binning combination on the train rows and scores
// pooled test predictions. Failed cells carry their error instead of aborting
// the grid.
BenchmarkTable benchmark_grid(const SplitResult& split, const FeatureConfig& config,
                              const Hyper& hyper = {});

std::pair<Family, BinKind> select_best(const BenchmarkTable& table,
                                       SelectCriterion criterion = SelectCriterion::mse);

// CSV mirror of the benchmark: family,binning,r2,mse.
void write_benchmark_csv(std::ostream& out, const BenchmarkTable& table);

}  // namespace growthsim
