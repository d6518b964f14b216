#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "growthsim/core.hpp"

namespace growthsim {

// The seven environment variables, in canonical order. The order fixes CSV
// columns, JSON keys and feature layout everywhere downstream.
enum EnvVar : int {
  kCo2 = 0,
  kAirTemp,
  kRelHumidity,
  kEc,
  kOrp,
  kPh,
  kWaterTemp,
};
inline constexpr int kEnvDim = 7;

// Canonical field names (also the telemetry CSV header, minus timestamp).
const std::array<std::string_view, kEnvDim>& env_field_names();

// One day's (or one sample's) seven environment readings.
struct EnvVector {
  std::array<double, kEnvDim> v{};

  double& operator[](int i) { return v[static_cast<std::size_t>(i)]; }
  double operator[](int i) const { return v[static_cast<std::size_t>(i)]; }
  bool operator==(const EnvVector&) const = default;
};

struct TelemetrySample {
  std::int64_t timestamp = 0;  // seconds since the Unix epoch, UTC
  EnvVector env;
};

struct CanopySample {
  std::int64_t timestamp = 0;
  double cc = 0.0;  // cover fraction in [0, 1]
};

struct DayRecord {
  int day = 0;  // 0-based day index from the start of the batch
  EnvVector env;
  double cc = 0.0;
};

// One growth run: contiguous daily records from day 0.
struct Batch {
  std::string batch_id;
  std::vector<DayRecord> days;

  int duration_days() const { return static_cast<int>(days.size()); }
};

// --- timestamps ------------------------------------------------------------

// "YYYY-MM-DDTHH:MM:SSZ" <-> Unix seconds. Day boundaries are UTC midnight.
std::int64_t parse_iso8601(std::string_view text);
std::string format_iso8601(std::int64_t unix_seconds);
std::int64_t utc_day(std::int64_t unix_seconds);

// --- CSV / manifest I/O ------------------------------------------------------

// Telemetry CSV schema:
//   timestamp,co2_ppm,air_temp_c,rel_humidity_pct,ec_ms_cm,orp_mv,ph,water_temp_c
// Rejects a wrong header with SchemaError and malformed rows with RowError.
std::vector<TelemetrySample> load_telemetry(std::istream& in);
void write_telemetry_csv(std::ostream& out, std::span<const TelemetrySample> samples);

// Canopy CSV schema: timestamp,cc_fraction
std::vector<CanopySample> load_canopy_series(std::istream& in);
void write_canopy_csv(std::ostream& out, std::span<const CanopySample> samples);

// Batch manifest: {batch_id, duration_days, days:[{day, env:{...}, cc}]}
nlohmann::ordered_json batch_to_manifest(const Batch& batch);
Batch batch_from_manifest(const nlohmann::json& manifest);

// --- aggregation -------------------------------------------------------------

// Per-UTC-day arithmetic means. Days without samples are absent. Returned in
// ascending day order; the day key is utc_day() of the samples.
std::vector<std::pair<std::int64_t, EnvVector>> daily_average(
    std::span<const TelemetrySample> samples);

// Joins daily environment vectors with daily-averaged cover samples. Keeps the
// longest contiguous run of days present in both inputs and re-bases day
// indexes to 0. Throws AssemblyError when the inputs share no day.
Batch assemble_batch(std::span<const std::pair<std::int64_t, EnvVector>> env_days,
                     std::span<const CanopySample> cc_samples, std::string batch_id);

// --- synthetic batches -------------------------------------------------------

// Per-variable contribution to the next-day growth rate, relative to an
// optimum: linear * (x - opt) + curvature * (x - opt)^2. Concave responses
// (curvature <= 0) model a single per-variable optimum.
struct VarResponse {
  double optimum = 0.0;
  double curvature = 0.0;  // must be <= 0
  double linear = 0.0;
};

// Truncated-normal sampling range for one variable's daily value.
struct VarDistribution {
  double mean = 0.0;
  double sd = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// Generator config with a known environment->growth-rate response; stands in
// for real chamber data in every closed-loop test.
struct SyntheticGroundTruth {
  double base_rate = 0.3;  // growth rate when every variable sits at its optimum
  std::array<VarResponse, kEnvDim> response{};
  std::array<VarDistribution, kEnvDim> env_dist{};
  double noise_sigma = 0.0;
  double cc_max = 1.0;
  double t0 = 20.0;
  double start_cc = 0.03;

  // Noise-free response: base_rate + sum of per-variable terms (unclamped).
  double growth_rate_for(const EnvVector& env) const;
  void validate() const;  // throws ConfigError

  // A mid-scale basil-chamber-like default: plausible ranges for all seven
  // variables, pH optimum at 6.25.
  static SyntheticGroundTruth chamber_default();
};

struct SyntheticBatch {
  Batch batch;
  std::vector<double> k_series;  // growth rate in effect on each day (k_series[0] = base)
};

// Forward-simulates n batches of D days each: env drawn daily from the
// configured truncated normals, k evolving from the previous day's env, cc on
// the logistic curve with the evolving k. Deterministic given seed.
std::vector<SyntheticBatch> generate_synthetic_batches_with_truth(
    const SyntheticGroundTruth& truth, int n_batches, int duration_days,
    std::uint64_t seed);
std::vector<Batch> generate_synthetic_batches(const SyntheticGroundTruth& truth,
                                              int n_batches, int duration_days,
                                              std::uint64_t seed);

// Converts a batch back to raw file form (one sample per day at UTC noon,
// dated from base_day). Round-trips through load_* + assemble_batch exactly.
std::vector<TelemetrySample> batch_to_telemetry(const Batch& batch,
                                                std::int64_t base_day = 19723);
std::vector<CanopySample> batch_to_canopy(const Batch& batch,
                                          std::int64_t base_day = 19723);

}  // namespace growthsim
