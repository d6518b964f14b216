#include "growthsim/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "growthsim/errors.hpp"
#include "growthsim/rng.hpp"

namespace growthsim {

const std::array<std::string_view, kEnvDim>& env_field_names() {
  static const std::array<std::string_view, kEnvDim> names = {
      "co2_ppm",  "air_temp_c", "rel_humidity_pct", "ec_ms_cm",
      "orp_mv",   "ph",         "water_temp_c"};
  return names;
}

// --- timestamps --------------------------------------------------------------

namespace {

// Civil-date <-> day-count conversions (proleptic Gregorian, days since
// 1970-01-01).
std::int64_t days_from_civil(int y, unsigned m, unsigned d) {
  y -= m <= 2;
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return static_cast<std::int64_t>(era) * 146097 + static_cast<std::int64_t>(doe) -
         719468;
}

void civil_from_days(std::int64_t z, int& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y = static_cast<int>(yy + (m <= 2));
}

bool parse_fixed_uint(std::string_view s, std::size_t pos, std::size_t len,
                      unsigned& out) {
  unsigned v = 0;
  if (pos + len > s.size()) return false;
  for (std::size_t i = pos; i < pos + len; ++i) {
    const char c = s[i];
    if (c < '0' || c > '9') return false;
    v = v * 10 + static_cast<unsigned>(c - '0');
  }
  out = v;
  return true;
}

}  // namespace

std::int64_t parse_iso8601(std::string_view text) {
  // YYYY-MM-DD[T ]HH:MM:SS with an optional trailing 'Z'.
  unsigned yy, mm, dd, hh, mi, ss;
  const bool shape_ok =
      text.size() >= 19 && parse_fixed_uint(text, 0, 4, yy) && text[4] == '-' &&
      parse_fixed_uint(text, 5, 2, mm) && text[7] == '-' &&
      parse_fixed_uint(text, 8, 2, dd) && (text[10] == 'T' || text[10] == ' ') &&
      parse_fixed_uint(text, 11, 2, hh) && text[13] == ':' &&
      parse_fixed_uint(text, 14, 2, mi) && text[16] == ':' &&
      parse_fixed_uint(text, 17, 2, ss);
  const std::string_view rest = shape_ok ? text.substr(19) : text;
  if (!shape_ok || (!rest.empty() && rest != "Z") || mm < 1 || mm > 12 || dd < 1 ||
      dd > 31 || hh > 23 || mi > 59 || ss > 60) {
    throw std::invalid_argument("not an ISO 8601 UTC timestamp: " +
                                std::string(text));
  }
  return days_from_civil(static_cast<int>(yy), mm, dd) * 86400 + hh * 3600 +
         mi * 60 + ss;
}

std::string format_iso8601(std::int64_t unix_seconds) {
  const std::int64_t day = utc_day(unix_seconds);
  const int sod = static_cast<int>(unix_seconds - day * 86400);
  int y;
  unsigned m, d;
  civil_from_days(day, y, m, d);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", y, m, d,
                sod / 3600, sod / 60 % 60, sod % 60);
  return buf;
}

std::int64_t utc_day(std::int64_t unix_seconds) {
  return unix_seconds >= 0 ? unix_seconds / 86400
                           : (unix_seconds - 86399) / 86400;
}

// --- CSV ----------------------------------------------------------------------

namespace {

// RFC 4180 line split: quoted fields may contain commas and doubled quotes.
std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"' && field.empty()) {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

bool read_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

double parse_double_field(const std::string& text, std::size_t row,
                          std::string_view column) {
  double value = 0.0;
  const char* last = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), last, value);
  if (ec != std::errc() || ptr != last || !std::isfinite(value)) {
    throw RowError(row, std::string(column), "cannot parse \"" + text + "\"");
  }
  return value;
}

// Shortest representation that round-trips through from_chars exactly.
std::string fmt_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

void check_env_invariants(const EnvVector& env, std::size_t row) {
  if (!(env[kCo2] > 0.0))
    throw RowError(row, "co2_ppm", "must be positive");
  if (env[kRelHumidity] < 0.0 || env[kRelHumidity] > 100.0)
    throw RowError(row, "rel_humidity_pct", "must lie in [0, 100]");
  if (env[kPh] < 0.0 || env[kPh] > 14.0)
    throw RowError(row, "ph", "must lie in [0, 14]");
}

std::string telemetry_header() {
  std::string h = "timestamp";
  for (const auto& name : env_field_names()) {
    h += ',';
    h += name;
  }
  return h;
}

}  // namespace

std::vector<TelemetrySample> load_telemetry(std::istream& in) {
  std::string line;
  if (!read_line(in, line)) throw SchemaError("telemetry CSV is empty");
  if (line != telemetry_header()) {
    throw SchemaError("telemetry CSV header mismatch, expected \"" +
                      telemetry_header() + "\"");
  }
  std::vector<TelemetrySample> samples;
  std::size_t row = 1;
  while (read_line(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = split_csv_row(line);
    if (fields.size() != 1 + kEnvDim) {
      throw RowError(row, "(row)", "expected 8 fields, got " +
                                       std::to_string(fields.size()));
    }
    TelemetrySample s;
    try {
      s.timestamp = parse_iso8601(fields[0]);
    } catch (const std::invalid_argument& e) {
      throw RowError(row, "timestamp", e.what());
    }
    for (int i = 0; i < kEnvDim; ++i) {
      s.env[i] = parse_double_field(fields[static_cast<std::size_t>(i) + 1], row,
                                    env_field_names()[static_cast<std::size_t>(i)]);
    }
    check_env_invariants(s.env, row);
    samples.push_back(s);
  }
  std::stable_sort(samples.begin(), samples.end(),
                   [](const TelemetrySample& a, const TelemetrySample& b) {
                     return a.timestamp < b.timestamp;
                   });
  return samples;
}

void write_telemetry_csv(std::ostream& out, std::span<const TelemetrySample> samples) {
  out << telemetry_header() << '\n';
  for (const auto& s : samples) {
    out << format_iso8601(s.timestamp);
    for (int i = 0; i < kEnvDim; ++i) out << ',' << fmt_double(s.env[i]);
    out << '\n';
  }
}

std::vector<CanopySample> load_canopy_series(std::istream& in) {
  std::string line;
  if (!read_line(in, line)) throw SchemaError("canopy CSV is empty");
  if (line != "timestamp,cc_fraction") {
    throw SchemaError("canopy CSV header mismatch, expected \"timestamp,cc_fraction\"");
  }
  std::vector<CanopySample> series;
  std::size_t row = 1;
  while (read_line(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = split_csv_row(line);
    if (fields.size() != 2) {
      throw RowError(row, "(row)", "expected 2 fields, got " +
                                       std::to_string(fields.size()));
    }
    CanopySample s;
    try {
      s.timestamp = parse_iso8601(fields[0]);
    } catch (const std::invalid_argument& e) {
      throw RowError(row, "timestamp", e.what());
    }
    s.cc = parse_double_field(fields[1], row, "cc_fraction");
    if (s.cc < 0.0 || s.cc > 1.0) {
      throw RowError(row, "cc_fraction", "must lie in [0, 1]");
    }
    series.push_back(s);
  }
  std::stable_sort(series.begin(), series.end(),
                   [](const CanopySample& a, const CanopySample& b) {
                     return a.timestamp < b.timestamp;
                   });
  return series;
}

void write_canopy_csv(std::ostream& out, std::span<const CanopySample> samples) {
  out << "timestamp,cc_fraction\n";
  for (const auto& s : samples) {
    out << format_iso8601(s.timestamp) << ',' << fmt_double(s.cc) << '\n';
  }
}

nlohmann::ordered_json batch_to_manifest(const Batch& batch) {
  nlohmann::ordered_json days = nlohmann::ordered_json::array();
  for (const auto& rec : batch.days) {
    nlohmann::ordered_json env;
    for (int i = 0; i < kEnvDim; ++i) {
      env[std::string(env_field_names()[static_cast<std::size_t>(i)])] = rec.env[i];
    }
    days.push_back({{"day", rec.day}, {"env", std::move(env)}, {"cc", rec.cc}});
  }
  return {{"batch_id", batch.batch_id},
          {"duration_days", batch.duration_days()},
          {"days", std::move(days)}};
}

Batch batch_from_manifest(const nlohmann::json& manifest) {
  Batch batch;
  batch.batch_id = manifest.at("batch_id").get<std::string>();
  for (const auto& rec : manifest.at("days")) {
    DayRecord day;
    day.day = rec.at("day").get<int>();
    day.cc = rec.at("cc").get<double>();
    for (int i = 0; i < kEnvDim; ++i) {
      day.env[i] =
          rec.at("env").at(std::string(env_field_names()[static_cast<std::size_t>(i)]))
              .get<double>();
    }
    batch.days.push_back(day);
  }
  const int expected = manifest.at("duration_days").get<int>();
  if (expected != batch.duration_days()) {
    throw AssemblyError("manifest duration_days does not match its day records");
  }
  for (std::size_t i = 0; i < batch.days.size(); ++i) {
    if (batch.days[i].day != static_cast<int>(i)) {
      throw AssemblyError("manifest day indexes must be contiguous from 0");
    }
    if (batch.days[i].cc < 0.0 || batch.days[i].cc > 1.0) {
      throw AssemblyError("manifest cc outside [0, 1]");
    }
  }
  return batch;
}

// --- aggregation ---------------------------------------------------------------

std::vector<std::pair<std::int64_t, EnvVector>> daily_average(
    std::span<const TelemetrySample> samples) {
  struct Acc {
    std::array<long double, kEnvDim> sum{};
    long n = 0;
  };
  std::map<std::int64_t, Acc> by_day;
  for (const auto& s : samples) {
    auto& acc = by_day[utc_day(s.timestamp)];
    for (int i = 0; i < kEnvDim; ++i) acc.sum[static_cast<std::size_t>(i)] += s.env[i];
    ++acc.n;
  }
  std::vector<std::pair<std::int64_t, EnvVector>> out;
  out.reserve(by_day.size());
  for (const auto& [day, acc] : by_day) {
    EnvVector mean;
    for (int i = 0; i < kEnvDim; ++i) {
      mean[i] = static_cast<double>(acc.sum[static_cast<std::size_t>(i)] / acc.n);
    }
    out.emplace_back(day, mean);
  }
  return out;
}

Batch assemble_batch(std::span<const std::pair<std::int64_t, EnvVector>> env_days,
                     std::span<const CanopySample> cc_samples,
                     std::string batch_id) {
  if (env_days.empty() || cc_samples.empty()) {
    throw AssemblyError("assemble_batch: empty input");
  }
  struct CcAcc {
    long double sum = 0;
    long n = 0;
  };
  std::map<std::int64_t, CcAcc> cc_by_day;
  for (const auto& s : cc_samples) {
    auto& acc = cc_by_day[utc_day(s.timestamp)];
    acc.sum += s.cc;
    ++acc.n;
  }
  std::map<std::int64_t, EnvVector> env_by_day;
  for (const auto& [day, env] : env_days) env_by_day[day] = env;

  std::vector<std::int64_t> common;
  for (const auto& [day, env] : env_by_day) {
    if (cc_by_day.count(day)) common.push_back(day);
  }
  if (common.empty()) {
    throw AssemblyError("assemble_batch: inputs share no day");
  }
  // Longest contiguous run of common days (first one on ties).
  std::size_t best_begin = 0, best_len = 1, begin = 0;
  for (std::size_t i = 1; i < common.size(); ++i) {
    if (common[i] != common[i - 1] + 1) begin = i;
    if (i - begin + 1 > best_len) {
      best_len = i - begin + 1;
      best_begin = begin;
    }
  }
  Batch batch;
  batch.batch_id = std::move(batch_id);
  for (std::size_t i = 0; i < best_len; ++i) {
    const std::int64_t day = common[best_begin + i];
    const auto& acc = cc_by_day[day];
    batch.days.push_back(DayRecord{static_cast<int>(i), env_by_day[day],
                                   static_cast<double>(acc.sum / acc.n)});
  }
  return batch;
}

// --- synthetic batches -----------------------------------------------------------

double SyntheticGroundTruth::growth_rate_for(const EnvVector& env) const {
  double k = base_rate;
  for (int i = 0; i < kEnvDim; ++i) {
    const auto& r = response[static_cast<std::size_t>(i)];
    const double d = env[i] - r.optimum;
    k += r.linear * d + r.curvature * d * d;
  }
  return k;
}

void SyntheticGroundTruth::validate() const {
  if (!(base_rate > 0.0 && base_rate <= kGrowthRateCap)) {
    throw ConfigError("synthetic truth: base_rate must lie in (0, 5]");
  }
  if (noise_sigma < 0.0) throw ConfigError("synthetic truth: noise_sigma < 0");
  if (!(cc_max > 0.0 && cc_max <= 1.0)) {
    throw ConfigError("synthetic truth: cc_max must lie in (0, 1]");
  }
  if (!(t0 >= 0.0 && t0 <= 100.0)) {
    throw ConfigError("synthetic truth: t0 must lie in [0, 100]");
  }
  if (!(start_cc > 0.0 && start_cc < cc_max)) {
    throw ConfigError("synthetic truth: start_cc must lie in (0, cc_max)");
  }
  for (int i = 0; i < kEnvDim; ++i) {
    const auto& r = response[static_cast<std::size_t>(i)];
    const auto& d = env_dist[static_cast<std::size_t>(i)];
    const auto field = std::string(env_field_names()[static_cast<std::size_t>(i)]);
    if (r.curvature > 0.0) {
      throw ConfigError("synthetic truth: curvature must be <= 0 for " + field);
    }
    if (d.sd < 0.0) throw ConfigError("synthetic truth: sd < 0 for " + field);
    if (d.lo > d.hi) throw ConfigError("synthetic truth: lo > hi for " + field);
  }
}

SyntheticGroundTruth SyntheticGroundTruth::chamber_default() {
  SyntheticGroundTruth t;
  t.base_rate = 0.35;
  t.noise_sigma = 0.005;
  t.env_dist[kCo2] = {800.0, 150.0, 350.0, 1500.0};
  t.env_dist[kAirTemp] = {22.5, 1.5, 15.0, 30.0};
  t.env_dist[kRelHumidity] = {65.0, 8.0, 30.0, 95.0};
  t.env_dist[kEc] = {1.8, 0.25, 0.5, 3.5};
  t.env_dist[kOrp] = {250.0, 40.0, 50.0, 500.0};
  t.env_dist[kPh] = {6.6, 0.5, 5.0, 7.5};
  t.env_dist[kWaterTemp] = {21.0, 1.2, 14.0, 28.0};
  for (int i = 0; i < kEnvDim; ++i) {
    t.response[static_cast<std::size_t>(i)].optimum =
        t.env_dist[static_cast<std::size_t>(i)].mean;
  }
  t.response[kPh] = {6.25, -0.08, 0.0};
  t.response[kAirTemp] = {22.5, -0.002, 0.0};
  return t;
}

namespace {

EnvVector draw_env(const SyntheticGroundTruth& truth, Rng& rng) {
  EnvVector env;
  for (int i = 0; i < kEnvDim; ++i) {
    const auto& d = truth.env_dist[static_cast<std::size_t>(i)];
    env[i] = std::clamp(rng.normal(d.mean, d.sd), d.lo, d.hi);
  }
  return env;
}

}  // namespace

std::vector<SyntheticBatch> generate_synthetic_batches_with_truth(
    const SyntheticGroundTruth& truth, int n_batches, int duration_days,
    std::uint64_t seed) {
  truth.validate();
  if (n_batches < 1) throw ConfigError("n_batches must be >= 1");
  if (duration_days < 10) throw ConfigError("duration_days must be >= 10");

  std::vector<SyntheticBatch> out;
  out.reserve(static_cast<std::size_t>(n_batches));
  for (int b = 0; b < n_batches; ++b) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(b));
    SyntheticBatch sb;
    char id[32];
    std::snprintf(id, sizeof id, "synthetic-%03d", b);
    sb.batch.batch_id = id;

    const double k0 =
        std::clamp(truth.base_rate, kGrowthRateFloor, kGrowthRateCap);
    GrowthParams curve{truth.cc_max, k0, truth.t0};
    const double t_start = inverse_logistic(truth.start_cc, curve);

    EnvVector env = draw_env(truth, rng);
    sb.batch.days.push_back(DayRecord{0, env, truth.start_cc});
    sb.k_series.push_back(k0);
    for (int d = 1; d < duration_days; ++d) {
      const double noise = rng.normal(0.0, truth.noise_sigma);
      const double k = std::clamp(truth.growth_rate_for(env) + noise,
                                  kGrowthRateFloor, kGrowthRateCap);
      env = draw_env(truth, rng);
      curve.k = k;
      const double cc =
          std::clamp(logistic_cc(t_start + d, curve), 0.0, truth.cc_max);
      sb.batch.days.push_back(DayRecord{d, env, cc});
      sb.k_series.push_back(k);
    }
    out.push_back(std::move(sb));
  }
  return out;
}

std::vector<Batch> generate_synthetic_batches(const SyntheticGroundTruth& truth,
                                              int n_batches, int duration_days,
                                              std::uint64_t seed) {
  auto full = generate_synthetic_batches_with_truth(truth, n_batches,
                                                    duration_days, seed);
  std::vector<Batch> batches;
  batches.reserve(full.size());
  for (auto& sb : full) batches.push_back(std::move(sb.batch));
  return batches;
}

std::vector<TelemetrySample> batch_to_telemetry(const Batch& batch,
                                                std::int64_t base_day) {
  std::vector<TelemetrySample> samples;
  samples.reserve(batch.days.size());
  for (const auto& rec : batch.days) {
    samples.push_back(
        TelemetrySample{(base_day + rec.day) * 86400 + 43200, rec.env});
  }
  return samples;
}

std::vector<CanopySample> batch_to_canopy(const Batch& batch,
                                          std::int64_t base_day) {
  std::vector<CanopySample> samples;
  samples.reserve(batch.days.size());
  for (const auto& rec : batch.days) {
    samples.push_back(CanopySample{(base_day + rec.day) * 86400 + 43200, rec.cc});
  }
  return samples;
}

}  // namespace growthsim
