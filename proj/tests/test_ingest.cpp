#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "growthsim/errors.hpp"
#include "growthsim/ingest.hpp"
#include "growthsim/rng.hpp"

using namespace growthsim;

namespace {

const char* kTelemetryHeader =
    "timestamp,co2_ppm,air_temp_c,rel_humidity_pct,ec_ms_cm,orp_mv,ph,water_temp_c";

std::string telemetry_row(const std::string& ts, double ph) {
  std::ostringstream os;
  os << ts << ",800,22.5,65,1.8,250," << ph << ",21\n";
  return os.str();
}

}  // namespace

TEST_SUITE("ingest") {

TEST_CASE("telemetry loads a valid row and rejects malformed ones") {
  std::istringstream ok(std::string(kTelemetryHeader) + "\n" +
                        telemetry_row("2024-03-01T00:00:00Z", 6.2));
  const auto samples = load_telemetry(ok);
  REQUIRE(samples.size() == 1);
  CHECK(samples[0].env[kPh] == doctest::Approx(6.2));
  CHECK(samples[0].env[kCo2] == doctest::Approx(800.0));

  std::istringstream bad_header("time,ph\n");
  CHECK_THROWS_AS(load_telemetry(bad_header), SchemaError);

  std::istringstream bad_ph(std::string(kTelemetryHeader) +
                            "\n2024-03-01T00:00:00Z,800,22.5,65,1.8,250,abc,21\n");
  try {
    load_telemetry(bad_ph);
    FAIL("expected RowError");
  } catch (const RowError& e) {
    CHECK(e.row() == 2);
    CHECK(e.column() == "ph");
  }

  std::istringstream bad_humidity(
      std::string(kTelemetryHeader) +
      "\n2024-03-01T00:00:00Z,800,22.5,150,1.8,250,6.2,21\n");
  CHECK_THROWS_AS(load_telemetry(bad_humidity), RowError);
}

TEST_CASE("one day at 5-minute cadence yields 288 samples") {
  std::ostringstream os;
  os << kTelemetryHeader << '\n';
  const std::int64_t day0 = parse_iso8601("2024-03-01T00:00:00Z");
  for (int i = 0; i < 24 * 60 / 5; ++i) {
    os << telemetry_row(format_iso8601(day0 + i * 300), 6.2);
  }
  std::istringstream in(os.str());
  CHECK(load_telemetry(in).size() == 288);
}

TEST_CASE("timestamps round-trip through the formatter") {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const std::int64_t ts = static_cast<std::int64_t>(rng.below(4102444800ull));
    CHECK(parse_iso8601(format_iso8601(ts)) == ts);
  }
  CHECK(parse_iso8601("2024-03-01T12:34:56Z") ==
        parse_iso8601("2024-03-01 12:34:56"));
  CHECK_THROWS_AS(parse_iso8601("yesterday"), std::invalid_argument);
}

TEST_CASE("daily averages are exact means per UTC day") {
  const std::int64_t day0 = parse_iso8601("2024-03-01T00:00:00Z");
  std::vector<TelemetrySample> samples;
  for (int i = 0; i < 288; ++i) {
    TelemetrySample s;
    s.timestamp = day0 + i * 300;
    s.env[kPh] = 6.2;
    s.env[kCo2] = 800.0;
    s.env[kRelHumidity] = 60.0;
    samples.push_back(s);
  }
  auto days = daily_average(samples);
  REQUIRE(days.size() == 1);
  CHECK(days[0].second[kPh] == 6.2);  // mean of a constant is exact

  // two days with distinct values stay separate
  samples.clear();
  for (int d = 0; d < 2; ++d) {
    for (int i = 0; i < 10; ++i) {
      TelemetrySample s;
      s.timestamp = day0 + d * 86400 + i * 300;
      s.env[kPh] = d == 0 ? 6.0 : 6.4;
      s.env[kCo2] = 800.0;
      samples.push_back(s);
    }
  }
  days = daily_average(samples);
  REQUIRE(days.size() == 2);
  CHECK(days[0].second[kPh] == doctest::Approx(6.0));
  CHECK(days[1].second[kPh] == doctest::Approx(6.4));

  CHECK(daily_average({}).empty());
}

TEST_CASE("daily average matches an extended-precision reference and ignores order") {
  Rng rng(17);
  const std::int64_t day0 = parse_iso8601("2024-03-02T00:00:00Z");
  std::vector<TelemetrySample> samples;
  std::array<long double, kEnvDim> ref_sum{};
  for (int i = 0; i < 288; ++i) {
    TelemetrySample s;
    s.timestamp = day0 + i * 300;
    s.env[kCo2] = rng.uniform(400.0, 1200.0);
    s.env[kAirTemp] = rng.uniform(18.0, 26.0);
    s.env[kRelHumidity] = rng.uniform(40.0, 90.0);
    s.env[kEc] = rng.uniform(1.0, 2.5);
    s.env[kOrp] = rng.uniform(100.0, 400.0);
    s.env[kPh] = rng.uniform(5.5, 7.0);
    s.env[kWaterTemp] = rng.uniform(18.0, 24.0);
    for (int v = 0; v < kEnvDim; ++v) {
      ref_sum[static_cast<std::size_t>(v)] += s.env[v];
    }
    samples.push_back(s);
  }
  const auto days = daily_average(samples);
  REQUIRE(days.size() == 1);
  for (int v = 0; v < kEnvDim; ++v) {
    const double ref =
        static_cast<double>(ref_sum[static_cast<std::size_t>(v)] / 288.0L);
    CHECK(std::fabs(days[0].second[v] - ref) <= 1e-12 * std::max(1.0, ref));
  }
  // permutation within the day does not change the result beyond 1e-12
  auto shuffled = samples;
  rng.shuffle(std::span<TelemetrySample>(shuffled));
  const auto days2 = daily_average(shuffled);
  for (int v = 0; v < kEnvDim; ++v) {
    CHECK(std::fabs(days2[0].second[v] - days[0].second[v]) <=
          1e-12 * std::max(1.0, days[0].second[v]));
  }

  // hand mean: three equally sampled values
  std::vector<TelemetrySample> three;
  for (int i = 0; i < 3; ++i) {
    TelemetrySample s;
    s.timestamp = day0 + i * 300;
    s.env[kPh] = 6.0 + 0.2 * i;
    s.env[kCo2] = 800.0;
    three.push_back(s);
  }
  CHECK(daily_average(three)[0].second[kPh] == doctest::Approx(6.2).epsilon(1e-15));
}

TEST_CASE("canopy series loads and validates the cover range") {
  std::istringstream ok("timestamp,cc_fraction\n2024-03-01T08:00:00Z,0.42\n");
  const auto series = load_canopy_series(ok);
  REQUIRE(series.size() == 1);
  CHECK(series[0].cc == doctest::Approx(0.42));

  std::istringstream bad("timestamp,cc_fraction\n2024-03-01T08:00:00Z,1.2\n");
  CHECK_THROWS_AS(load_canopy_series(bad), RowError);

  std::ostringstream os;
  os << "timestamp,cc_fraction\n";
  const std::int64_t day0 = parse_iso8601("2024-03-01T00:00:00Z");
  for (int i = 0; i < 24 * 60 / 15; ++i) {
    os << format_iso8601(day0 + i * 900) << ",0.4\n";
  }
  std::istringstream many(os.str());
  CHECK(load_canopy_series(many).size() == 96);
}

TEST_CASE("assemble_batch intersects days and re-bases indexes") {
  const std::int64_t day0 = utc_day(parse_iso8601("2024-03-01T00:00:00Z"));
  EnvVector env;
  env[kPh] = 6.2;
  env[kCo2] = 800.0;

  std::vector<std::pair<std::int64_t, EnvVector>> env_days;
  std::vector<CanopySample> cc;
  for (int d = 0; d < 3; ++d) {
    env_days.emplace_back(day0 + d, env);
    cc.push_back(CanopySample{(day0 + d) * 86400 + 3600, 0.1 * (d + 1)});
  }
  Batch b = assemble_batch(env_days, cc, "b1");
  CHECK(b.duration_days() == 3);
  CHECK(b.days[0].day == 0);
  CHECK(b.days[2].day == 2);

  // env days {1,2,3}, cc days {2,3,4} -> common {2,3} re-based to 0..1
  env_days.clear();
  cc.clear();
  for (int d = 1; d <= 3; ++d) env_days.emplace_back(day0 + d, env);
  for (int d = 2; d <= 4; ++d) {
    cc.push_back(CanopySample{(day0 + d) * 86400 + 3600, 0.2});
  }
  b = assemble_batch(env_days, cc, "b2");
  CHECK(b.duration_days() == 2);
  CHECK(b.days[0].day == 0);
  CHECK(b.days[1].day == 1);

  // two samples on one day average to their mean
  env_days.assign(1, {day0, env});
  cc.clear();
  cc.push_back(CanopySample{day0 * 86400 + 3600, 0.1});
  cc.push_back(CanopySample{day0 * 86400 + 7200, 0.2});
  b = assemble_batch(env_days, cc, "b3");
  CHECK(b.days[0].cc == doctest::Approx(0.15).epsilon(1e-15));

  // disjoint day ranges cannot assemble
  cc.assign(1, CanopySample{(day0 + 30) * 86400, 0.5});
  CHECK_THROWS_AS(assemble_batch(env_days, cc, "b4"), AssemblyError);
}

TEST_CASE("synthetic batches honor the planted response") {
  SyntheticGroundTruth truth = SyntheticGroundTruth::chamber_default();
  truth.noise_sigma = 0.0;
  // pin every variable to its optimum
  for (int v = 0; v < kEnvDim; ++v) {
    auto& d = truth.env_dist[static_cast<std::size_t>(v)];
    const double opt = truth.response[static_cast<std::size_t>(v)].optimum;
    d = {opt, 0.0, opt, opt};
  }
  auto full = generate_synthetic_batches_with_truth(truth, 1, 20, 42);
  REQUIRE(full.size() == 1);
  for (const double k : full[0].k_series) {
    CHECK(k == doctest::Approx(truth.base_rate).epsilon(1e-12));
  }
  // constant env and zero noise put the cover exactly on one logistic curve
  const GrowthParams curve{truth.cc_max, truth.base_rate, truth.t0};
  const double t_start = inverse_logistic(truth.start_cc, curve);
  for (const auto& rec : full[0].batch.days) {
    CHECK(std::fabs(rec.cc - logistic_cc(t_start + rec.day, curve)) < 1e-9);
  }

  // off-optimum pH shifts the rate by curvature * offset^2
  truth.env_dist[kPh] = {7.25, 0.0, 7.25, 7.25};
  truth.response[kPh] = {6.25, -0.05, 0.0};
  truth.response[kAirTemp].curvature = 0.0;
  full = generate_synthetic_batches_with_truth(truth, 1, 15, 42);
  for (std::size_t d = 1; d < full[0].k_series.size(); ++d) {
    CHECK(full[0].k_series[d] ==
          doctest::Approx(truth.base_rate - 0.05).epsilon(1e-12));
  }
}

TEST_CASE("synthetic generation is deterministic and validates its config") {
  const SyntheticGroundTruth truth = SyntheticGroundTruth::chamber_default();
  const auto a = generate_synthetic_batches(truth, 3, 15, 99);
  const auto b = generate_synthetic_batches(truth, 3, 15, 99);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].days.size() == b[i].days.size());
    for (std::size_t d = 0; d < a[i].days.size(); ++d) {
      CHECK(a[i].days[d].cc == b[i].days[d].cc);
      CHECK(a[i].days[d].env == b[i].days[d].env);
    }
  }
  SyntheticGroundTruth bad = truth;
  bad.response[kPh].curvature = 0.5;
  CHECK_THROWS_AS(generate_synthetic_batches(bad, 1, 15, 1), ConfigError);
  CHECK_THROWS_AS(generate_synthetic_batches(truth, 0, 15, 1), ConfigError);
  CHECK_THROWS_AS(generate_synthetic_batches(truth, 1, 5, 1), ConfigError);
}

TEST_CASE("batches survive the CSV round trip") {
  const auto batches =
      generate_synthetic_batches(SyntheticGroundTruth::chamber_default(), 2, 20, 7);
  for (const auto& batch : batches) {
    std::stringstream tele, canopy;
    write_telemetry_csv(tele, batch_to_telemetry(batch));
    write_canopy_csv(canopy, batch_to_canopy(batch));
    const auto samples = load_telemetry(tele);
    const auto cover = load_canopy_series(canopy);
    const Batch back = assemble_batch(daily_average(samples), cover, batch.batch_id);
    REQUIRE(back.duration_days() == batch.duration_days());
    for (int d = 0; d < batch.duration_days(); ++d) {
      const auto di = static_cast<std::size_t>(d);
      CHECK(std::fabs(back.days[di].cc - batch.days[di].cc) <= 1e-9);
      for (int v = 0; v < kEnvDim; ++v) {
        CHECK(std::fabs(back.days[di].env[v] - batch.days[di].env[v]) <= 1e-9);
      }
    }
  }
}

TEST_CASE("batches survive the manifest round trip") {
  const auto batches =
      generate_synthetic_batches(SyntheticGroundTruth::chamber_default(), 1, 15, 3);
  const auto j = batch_to_manifest(batches[0]);
  CHECK(j.at("duration_days") == 15);
  const Batch back = batch_from_manifest(j);
  CHECK(back.batch_id == batches[0].batch_id);
  REQUIRE(back.duration_days() == 15);
  for (int d = 0; d < 15; ++d) {
    const auto di = static_cast<std::size_t>(d);
    CHECK(back.days[di].cc == batches[0].days[di].cc);
    CHECK(back.days[di].env == batches[0].days[di].env);
  }
}

}  // TEST_SUITE
