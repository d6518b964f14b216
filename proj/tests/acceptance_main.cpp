// Acceptance suite: one pass/fail line per criterion. Exits nonzero if any
// criterion fails. Criteria 4 and 6-8 run the full synthetic closed loop; 10
// drives the CLI binary end to end (path passed via --cli).

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "growthsim/agents.hpp"
#include "growthsim/curvefit.hpp"
#include "growthsim/envmodel.hpp"
#include "growthsim/errors.hpp"
#include "growthsim/ingest.hpp"
#include "growthsim/rng.hpp"
#include "growthsim/sim.hpp"

namespace fs = std::filesystem;
using namespace growthsim;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool cond, const std::string& what) {
  if (!cond) throw Failure(what);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

std::string g_cli_path;
fs::path g_work_dir;

// ---- shared synthetic setups -------------------------------------------------

SyntheticGroundTruth linear_truth(double noise_sigma) {
  auto truth = SyntheticGroundTruth::chamber_default();
  truth.noise_sigma = noise_sigma;
  for (auto& r : truth.response) r.curvature = 0.0;
  truth.response[kPh].linear = 0.15;  // signal sd 0.075 over the pH spread
  truth.response[kAirTemp].linear = 0.0;
  return truth;
}

std::vector<FeatureRow> oracle_rows(const SyntheticGroundTruth& truth,
                                    const std::vector<SyntheticBatch>& full,
                                    const FeatureConfig& config) {
  std::vector<FeatureRow> rows;
  for (const auto& sb : full) {
    const auto r = build_features(sb.batch, oracle_fit_series(sb, truth), config);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  return rows;
}

TrainedGrowthModel echo_model() {
  // delta-k model predicting zero change
  TrainedGrowthModel model;
  model.family = Family::linear;
  model.target_kind = TargetKind::delta_k;
  model.scheme = make_bins(BinKind::none);
  FeatureConfig config;
  config.target = TargetKind::delta_k;
  model.feature_spec.names = feature_names(config);
  model.feature_spec.means.assign(model.feature_spec.names.size(), 0.0);
  model.feature_spec.sds.assign(model.feature_spec.names.size(), 1.0);
  Regressor r;
  r.family = Family::linear;
  r.coef.assign(model.feature_spec.names.size(), 0.0);
  model.per_bin.push_back(r);
  model.norm = {0.05, 0.4};
  return model;
}

// ---- criteria -----------------------------------------------------------------

void criterion_1_curve_fit() {
  const GrowthParams truth{0.9, 0.25, 18.0};
  std::vector<CcPoint> pts;
  for (int t = 0; t < 35; ++t) {
    pts.push_back(CcPoint{static_cast<double>(t), logistic_cc(t, truth)});
  }
  auto start = std::chrono::steady_clock::now();
  const auto fit = fit_logistic(pts);
  const double noiseless_time = seconds_since(start);
  require(fit.converged, "noiseless fit did not converge");
  require(fit.rss < 1e-12, "noiseless rss " + std::to_string(fit.rss));
  require(std::fabs(fit.params.cc_max - truth.cc_max) / truth.cc_max < 1e-4,
          "cc_max off by > 1e-4 relative");
  require(std::fabs(fit.params.k - truth.k) / truth.k < 1e-4,
          "k off by > 1e-4 relative");
  require(std::fabs(fit.params.t0 - truth.t0) / truth.t0 < 1e-4,
          "t0 off by > 1e-4 relative");

  Rng rng(20240810);
  for (auto& p : pts) p.cc = std::clamp(p.cc + rng.normal(0.0, 0.01), 0.0, 1.0);
  start = std::chrono::steady_clock::now();
  const auto noisy = fit_logistic(pts);
  const double noisy_time = seconds_since(start);
  require(noisy.converged, "noisy fit did not converge");
  require(std::fabs(noisy.params.cc_max - truth.cc_max) / truth.cc_max < 0.05,
          "noisy cc_max off by > 5%");
  require(std::fabs(noisy.params.k - truth.k) / truth.k < 0.05,
          "noisy k off by > 5%");
  require(std::fabs(noisy.params.t0 - truth.t0) / truth.t0 < 0.05,
          "noisy t0 off by > 5%");
  require(noiseless_time < 1.0 && noisy_time < 1.0, "fit exceeded 1 s");
}

void criterion_2_jacobian() {
  Rng rng(77);
  for (int i = 0; i < 100; ++i) {
    const GrowthParams p{rng.uniform(0.1, 1.0), rng.uniform(0.02, 4.5),
                         rng.uniform(1.0, 60.0)};
    const double t = rng.uniform(0.0, 70.0);
    const auto g = logistic_gradient(t, p);
    const double base[3] = {p.cc_max, p.k, p.t0};
    for (int c = 0; c < 3; ++c) {
      GrowthParams hi = p, lo = p;
      double* fh[3] = {&hi.cc_max, &hi.k, &hi.t0};
      double* fl[3] = {&lo.cc_max, &lo.k, &lo.t0};
      const double h = 6e-6 * std::max(1.0, std::fabs(base[c]));
      *fh[c] += h;
      *fl[c] -= h;
      const double fd = (logistic_cc(t, hi) - logistic_cc(t, lo)) / (2.0 * h);
      const double ga = g[static_cast<std::size_t>(c)];
      // 1e-6 relative wherever the derivative is alive; on saturated tails
      // both sides vanish and only rounding noise remains
      require(std::fabs(fd - ga) <=
                  std::max(1e-6 * std::max(std::fabs(fd), std::fabs(ga)), 1e-10),
              "jacobian component " + std::to_string(c) + " off at point " +
                  std::to_string(i));
    }
  }
}

void criterion_3_metrics() {
  // named case: hand values 0.5 and 1/3
  const std::vector<double> yt = {0.0, 1.0, 2.0};
  const std::vector<double> yp = {0.0, 1.0, 1.0};
  const auto named = metrics(yt, yp);
  require(std::fabs(named.r2 - 0.5) <= 1e-12, "named r2 case");
  require(std::fabs(named.mse - 1.0 / 3.0) <= 1e-12, "named mse case");

  // 5-element vectors against an extended-precision reference
  Rng rng(5150);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> a(5), b(5);
    for (int i = 0; i < 5; ++i) {
      a[static_cast<std::size_t>(i)] = rng.uniform(-2.0, 2.0);
      b[static_cast<std::size_t>(i)] = rng.uniform(-2.0, 2.0);
    }
    long double mean = 0.0;
    for (const double v : a) mean += v;
    mean /= 5.0L;
    long double ss_res = 0.0, ss_tot = 0.0;
    for (int i = 0; i < 5; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      ss_res += (static_cast<long double>(a[ii]) - b[ii]) *
                (static_cast<long double>(a[ii]) - b[ii]);
      ss_tot += (a[ii] - mean) * (a[ii] - mean);
    }
    const auto m = metrics(a, b);
    require(std::fabs(m.mse - static_cast<double>(ss_res / 5.0L)) <= 1e-12,
            "mse differs from extended-precision reference");
    require(std::fabs(m.r2 - static_cast<double>(1.0L - ss_res / ss_tot)) <= 1e-12,
            "r2 differs from extended-precision reference");
  }
}

void criterion_4_benchmark() {
  const auto start = std::chrono::steady_clock::now();
  const auto truth = linear_truth(0.01);
  const auto full = generate_synthetic_batches_with_truth(truth, 30, 30, 424242);
  FeatureConfig config;
  const auto rows = oracle_rows(truth, full, config);
  const auto split = split_train_test(rows, 0.8, 7);
  const auto table = benchmark_grid(split, config);
  require(table.size() == 15, "grid must have exactly 15 rows");

  const double noise_floor = 0.01 * 0.01;
  for (const auto& cell : table) {
    if (cell.family != Family::linear) continue;
    require(!cell.failed, "linear cell failed: " + cell.error);
    require(cell.m.r2 >= 0.95, "linear " + to_string(cell.binning) + " r2 " +
                                   std::to_string(cell.m.r2) + " < 0.95");
    require(cell.m.mse <= 10.0 * noise_floor,
            "linear " + to_string(cell.binning) + " mse " +
                std::to_string(cell.m.mse) + " above 10x the noise floor");
  }

  const auto picked = select_best(table, SelectCriterion::mse);
  const BenchmarkCell* best = nullptr;
  for (const auto& cell : table) {
    if (cell.failed) continue;
    if (best == nullptr || cell.m.mse < best->m.mse) best = &cell;
  }
  require(best != nullptr && picked.first == best->family &&
              picked.second == best->binning,
          "select_best is not the argmin of the table");
  require(seconds_since(start) < 120.0, "benchmark exceeded 2 minutes");
}

void criterion_5_normalization() {
  require(normalize_delta_k(0.05, NormConstants{0.02, 0.4}) == 0.0025,
          "0.05 * 0.02 / 0.4 must equal 0.0025 exactly");
  Rng rng(31337);
  for (int i = 0; i < 1000; ++i) {
    const NormConstants norm{rng.uniform(0.0, 0.5), rng.uniform(0.05, 2.0)};
    const double x = rng.uniform(-1.0, 1.0);
    require(normalize_delta_k(0.0, norm) == 0.0, "zero must map to zero");
    require(normalize_delta_k(2.0 * x, norm) == 2.0 * normalize_delta_k(x, norm),
            "doubling the input must double the output");
    const double c = rng.uniform(-3.0, 3.0);
    const double lhs = normalize_delta_k(c * x, norm);
    const double rhs = c * normalize_delta_k(x, norm);
    require(std::fabs(lhs - rhs) <= 1e-12 * std::max(1.0, std::fabs(rhs)),
            "linearity beyond 1e-12");
  }
}

SimConfig invariant_sim_config() {
  auto truth = SyntheticGroundTruth::chamber_default();
  const auto full = generate_synthetic_batches_with_truth(truth, 10, 30, 999);
  FeatureConfig config;
  const auto rows = oracle_rows(truth, full, config);
  std::vector<Batch> batches;
  for (const auto& sb : full) batches.push_back(sb.batch);
  SimConfig cfg;
  cfg.model = train_growth_model(rows, Family::linear, {}, BinKind::sequential, config);
  cfg.stats = compute_env_stats(batches);
  cfg.seed = 2468;
  return cfg;
}

void criterion_6_sim_invariants() {
  const auto start = std::chrono::steady_clock::now();
  const SimConfig cfg = invariant_sim_config();
  const Strategy random = make_random_strategy(cfg.stats);
  const double k_target = cfg.resolved_k_target();
  for (int e = 0; e < 1000; ++e) {
    const auto trace = run_episode(cfg, random, Rng::mix(cfg.seed, e));
    require(!trace.steps.empty() &&
                static_cast<int>(trace.steps.size()) <= cfg.horizon_days,
            "episode length out of range");
    double prev_cc = cfg.start_cc;
    for (const auto& s : trace.steps) {
      require(s.cc >= prev_cc && s.cc <= 1.0, "cover must not shrink or exceed 1");
      require(s.k > 0.0 && s.k <= kGrowthRateCap, "growth rate out of (0, 5]");
      require(s.reward <= 0.0, "reward must be non-positive");
      require((s.reward == 0.0) == (s.k == k_target),
              "reward is zero exactly when k hits the target");
      prev_cc = s.cc;
    }
    require(trace.steps.back().done, "episode must end marked done");
  }
  const auto t1 = run_episode(cfg, random, 31415);
  const auto t2 = run_episode(cfg, random, 31415);
  std::ostringstream s1, s2;
  write_trace_jsonl(s1, t1);
  write_trace_jsonl(s2, t2);
  require(s1.str() == s2.str(), "same-seed traces differ");
  require(seconds_since(start) < 30.0, "invariant suite exceeded 30 s");
}

void criterion_7_constant_model() {
  SimConfig cfg;
  cfg.model = echo_model();
  auto truth = SyntheticGroundTruth::chamber_default();
  cfg.stats = compute_env_stats(generate_synthetic_batches(truth, 3, 20, 1));
  cfg.reward_cfg.k_target = cfg.init.k;
  cfg.seed = 5;
  const auto trace = run_episode(cfg, make_random_strategy(cfg.stats), 8);
  for (const auto& s : trace.steps) {
    require(std::fabs(s.cc - logistic_cc(s.t, cfg.init)) < 1e-9,
            "cover left the analytic curve");
  }
  const double t_start = inverse_logistic(cfg.start_cc, cfg.init);
  const double t_cross = inverse_logistic(cfg.terminal_cc, cfg.init);
  const int expected = static_cast<int>(std::ceil(t_cross - t_start));
  require(static_cast<int>(trace.steps.size()) == expected,
          "crossed 0.95 after " + std::to_string(trace.steps.size()) +
              " steps, analytic count is " + std::to_string(expected));
  require(trace.steps.back().cc >= cfg.terminal_cc, "episode must end at 95% cover");
}

void criterion_8_strategy_ordering() {
  const auto start = std::chrono::steady_clock::now();
  // quadratic pH response, optimum 6.25, training data centered off-optimum
  auto truth = SyntheticGroundTruth::chamber_default();
  truth.noise_sigma = 0.005;
  for (auto& r : truth.response) r.curvature = 0.0;
  truth.response[kPh] = {6.25, -0.15, 0.0};
  truth.env_dist[kPh] = {6.6, 0.5, 5.0, 7.5};

  const auto full = generate_synthetic_batches_with_truth(truth, 20, 30, 1234);
  FeatureConfig config;
  const auto rows = oracle_rows(truth, full, config);
  std::vector<Batch> batches;
  for (const auto& sb : full) batches.push_back(sb.batch);

  SimConfig cfg;
  cfg.model = train_growth_model(rows, Family::polynomial, {}, BinKind::none, config);
  cfg.stats = compute_env_stats(batches);
  cfg.seed = 777;

  PpoHyper hyper;  // defaults: 100 iterations x 2048 steps
  const auto report = train_policy(cfg, hyper, 2024);
  const double train_time = seconds_since(start);
  require(train_time < 300.0, "policy training exceeded 5 minutes");

  // near-optimal recordings for the replay baseline
  auto replay_truth = truth;
  replay_truth.env_dist[kPh] = {6.25, 0.05, 6.1, 6.4};
  const auto replay_batches = generate_synthetic_batches(replay_truth, 8, 35, 555);

  const int episodes = 1000;
  const auto random_rep =
      evaluate_strategy(cfg, make_random_strategy(cfg.stats), episodes, 11, "random");
  const StrategyFactory replay_factory = [&replay_batches](int e) {
    return make_replay_strategy(
        replay_batches[static_cast<std::size_t>(e) % replay_batches.size()]);
  };
  const auto replay_rep =
      evaluate_strategy(cfg, replay_factory, episodes, 22, "replay");
  const auto policy_rep = evaluate_strategy(
      cfg, make_policy_strategy(report.policy, report.obs_spec, cfg.stats),
      episodes, 33, "policy");

  require(random_rep.mean_reward < 0.0, "random baseline should incur penalties");
  const double margin = 0.2 * std::fabs(random_rep.mean_reward);
  require(policy_rep.mean_reward >= random_rep.mean_reward + margin,
          "policy " + std::to_string(policy_rep.mean_reward) +
              " does not beat random " + std::to_string(random_rep.mean_reward) +
              " by 20%");
  require(replay_rep.mean_reward >= random_rep.mean_reward,
          "replay " + std::to_string(replay_rep.mean_reward) + " below random " +
              std::to_string(random_rep.mean_reward));
  require(policy_rep.mean_action[kPh] >= 6.0 && policy_rep.mean_action[kPh] <= 6.5,
          "policy mean pH setpoint " + std::to_string(policy_rep.mean_action[kPh]) +
              " outside [6.0, 6.5]");
}

// 3-parameter policy: mean = p0 * obs + p1, log-stddev = p2
class ToyPolicy final : public GaussianPolicy {
 public:
  int obs_dim() const override { return 1; }
  int act_dim() const override { return 1; }
  std::size_t n_params() const override { return 3; }
  std::span<double> params() override { return p_; }
  std::span<const double> params() const override { return p_; }
  void forward(std::span<const double> obs, std::span<double> mean,
               std::span<double> logstd, double& value) const override {
    mean[0] = p_[0] * obs[0] + p_[1];
    logstd[0] = p_[2];
    value = 0.0;
  }
  void backward(std::span<const double> obs, std::span<const double> dmean,
                std::span<const double> dlogstd, double,
                std::span<double> grad) const override {
    grad[0] += dmean[0] * obs[0];
    grad[1] += dmean[0];
    grad[2] += dlogstd[0];
  }

 private:
  std::vector<double> p_ = {0.3, -0.2, -0.4};
};

void criterion_9_policy_gradient() {
  ToyPolicy policy;
  Rng rng(8086);
  std::vector<PpoSample> batch;
  for (int i = 0; i < 128; ++i) {
    PpoSample s;
    s.obs = {rng.uniform(-1.0, 1.0)};
    std::vector<double> mean(1), logstd(1);
    double value;
    policy.forward(s.obs, mean, logstd, value);
    const double z = rng.normal(0.0, 1.0);
    s.action = {mean[0] + std::exp(logstd[0]) * z};
    s.logp_old = -0.5 * z * z - logstd[0] - 0.5 * std::log(2.0 * std::acos(-1.0));
    s.logp_old += rng.uniform(-0.05, 0.05);
    s.advantage = rng.normal(0.0, 1.0);
    s.value_target = 0.0;
    batch.push_back(std::move(s));
  }
  PpoHyper hyper;
  hyper.value_coef = 0.0;
  std::vector<double> grad(3), scratch(3);
  ppo_loss_and_grad(policy, batch, hyper, grad);
  for (std::size_t i = 0; i < 3; ++i) {
    const double h = 1e-6;
    const double saved = policy.params()[i];
    policy.params()[i] = saved + h;
    const double hi = ppo_loss_and_grad(policy, batch, hyper, scratch);
    policy.params()[i] = saved - h;
    const double lo = ppo_loss_and_grad(policy, batch, hyper, scratch);
    policy.params()[i] = saved;
    const double fd = (hi - lo) / (2.0 * h);
    require(std::fabs(fd - grad[i]) / std::max(1e-8, std::fabs(fd)) < 1e-4,
            "gradient component " + std::to_string(i) + " off: analytic " +
                std::to_string(grad[i]) + " vs fd " + std::to_string(fd));
  }
}

int run_cli(const std::string& args) {
  const std::string cmd = g_cli_path + " " + args;
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot_dir(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    files[fs::relative(entry.path(), root).string()] = os.str();
  }
  return files;
}

void criterion_10_roundtrip_and_cli() {
  // field-level CSV round trip
  const auto truth = linear_truth(0.01);
  const auto batches = generate_synthetic_batches(truth, 3, 20, 31);
  for (const auto& batch : batches) {
    std::stringstream tele, canopy;
    write_telemetry_csv(tele, batch_to_telemetry(batch));
    write_canopy_csv(canopy, batch_to_canopy(batch));
    const auto samples = load_telemetry(tele);
    const auto cover = load_canopy_series(canopy);
    const Batch back = assemble_batch(daily_average(samples), cover, batch.batch_id);
    require(back.duration_days() == batch.duration_days(), "round trip lost days");
    for (int d = 0; d < batch.duration_days(); ++d) {
      const auto di = static_cast<std::size_t>(d);
      require(std::fabs(back.days[di].cc - batch.days[di].cc) <= 1e-9,
              "cc drifted past 1e-9 in the round trip");
      for (int v = 0; v < kEnvDim; ++v) {
        require(std::fabs(back.days[di].env[v] - batch.days[di].env[v]) <= 1e-9,
                "env drifted past 1e-9 in the round trip");
      }
    }
  }

  require(!g_cli_path.empty(), "CLI path not provided (--cli)");
  fs::remove_all(g_work_dir);
  fs::create_directories(g_work_dir);

  nlohmann::ordered_json config = {
      {"seed", 20240810},
      {"data",
       {{"n_batches", 6},
        {"duration_days", 20},
        {"truth",
         {{"noise_sigma", 0.01},
          {"vars",
           {{"ph",
             {{"curvature", 0.0}, {"linear", 0.15}}},
            {"air_temp_c", {{"curvature", 0.0}}}}}}}}},
      {"features", {{"source", "truth"}}},
      {"sim", {{"episodes", 3}}},
      {"agent", {{"iterations", 2}, {"rollout_steps", 256}}},
      {"evaluate", {{"episodes", 25}}}};
  const fs::path config_path = g_work_dir / "config.json";
  std::ofstream(config_path) << config.dump(2) << "\n";

  const std::vector<std::string> commands = {"gen-data", "fit", "benchmark",
                                             "simulate", "train-agent", "evaluate"};
  for (const std::string run : {"run1", "run2"}) {
    const fs::path out = g_work_dir / run;
    for (const auto& cmd : commands) {
      const int code = run_cli(cmd + " --config " + config_path.string() +
                               " --out " + out.string() + " > " +
                               (g_work_dir / "cli_log.txt").string() + " 2>&1");
      require(code == 0, "CLI " + cmd + " exited with " + std::to_string(code));
    }
  }
  const auto run1 = snapshot_dir(g_work_dir / "run1");
  const auto run2 = snapshot_dir(g_work_dir / "run2");
  require(run1.size() == run2.size(), "reruns produced different file sets");
  require(!run1.empty(), "CLI produced no files");
  for (const auto& [name, bytes] : run1) {
    const auto it = run2.find(name);
    require(it != run2.end(), "rerun is missing " + name);
    require(it->second == bytes, "rerun differs in " + name);
  }
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--cli") g_cli_path = argv[i + 1];
    if (flag == "--work") g_work_dir = argv[i + 1];
  }
  if (g_work_dir.empty()) g_work_dir = fs::temp_directory_path() / "growthsim_accept";

  const std::vector<std::pair<std::string, std::function<void()>>> criteria = {
      {"curve-fit recovery (noiseless 1e-4, noisy 5%, < 1 s)", criterion_1_curve_fit},
      {"analytic jacobian vs central differences (1e-6)", criterion_2_jacobian},
      {"metrics match extended-precision references (1e-12)", criterion_3_metrics},
      {"benchmark grid: 15 rows, linear r2 >= 0.95, argmin selection",
       criterion_4_benchmark},
      {"growth-rate change normalization exact and linear", criterion_5_normalization},
      {"simulator invariants over 1000 random episodes", criterion_6_sim_invariants},
      {"constant model rides the analytic curve to 95% cover",
       criterion_7_constant_model},
      {"policy > random by 20%, replay >= random, pH in [6.0, 6.5]",
       criterion_8_strategy_ordering},
      {"surrogate gradient matches finite differences (1e-4)",
       criterion_9_policy_gradient},
      {"CSV round trip 1e-9; CLI reruns byte-identical",
       criterion_10_roundtrip_and_cli},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    try {
      criteria[i].second();
      std::printf("PASS  %2zu  %s  (%.1fs)\n", i + 1, criteria[i].first.c_str(),
                  seconds_since(start));
    } catch (const std::exception& e) {
      ++failures;
      std::printf("FAIL  %2zu  %s: %s\n", i + 1, criteria[i].first.c_str(), e.what());
    }
    std::fflush(stdout);
  }
  if (failures > 0) {
    std::printf("%d of %zu criteria failed\n", failures, criteria.size());
    return 1;
  }
  std::printf("all %zu criteria passed\n", criteria.size());
  return 0;
}
