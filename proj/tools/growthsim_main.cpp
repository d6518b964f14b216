// Command-line pipeline: synthetic data generation, rolling curve fits, the
// model benchmark, episode simulation, agent training and strategy evaluation.
// Every command is a pure function of (config, seed, input files).

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "growthsim/agents.hpp"
#include "growthsim/curvefit.hpp"
#include "growthsim/envmodel.hpp"
#include "growthsim/errors.hpp"
#include "growthsim/ingest.hpp"
#include "growthsim/sim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDataError = 1;
constexpr int kExitMissingArtifact = 2;
constexpr int kExitConfigError = 3;

class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  json raw;
  std::uint64_t seed = 0;
  fs::path out_dir;

  fs::path data_dir() const {
    const auto d = raw.value("data", json::object());
    return d.contains("dir") ? fs::path(d.at("dir").get<std::string>())
                             : out_dir / "data";
  }
};

RunConfig load_config(const std::string& path, const std::string& seed_override,
                      const std::string& out_override) {
  std::ifstream in(path);
  if (!in) throw growthsim::ConfigError("cannot open config file " + path);
  RunConfig cfg;
  try {
    in >> cfg.raw;
  } catch (const json::exception& e) {
    throw growthsim::ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  if (!seed_override.empty()) {
    cfg.seed = std::stoull(seed_override);
  } else if (cfg.raw.contains("seed")) {
    cfg.seed = cfg.raw.at("seed").get<std::uint64_t>();
  } else {
    throw growthsim::ConfigError("config must set a seed (or pass --seed)");
  }
  if (!out_override.empty()) {
    cfg.out_dir = out_override;
  } else {
    cfg.out_dir = cfg.raw.value("out_dir", std::string("out"));
  }
  return cfg;
}

void write_text_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  out << text;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("missing artifact: " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int env_var_index(const std::string& name) {
  for (int i = 0; i < growthsim::kEnvDim; ++i) {
    if (growthsim::env_field_names()[static_cast<std::size_t>(i)] == name) return i;
  }
  throw growthsim::ConfigError("unknown environment variable \"" + name + "\"");
}

growthsim::SyntheticGroundTruth truth_from_config(const json& data) {
  auto truth = growthsim::SyntheticGroundTruth::chamber_default();
  if (!data.contains("truth")) return truth;
  const json& jt = data.at("truth");
  truth.base_rate = jt.value("base_rate", truth.base_rate);
  truth.noise_sigma = jt.value("noise_sigma", truth.noise_sigma);
  truth.cc_max = jt.value("cc_max", truth.cc_max);
  truth.t0 = jt.value("t0", truth.t0);
  truth.start_cc = jt.value("start_cc", truth.start_cc);
  for (const auto& [name, jv] : jt.value("vars", json::object()).items()) {
    const auto i = static_cast<std::size_t>(env_var_index(name));
    auto& resp = truth.response[i];
    auto& dist = truth.env_dist[i];
    resp.optimum = jv.value("optimum", resp.optimum);
    resp.curvature = jv.value("curvature", resp.curvature);
    resp.linear = jv.value("linear", resp.linear);
    dist.mean = jv.value("mean", dist.mean);
    dist.sd = jv.value("sd", dist.sd);
    dist.lo = jv.value("min", dist.lo);
    dist.hi = jv.value("max", dist.hi);
  }
  return truth;
}

ordered_json truth_to_json(const growthsim::SyntheticGroundTruth& truth) {
  ordered_json vars;
  for (int i = 0; i < growthsim::kEnvDim; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    vars[std::string(growthsim::env_field_names()[ii])] = {
        {"optimum", truth.response[ii].optimum},
        {"curvature", truth.response[ii].curvature},
        {"linear", truth.response[ii].linear},
        {"mean", truth.env_dist[ii].mean},
        {"sd", truth.env_dist[ii].sd},
        {"min", truth.env_dist[ii].lo},
        {"max", truth.env_dist[ii].hi}};
  }
  return {{"base_rate", truth.base_rate}, {"noise_sigma", truth.noise_sigma},
          {"cc_max", truth.cc_max},       {"t0", truth.t0},
          {"start_cc", truth.start_cc},   {"vars", std::move(vars)}};
}

growthsim::FeatureConfig features_from_config(const RunConfig& cfg) {
  growthsim::FeatureConfig config;
  const json f = cfg.raw.value("features", json::object());
  config.include_k = f.value("include_k", false);
  config.include_k_env = f.value("include_k_env", false);
  config.ma_windows = f.value("ma_windows", std::vector<int>{});
  config.target =
      growthsim::target_kind_from_string(f.value("target", std::string("k")));
  return config;
}

growthsim::Hyper hyper_from_config(const RunConfig& cfg) {
  growthsim::Hyper hyper;
  const json m = cfg.raw.value("model", json::object());
  hyper.poly_degree = m.value("poly_degree", 0);
  hyper.knn_neighbors = m.value("knn_neighbors", 5);
  hyper.svr_epsilon = m.value("svr_epsilon", 0.01);
  hyper.svr_c = m.value("svr_c", 1.0);
  return hyper;
}

std::vector<growthsim::Batch> load_batches(const fs::path& data_dir) {
  if (!fs::is_directory(data_dir)) {
    throw MissingArtifact("missing artifact: data directory " + data_dir.string());
  }
  std::vector<fs::path> manifests;
  for (const auto& entry : fs::directory_iterator(data_dir)) {
    if (entry.path().filename().string().ends_with("_manifest.json")) {
      manifests.push_back(entry.path());
    }
  }
  std::sort(manifests.begin(), manifests.end());
  if (manifests.empty()) {
    throw MissingArtifact("missing artifact: no *_manifest.json under " +
                          data_dir.string());
  }
  std::vector<growthsim::Batch> batches;
  for (const auto& path : manifests) {
    batches.push_back(growthsim::batch_from_manifest(json::parse(read_text_file(path))));
  }
  return batches;
}

// rolling fit series per batch, either optimized from the cover data or read
// back from the oracle's recorded growth rates
std::vector<growthsim::RollingFitSeries> load_fit_series(
    const RunConfig& cfg, const std::vector<growthsim::Batch>& batches) {
  const std::string source =
      cfg.raw.value("features", json::object()).value("source", std::string("fits"));
  if (source == "fits") {
    const fs::path path = cfg.out_dir / "fits.csv";
    std::istringstream in(read_text_file(path));
    return growthsim::read_fit_report_csv(in);
  }
  if (source != "truth") {
    throw growthsim::ConfigError("features.source must be \"fits\" or \"truth\"");
  }
  const json jt = json::parse(read_text_file(cfg.data_dir() / "truth.json"));
  growthsim::SyntheticGroundTruth truth = truth_from_config(json{{"truth", jt}});
  std::map<std::string, std::vector<double>> k_by_id;
  for (const auto& jb : jt.at("batches")) {
    k_by_id[jb.at("batch_id").get<std::string>()] =
        jb.at("k_series").get<std::vector<double>>();
  }
  std::vector<growthsim::RollingFitSeries> all;
  for (const auto& batch : batches) {
    const auto it = k_by_id.find(batch.batch_id);
    if (it == k_by_id.end()) {
      throw growthsim::ConfigError("truth.json lacks batch " + batch.batch_id);
    }
    growthsim::SyntheticBatch sb;
    sb.batch = batch;
    sb.k_series = it->second;
    all.push_back(growthsim::oracle_fit_series(sb, truth));
  }
  return all;
}

std::vector<growthsim::FeatureRow> build_all_rows(
    const std::vector<growthsim::Batch>& batches,
    const std::vector<growthsim::RollingFitSeries>& fits,
    const growthsim::FeatureConfig& config) {
  std::map<std::string, const growthsim::RollingFitSeries*> by_id;
  for (const auto& f : fits) by_id[f.batch_id] = &f;
  std::vector<growthsim::FeatureRow> rows;
  for (const auto& batch : batches) {
    const auto it = by_id.find(batch.batch_id);
    if (it == by_id.end()) continue;
    const auto r = growthsim::build_features(batch, *it->second, config);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  return rows;
}

growthsim::SimConfig sim_config_from(const RunConfig& cfg,
                                     growthsim::TrainedGrowthModel model,
                                     growthsim::EnvStats stats) {
  growthsim::SimConfig sim;
  sim.model = std::move(model);
  sim.stats = std::move(stats);
  const json s = cfg.raw.value("sim", json::object());
  sim.horizon_days = s.value("horizon_days", 35);
  sim.start_cc = s.value("start_cc", 0.03);
  sim.terminal_cc = s.value("terminal_cc", 0.95);
  if (s.contains("init")) {
    sim.init.cc_max = s.at("init").value("cc_max", 1.0);
    sim.init.k = s.at("init").value("k", 0.2);
    sim.init.t0 = s.at("init").value("t0", 20.0);
  }
  sim.reward_cfg.scale = s.value("reward_scale", 100.0);
  sim.reward_cfg.k_target = s.value("k_target", 0.0);  // 0: norm.k_max
  sim.seed = cfg.seed;
  return sim;
}

growthsim::PpoHyper ppo_from_config(const RunConfig& cfg) {
  growthsim::PpoHyper h;
  const json a = cfg.raw.value("agent", json::object());
  h.clip = a.value("clip", h.clip);
  h.discount = a.value("discount", h.discount);
  h.gae_lambda = a.value("gae_lambda", h.gae_lambda);
  h.learning_rate = a.value("learning_rate", h.learning_rate);
  h.epochs = a.value("epochs", h.epochs);
  h.rollout_steps = a.value("rollout_steps", h.rollout_steps);
  h.iterations = a.value("iterations", h.iterations);
  h.minibatch = a.value("minibatch", h.minibatch);
  h.value_coef = a.value("value_coef", h.value_coef);
  h.entropy_coef = a.value("entropy_coef", h.entropy_coef);
  return h;
}

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

// ---- commands -----------------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg) {
  const json data = cfg.raw.value("data", json::object());
  const int n_batches = data.value("n_batches", 30);
  const int duration = data.value("duration_days", 30);
  const auto truth = truth_from_config(data);
  const auto full =
      growthsim::generate_synthetic_batches_with_truth(truth, n_batches, duration,
                                                       cfg.seed);
  const fs::path dir = cfg.data_dir();
  fs::create_directories(dir);
  ordered_json truth_file = truth_to_json(truth);
  ordered_json jbatches = ordered_json::array();
  for (const auto& sb : full) {
    std::ostringstream tele, canopy;
    growthsim::write_telemetry_csv(tele, growthsim::batch_to_telemetry(sb.batch));
    growthsim::write_canopy_csv(canopy, growthsim::batch_to_canopy(sb.batch));
    write_text_file(dir / (sb.batch.batch_id + "_telemetry.csv"), tele.str());
    write_text_file(dir / (sb.batch.batch_id + "_canopy.csv"), canopy.str());
    write_text_file(dir / (sb.batch.batch_id + "_manifest.json"),
                    growthsim::batch_to_manifest(sb.batch).dump(2) + "\n");
    jbatches.push_back({{"batch_id", sb.batch.batch_id}, {"k_series", sb.k_series}});
  }
  truth_file["batches"] = std::move(jbatches);
  write_text_file(dir / "truth.json", truth_file.dump(2) + "\n");

  std::cout << "generated " << n_batches << " batches of " << duration
            << " days under " << dir.string() << "\n"
            << "base growth rate " << truth.base_rate << ", noise sigma "
            << truth.noise_sigma << "\n";
  for (int i = 0; i < growthsim::kEnvDim; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    const auto& r = truth.response[ii];
    if (r.curvature != 0.0 || r.linear != 0.0) {
      std::cout << "  " << growthsim::env_field_names()[ii] << ": optimum "
                << r.optimum << ", curvature " << r.curvature << ", linear "
                << r.linear << "\n";
    }
  }
  return kExitOk;
}

int cmd_fit(const RunConfig& cfg) {
  const auto batches = load_batches(cfg.data_dir());
  std::vector<growthsim::RollingFitSeries> all;
  std::vector<std::string> failures;
  for (const auto& batch : batches) {
    try {
      all.push_back(growthsim::rolling_fits(batch));
    } catch (const std::exception& e) {
      failures.push_back(batch.batch_id + ": " + e.what());
    }
  }
  std::ostringstream report;
  growthsim::write_fit_report_csv(report, all);
  write_text_file(cfg.out_dir / "fits.csv", report.str());
  std::size_t rows = 0, converged = 0;
  for (const auto& s : all) {
    rows += s.entries.size();
    for (const auto& [t, fit] : s.entries) converged += fit.converged ? 1 : 0;
  }
  std::cout << "fitted " << all.size() << " batches, " << rows << " rolling rows, "
            << converged << " converged -> " << (cfg.out_dir / "fits.csv").string()
            << "\n";
  if (!failures.empty()) {
    for (const auto& f : failures) std::cerr << "fit failed: " << f << "\n";
    return kExitDataError;
  }
  return kExitOk;
}

int cmd_benchmark(const RunConfig& cfg, const std::string& criterion) {
  const auto batches = load_batches(cfg.data_dir());
  const auto config = features_from_config(cfg);
  const auto fits = load_fit_series(cfg, batches);
  const auto rows = build_all_rows(batches, fits, config);
  if (rows.size() < 5) {
    throw growthsim::InsufficientDataError("benchmark: not enough feature rows");
  }
  const double ratio = cfg.raw.value("split", json::object()).value("ratio", 0.8);
  const auto split = growthsim::split_train_test(rows, ratio, cfg.seed);
  const auto hyper = hyper_from_config(cfg);
  const auto table = growthsim::benchmark_grid(split, config, hyper);

  std::ostringstream report;
  growthsim::write_benchmark_csv(report, table);
  write_text_file(cfg.out_dir / "benchmark.csv", report.str());

  const auto crit = criterion == "r2" ? growthsim::SelectCriterion::r2
                                      : growthsim::SelectCriterion::mse;
  const auto [family, binning] = growthsim::select_best(table, crit);
  const auto model =
      growthsim::train_growth_model(split.train, family, hyper, binning, config);
  write_text_file(cfg.out_dir / "model.json",
                  growthsim::model_to_json(model).dump(2) + "\n");

  // env statistics over the batches that contributed training rows
  std::set<std::string> train_ids;
  for (const auto& row : split.train) train_ids.insert(row.batch_id);
  std::vector<growthsim::Batch> train_batches;
  for (const auto& batch : batches) {
    if (train_ids.count(batch.batch_id)) train_batches.push_back(batch);
  }
  const auto stats = growthsim::compute_env_stats(train_batches);
  write_text_file(cfg.out_dir / "env_stats.json",
                  growthsim::env_stats_to_json(stats).dump(2) + "\n");

  for (const auto& cell : table) {
    std::cout << growthsim::to_string(cell.family) << "/"
              << growthsim::to_string(cell.binning) << ": ";
    if (cell.failed) {
      std::cout << "failed (" << cell.error << ")\n";
    } else {
      std::cout << "r2=" << fmt_double(cell.m.r2) << " mse=" << fmt_double(cell.m.mse)
                << "\n";
    }
  }
  std::cout << "selected " << growthsim::to_string(family) << " with "
            << growthsim::to_string(binning) << " bins (by " << criterion
            << ") -> " << (cfg.out_dir / "model.json").string() << "\n";
  return kExitOk;
}

std::pair<growthsim::TrainedGrowthModel, growthsim::EnvStats> load_model_and_stats(
    const RunConfig& cfg) {
  const auto model = growthsim::model_from_json(
      json::parse(read_text_file(cfg.out_dir / "model.json")));
  const auto stats = growthsim::env_stats_from_json(
      json::parse(read_text_file(cfg.out_dir / "env_stats.json")));
  return {model, stats};
}

int cmd_simulate(const RunConfig& cfg) {
  auto [model, stats] = load_model_and_stats(cfg);
  const auto sim = sim_config_from(cfg, std::move(model), std::move(stats));
  const int episodes = cfg.raw.value("sim", json::object()).value("episodes", 10);
  // ambient conditions: daily draws from the training-data distribution
  const growthsim::Strategy ambient = [&sim](const growthsim::SimState&,
                                             growthsim::Rng& rng) {
    return growthsim::sample_env(sim.stats, rng);
  };
  std::ostringstream summary;
  summary << "episode,steps,final_cc,final_k,total_reward\n";
  for (int e = 0; e < episodes; ++e) {
    const auto trace =
        growthsim::run_episode(sim, ambient, growthsim::Rng::mix(cfg.seed, e));
    std::ostringstream os;
    growthsim::write_trace_jsonl(os, trace);
    char name[32];
    std::snprintf(name, sizeof name, "episode_%03d.jsonl", e);
    write_text_file(cfg.out_dir / "traces" / name, os.str());
    const auto& last = trace.steps.back();
    summary << e << ',' << trace.steps.size() << ',' << fmt_double(last.cc) << ','
            << fmt_double(last.k) << ',' << fmt_double(trace.total_reward) << "\n";
  }
  write_text_file(cfg.out_dir / "simulate_summary.csv", summary.str());
  std::cout << "simulated " << episodes << " episodes -> "
            << (cfg.out_dir / "traces").string() << "\n";
  return kExitOk;
}

int cmd_train_agent(const RunConfig& cfg) {
  auto [model, stats] = load_model_and_stats(cfg);
  const auto sim = sim_config_from(cfg, std::move(model), std::move(stats));
  const auto hyper = ppo_from_config(cfg);
  const auto report = growthsim::train_policy(sim, hyper, cfg.seed);
  write_text_file(cfg.out_dir / "policy.json",
                  growthsim::policy_to_json(*report.policy, report.obs_spec).dump(2) +
                      "\n");
  std::ostringstream curve;
  curve << "iteration,episodes,mean_reward\n";
  for (int i = 0; i < report.iterations; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    curve << i << ',' << report.episodes_per_iteration[ii] << ','
          << fmt_double(report.reward_curve[ii]) << "\n";
  }
  write_text_file(cfg.out_dir / "reward_curve.csv", curve.str());
  std::cout << "trained policy over " << report.iterations << " iterations; "
            << "final mean episode reward "
            << fmt_double(report.reward_curve.back()) << " -> "
            << (cfg.out_dir / "policy.json").string() << "\n";
  return kExitOk;
}

int cmd_evaluate(const RunConfig& cfg) {
  auto [model, stats] = load_model_and_stats(cfg);
  const auto sim = sim_config_from(cfg, std::move(model), std::move(stats));
  auto [policy, obs_spec] =
      growthsim::policy_from_json(json::parse(read_text_file(cfg.out_dir / "policy.json")));
  const auto batches = load_batches(cfg.data_dir());
  const int episodes =
      cfg.raw.value("evaluate", json::object()).value("episodes", 1000);

  const auto random_report = growthsim::evaluate_strategy(
      sim, growthsim::make_random_strategy(sim.stats), episodes,
      growthsim::Rng::mix(cfg.seed, 101), "random");
  const growthsim::StrategyFactory replay_factory = [&batches](int e) {
    return growthsim::make_replay_strategy(
        batches[static_cast<std::size_t>(e) % batches.size()]);
  };
  const auto replay_report = growthsim::evaluate_strategy(
      sim, replay_factory, episodes, growthsim::Rng::mix(cfg.seed, 202), "replay");
  const auto shared = std::make_shared<growthsim::PolicyNet>(std::move(policy));
  const auto policy_report = growthsim::evaluate_strategy(
      sim, growthsim::make_policy_strategy(shared, obs_spec, sim.stats), episodes,
      growthsim::Rng::mix(cfg.seed, 303), "policy");

  ordered_json ja = ordered_json::array();
  std::ostringstream csv;
  csv << "strategy,mean_reward,sd_reward,mean_length,failures\n";
  for (const auto& rep : {random_report, replay_report, policy_report}) {
    ja.push_back(growthsim::eval_report_to_json(rep));
    csv << rep.strategy << ',' << fmt_double(rep.mean_reward) << ','
        << fmt_double(rep.sd_reward) << ',' << fmt_double(rep.mean_length) << ','
        << rep.failures << "\n";
    std::cout << rep.strategy << ": mean reward " << fmt_double(rep.mean_reward)
              << " (sd " << fmt_double(rep.sd_reward) << ", length "
              << fmt_double(rep.mean_length) << ", failures " << rep.failures
              << ")\n";
  }
  write_text_file(cfg.out_dir / "evaluation.json", ja.dump(2) + "\n");
  write_text_file(cfg.out_dir / "evaluation.csv", csv.str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"plant growth modeling and control-simulation pipeline"};
  app.require_subcommand(1);

  std::string config_path, seed_override, out_override, criterion = "mse";
  app.add_option("--config", config_path, "run configuration (JSON)")->required();
  app.add_option("--seed", seed_override, "override the config seed");
  app.add_option("--out", out_override, "override the output directory");

  auto* gen = app.add_subcommand("gen-data", "generate synthetic batches");
  auto* fit = app.add_subcommand("fit", "rolling logistic fits per batch");
  auto* bench = app.add_subcommand("benchmark",
                                   "train and score every model family x binning");
  bench->add_option("--criterion", criterion, "selection criterion: mse or r2")
      ->check(CLI::IsMember({"mse", "r2"}));
  auto* simulate = app.add_subcommand("simulate", "run ambient-condition episodes");
  auto* train = app.add_subcommand("train-agent", "train the control policy");
  auto* evaluate =
      app.add_subcommand("evaluate", "compare random, replay and policy strategies");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfigError;
  }

  try {
    const RunConfig cfg = load_config(config_path, seed_override, out_override);
    if (gen->parsed()) return cmd_gen_data(cfg);
    if (fit->parsed()) return cmd_fit(cfg);
    if (bench->parsed()) return cmd_benchmark(cfg, criterion);
    if (simulate->parsed()) return cmd_simulate(cfg);
    if (train->parsed()) return cmd_train_agent(cfg);
    if (evaluate->parsed()) return cmd_evaluate(cfg);
    return kExitConfigError;
  } catch (const growthsim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const MissingArtifact& e) {
    std::cerr << e.what() << "\n";
    return kExitMissingArtifact;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDataError;
  }
}
