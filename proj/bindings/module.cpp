#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <memory>

#include <nlohmann/json.hpp>

#include "growthsim/agents.hpp"
#include "growthsim/curvefit.hpp"
#include "growthsim/envmodel.hpp"
#include "growthsim/errors.hpp"
#include "growthsim/ingest.hpp"
#include "growthsim/sim.hpp"

namespace py = pybind11;
using namespace growthsim;

namespace {

// Gym-style wrapper owning the episode state and generator.
class Simulator {
 public:
  Simulator(SimConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)), seed_(seed), rng_(seed) {}

  py::dict reset() {
    rng_ = Rng(seed_);
    state_ = sim_reset(cfg_, rng_);
    return observation();
  }

  py::tuple step(const std::vector<double>& action) {
    if (action.size() != kEnvDim) {
      throw ContractError("action must have 7 components");
    }
    ActionVector a;
    for (int i = 0; i < kEnvDim; ++i) a[i] = action[static_cast<std::size_t>(i)];
    const StepOutcome out = sim_step(state_, a, cfg_);
    return py::make_tuple(observation(), out.reward, out.done);
  }

  py::dict observation() const {
    py::dict d;
    d["day"] = state_.day;
    d["t"] = state_.t;
    d["cc"] = state_.cc;
    d["k"] = state_.k;
    std::vector<double> env(kEnvDim);
    for (int i = 0; i < kEnvDim; ++i) env[static_cast<std::size_t>(i)] = state_.last_env[i];
    d["env"] = env;
    return d;
  }

 private:
  SimConfig cfg_;
  std::uint64_t seed_;
  Rng rng_;
  SimState state_;
};

TrainedGrowthModel load_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  nlohmann::json j;
  in >> j;
  return model_from_json(j);
}

EnvStats load_stats_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  nlohmann::json j;
  in >> j;
  return env_stats_from_json(j);
}

}  // namespace

PYBIND11_MODULE(_growthsim, m) {
  m.doc() = "plant growth curve fitting, environment-response models and the "
            "episodic control simulator";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);

  py::class_<GrowthParams>(m, "GrowthParams")
      .def(py::init<double, double, double>(), py::arg("cc_max") = 1.0,
           py::arg("k") = 0.2, py::arg("t0") = 20.0)
      .def_readwrite("cc_max", &GrowthParams::cc_max)
      .def_readwrite("k", &GrowthParams::k)
      .def_readwrite("t0", &GrowthParams::t0);

  m.def("logistic_cc", &logistic_cc, py::arg("t"), py::arg("params"),
        "Canopy cover fraction at day t.");
  m.def("inverse_logistic", &inverse_logistic, py::arg("cc"), py::arg("params"),
        "Day at which the curve reaches the given cover.");
  m.def(
      "reward",
      [](double k, double k_target, double scale) {
        return reward(k, RewardConfig{k_target, scale});
      },
      py::arg("k"), py::arg("k_target"), py::arg("scale") = 100.0,
      "Quadratic growth-rate penalty; zero only at the target.");

  py::class_<FitResult>(m, "FitResult")
      .def_property_readonly("params", [](const FitResult& f) { return f.params; })
      .def_readonly("rss", &FitResult::rss)
      .def_readonly("n_points", &FitResult::n_points)
      .def_readonly("converged", &FitResult::converged)
      .def_readonly("iterations", &FitResult::iterations);

  m.def(
      "fit_logistic",
      [](const std::vector<std::pair<double, double>>& series) {
        std::vector<CcPoint> pts;
        pts.reserve(series.size());
        for (const auto& [t, cc] : series) pts.push_back(CcPoint{t, cc});
        return fit_logistic(pts);
      },
      py::arg("series"),
      "Bounded least-squares logistic fit of (day, cover) pairs.");

  py::class_<DayRecord>(m, "DayRecord")
      .def_readonly("day", &DayRecord::day)
      .def_readonly("cc", &DayRecord::cc)
      .def_property_readonly("env", [](const DayRecord& r) {
        std::vector<double> env(kEnvDim);
        for (int i = 0; i < kEnvDim; ++i) env[static_cast<std::size_t>(i)] = r.env[i];
        return env;
      });

  py::class_<Batch>(m, "Batch")
      .def_readonly("batch_id", &Batch::batch_id)
      .def_readonly("days", &Batch::days)
      .def_property_readonly("duration_days", &Batch::duration_days);

  py::class_<SyntheticGroundTruth>(m, "SyntheticGroundTruth")
      .def_static("chamber_default", &SyntheticGroundTruth::chamber_default)
      .def_readwrite("base_rate", &SyntheticGroundTruth::base_rate)
      .def_readwrite("noise_sigma", &SyntheticGroundTruth::noise_sigma)
      .def_readwrite("start_cc", &SyntheticGroundTruth::start_cc)
      .def("set_response",
           [](SyntheticGroundTruth& t, int var, double optimum, double curvature,
              double linear) {
             t.response.at(static_cast<std::size_t>(var)) =
                 VarResponse{optimum, curvature, linear};
           })
      .def("set_env_dist",
           [](SyntheticGroundTruth& t, int var, double mean, double sd, double lo,
              double hi) {
             t.env_dist.at(static_cast<std::size_t>(var)) =
                 VarDistribution{mean, sd, lo, hi};
           });

  m.def("generate_synthetic_batches", &generate_synthetic_batches, py::arg("truth"),
        py::arg("n_batches"), py::arg("duration_days"), py::arg("seed"));
  m.def("env_field_names", [] {
    std::vector<std::string> names;
    for (const auto& n : env_field_names()) names.emplace_back(n);
    return names;
  });

  py::class_<RollingFitSeries>(m, "RollingFitSeries")
      .def_readonly("batch_id", &RollingFitSeries::batch_id)
      .def_property_readonly("entries", [](const RollingFitSeries& s) {
        std::vector<std::pair<int, FitResult>> out(s.entries.begin(),
                                                   s.entries.end());
        return out;
      });
  m.def("rolling_fits",
        [](const Batch& b) { return rolling_fits(b); }, py::arg("batch"));
  m.def("extrapolate_next_day", &extrapolate_next_day, py::arg("fit"), py::arg("t"));

  py::class_<TrainedGrowthModel>(m, "TrainedGrowthModel")
      .def_property_readonly("family",
                             [](const TrainedGrowthModel& m_) {
                               return to_string(m_.family);
                             })
      .def_property_readonly("binning",
                             [](const TrainedGrowthModel& m_) {
                               return to_string(m_.scheme.kind);
                             })
      .def_property_readonly("k_max",
                             [](const TrainedGrowthModel& m_) { return m_.norm.k_max; })
      .def("predict_k",
           [](const TrainedGrowthModel& m_, const std::vector<double>& features,
              double cc_now, double k_now) {
             return m_.predict_k(features, cc_now, k_now);
           })
      .def("save", [](const TrainedGrowthModel& m_, const std::string& path) {
        std::ofstream out(path);
        out << model_to_json(m_).dump(2) << "\n";
      });
  m.def("load_model", &load_model_file, py::arg("path"));

  py::class_<EnvStats>(m, "EnvStats");
  m.def("compute_env_stats",
        [](const std::vector<Batch>& batches) { return compute_env_stats(batches); });
  m.def("load_env_stats", &load_stats_file, py::arg("path"));

  py::class_<SimConfig>(m, "SimConfig")
      .def(py::init([](const TrainedGrowthModel& model, const EnvStats& stats,
                       int horizon_days, double start_cc, double terminal_cc,
                       double k_target, std::uint64_t seed) {
             SimConfig cfg;
             cfg.model = model;
             cfg.stats = stats;
             cfg.horizon_days = horizon_days;
             cfg.start_cc = start_cc;
             cfg.terminal_cc = terminal_cc;
             cfg.reward_cfg.k_target = k_target;
             cfg.seed = seed;
             return cfg;
           }),
           py::arg("model"), py::arg("stats"), py::arg("horizon_days") = 35,
           py::arg("start_cc") = 0.03, py::arg("terminal_cc") = 0.95,
           py::arg("k_target") = 0.0, py::arg("seed") = 0);

  py::class_<Simulator>(m, "Simulator")
      .def(py::init<SimConfig, std::uint64_t>(), py::arg("config"), py::arg("seed"))
      .def("reset", &Simulator::reset)
      .def("step", &Simulator::step, py::arg("action"));

  // envmodel pipeline pieces
  m.def(
      "benchmark_on_batches",
      [](const std::vector<Batch>& batches, double ratio, std::uint64_t seed) {
        FeatureConfig config;
        std::vector<FeatureRow> rows;
        for (const auto& batch : batches) {
          const auto fits = rolling_fits(batch);
          const auto r = build_features(batch, fits, config);
          rows.insert(rows.end(), r.begin(), r.end());
        }
        const auto split = split_train_test(rows, ratio, seed);
        const auto table = benchmark_grid(split, config);
        py::list out;
        for (const auto& cell : table) {
          py::dict d;
          d["family"] = to_string(cell.family);
          d["binning"] = to_string(cell.binning);
          d["failed"] = cell.failed;
          d["r2"] = cell.m.r2;
          d["mse"] = cell.m.mse;
          out.append(std::move(d));
        }
        return out;
      },
      py::arg("batches"), py::arg("ratio") = 0.8, py::arg("seed") = 0,
      "Rolling fits, an 80/20 batch split and the full family x binning grid.");

  m.def(
      "train_model_on_batches",
      [](const std::vector<Batch>& batches, const std::string& family,
         const std::string& binning, const std::string& target) {
        FeatureConfig config;
        config.target = target_kind_from_string(target);
        std::vector<FeatureRow> rows;
        for (const auto& batch : batches) {
          const auto fits = rolling_fits(batch);
          const auto r = build_features(batch, fits, config);
          rows.insert(rows.end(), r.begin(), r.end());
        }
        return train_growth_model(rows, family_from_string(family), Hyper{},
                                  bin_kind_from_string(binning), config);
      },
      py::arg("batches"), py::arg("family") = "linear",
      py::arg("binning") = "overlapping", py::arg("target") = "k");

  m.def(
      "metrics",
      [](const std::vector<double>& y_true, const std::vector<double>& y_pred) {
        const auto m_ = metrics(y_true, y_pred);
        return py::make_tuple(m_.r2, m_.mse);
      },
      py::arg("y_true"), py::arg("y_pred"));

  m.def(
      "evaluate_random",
      [](const SimConfig& cfg, int n_episodes, std::uint64_t seed) {
        const auto rep = evaluate_strategy(cfg, make_random_strategy(cfg.stats),
                                           n_episodes, seed, "random");
        py::dict d;
        d["strategy"] = rep.strategy;
        d["n_episodes"] = rep.n_episodes;
        d["mean_reward"] = rep.mean_reward;
        d["sd_reward"] = rep.sd_reward;
        d["mean_length"] = rep.mean_length;
        d["failures"] = rep.failures;
        return d;
      },
      py::arg("config"), py::arg("n_episodes") = 100, py::arg("seed") = 0);
}
