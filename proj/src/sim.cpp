#include "growthsim/sim.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <nlohmann/json.hpp>

#include "growthsim/errors.hpp"

namespace growthsim {

EnvStats compute_env_stats(std::span<const Batch> batches) {
  EnvStats stats;
  std::array<long double, kEnvDim> sum{}, sumsq{};
  long n = 0;
  bool first = true;
  for (const auto& batch : batches) {
    for (const auto& rec : batch.days) {
      for (int i = 0; i < kEnvDim; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        sum[ii] += rec.env[i];
        sumsq[ii] += static_cast<long double>(rec.env[i]) * rec.env[i];
        auto& v = stats.vars[ii];
        if (first) {
          v.min = v.max = rec.env[i];
        } else {
          v.min = std::min(v.min, rec.env[i]);
          v.max = std::max(v.max, rec.env[i]);
        }
      }
      first = false;
      ++n;
    }
  }
  if (n == 0) throw ConfigError("compute_env_stats: no day records");
  for (int i = 0; i < kEnvDim; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    auto& v = stats.vars[ii];
    v.mean = static_cast<double>(sum[ii] / n);
    const long double var = sumsq[ii] / n - static_cast<long double>(v.mean) * v.mean;
    v.sd = var > 0 ? std::sqrt(static_cast<double>(var)) : 0.0;
  }
  return stats;
}

nlohmann::ordered_json env_stats_to_json(const EnvStats& stats) {
  nlohmann::ordered_json vars;
  for (int i = 0; i < kEnvDim; ++i) {
    const auto& v = stats.vars[static_cast<std::size_t>(i)];
    vars[std::string(env_field_names()[static_cast<std::size_t>(i)])] = {
        {"mean", v.mean}, {"sd", v.sd}, {"min", v.min}, {"max", v.max}};
  }
  return {{"vars", std::move(vars)}};
}

EnvStats env_stats_from_json(const nlohmann::json& j) {
  EnvStats stats;
  for (int i = 0; i < kEnvDim; ++i) {
    const auto& jv =
        j.at("vars").at(std::string(env_field_names()[static_cast<std::size_t>(i)]));
    auto& v = stats.vars[static_cast<std::size_t>(i)];
    v.mean = jv.at("mean").get<double>();
    v.sd = jv.at("sd").get<double>();
    v.min = jv.at("min").get<double>();
    v.max = jv.at("max").get<double>();
  }
  return stats;
}

void SimConfig::validate() const {
  if (!(start_cc > 0.0 && start_cc < terminal_cc && terminal_cc <= 1.0)) {
    throw ConfigError("sim: need 0 < start_cc < terminal_cc <= 1");
  }
  if (horizon_days < 1) throw ConfigError("sim: horizon_days must be >= 1");
  if (!init.valid()) throw ConfigError("sim: invalid initial growth parameters");
  if (start_cc >= init.cc_max) {
    throw ConfigError("sim: start_cc must lie below cc_max");
  }
  if (resolved_k_target() <= 0.0 || reward_cfg.scale <= 0.0) {
    throw ConfigError("sim: reward needs k_target > 0 and scale > 0");
  }
  for (const auto& v : stats.vars) {
    if (v.sd < 0.0 || v.min > v.max || !(v.min <= v.mean && v.mean <= v.max)) {
      throw ConfigError("sim: invalid env statistics");
    }
  }
}

EnvVector sample_env(const EnvStats& stats, Rng& rng) {
  EnvVector env;
  for (int i = 0; i < kEnvDim; ++i) {
    const auto& v = stats.vars[static_cast<std::size_t>(i)];
    env[i] = std::clamp(rng.normal(v.mean, v.sd), v.min, v.max);
  }
  return env;
}

double normalize_delta_k(double dk_hat, const NormConstants& norm) {
  if (!(norm.k_max > 0.0)) {
    throw ContractError("normalize_delta_k: k_max must be positive");
  }
  return dk_hat * norm.delta_k_max / norm.k_max;
}

SimState sim_reset(const SimConfig& cfg, Rng& rng) {
  cfg.validate();
  SimState state;
  state.day = 0;
  state.k = cfg.init.k;
  state.t = inverse_logistic(cfg.start_cc, cfg.init);
  state.cc = cfg.start_cc;
  state.last_env = sample_env(cfg.stats, rng);
  state.env_history.push_back(state.last_env);
  return state;
}

StepOutcome sim_step(SimState& state, const ActionVector& action, const SimConfig& cfg) {
  if (state.done) throw ContractError("sim_step: episode already finished");
  StepOutcome out;
  for (int i = 0; i < kEnvDim; ++i) {
    if (!std::isfinite(action[i])) {
      throw StrategyError("sim_step: non-finite action component");
    }
    const auto& v = cfg.stats.vars[static_cast<std::size_t>(i)];
    out.realized[i] = std::clamp(action[i], v.min, v.max);
  }

  state.env_history.push_back(out.realized);
  const auto features = assemble_feature_vector(cfg.model.feature_config(),
                                                state.env_history, state.k);
  out.k_hat = cfg.model.predict_k(features, state.cc, state.k);
  const double dk_hat = out.k_hat - state.k;
  out.dk_norm = normalize_delta_k(dk_hat, cfg.model.norm);
  const double k_next =
      std::clamp(state.k + out.dk_norm, kGrowthRateFloor, kGrowthRateCap);

  state.t += 1.0;
  const GrowthParams curve{cfg.init.cc_max, k_next, cfg.init.t0};
  state.cc = std::max(state.cc, logistic_cc(state.t, curve));  // cover never shrinks
  state.k = k_next;
  state.last_env = out.realized;
  state.day += 1;

  out.reward = reward(k_next, RewardConfig{cfg.resolved_k_target(), cfg.reward_cfg.scale});
  state.cumulative_reward += out.reward;
  state.done = state.cc >= cfg.terminal_cc || state.day >= cfg.horizon_days;
  out.done = state.done;
  return out;
}

EpisodeTrace run_episode(const SimConfig& cfg, const Strategy& strategy,
                         std::uint64_t episode_seed) {
  Rng rng(episode_seed);
  SimState state = sim_reset(cfg, rng);
  EpisodeTrace trace;
  while (!state.done) {
    const ActionVector action = strategy(state, rng);
    const StepOutcome out = sim_step(state, action, cfg);
    trace.steps.push_back(StepRecord{state.day, state.t, state.cc, state.k, action,
                                     out.realized, out.k_hat, out.dk_norm,
                                     out.reward, out.done});
    trace.total_reward += out.reward;
  }
  return trace;
}

void write_trace_jsonl(std::ostream& out, const EpisodeTrace& trace) {
  for (const auto& s : trace.steps) {
    nlohmann::ordered_json action, env;
    for (int i = 0; i < kEnvDim; ++i) {
      const auto name = std::string(env_field_names()[static_cast<std::size_t>(i)]);
      action[name] = s.action[i];
      env[name] = s.env[i];
    }
    const nlohmann::ordered_json j = {
        {"day", s.day},       {"t", s.t},
        {"cc", s.cc},         {"k", s.k},
        {"action", std::move(action)}, {"env", std::move(env)},
        {"k_hat", s.k_hat},   {"dk_norm", s.dk_norm},
        {"reward", s.reward}, {"done", s.done}};
    out << j.dump() << '\n';
  }
}

}  // namespace growthsim
