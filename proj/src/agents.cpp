#include "growthsim/agents.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "growthsim/errors.hpp"

namespace growthsim {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)
}

// --- baseline strategies --------------------------------------------------------

ActionVector random_strategy(const SimState&, Rng& rng, const EnvStats& stats) {
  ActionVector a;
  for (int i = 0; i < kEnvDim; ++i) {
    const auto& v = stats.vars[static_cast<std::size_t>(i)];
    a[i] = v.min == v.max ? v.min : rng.uniform(v.min, v.max);
  }
  return a;
}

ActionVector replay_strategy(const SimState& state, const Batch& recorded) {
  if (recorded.days.empty()) {
    throw StrategyError("replay_strategy: recorded batch is empty");
  }
  const auto idx = std::min<std::size_t>(static_cast<std::size_t>(state.day),
                                         recorded.days.size() - 1);
  return recorded.days[idx].env;
}

Strategy make_random_strategy(EnvStats stats) {
  return [stats = std::move(stats)](const SimState& state, Rng& rng) {
    return random_strategy(state, rng, stats);
  };
}

Strategy make_replay_strategy(Batch recorded) {
  return [recorded = std::move(recorded)](const SimState& state, Rng&) {
    return replay_strategy(state, recorded);
  };
}

// --- observations ------------------------------------------------------------------

ObsSpec make_obs_spec(const SimConfig& cfg) {
  ObsSpec spec;
  const double half_horizon = std::max(1.0, cfg.horizon_days / 2.0);
  spec.means = {half_horizon, 0.5, cfg.resolved_k_target()};
  spec.sds = {half_horizon, 0.5, std::max(0.1, cfg.resolved_k_target())};
  for (int i = 0; i < kEnvDim; ++i) {
    const auto& v = cfg.stats.vars[static_cast<std::size_t>(i)];
    spec.means.push_back(v.mean);
    spec.sds.push_back(v.sd > 0.0 ? v.sd : 1.0);
  }
  return spec;
}

std::vector<double> observe(const SimState& state, const ObsSpec& spec) {
  std::vector<double> raw = {static_cast<double>(state.day), state.cc, state.k};
  for (int i = 0; i < kEnvDim; ++i) raw.push_back(state.last_env[i]);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    raw[i] = (raw[i] - spec.means[i]) / spec.sds[i];
  }
  return raw;
}

// --- policy network -----------------------------------------------------------------

namespace {

struct Block {
  std::size_t off = 0;
  int in = 0, out = 0;
};

std::size_t affine_size(int in, int out) {
  return static_cast<std::size_t>(out) * static_cast<std::size_t>(in) +
         static_cast<std::size_t>(out);
}

// trunk blocks followed by the mean, logstd and value heads
std::vector<Block> layout(int obs_dim, int act_dim, const std::vector<int>& hidden) {
  std::vector<Block> blocks;
  std::size_t off = 0;
  int in = obs_dim;
  for (const int h : hidden) {
    blocks.push_back({off, in, h});
    off += affine_size(in, h);
    in = h;
  }
  blocks.push_back({off, in, act_dim});
  off += affine_size(in, act_dim);
  blocks.push_back({off, in, act_dim});
  off += affine_size(in, act_dim);
  blocks.push_back({off, in, 1});
  return blocks;
}

void affine_forward(std::span<const double> params, const Block& b,
                    std::span<const double> in, std::span<double> out) {
  for (int o = 0; o < b.out; ++o) {
    const std::size_t row = b.off + static_cast<std::size_t>(o) * b.in;
    double acc = params[b.off + static_cast<std::size_t>(b.out) * b.in +
                        static_cast<std::size_t>(o)];
    for (int i = 0; i < b.in; ++i) acc += params[row + static_cast<std::size_t>(i)] * in[i];
    out[o] = acc;
  }
}

// accumulates dW/db and the gradient wrt the layer input
void affine_backward(std::span<const double> params, const Block& b,
                     std::span<const double> in, std::span<const double> dout,
                     std::span<double> grad, std::span<double> din) {
  for (int o = 0; o < b.out; ++o) {
    const std::size_t row = b.off + static_cast<std::size_t>(o) * b.in;
    grad[b.off + static_cast<std::size_t>(b.out) * b.in + static_cast<std::size_t>(o)] +=
        dout[o];
    for (int i = 0; i < b.in; ++i) {
      grad[row + static_cast<std::size_t>(i)] += dout[o] * in[i];
      if (!din.empty()) din[i] += params[row + static_cast<std::size_t>(i)] * dout[o];
    }
  }
}

}  // namespace

struct PolicyNet::Trace {
  std::vector<std::vector<double>> acts;  // acts[0] = obs, then tanh outputs
  std::vector<double> mean, logstd_raw;
  double value = 0.0;
};

PolicyNet::PolicyNet(int obs_dim, int act_dim, std::vector<int> hidden,
                     std::uint64_t seed)
    : obs_dim_(obs_dim), act_dim_(act_dim), hidden_(std::move(hidden)) {
  const auto blocks = layout(obs_dim_, act_dim_, hidden_);
  const auto& last = blocks.back();
  params_.assign(last.off + affine_size(last.in, last.out), 0.0);
  Rng rng(seed);
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    const auto& b = blocks[bi];
    // near-zero heads: initial mean ~ data mean, initial std ~ 1
    const double scale = bi + 3 >= blocks.size() ? 0.01 : 1.0;
    const double s = scale * std::sqrt(6.0 / (b.in + b.out));
    for (std::size_t w = 0; w < static_cast<std::size_t>(b.out) * b.in; ++w) {
      params_[b.off + w] = rng.uniform(-s, s);
    }
  }
}

void PolicyNet::run_forward(std::span<const double> obs, Trace& tr) const {
  const auto blocks = layout(obs_dim_, act_dim_, hidden_);
  tr.acts.assign(1, std::vector<double>(obs.begin(), obs.end()));
  for (std::size_t l = 0; l < hidden_.size(); ++l) {
    std::vector<double> out(static_cast<std::size_t>(blocks[l].out));
    affine_forward(params_, blocks[l], tr.acts.back(), out);
    for (double& v : out) v = std::tanh(v);
    tr.acts.push_back(std::move(out));
  }
  const std::size_t nh = hidden_.size();
  tr.mean.assign(static_cast<std::size_t>(act_dim_), 0.0);
  tr.logstd_raw.assign(static_cast<std::size_t>(act_dim_), 0.0);
  affine_forward(params_, blocks[nh], tr.acts.back(), tr.mean);
  affine_forward(params_, blocks[nh + 1], tr.acts.back(), tr.logstd_raw);
  double v[1];
  affine_forward(params_, blocks[nh + 2], tr.acts.back(), v);
  tr.value = v[0];
}

void PolicyNet::forward(std::span<const double> obs, std::span<double> mean,
                        std::span<double> logstd, double& value) const {
  Trace tr;
  run_forward(obs, tr);
  for (int a = 0; a < act_dim_; ++a) {
    mean[a] = tr.mean[static_cast<std::size_t>(a)];
    logstd[a] = std::clamp(tr.logstd_raw[static_cast<std::size_t>(a)], kLogStdMin,
                           kLogStdMax);
  }
  value = tr.value;
}

void PolicyNet::backward(std::span<const double> obs, std::span<const double> dmean,
                         std::span<const double> dlogstd, double dvalue,
                         std::span<double> grad) const {
  const auto blocks = layout(obs_dim_, act_dim_, hidden_);
  Trace tr;
  run_forward(obs, tr);
  const std::size_t nh = hidden_.size();

  std::vector<double> dh(tr.acts.back().size(), 0.0);
  std::vector<double> dls(static_cast<std::size_t>(act_dim_));
  for (int a = 0; a < act_dim_; ++a) {
    const double raw = tr.logstd_raw[static_cast<std::size_t>(a)];
    // clamped outputs pass no gradient
    dls[static_cast<std::size_t>(a)] =
        (raw > kLogStdMin && raw < kLogStdMax) ? dlogstd[a] : 0.0;
  }
  affine_backward(params_, blocks[nh], tr.acts.back(), dmean, grad, dh);
  affine_backward(params_, blocks[nh + 1], tr.acts.back(), dls, grad, dh);
  const double dv[1] = {dvalue};
  affine_backward(params_, blocks[nh + 2], tr.acts.back(), dv, grad, dh);

  for (std::size_t l = nh; l-- > 0;) {
    const auto& act = tr.acts[l + 1];
    std::vector<double> dz(act.size());
    for (std::size_t i = 0; i < act.size(); ++i) {
      dz[i] = dh[i] * (1.0 - act[i] * act[i]);
    }
    std::vector<double> dprev(tr.acts[l].size(), 0.0);
    affine_backward(params_, blocks[l], tr.acts[l], dz, grad, dprev);
    dh = std::move(dprev);
  }
}

nlohmann::ordered_json policy_to_json(const PolicyNet& policy, const ObsSpec& obs_spec) {
  return {{"version", 1},
          {"obs_dim", policy.obs_dim()},
          {"act_dim", policy.act_dim()},
          {"hidden", policy.hidden()},
          {"params", std::vector<double>(policy.params().begin(), policy.params().end())},
          {"obs_spec", {{"means", obs_spec.means}, {"sds", obs_spec.sds}}}};
}

std::pair<PolicyNet, ObsSpec> policy_from_json(const nlohmann::json& j) {
  PolicyNet policy(j.at("obs_dim").get<int>(), j.at("act_dim").get<int>(),
                   j.at("hidden").get<std::vector<int>>(), 0);
  const auto params = j.at("params").get<std::vector<double>>();
  if (params.size() != policy.n_params()) {
    throw ConfigError("policy artifact: parameter count mismatch");
  }
  std::copy(params.begin(), params.end(), policy.params().begin());
  ObsSpec spec;
  spec.means = j.at("obs_spec").at("means").get<std::vector<double>>();
  spec.sds = j.at("obs_spec").at("sds").get<std::vector<double>>();
  return {std::move(policy), std::move(spec)};
}

namespace {

ActionVector z_to_action(std::span<const double> z, const EnvStats& stats) {
  ActionVector a;
  for (int i = 0; i < kEnvDim; ++i) {
    const auto& v = stats.vars[static_cast<std::size_t>(i)];
    a[i] = std::clamp(v.mean + z[i] * v.sd, v.min, v.max);
  }
  return a;
}

}  // namespace

Strategy make_policy_strategy(std::shared_ptr<const PolicyNet> policy,
                              ObsSpec obs_spec, EnvStats stats, bool stochastic) {
  return [policy = std::move(policy), spec = std::move(obs_spec),
          stats = std::move(stats), stochastic](const SimState& state, Rng& rng) {
    const auto obs = observe(state, spec);
    std::vector<double> mean(static_cast<std::size_t>(policy->act_dim()));
    std::vector<double> logstd(static_cast<std::size_t>(policy->act_dim()));
    double value;
    policy->forward(obs, mean, logstd, value);
    if (stochastic) {
      for (std::size_t a = 0; a < mean.size(); ++a) {
        mean[a] += std::exp(logstd[a]) * rng.normal(0.0, 1.0);
      }
    }
    return z_to_action(mean, stats);
  };
}

// --- ppo -----------------------------------------------------------------------------

double ppo_loss_and_grad(const GaussianPolicy& policy,
                         std::span<const PpoSample> batch, const PpoHyper& hyper,
                         std::span<double> grad) {
  if (batch.empty()) throw ContractError("ppo loss: empty batch");
  std::fill(grad.begin(), grad.end(), 0.0);
  const int act = policy.act_dim();
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<double> mean(static_cast<std::size_t>(act));
  std::vector<double> logstd(static_cast<std::size_t>(act));
  std::vector<double> dmean(static_cast<std::size_t>(act));
  std::vector<double> dlogstd(static_cast<std::size_t>(act));
  double loss = 0.0;

  for (const auto& s : batch) {
    double value = 0.0;
    policy.forward(s.obs, mean, logstd, value);
    double logp = 0.0, entropy = 0.0;
    for (int a = 0; a < act; ++a) {
      const auto ai = static_cast<std::size_t>(a);
      const double inv_sd = std::exp(-logstd[ai]);
      const double zr = (s.action[ai] - mean[ai]) * inv_sd;
      logp += -0.5 * zr * zr - logstd[ai] - 0.5 * kLog2Pi;
      entropy += logstd[ai] + 0.5 * (1.0 + kLog2Pi);
    }
    const double ratio = std::exp(logp - s.logp_old);
    const double clipped = std::clamp(ratio, 1.0 - hyper.clip, 1.0 + hyper.clip);
    const double unclipped_obj = ratio * s.advantage;
    const double clipped_obj = clipped * s.advantage;
    const double surrogate = std::min(unclipped_obj, clipped_obj);
    const double verr = value - s.value_target;
    loss += inv_n * (-surrogate + hyper.value_coef * verr * verr -
                     hyper.entropy_coef * entropy);

    // gradient flows through the ratio only when the unclipped branch is active
    const double dsur = unclipped_obj <= clipped_obj ? s.advantage : 0.0;
    const double dlogp = -inv_n * dsur * ratio;
    for (int a = 0; a < act; ++a) {
      const auto ai = static_cast<std::size_t>(a);
      const double inv_var = std::exp(-2.0 * logstd[ai]);
      const double diff = s.action[ai] - mean[ai];
      dmean[ai] = dlogp * diff * inv_var;
      dlogstd[ai] =
          dlogp * (diff * diff * inv_var - 1.0) - inv_n * hyper.entropy_coef;
    }
    policy.backward(s.obs, dmean, dlogstd, inv_n * hyper.value_coef * 2.0 * verr,
                    grad);
  }
  return loss;
}

TrainReport train_policy(const SimConfig& env_cfg, const PpoHyper& hyper,
                         std::uint64_t seed) {
  env_cfg.validate();
  TrainReport report;
  report.obs_spec = make_obs_spec(env_cfg);
  report.policy = std::make_shared<PolicyNet>(3 + kEnvDim, kEnvDim,
                                              std::vector<int>{32, 32},
                                              Rng::mix(seed, 0xA5));
  PolicyNet& policy = *report.policy;
  const std::size_t np = policy.n_params();
  std::vector<double> grad(np), adam_m(np, 0.0), adam_v(np, 0.0);
  long adam_t = 0;
  std::vector<double> mean(kEnvDim), logstd(kEnvDim);

  for (int it = 0; it < hyper.iterations; ++it) {
    // ---- rollout of complete episodes
    std::vector<PpoSample> samples;
    std::vector<double> rewards, values;
    std::vector<std::size_t> episode_start;
    std::vector<double> episode_returns;
    samples.reserve(static_cast<std::size_t>(hyper.rollout_steps) + 64);
    int ep = 0;
    while (samples.size() < static_cast<std::size_t>(hyper.rollout_steps)) {
      episode_start.push_back(samples.size());
      Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(it) * 100000 +
                                      static_cast<std::uint64_t>(ep) + 1);
      SimState state = sim_reset(env_cfg, rng);
      double ep_return = 0.0;
      while (!state.done) {
        PpoSample s;
        s.obs = observe(state, report.obs_spec);
        double value = 0.0;
        policy.forward(s.obs, mean, logstd, value);
        s.action.resize(kEnvDim);
        double logp = 0.0;
        for (int a = 0; a < kEnvDim; ++a) {
          const auto ai = static_cast<std::size_t>(a);
          const double z = rng.normal(0.0, 1.0);
          s.action[ai] = mean[ai] + std::exp(logstd[ai]) * z;
          logp += -0.5 * z * z - logstd[ai] - 0.5 * kLog2Pi;
        }
        s.logp_old = logp;
        const StepOutcome out =
            sim_step(state, z_to_action(s.action, env_cfg.stats), env_cfg);
        samples.push_back(std::move(s));
        rewards.push_back(out.reward);
        values.push_back(value);
        ep_return += out.reward;
      }
      episode_returns.push_back(ep_return);
      ++ep;
    }
    episode_start.push_back(samples.size());

    // ---- generalized advantage estimation, episode by episode
    for (std::size_t e = 0; e + 1 < episode_start.size(); ++e) {
      double adv = 0.0;
      for (std::size_t i = episode_start[e + 1]; i-- > episode_start[e];) {
        const double next_v = i + 1 < episode_start[e + 1] ? values[i + 1] : 0.0;
        const double delta = rewards[i] + hyper.discount * next_v - values[i];
        adv = delta + hyper.discount * hyper.gae_lambda * adv;
        samples[i].advantage = adv;
        samples[i].value_target = adv + values[i];
      }
    }
    double adv_mean = 0.0, adv_sq = 0.0;
    for (const auto& s : samples) adv_mean += s.advantage;
    adv_mean /= static_cast<double>(samples.size());
    for (const auto& s : samples) {
      const double d = s.advantage - adv_mean;
      adv_sq += d * d;
    }
    const double adv_sd = std::sqrt(adv_sq / static_cast<double>(samples.size()));
    for (auto& s : samples) {
      s.advantage = (s.advantage - adv_mean) / (adv_sd + 1e-8);
    }

    // ---- clipped-surrogate updates
    Rng shuffle_rng = Rng::derive(seed, (1ULL << 40) + static_cast<std::uint64_t>(it));
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
      shuffle_rng.shuffle(std::span<std::size_t>(order));
      for (std::size_t lo = 0; lo < order.size();
           lo += static_cast<std::size_t>(hyper.minibatch)) {
        const std::size_t hi =
            std::min(order.size(), lo + static_cast<std::size_t>(hyper.minibatch));
        std::vector<PpoSample> mb;
        mb.reserve(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) mb.push_back(samples[order[i]]);
        const double loss = ppo_loss_and_grad(policy, mb, hyper, grad);
        if (!std::isfinite(loss)) {
          throw TrainError("ppo: non-finite loss at iteration " + std::to_string(it) +
                           ", epoch " + std::to_string(epoch) + " (batch of " +
                           std::to_string(mb.size()) + " samples)");
        }
        ++adam_t;
        const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(adam_t));
        const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(adam_t));
        auto params = policy.params();
        for (std::size_t i = 0; i < np; ++i) {
          adam_m[i] = 0.9 * adam_m[i] + 0.1 * grad[i];
          adam_v[i] = 0.999 * adam_v[i] + 0.001 * grad[i] * grad[i];
          params[i] -= hyper.learning_rate * (adam_m[i] / bc1) /
                       (std::sqrt(adam_v[i] / bc2) + 1e-8);
        }
      }
    }

    report.episodes_per_iteration.push_back(ep);
    report.reward_curve.push_back(
        std::accumulate(episode_returns.begin(), episode_returns.end(), 0.0) /
        static_cast<double>(episode_returns.size()));
  }
  report.iterations = hyper.iterations;
  return report;
}

// --- evaluation ------------------------------------------------------------------------

EvalReport evaluate_strategy(const SimConfig& cfg, const Strategy& strategy,
                             int n_episodes, std::uint64_t seed, std::string name) {
  return evaluate_strategy(
      cfg, [&strategy](int) { return strategy; }, n_episodes, seed,
      std::move(name));
}

EvalReport evaluate_strategy(const SimConfig& cfg, const StrategyFactory& factory,
                             int n_episodes, std::uint64_t seed, std::string name) {
  if (n_episodes < 1) throw ConfigError("evaluate_strategy: n_episodes must be >= 1");
  EvalReport report;
  report.strategy = std::move(name);
  report.n_episodes = n_episodes;
  std::vector<double> returns;
  returns.reserve(static_cast<std::size_t>(n_episodes));
  long double length_sum = 0.0;
  std::array<long double, kEnvDim> action_sum{};
  long long action_count = 0;
  for (int e = 0; e < n_episodes; ++e) {
    try {
      const EpisodeTrace trace =
          run_episode(cfg, factory(e), Rng::mix(seed, static_cast<std::uint64_t>(e)));
      returns.push_back(trace.total_reward);
      length_sum += static_cast<long double>(trace.steps.size());
      for (const auto& s : trace.steps) {
        for (int i = 0; i < kEnvDim; ++i) {
          action_sum[static_cast<std::size_t>(i)] += s.action[i];
        }
        ++action_count;
      }
    } catch (const StrategyError&) {
      ++report.failures;
    }
  }
  if (!returns.empty()) {
    const double n = static_cast<double>(returns.size());
    report.mean_reward = std::accumulate(returns.begin(), returns.end(), 0.0) / n;
    double sq = 0.0;
    for (const double r : returns) {
      const double d = r - report.mean_reward;
      sq += d * d;
    }
    report.sd_reward = returns.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
    report.mean_length = static_cast<double>(length_sum / returns.size());
  }
  if (action_count > 0) {
    for (int i = 0; i < kEnvDim; ++i) {
      report.mean_action[i] =
          static_cast<double>(action_sum[static_cast<std::size_t>(i)] / action_count);
    }
  }
  return report;
}

nlohmann::ordered_json eval_report_to_json(const EvalReport& report) {
  return {{"strategy", report.strategy},
          {"n_episodes", report.n_episodes},
          {"mean_reward", report.mean_reward},
          {"sd_reward", report.sd_reward},
          {"mean_length", report.mean_length},
          {"failures", report.failures}};
}

}  // namespace growthsim
