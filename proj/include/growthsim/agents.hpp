#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "growthsim/sim.hpp"

namespace growthsim {

// --- baseline strategies -----------------------------------------------------

// Uniform setpoints over the observed range of each variable.
ActionVector random_strategy(const SimState& state, Rng& rng, const EnvStats& stats);

// Re-applies the environment recorded for the matching day; past the end of
// the recording the last day repeats.
ActionVector replay_strategy(const SimState& state, const Batch& recorded);

Strategy make_random_strategy(EnvStats stats);
Strategy make_replay_strategy(Batch recorded);

// --- observations -------------------------------------------------------------

// Observation is (day, cc, k, last_env): 10 standardized scalars.
struct ObsSpec {
  std::vector<double> means, sds;
};

ObsSpec make_obs_spec(const SimConfig& cfg);
std::vector<double> observe(const SimState& state, const ObsSpec& spec);

// --- gaussian policies -----------------------------------------------------------

// Differentiable diagonal-Gaussian policy with a value estimate; the loss
// below works against this interface so toy policies can be checked the same
// way as the real network.
class GaussianPolicy {
 public:
  virtual ~GaussianPolicy() = default;
  virtual int obs_dim() const = 0;
  virtual int act_dim() const = 0;
  virtual std::size_t n_params() const = 0;
  virtual std::span<double> params() = 0;
  virtual std::span<const double> params() const = 0;
  virtual void forward(std::span<const double> obs, std::span<double> mean,
                       std::span<double> logstd, double& value) const = 0;
  // Accumulates d(loss)/d(params) into grad given upstream gradients at the
  // three outputs.
  virtual void backward(std::span<const double> obs, std::span<const double> dmean,
                        std::span<const double> dlogstd, double dvalue,
                        std::span<double> grad) const = 0;
};

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

// Two-hidden-layer tanh network (32 units each) with mean, log-stddev and
// value heads off a shared trunk. Actions live in standardized (z) units.
class PolicyNet final : public GaussianPolicy {
 public:
  PolicyNet(int obs_dim, int act_dim, std::vector<int> hidden, std::uint64_t seed);

  int obs_dim() const override { return obs_dim_; }
  int act_dim() const override { return act_dim_; }
  std::size_t n_params() const override { return params_.size(); }
  std::span<double> params() override { return params_; }
  std::span<const double> params() const override { return params_; }
  const std::vector<int>& hidden() const { return hidden_; }

  void forward(std::span<const double> obs, std::span<double> mean,
               std::span<double> logstd, double& value) const override;
  void backward(std::span<const double> obs, std::span<const double> dmean,
                std::span<const double> dlogstd, double dvalue,
                std::span<double> grad) const override;

 private:
  int obs_dim_, act_dim_;
  std::vector<int> hidden_;
  std::vector<double> params_;

  struct Trace;
  void run_forward(std::span<const double> obs, Trace& trace) const;
};

nlohmann::ordered_json policy_to_json(const PolicyNet& policy, const ObsSpec& obs_spec);
std::pair<PolicyNet, ObsSpec> policy_from_json(const nlohmann::json& j);

// Maps the policy's z-space action to absolute setpoints within the observed
// ranges. Deterministic (mean action) unless stochastic is set.
Strategy make_policy_strategy(std::shared_ptr<const PolicyNet> policy,
                              ObsSpec obs_spec, EnvStats stats,
                              bool stochastic = false);

// --- ppo --------------------------------------------------------------------------

struct PpoHyper {
  double clip = 0.2;
  double discount = 0.99;
  double gae_lambda = 0.95;
  double learning_rate = 3e-4;
  int epochs = 4;
  int rollout_steps = 2048;
  int iterations = 100;
  int minibatch = 64;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
};

struct PpoSample {
  std::vector<double> obs;
  std::vector<double> action;  // z-space sample the logp was computed at
  double logp_old = 0.0;
  double advantage = 0.0;
  double value_target = 0.0;
};

// Clipped-surrogate loss with value and entropy terms, averaged over the
// batch; fills grad (same length as params) with its analytic gradient.
double ppo_loss_and_grad(const GaussianPolicy& policy,
                         std::span<const PpoSample> batch, const PpoHyper& hyper,
                         std::span<double> grad);

struct TrainReport {
  int iterations = 0;
  std::vector<int> episodes_per_iteration;
  std::vector<double> reward_curve;  // mean episode reward per iteration
  std::shared_ptr<PolicyNet> policy;
  ObsSpec obs_spec;
};

// PPO on the simulator: rollouts of complete episodes, GAE advantages
// (normalized per batch), Adam updates. Deterministic given seed. Throws
// TrainError with iteration diagnostics if the loss goes non-finite.
TrainReport train_policy(const SimConfig& env_cfg, const PpoHyper& hyper,
                         std::uint64_t seed);

// --- evaluation ---------------------------------------------------------------------

struct EvalReport {
  std::string strategy;
  int n_episodes = 0;
  double mean_reward = 0.0;
  double sd_reward = 0.0;
  double mean_length = 0.0;
  int failures = 0;
  ActionVector mean_action;  // diagnostic; not part of the JSON report
};

// Runs n_episodes with per-episode seeds derived from seed; episodes that
// throw StrategyError are counted as failures and excluded from the stats.
EvalReport evaluate_strategy(const SimConfig& cfg, const Strategy& strategy,
                             int n_episodes, std::uint64_t seed, std::string name);

// Same, but with a fresh strategy per episode (replay baselines cycle through
// their recorded batches this way).
using StrategyFactory = std::function<Strategy(int episode)>;
EvalReport evaluate_strategy(const SimConfig& cfg, const StrategyFactory& factory,
                             int n_episodes, std::uint64_t seed, std::string name);

nlohmann::ordered_json eval_report_to_json(const EvalReport& report);

}  // namespace growthsim
