#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "growthsim/core.hpp"
#include "growthsim/envmodel.hpp"
#include "growthsim/ingest.hpp"
#include "growthsim/rng.hpp"

namespace growthsim {

// Per-variable training-data statistics; sampling and action clamping both
// stay inside [min, max].
struct VarStats {
  double mean = 0.0, sd = 0.0, min = 0.0, max = 0.0;
};

struct EnvStats {
  std::array<VarStats, kEnvDim> vars{};
};

EnvStats compute_env_stats(std::span<const Batch> batches);
nlohmann::ordered_json env_stats_to_json(const EnvStats& stats);
EnvStats env_stats_from_json(const nlohmann::json& j);

// Seven absolute setpoints, one per environment variable.
using ActionVector = EnvVector;

struct SimConfig {
  TrainedGrowthModel model;
  EnvStats stats;
  GrowthParams init{1.0, 0.2, 20.0};  // cc_max and t0 stay fixed; k evolves
  int horizon_days = 35;
  double start_cc = 0.03;
  double terminal_cc = 0.95;
  RewardConfig reward_cfg{0.0, 100.0};  // k_target <= 0 means "use norm.k_max"
  std::uint64_t seed = 0;

  double resolved_k_target() const {
    return reward_cfg.k_target > 0.0 ? reward_cfg.k_target : model.norm.k_max;
  }
  void validate() const;  // throws ConfigError
};

struct SimState {
  int day = 0;     // completed steps
  double t = 0.0;  // continuous curve day
  double cc = 0.0;
  double k = 0.0;
  EnvVector last_env;
  double cumulative_reward = 0.0;
  bool done = false;
  std::vector<EnvVector> env_history;  // realized env per day, [0] = ambient at reset
};

// Independent normal draw per variable, clamped to the observed range.
EnvVector sample_env(const EnvStats& stats, Rng& rng);

// Predicted growth-rate change damped by the training-data ratio
// delta_k_max / k_max.
double normalize_delta_k(double dk_hat, const NormConstants& norm);

SimState sim_reset(const SimConfig& cfg, Rng& rng);

struct StepOutcome {
  double reward = 0.0;
  bool done = false;
  double k_hat = 0.0;    // model's next-day growth rate
  double dk_norm = 0.0;  // normalized change actually applied
  EnvVector realized;    // action after range clamping
};

// One simulated day: realize the action, query the model, damp the growth-rate
// change, advance the curve (cover never shrinks), emit the reward. Throws
// ContractError on a finished episode and StrategyError on non-finite actions.
StepOutcome sim_step(SimState& state, const ActionVector& action, const SimConfig& cfg);

using Strategy = std::function<ActionVector(const SimState&, Rng&)>;

struct StepRecord {
  int day = 0;
  double t = 0.0, cc = 0.0, k = 0.0;
  ActionVector action;
  EnvVector env;
  double k_hat = 0.0, dk_norm = 0.0, reward = 0.0;
  bool done = false;
};

struct EpisodeTrace {
  std::vector<StepRecord> steps;
  double total_reward = 0.0;
};

EpisodeTrace run_episode(const SimConfig& cfg, const Strategy& strategy,
                         std::uint64_t episode_seed);

// One JSON object per step:
// {day,t,cc,k,action:{...},env:{...},k_hat,dk_norm,reward,done}
void write_trace_jsonl(std::ostream& out, const EpisodeTrace& trace);

}  // namespace growthsim
