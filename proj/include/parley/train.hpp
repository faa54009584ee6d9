#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "parley/advantage.hpp"
#include "parley/policy.hpp"
#include "parley/rollout.hpp"

namespace parley {

struct EarlyStopConfig {
  int entropy_rise_patience = 5;      // consecutive strict entropy increases
  double filter_fail_threshold = 0.2; // stop if pass rate drops below this

  bool operator==(const EarlyStopConfig&) const = default;
};

struct TrainConfig {
  double clip_epsilon = 0.2;
  double learning_rate = 1e-3;
  int epochs = 1;
  double value_loss_coeff = 0.5;
  double entropy_bonus_coeff = 0.0;  // monitored by default, not bonused
  int entropy_log_interval = 1;
  EarlyStopConfig early_stop;
  int steps = 500;
  int episodes_per_batch = 8;
  int warm_start_steps = 0;
  double imitation_learning_rate = 0.3;
  int demo_pool_episodes = 64;
  bool normalize_advantages = false;  // off: no cross-participant normalization
  int checkpoint_interval = 100;
  bool log_trajectories = true;

  bool operator==(const TrainConfig&) const = default;
};

struct TrainingMetrics {
  std::int64_t step = 0;
  double mean_episode_reward = 0.0;
  double policy_entropy = 0.0;
  double clip_fraction = 0.0;
  double value_loss = 0.0;
  double filter_pass_rate = 0.0;
  double win_rate = 0.0;  // werewolf-team wins, or negotiation agreement rate
};

// min(r * A, clip(r, 1-eps, 1+eps) * A) with r = exp(new - old).
double ppo_surrogate(double old_log_prob, double new_log_prob, double advantage, double epsilon);

// One clipped-objective ascent pass over the batch (cfg.epochs full-batch
// steps). The surrogate is averaged over tokens; the value head regresses
// last-token values onto the turn-level targets. Old log-probs come from
// rollout time, so the first epoch's ratios are exactly 1.
TrainingMetrics ppo_update(PolicyParameters& params, const TrainingBatch& batch,
                           const Environment& env, const TrainConfig& cfg);

// One cross-entropy ascent step on demonstration tokens. Returns the mean
// cross-entropy before the step.
double imitation_update(PolicyParameters& params, const TrainingBatch& demos,
                        const Environment& env, const TrainConfig& cfg);

enum class StopReason { none, entropy_rise, filter_collapse };
std::string to_string(StopReason r);

StopReason check_early_stop(const std::vector<TrainingMetrics>& history,
                            const EarlyStopConfig& cfg);

struct TrainOutputs {
  std::string out_dir;  // metrics.csv, checkpoints, trajectories.jsonl
};

struct TrainResult {
  PolicyParameters params;
  std::vector<TrainingMetrics> history;
  StopReason stop_reason = StopReason::none;
  int steps_run = 0;
};

struct FullConfig;  // config.hpp

// Full pipeline: optional imitation warm start from scripted demonstrations,
// then rollout -> quality filter -> hierarchical advantages -> PPO, with
// periodic checkpoints and early stopping. Deterministic for a fixed
// (config, seed) regardless of worker count.
TrainResult train_loop(const Environment& env, const FullConfig& config, std::uint64_t seed,
                       const TrainOutputs* outputs = nullptr,
                       const PolicyParameters* resume_params = nullptr, int start_step = 0);

// Environment-level success rate used in the metrics row: werewolf-team win
// fraction for werewolf, agreement fraction for negotiation.
double batch_win_rate(const Environment& env, const std::vector<EpisodeResult>& episodes);

}  // namespace parley
