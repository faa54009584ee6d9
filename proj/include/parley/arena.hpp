#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "parley/env.hpp"
#include "parley/policy.hpp"
#include "parley/rollout.hpp"

namespace parley {

// Head-to-head evaluation: two parameter sets are dispatched to roles inside
// shared episodes. With side_swap the role assignment alternates each episode
// to cancel role asymmetry.
struct ArenaSpec {
  int n_episodes = 100;
  std::uint64_t seed = 0;
  bool side_swap = true;
  SamplingConfig sampling;
  // role -> policy index (0 = A, 1 = B); empty means alternate by role id.
  std::vector<int> base_assignment;
};

struct ArenaEpisodeSummary {
  int index = 0;
  std::uint64_t seed = 0;
  std::vector<int> assignment;          // role -> policy index
  double mean_reward[2] = {0.0, 0.0};   // per policy, averaged over its seats
  double win_score[2] = {0.0, 0.0};     // 1 win, 0.5 tie, 0 loss
  std::optional<std::string> winner_team;
  EndCondition end_condition = EndCondition::turn_limit;
  bool aborted = false;
};

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v) const { return lo <= v && v <= hi; }
};

struct ArenaReport {
  int n_episodes = 0;
  double mean_reward[2] = {0.0, 0.0};
  double win_rate_a = 0.5;              // ties count half
  ConfidenceInterval win_rate_a_ci;     // 95% Wilson
  std::map<std::string, int> team_wins;
  std::map<int, int> reward_histogram[2];  // reward bucketed to tenths
  std::vector<ArenaEpisodeSummary> episodes;
};

ArenaReport run_arena(const Environment& env, const PolicyParameters& policy_a,
                      const PolicyParameters& policy_b, const ArenaSpec& spec,
                      const RolloutOptions& options, int workers = 1);

// 95% Wilson score interval for a binomial proportion.
ConfidenceInterval wilson_interval(double successes, int trials, double z = 1.959963984540054);

// Two-sided percentile bootstrap CI for the mean of `values`.
ConfidenceInterval bootstrap_mean_ci(const std::vector<double>& values, int n_resamples,
                                     double alpha, std::uint64_t seed);

// Rule-detectable behavior events in werewolf episodes.
struct BehaviorEvent {
  std::string category;
  int role_id = 0;
  int turn_index = 0;
  int target = -1;
};

std::vector<BehaviorEvent> behavior_hook(const EpisodeResult& episode, const Environment& env);

// Per-category counts of players exhibiting the behavior, split by whether
// they survived to the end of the game.
struct BehaviorCohorts {
  struct Split {
    int surviving_with = 0;
    int surviving_total = 0;
    int eliminated_with = 0;
    int eliminated_total = 0;
  };
  std::map<std::string, Split> by_category;
};

BehaviorCohorts aggregate_behavior(const std::vector<EpisodeResult>& episodes,
                                   const Environment& env);

std::string render_arena_summary(const ArenaReport& report);
std::string arena_csv(const ArenaReport& report);

}  // namespace parley
