#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "parley/advantage.hpp"
#include "parley/core.hpp"
#include "parley/env.hpp"
#include "parley/policy.hpp"

namespace parley {

// Produces one participant's utterance for the current turn. Implementations:
// the learned policy (per-role parameter dispatch) and scripted demo bots.
class PolicyDispatch {
 public:
  virtual ~PolicyDispatch() = default;
  virtual SampledUtterance sample(int role_id, const TokenSequence& context, const RoleSpec& role,
                                  const ConversationState& state, RngStream& rng) const = 0;
};

// Every role sampled from the same parameters: the self-play configuration.
class SharedPolicyDispatch : public PolicyDispatch {
 public:
  SharedPolicyDispatch(const PolicyParameters& params, const Environment& env,
                       SamplingConfig sampling, int max_utterance_tokens);
  SampledUtterance sample(int role_id, const TokenSequence& context, const RoleSpec& role,
                          const ConversationState& state, RngStream& rng) const override;

 private:
  const PolicyParameters* params_;
  Featurizer featurizer_;
  SamplingConfig sampling_;
  int max_tokens_;
  TokenId end_token_;
};

// Arena configuration: a (possibly different) parameter set per role.
class PerRolePolicyDispatch : public PolicyDispatch {
 public:
  PerRolePolicyDispatch(std::vector<const PolicyParameters*> by_role, const Environment& env,
                        SamplingConfig sampling, int max_utterance_tokens);
  SampledUtterance sample(int role_id, const TokenSequence& context, const RoleSpec& role,
                          const ConversationState& state, RngStream& rng) const override;

 private:
  std::vector<const PolicyParameters*> by_role_;
  std::vector<Featurizer> featurizers_;
  SamplingConfig sampling_;
  int max_tokens_;
  TokenId end_token_;
};

struct RolloutOptions {
  SamplingConfig sampling;
  int max_utterance_tokens = 32;
  QualityFilterConfig filter;
  TurnEvaluator* evaluator = nullptr;
  bool evaluator_fail_open = true;
};

struct EpisodeResult {
  std::int64_t episode_id = 0;
  std::uint64_t seed = 0;
  std::string env_id;
  std::vector<RoleSpec> roles;
  ConversationState final_state;
  std::vector<TrajectoryRecord> trajectories;  // indexed by role_id
  EpisodeOutcome outcome;
  double entropy_sum = 0.0;
  std::int64_t token_count = 0;
  double temperature = 1.0;
  bool aborted = false;
  std::string abort_reason;
};

// One full episode: every active role speaks each turn from the shared
// context, utterances are appended simultaneously, the environment resolves
// the turn, and the end-of-episode rewards land on each trajectory.
// Sampling streams are derived per (seed, role, turn), so per-role generation
// order cannot affect the outcome.
EpisodeResult run_episode(const PolicyDispatch& dispatch, const Environment& env,
                          std::uint64_t seed, const RolloutOptions& options,
                          std::int64_t episode_id = 0);

// Context a role saw at a given turn, reconstructed from the finished episode.
// Bit-identical to what the rollout built live.
TokenSequence rebuild_context(const Environment& env, const EpisodeResult& episode, int role_id,
                              int turn_index);

struct TrainingBatch {
  struct Item {
    const EpisodeResult* episode;
    int trajectory_index;
  };
  std::vector<Item> items;

  std::int64_t total_tokens() const;
};

// Every participant trajectory from every (non-aborted) episode, no
// subsampling: the batch is exactly the set of active-participant samples.
TrainingBatch assemble_minibatch(const std::vector<EpisodeResult>& episodes);

// Deterministic episode collection, optionally spread over worker threads.
// Results are ordered by episode index regardless of worker count.
std::vector<EpisodeResult> collect_episodes(const PolicyDispatch& dispatch,
                                            const Environment& env,
                                            const std::vector<std::uint64_t>& seeds,
                                            const RolloutOptions& options, int workers,
                                            std::int64_t first_episode_id = 0);

}  // namespace parley
