#include "parley/rollout.hpp"

#include <algorithm>
#include <atomic>
#include <stdexcept>
#include <thread>

namespace parley {

SharedPolicyDispatch::SharedPolicyDispatch(const PolicyParameters& params, const Environment& env,
                                           SamplingConfig sampling, int max_utterance_tokens)
    : params_(&params),
      featurizer_(params.featurizer, env.vocabulary().size()),
      sampling_(sampling),
      max_tokens_(max_utterance_tokens),
      end_token_(env.vocabulary().end_utterance()) {
  if (params.vocab_size() != env.vocabulary().size()) {
    throw std::invalid_argument("policy vocabulary size does not match environment");
  }
}

SampledUtterance SharedPolicyDispatch::sample(int, const TokenSequence& context,
                                              const RoleSpec& role, const ConversationState&,
                                              RngStream& rng) const {
  return sample_utterance(*params_, featurizer_, context, role, sampling_, max_tokens_,
                          end_token_, rng);
}

PerRolePolicyDispatch::PerRolePolicyDispatch(std::vector<const PolicyParameters*> by_role,
                                             const Environment& env, SamplingConfig sampling,
                                             int max_utterance_tokens)
    : by_role_(std::move(by_role)),
      sampling_(sampling),
      max_tokens_(max_utterance_tokens),
      end_token_(env.vocabulary().end_utterance()) {
  if (static_cast<int>(by_role_.size()) != env.n_roles()) {
    throw std::invalid_argument("PerRolePolicyDispatch: one parameter set per role required");
  }
  for (const PolicyParameters* p : by_role_) {
    if (!p || p->vocab_size() != env.vocabulary().size()) {
      throw std::invalid_argument("PerRolePolicyDispatch: bad parameters");
    }
    featurizers_.emplace_back(p->featurizer, env.vocabulary().size());
  }
}

SampledUtterance PerRolePolicyDispatch::sample(int role_id, const TokenSequence& context,
                                               const RoleSpec& role, const ConversationState&,
                                               RngStream& rng) const {
  return sample_utterance(*by_role_[static_cast<std::size_t>(role_id)],
                          featurizers_[static_cast<std::size_t>(role_id)], context, role,
                          sampling_, max_tokens_, end_token_, rng);
}

EpisodeResult run_episode(const PolicyDispatch& dispatch, const Environment& env,
                          std::uint64_t seed, const RolloutOptions& options,
                          std::int64_t episode_id) {
  EpisodeResult result;
  result.episode_id = episode_id;
  result.seed = seed;
  result.env_id = env.env_id();
  result.temperature = options.sampling.temperature;

  RngStream reset_rng(derive_stream(seed, "reset"));
  EpisodeSetup setup = env.reset(reset_rng);
  if (static_cast<int>(setup.roles.size()) != env.n_roles()) {
    throw std::logic_error("environment reset produced wrong role count");
  }
  result.roles = setup.roles;
  ConversationState state = std::move(setup.initial_state);

  result.trajectories.resize(setup.roles.size());
  for (std::size_t r = 0; r < setup.roles.size(); ++r) {
    result.trajectories[r].role_id = static_cast<int>(r);
  }

  const VisibilityFilter visible = env.visibility_filter();
  const Vocabulary& vocab = env.vocabulary();

  while (state.n_active() > 0 && state.turn_index < env.max_total_turns()) {
    const int t = state.turn_index;
    std::vector<Utterance> utterances;
    std::vector<std::pair<int, SampledUtterance>> sampled;
    for (int r = 0; r < state.n_roles(); ++r) {
      if (!state.is_active(r)) continue;
      const RoleSpec& role = result.roles[static_cast<std::size_t>(r)];
      TokenSequence context =
          build_context(state, role, env.initial_prompt(), visible, env.speaker_tags());
      RngStream rng(derive_stream(seed, "utterance",
                                  {static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(t)}));
      SampledUtterance s = dispatch.sample(r, context, role, state, rng);
      Utterance u;
      u.role_id = r;
      u.turn_index = t;
      u.tokens = s.tokens;
      u.truncated = s.truncated;

      TurnEntry entry;
      entry.turn_index = t;
      entry.tokens = s.tokens;
      entry.token_log_probs = s.log_probs;
      entry.token_values = s.values;
      entry.last_token_value = s.last_token_value;
      entry.truncated = s.truncated;
      FilterVerdict verdict = quality_filter(u, state, env, options.filter);
      if (options.evaluator) {
        EvaluatorRequest request;
        request.episode_id = episode_id;
        request.role_id = r;
        request.turn_index = t;
        request.utterance_text = render_tokens(vocab, u.tokens);
        request.context_text = render_tokens(vocab, context);
        verdict = resolve_filter_verdict(verdict, options.evaluator, request,
                                         options.evaluator_fail_open);
      }
      entry.filter_passed = verdict.passed;
      entry.filter_reasons = verdict.reasons;

      result.entropy_sum += s.entropy_sum;
      result.token_count += static_cast<std::int64_t>(s.tokens.size());
      result.trajectories[static_cast<std::size_t>(r)].turns.push_back(std::move(entry));
      utterances.push_back(std::move(u));
      sampled.emplace_back(r, std::move(s));
    }

    ConversationState appended = append_turn(state, std::move(utterances));
    std::vector<Utterance> turn_view(appended.history.end() - static_cast<long>(sampled.size()),
                                     appended.history.end());
    StepResult stepped;
    try {
      stepped = env.step(appended, turn_view);
    } catch (const std::exception& e) {
      result.aborted = true;
      result.abort_reason = e.what();
      result.final_state = std::move(appended);
      return result;
    }
    state = std::move(stepped.state);
    if (stepped.terminal) break;
  }

  result.outcome = env.outcome(state);
  for (auto& trajectory : result.trajectories) {
    auto it = result.outcome.per_role_rewards.find(trajectory.role_id);
    if (it == result.outcome.per_role_rewards.end()) {
      throw std::logic_error("outcome missing reward for role " +
                             std::to_string(trajectory.role_id));
    }
    trajectory.episode_reward = it->second;
  }
  result.final_state = std::move(state);
  return result;
}

TokenSequence rebuild_context(const Environment& env, const EpisodeResult& episode, int role_id,
                              int turn_index) {
  ConversationState view;
  view.turn_index = turn_index;
  view.active = episode.final_state.active;
  view.env_state = episode.final_state.env_state;
  for (const Utterance& u : episode.final_state.history) {
    if (u.turn_index < turn_index) view.history.push_back(u);
  }
  return build_context(view, episode.roles[static_cast<std::size_t>(role_id)],
                       env.initial_prompt(), env.visibility_filter(), env.speaker_tags());
}

std::int64_t TrainingBatch::total_tokens() const {
  std::int64_t n = 0;
  for (const Item& item : items) {
    const TrajectoryRecord& t =
        item.episode->trajectories[static_cast<std::size_t>(item.trajectory_index)];
    for (const TurnEntry& turn : t.turns) n += static_cast<std::int64_t>(turn.tokens.size());
  }
  return n;
}

TrainingBatch assemble_minibatch(const std::vector<EpisodeResult>& episodes) {
  TrainingBatch batch;
  for (const EpisodeResult& episode : episodes) {
    if (episode.aborted) continue;
    for (std::size_t i = 0; i < episode.trajectories.size(); ++i) {
      if (episode.trajectories[i].turns.empty()) continue;
      batch.items.push_back({&episode, static_cast<int>(i)});
    }
  }
  if (batch.items.empty()) {
    throw std::invalid_argument("assemble_minibatch: no usable trajectories");
  }
  return batch;
}

std::vector<EpisodeResult> collect_episodes(const PolicyDispatch& dispatch,
                                            const Environment& env,
                                            const std::vector<std::uint64_t>& seeds,
                                            const RolloutOptions& options, int workers,
                                            std::int64_t first_episode_id) {
  std::vector<EpisodeResult> results(seeds.size());
  if (workers <= 1 || seeds.size() <= 1) {
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      results[i] = run_episode(dispatch, env, seeds[i], options,
                               first_episode_id + static_cast<std::int64_t>(i));
    }
    return results;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= seeds.size()) return;
      results[i] = run_episode(dispatch, env, seeds[i], options,
                               first_episode_id + static_cast<std::int64_t>(i));
    }
  };
  std::vector<std::thread> pool;
  const int n = std::min<int>(workers, static_cast<int>(seeds.size()));
  pool.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  return results;
}

}  // namespace parley
