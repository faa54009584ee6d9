#include "parley/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <stdexcept>

#include "parley/config.hpp"
#include "parley/demo.hpp"
#include "parley/serialize.hpp"

namespace parley {

double ppo_surrogate(double old_log_prob, double new_log_prob, double advantage, double epsilon) {
  if (!std::isfinite(old_log_prob) || !std::isfinite(new_log_prob)) {
    throw std::invalid_argument("ppo_surrogate: non-finite log-probs");
  }
  const double ratio = std::exp(new_log_prob - old_log_prob);
  const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
  return std::min(ratio * advantage, clipped * advantage);
}

namespace {

struct BatchStats {
  double advantage_mean = 0.0;
  double advantage_std = 1.0;
  std::int64_t tokens = 0;
  std::int64_t turns = 0;
};

BatchStats batch_statistics(const TrainingBatch& batch, bool normalize) {
  BatchStats stats;
  double sum = 0.0, sum_sq = 0.0;
  for (const TrainingBatch::Item& item : batch.items) {
    const TrajectoryRecord& traj =
        item.episode->trajectories[static_cast<std::size_t>(item.trajectory_index)];
    if (traj.token_advantages.size() != traj.turns.size()) {
      throw std::invalid_argument("ppo_update: batch is not advantage-annotated");
    }
    stats.turns += static_cast<std::int64_t>(traj.turns.size());
    for (const auto& turn_advantages : traj.token_advantages) {
      for (double a : turn_advantages) {
        sum += a;
        sum_sq += a * a;
        ++stats.tokens;
      }
    }
  }
  if (stats.tokens == 0) throw std::invalid_argument("ppo_update: empty batch");
  if (normalize) {
    const double n = static_cast<double>(stats.tokens);
    stats.advantage_mean = sum / n;
    const double var = std::max(0.0, sum_sq / n - stats.advantage_mean * stats.advantage_mean);
    stats.advantage_std = std::sqrt(var) + 1e-8;
  }
  return stats;
}

}  // namespace

TrainingMetrics ppo_update(PolicyParameters& params, const TrainingBatch& batch,
                           const Environment& env, const TrainConfig& cfg) {
  const BatchStats stats = batch_statistics(batch, cfg.normalize_advantages);
  const Featurizer featurizer(params.featurizer, env.vocabulary().size());
  TrainingMetrics metrics;

  double reward_sum = 0.0;
  std::int64_t filter_passed = 0;
  for (const TrainingBatch::Item& item : batch.items) {
    const TrajectoryRecord& traj =
        item.episode->trajectories[static_cast<std::size_t>(item.trajectory_index)];
    reward_sum += traj.episode_reward;
    for (const TurnEntry& turn : traj.turns) filter_passed += turn.filter_passed ? 1 : 0;
  }
  metrics.mean_episode_reward = reward_sum / static_cast<double>(batch.items.size());
  metrics.filter_pass_rate = static_cast<double>(filter_passed) / static_cast<double>(stats.turns);

  // Episodes contribute entropy once even when they hold several trajectories.
  double entropy_sum = 0.0;
  std::int64_t entropy_tokens = 0;
  std::vector<const EpisodeResult*> seen;
  for (const TrainingBatch::Item& item : batch.items) {
    if (std::find(seen.begin(), seen.end(), item.episode) != seen.end()) continue;
    seen.push_back(item.episode);
    entropy_sum += item.episode->entropy_sum;
    entropy_tokens += item.episode->token_count;
  }
  metrics.policy_entropy = entropy_tokens > 0 ? entropy_sum / static_cast<double>(entropy_tokens) : 0.0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Eigen::MatrixXd grad_w = Eigen::MatrixXd::Zero(params.feature_dim(), params.vocab_size());
    Eigen::VectorXd grad_v = Eigen::VectorXd::Zero(params.feature_dim());
    double surrogate_sum = 0.0;
    double value_loss_sum = 0.0;
    std::int64_t clipped_tokens = 0;

    for (const TrainingBatch::Item& item : batch.items) {
      const EpisodeResult& episode = *item.episode;
      const TrajectoryRecord& traj =
          episode.trajectories[static_cast<std::size_t>(item.trajectory_index)];
      const RoleSpec& role = episode.roles[static_cast<std::size_t>(traj.role_id)];
      const double temperature = episode.temperature;

      for (std::size_t ti = 0; ti < traj.turns.size(); ++ti) {
        const TurnEntry& turn = traj.turns[ti];
        TokenSequence context = rebuild_context(env, episode, traj.role_id, turn.turn_index);
        ContextFeatures feats;
        for (std::size_t l = 0; l < turn.tokens.size(); ++l) {
          feats = featurizer.features(context, role);
          const double advantage =
              (traj.token_advantages[ti][l] - stats.advantage_mean) / stats.advantage_std;
          const double old_lp = turn.token_log_probs[l];
          const LogProbGrad lp = log_prob_and_grad(params, feats, turn.tokens[l], temperature);
          const double ratio = std::exp(lp.log_prob - old_lp);
          const bool outside = ratio < 1.0 - cfg.clip_epsilon || ratio > 1.0 + cfg.clip_epsilon;
          if (outside) ++clipped_tokens;
          const double clipped_ratio = std::clamp(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
          surrogate_sum += std::min(ratio * advantage, clipped_ratio * advantage);
          // Gradient flows only while the unclipped branch is the active min.
          if (ratio * advantage <= clipped_ratio * advantage) {
            grad_w.noalias() += (advantage * ratio / static_cast<double>(stats.tokens)) *
                                lp.d_context_weights;
          }
          if (cfg.entropy_bonus_coeff > 0.0) {
            const Eigen::VectorXd probs = token_distribution(params, feats, temperature);
            const double h = distribution_entropy(probs);
            Eigen::VectorXd coeffs(probs.size());
            for (int k = 0; k < probs.size(); ++k) {
              const double logp = probs[k] > 0.0 ? std::log(probs[k]) : 0.0;
              coeffs[k] = -probs[k] * (logp + h);
            }
            grad_w.noalias() += (cfg.entropy_bonus_coeff / (temperature * static_cast<double>(stats.tokens))) *
                                feats.values * coeffs.transpose();
          }
          context.push_back(turn.tokens[l]);
        }
        // Value head regression: last-token value toward the turn target.
        const double value = policy_value(params, feats);
        const double target = traj.turn_value_targets[ti];
        const double err = value - target;
        value_loss_sum += err * err;
        grad_v.noalias() -= (cfg.value_loss_coeff * 2.0 * err / static_cast<double>(stats.turns)) *
                            feats.values;
      }
    }

    const double loss = surrogate_sum / static_cast<double>(stats.tokens) -
                        cfg.value_loss_coeff * value_loss_sum / static_cast<double>(stats.turns);
    if (!std::isfinite(loss) || !grad_w.allFinite() || !grad_v.allFinite()) {
      throw std::runtime_error("ppo_update: non-finite loss or gradient; step aborted");
    }
    if (epoch == cfg.epochs - 1) {
      metrics.clip_fraction = static_cast<double>(clipped_tokens) / static_cast<double>(stats.tokens);
      metrics.value_loss = value_loss_sum / static_cast<double>(stats.turns);
    }
    params.context_weights.noalias() += cfg.learning_rate * grad_w;
    params.value_weights.noalias() += cfg.learning_rate * grad_v;
  }
  return metrics;
}

double imitation_update(PolicyParameters& params, const TrainingBatch& demos,
                        const Environment& env, const TrainConfig& cfg) {
  if (demos.items.empty()) throw std::invalid_argument("imitation_update: empty demonstrations");
  const Featurizer featurizer(params.featurizer, env.vocabulary().size());
  const std::int64_t n_tokens = demos.total_tokens();
  if (n_tokens == 0) throw std::invalid_argument("imitation_update: no demonstration tokens");

  Eigen::MatrixXd grad_w = Eigen::MatrixXd::Zero(params.feature_dim(), params.vocab_size());
  double log_prob_sum = 0.0;
  for (const TrainingBatch::Item& item : demos.items) {
    const EpisodeResult& episode = *item.episode;
    const TrajectoryRecord& traj =
        episode.trajectories[static_cast<std::size_t>(item.trajectory_index)];
    const RoleSpec& role = episode.roles[static_cast<std::size_t>(traj.role_id)];
    for (const TurnEntry& turn : traj.turns) {
      TokenSequence context = rebuild_context(env, episode, traj.role_id, turn.turn_index);
      for (TokenId token : turn.tokens) {
        const ContextFeatures feats = featurizer.features(context, role);
        log_prob_sum += accumulate_log_prob_grad(params, feats, token, 1.0,
                                                 1.0 / static_cast<double>(n_tokens), grad_w);
        context.push_back(token);
      }
    }
  }
  if (!grad_w.allFinite()) throw std::runtime_error("imitation_update: non-finite gradient");
  params.context_weights.noalias() += cfg.imitation_learning_rate * grad_w;
  return -log_prob_sum / static_cast<double>(n_tokens);
}

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::none: return "none";
    case StopReason::entropy_rise: return "entropy_rise";
    case StopReason::filter_collapse: return "filter_collapse";
  }
  throw std::logic_error("bad StopReason");
}

StopReason check_early_stop(const std::vector<TrainingMetrics>& history,
                            const EarlyStopConfig& cfg) {
  if (history.empty()) return StopReason::none;
  if (history.back().filter_pass_rate < cfg.filter_fail_threshold) {
    return StopReason::filter_collapse;
  }
  int rises = 0;
  for (std::size_t i = history.size(); i-- > 1;) {
    if (history[i].policy_entropy > history[i - 1].policy_entropy) {
      ++rises;
      if (rises >= cfg.entropy_rise_patience) return StopReason::entropy_rise;
    } else {
      break;
    }
  }
  return StopReason::none;
}

double batch_win_rate(const Environment& env, const std::vector<EpisodeResult>& episodes) {
  int hits = 0, counted = 0;
  for (const EpisodeResult& e : episodes) {
    if (e.aborted) continue;
    ++counted;
    if (env.env_id() == "werewolf") {
      hits += (e.outcome.winner_team && *e.outcome.winner_team == kWerewolfTeam) ? 1 : 0;
    } else {
      hits += e.outcome.end_condition == EndCondition::consensus ? 1 : 0;
    }
  }
  return counted > 0 ? static_cast<double>(hits) / counted : 0.0;
}

TrainResult train_loop(const Environment& env, const FullConfig& config, std::uint64_t seed,
                       const TrainOutputs* outputs, const PolicyParameters* resume_params,
                       int start_step) {
  const TrainConfig& tc = config.train;
  TrainResult result;
  result.params = resume_params ? *resume_params
                                : PolicyParameters::zero_init(env.vocabulary().size(),
                                                              config.featurizer);

  RolloutOptions options = rollout_options(config);
  std::unique_ptr<LineProtocolEvaluator> evaluator;
  if (!config.external_evaluator.command.empty()) {
    evaluator = std::make_unique<LineProtocolEvaluator>(config.external_evaluator.command,
                                                        config.external_evaluator.timeout_ms);
    options.evaluator = evaluator.get();
    options.evaluator_fail_open = config.external_evaluator.fail_open;
  }

  std::ofstream metrics_out;
  std::ofstream trajectories_out;
  if (outputs) {
    std::filesystem::create_directories(outputs->out_dir);
    metrics_out.open(outputs->out_dir + "/metrics.csv");
    metrics_out << metrics_csv_header() << '\n';
    if (tc.log_trajectories) {
      trajectories_out.open(outputs->out_dir + "/trajectories.jsonl");
    }
  }
  auto checkpoint = [&](int step) {
    if (!outputs) return;
    save_checkpoint(outputs->out_dir + "/checkpoint_" + std::to_string(step) + ".json",
                    result.params, step);
  };

  // Imitation warm start from a fixed demonstration pool, cycled in
  // episodes_per_batch chunks.
  if (tc.warm_start_steps > 0 && start_step == 0) {
    RolloutOptions demo_options = options;
    demo_options.evaluator = nullptr;
    const std::vector<EpisodeResult> pool = generate_demonstrations(
        env, tc.demo_pool_episodes, derive_stream(seed, "demo-pool"), demo_options);
    for (int s = 0; s < tc.warm_start_steps; ++s) {
      std::vector<EpisodeResult> chunk;
      for (int i = 0; i < tc.episodes_per_batch; ++i) {
        chunk.push_back(pool[static_cast<std::size_t>((s * tc.episodes_per_batch + i) %
                                                      static_cast<int>(pool.size()))]);
      }
      imitation_update(result.params, assemble_minibatch(chunk), env, tc);
    }
  }

  for (int step = start_step; step < tc.steps; ++step) {
    SharedPolicyDispatch dispatch(result.params, env, options.sampling,
                                  options.max_utterance_tokens);
    std::vector<std::uint64_t> seeds;
    seeds.reserve(static_cast<std::size_t>(tc.episodes_per_batch));
    for (int i = 0; i < tc.episodes_per_batch; ++i) {
      seeds.push_back(derive_stream(seed, "rollout",
                                    {static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(i)}));
    }
    std::vector<EpisodeResult> episodes =
        collect_episodes(dispatch, env, seeds, options, config.io.workers,
                         static_cast<std::int64_t>(step) * tc.episodes_per_batch);

    for (EpisodeResult& episode : episodes) {
      if (episode.aborted) continue;
      for (TrajectoryRecord& traj : episode.trajectories) {
        if (!traj.turns.empty()) annotate_trajectory(traj, config.advantage);
      }
    }

    TrainingBatch batch = assemble_minibatch(episodes);
    TrainingMetrics metrics = ppo_update(result.params, batch, env, tc);
    metrics.step = step;
    metrics.win_rate = batch_win_rate(env, episodes);

    if (outputs && tc.log_trajectories) {
      std::vector<EpisodeRecord> records;
      records.reserve(episodes.size());
      for (const EpisodeResult& e : episodes) records.push_back(to_record(e, env.vocabulary()));
      append_episodes_jsonl(trajectories_out, records);
    }

    if (tc.entropy_log_interval > 0 && step % tc.entropy_log_interval == 0) {
      result.history.push_back(metrics);
      if (metrics_out.is_open()) metrics_out << metrics_csv_row(metrics) << '\n';
      const StopReason stop = check_early_stop(result.history, tc.early_stop);
      if (stop != StopReason::none) {
        result.stop_reason = stop;
        result.steps_run = step + 1;
        checkpoint(step + 1);
        return result;
      }
    }
    if (tc.checkpoint_interval > 0 && (step + 1) % tc.checkpoint_interval == 0) {
      checkpoint(step + 1);
    }
    result.steps_run = step + 1;
  }
  checkpoint(tc.steps);
  return result;
}

}  // namespace parley
