#include "parley/arena.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "parley/serialize.hpp"

namespace parley {

namespace {

ArenaEpisodeSummary summarize(const EpisodeResult& episode, const std::vector<int>& assignment,
                              int index) {
  ArenaEpisodeSummary s;
  s.index = index;
  s.seed = episode.seed;
  s.assignment = assignment;
  s.winner_team = episode.outcome.winner_team;
  s.end_condition = episode.outcome.end_condition;
  s.aborted = episode.aborted;
  if (episode.aborted) return s;

  double sum[2] = {0.0, 0.0};
  int seats[2] = {0, 0};
  for (const auto& [role, reward] : episode.outcome.per_role_rewards) {
    const int p = assignment[static_cast<std::size_t>(role)];
    sum[p] += reward;
    ++seats[p];
  }
  for (int p = 0; p < 2; ++p) {
    s.mean_reward[p] = seats[p] > 0 ? sum[p] / seats[p] : 0.0;
  }
  if (seats[0] > 0 && seats[1] > 0) {
    if (s.mean_reward[0] > s.mean_reward[1]) {
      s.win_score[0] = 1.0;
    } else if (s.mean_reward[1] > s.mean_reward[0]) {
      s.win_score[1] = 1.0;
    } else {
      s.win_score[0] = s.win_score[1] = 0.5;
    }
  }
  return s;
}

}  // namespace

ArenaReport run_arena(const Environment& env, const PolicyParameters& policy_a,
                      const PolicyParameters& policy_b, const ArenaSpec& spec,
                      const RolloutOptions& options, int workers) {
  if (spec.n_episodes < 1) throw std::invalid_argument("run_arena: n_episodes must be >= 1");
  std::vector<int> base = spec.base_assignment;
  if (base.empty()) {
    for (int r = 0; r < env.n_roles(); ++r) base.push_back(r % 2);
  }
  if (static_cast<int>(base.size()) != env.n_roles()) {
    throw std::invalid_argument("run_arena: assignment size must equal role count");
  }
  for (int p : base) {
    if (p != 0 && p != 1) throw std::invalid_argument("run_arena: assignment entries must be 0/1");
  }
  std::vector<int> swapped = base;
  for (int& p : swapped) p = 1 - p;

  RolloutOptions episode_options = options;
  episode_options.sampling = spec.sampling;

  const PolicyParameters* pols[2] = {&policy_a, &policy_b};
  auto make_dispatch = [&](const std::vector<int>& assignment) {
    std::vector<const PolicyParameters*> by_role;
    by_role.reserve(assignment.size());
    for (int p : assignment) by_role.push_back(pols[p]);
    return PerRolePolicyDispatch(std::move(by_role), env, episode_options.sampling,
                                 episode_options.max_utterance_tokens);
  };
  const PerRolePolicyDispatch dispatch_base = make_dispatch(base);
  const PerRolePolicyDispatch dispatch_swapped = make_dispatch(swapped);

  std::vector<EpisodeResult> episodes(static_cast<std::size_t>(spec.n_episodes));
  auto run_one = [&](int i) {
    const bool swap = spec.side_swap && (i % 2 == 1);
    const std::uint64_t seed =
        derive_stream(spec.seed, "arena", {static_cast<std::uint64_t>(i)});
    episodes[static_cast<std::size_t>(i)] = run_episode(
        swap ? dispatch_swapped : dispatch_base, env, seed, episode_options, i);
  };
  if (workers <= 1) {
    for (int i = 0; i < spec.n_episodes; ++i) run_one(i);
  } else {
    std::atomic<int> next{0};
    auto worker = [&]() {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= spec.n_episodes) return;
        run_one(i);
      }
    };
    std::vector<std::thread> pool;
    for (int i = 0; i < std::min(workers, spec.n_episodes); ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  ArenaReport report;
  report.n_episodes = spec.n_episodes;
  double reward_sum[2] = {0.0, 0.0};
  double win_sum = 0.0;
  int scored = 0;
  for (int i = 0; i < spec.n_episodes; ++i) {
    const bool swap = spec.side_swap && (i % 2 == 1);
    ArenaEpisodeSummary s = summarize(episodes[static_cast<std::size_t>(i)],
                                      swap ? swapped : base, i);
    if (!s.aborted) {
      for (int p = 0; p < 2; ++p) {
        reward_sum[p] += s.mean_reward[p];
        const int bucket = static_cast<int>(std::lround(s.mean_reward[p] * 10.0));
        report.reward_histogram[p][bucket] += 1;
      }
      win_sum += s.win_score[0];
      ++scored;
      if (s.winner_team) report.team_wins[*s.winner_team] += 1;
    }
    report.episodes.push_back(std::move(s));
  }
  if (scored > 0) {
    for (int p = 0; p < 2; ++p) report.mean_reward[p] = reward_sum[p] / scored;
    report.win_rate_a = win_sum / scored;
    report.win_rate_a_ci = wilson_interval(win_sum, scored);
  }
  return report;
}

ConfidenceInterval wilson_interval(double successes, int trials, double z) {
  ConfidenceInterval ci;
  if (trials <= 0) {
    ci.lo = 0.0;
    ci.hi = 1.0;
    return ci;
  }
  const double n = static_cast<double>(trials);
  const double p = successes / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  ci.lo = std::max(0.0, center - half);
  ci.hi = std::min(1.0, center + half);
  return ci;
}

ConfidenceInterval bootstrap_mean_ci(const std::vector<double>& values, int n_resamples,
                                     double alpha, std::uint64_t seed) {
  if (values.empty()) throw std::invalid_argument("bootstrap_mean_ci: empty sample");
  RngStream rng(derive_stream(seed, "bootstrap"));
  std::vector<double> means;
  means.reserve(static_cast<std::size_t>(n_resamples));
  const int n = static_cast<int>(values.size());
  for (int b = 0; b < n_resamples; ++b) {
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += values[static_cast<std::size_t>(rng.next_int(n))];
    means.push_back(sum / n);
  }
  std::sort(means.begin(), means.end());
  auto quantile = [&](double q) {
    const double idx = q * (static_cast<double>(means.size()) - 1.0);
    const std::size_t lo = static_cast<std::size_t>(idx);
    const std::size_t hi = std::min(means.size() - 1, lo + 1);
    const double frac = idx - static_cast<double>(lo);
    return means[lo] * (1.0 - frac) + means[hi] * frac;
  };
  ConfidenceInterval ci;
  ci.lo = quantile(alpha / 2.0);
  ci.hi = quantile(1.0 - alpha / 2.0);
  return ci;
}

std::vector<BehaviorEvent> behavior_hook(const EpisodeResult& episode, const Environment& env) {
  std::vector<BehaviorEvent> events;
  const auto* wolf_env = dynamic_cast<const WerewolfEnv*>(&env);
  if (!wolf_env || episode.aborted) return events;
  const WerewolfPayload& payload = werewolf_payload(episode.final_state);
  const int n = static_cast<int>(payload.roles.size());

  auto is_wolf = [&](int s) {
    return s >= 0 && s < n && payload.roles[static_cast<std::size_t>(s)] == WerewolfRole::werewolf;
  };
  int seer_seat = -1;
  for (int s = 0; s < n; ++s) {
    if (payload.roles[static_cast<std::size_t>(s)] == WerewolfRole::seer) seer_seat = s;
  }

  // Living-player targets the true seer publicly reported as wolves, in turn
  // order, so votes can be matched against earlier tips.
  std::vector<std::pair<int, int>> seer_reports;  // (turn, target)
  for (const Utterance& u : episode.final_state.history) {
    if (u.system || u.role_id != seer_seat) continue;
    for (TokenId tok : u.tokens) {
      if (auto target = wolf_env->report_wolf_target(tok)) {
        seer_reports.emplace_back(u.turn_index, *target);
      }
    }
  }

  for (const Utterance& u : episode.final_state.history) {
    if (u.system) continue;
    const int author = u.role_id;
    for (TokenId tok : u.tokens) {
      if (tok == wolf_env->claim_seer_token() && is_wolf(author)) {
        events.push_back({"identity_concealment", author, u.turn_index, -1});
      }
      if ((wolf_env->report_wolf_target(tok) || wolf_env->report_good_target(tok)) &&
          is_wolf(author)) {
        events.push_back({"identity_concealment", author, u.turn_index, -1});
      }
      if (auto target = wolf_env->vote_target(tok)) {
        const bool same_team = is_wolf(author) == is_wolf(*target);
        events.push_back({same_team ? "vote_against_teammate" : "vote_against_opponent", author,
                          u.turn_index, *target});
        if (is_wolf(author) && !is_wolf(*target)) {
          events.push_back({"voting_manipulation", author, u.turn_index, *target});
        }
        if (!is_wolf(author) && author != seer_seat) {
          for (const auto& [turn, reported] : seer_reports) {
            if (turn < u.turn_index && reported == *target && is_wolf(*target)) {
              events.push_back({"deception_recognition", author, u.turn_index, *target});
              break;
            }
          }
        }
      }
      if (auto target = wolf_env->defend_target(tok)) {
        if (!is_wolf(author) && *target == seer_seat && author != seer_seat) {
          events.push_back({"protecting_power_roles", author, u.turn_index, *target});
        }
        if (is_wolf(author) && is_wolf(*target)) {
          events.push_back({"intra_team_collaboration", author, u.turn_index, *target});
        }
      }
    }
  }
  return events;
}

BehaviorCohorts aggregate_behavior(const std::vector<EpisodeResult>& episodes,
                                   const Environment& env) {
  BehaviorCohorts cohorts;
  static const char* kWolfCategories[] = {"identity_concealment", "voting_manipulation",
                                          "intra_team_collaboration"};
  static const char* kVillagerCategories[] = {"protecting_power_roles", "deception_recognition"};

  for (const EpisodeResult& episode : episodes) {
    if (episode.aborted) continue;
    const auto* wolf_env = dynamic_cast<const WerewolfEnv*>(&env);
    if (!wolf_env) continue;
    const WerewolfPayload& payload = werewolf_payload(episode.final_state);
    const std::vector<BehaviorEvent> events = behavior_hook(episode, env);
    const int n = static_cast<int>(payload.roles.size());
    for (int s = 0; s < n; ++s) {
      const bool wolf = payload.roles[static_cast<std::size_t>(s)] == WerewolfRole::werewolf;
      const bool eliminated = payload.eliminated_turn[static_cast<std::size_t>(s)] >= 0;
      auto tally = [&](const char* category) {
        bool with = false;
        for (const BehaviorEvent& e : events) {
          if (e.role_id == s && e.category == category) with = true;
        }
        BehaviorCohorts::Split& split = cohorts.by_category[category];
        if (eliminated) {
          ++split.eliminated_total;
          if (with) ++split.eliminated_with;
        } else {
          ++split.surviving_total;
          if (with) ++split.surviving_with;
        }
      };
      if (wolf) {
        for (const char* c : kWolfCategories) tally(c);
      } else {
        for (const char* c : kVillagerCategories) tally(c);
      }
    }
  }
  return cohorts;
}

std::string render_arena_summary(const ArenaReport& report) {
  std::ostringstream os;
  os << "episodes: " << report.n_episodes << "\n";
  os << "mean reward  A: " << format_double(report.mean_reward[0])
     << "  B: " << format_double(report.mean_reward[1]) << "\n";
  os << "win rate A (ties=0.5): " << format_double(report.win_rate_a) << "  95% CI ["
     << format_double(report.win_rate_a_ci.lo) << ", " << format_double(report.win_rate_a_ci.hi)
     << "]\n";
  for (const auto& [team, wins] : report.team_wins) {
    os << "team " << team << " wins: " << wins << "\n";
  }
  for (int p = 0; p < 2; ++p) {
    os << "reward histogram " << (p == 0 ? 'A' : 'B') << ":";
    for (const auto& [bucket, count] : report.reward_histogram[p]) {
      os << " " << (bucket / 10.0) << ":" << count;
    }
    os << "\n";
  }
  return os.str();
}

std::string arena_csv(const ArenaReport& report) {
  std::ostringstream os;
  os << "episode,seed,reward_a,reward_b,win_a,winner_team,end_condition,aborted\n";
  for (const ArenaEpisodeSummary& e : report.episodes) {
    os << e.index << ',' << e.seed << ',' << format_double(e.mean_reward[0]) << ','
       << format_double(e.mean_reward[1]) << ',' << format_double(e.win_score[0]) << ','
       << (e.winner_team ? *e.winner_team : "") << ',' << to_string(e.end_condition) << ','
       << (e.aborted ? 1 : 0) << '\n';
  }
  return os.str();
}

}  // namespace parley
