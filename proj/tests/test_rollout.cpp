#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "parley/demo.hpp"
#include "parley/rollout.hpp"
#include "parley/serialize.hpp"

using namespace parley;

namespace {

// Replays a fixed per-(role, turn) action table; missing entries PASS/FILLER.
class FixedScriptDispatch : public PolicyDispatch {
 public:
  FixedScriptDispatch(std::map<std::pair<int, int>, TokenSequence> script, TokenId fallback,
                      TokenId end)
      : script_(std::move(script)), fallback_(fallback), end_(end) {}

  SampledUtterance sample(int role_id, const TokenSequence&, const RoleSpec&,
                          const ConversationState& state, RngStream&) const override {
    SampledUtterance s;
    auto it = script_.find({role_id, state.turn_index});
    s.tokens = it != script_.end() ? it->second : TokenSequence{fallback_};
    s.tokens.push_back(end_);
    s.log_probs.assign(s.tokens.size(), -0.5);
    s.values.assign(s.tokens.size(), 0.0);
    return s;
  }

 private:
  std::map<std::pair<int, int>, TokenSequence> script_;
  TokenId fallback_;
  TokenId end_;
};

RolloutOptions default_options(int max_tokens = 8) {
  RolloutOptions options;
  options.max_utterance_tokens = max_tokens;
  return options;
}

PolicyParameters seat_policy(const Environment& env, FeaturizerConfig fc,
                             const std::map<int, TokenId>& preferred) {
  // Strong weight from each seat's one-hot feature to its preferred token.
  PolicyParameters p = PolicyParameters::zero_init(env.vocabulary().size(), fc);
  for (const auto& [role, token] : preferred) p.context_weights(role, token) = 60.0;
  return p;
}

FeaturizerConfig small_featurizer() {
  FeaturizerConfig cfg;
  cfg.feature_dim = 96;
  cfg.embed_dim = 8;
  cfg.max_roles = 8;
  return cfg;
}

}  // namespace

TEST_CASE("a peaked offer/accept policy closes the deal in two turns") {
  NegotiationEnv env;
  // Role 0 always says OFFER_5, role 1 always says ACCEPT. The first-turn
  // ACCEPT is non-binding; the second binds role 0's standing offer.
  PolicyParameters p = seat_policy(env, small_featurizer(),
                                   {{0, env.offer_token(5)}, {1, env.accept_token()}});
  SharedPolicyDispatch dispatch(p, env, SamplingConfig{0.01, false}, 8);
  EpisodeResult episode = run_episode(dispatch, env, 12345, default_options());

  CHECK(!episode.aborted);
  CHECK(episode.outcome.end_condition == EndCondition::consensus);
  CHECK(episode.outcome.turns_played == 2);
  CHECK(episode.trajectories[0].episode_reward == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(episode.trajectories[1].episode_reward == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(episode.trajectories[0].turns.size() == 2);
}

TEST_CASE("a filler-only policy runs to the turn limit with zero rewards") {
  NegotiationEnv env;
  PolicyParameters p = seat_policy(env, small_featurizer(),
                                   {{0, env.filler_token(0)}, {1, env.filler_token(1)}});
  SharedPolicyDispatch dispatch(p, env, SamplingConfig{0.01, false}, 8);
  EpisodeResult episode = run_episode(dispatch, env, 5, default_options());

  CHECK(episode.outcome.end_condition == EndCondition::turn_limit);
  CHECK(episode.outcome.turns_played == env.max_total_turns());
  CHECK(episode.trajectories[0].episode_reward == 0.0);
  CHECK(episode.trajectories[1].episode_reward == 0.0);
}

TEST_CASE("a scripted werewolf episode reproduces the hand-written transcript") {
  WerewolfConfig cfg;
  cfg.n_players = 6;
  cfg.shuffle_roles = false;  // wolves 0,1; seer 2; villagers 3,4,5
  WerewolfEnv env(cfg);
  const TokenId end = env.vocabulary().end_utterance();

  std::map<std::pair<int, int>, TokenSequence> script;
  // Round 1 night: wolves take 3, seer inspects wolf 0.
  script[{0, 0}] = {env.kill_token(3)};
  script[{1, 0}] = {env.kill_token(3)};
  script[{2, 0}] = {env.inspect_token(0)};
  // Round 1 day: the seer reports its find; votes pile onto wolf 0.
  script[{2, 1}] = {env.report_wolf_token(0)};
  script[{0, 1}] = {env.accuse_token(4)};
  script[{0, 2}] = {env.vote_token(4)};
  script[{1, 2}] = {env.vote_token(4)};
  script[{2, 2}] = {env.vote_token(0)};
  script[{4, 2}] = {env.vote_token(0)};
  script[{5, 2}] = {env.vote_token(0)};
  // Round 2 night: the surviving wolf takes 4, seer inspects wolf 1.
  script[{1, 3}] = {env.kill_token(4)};
  script[{2, 3}] = {env.inspect_token(1)};
  // Round 2 day: report and eliminate the last wolf.
  script[{2, 4}] = {env.report_wolf_token(1)};
  script[{2, 5}] = {env.vote_token(1)};
  script[{5, 5}] = {env.vote_token(1)};
  script[{1, 5}] = {env.vote_token(5)};

  FixedScriptDispatch dispatch(script, env.pass_token(), end);
  EpisodeResult episode = run_episode(dispatch, env, 777, default_options());

  CHECK(!episode.aborted);
  CHECK(episode.outcome.end_condition == EndCondition::win_loss);
  CHECK(episode.outcome.winner_team == std::string(kVillagerTeam));
  CHECK(episode.outcome.turns_played == 6);

  // Hand-simulated reward table: villagers win; 3 and 4 died as villagers
  // (0.75), seer and villager 5 survive (1.0), wolves lose (0.0).
  CHECK(episode.trajectories[0].episode_reward == 0.0);
  CHECK(episode.trajectories[1].episode_reward == 0.0);
  CHECK(episode.trajectories[2].episode_reward == 1.0);
  CHECK(episode.trajectories[3].episode_reward == 0.75);
  CHECK(episode.trajectories[4].episode_reward == 0.75);
  CHECK(episode.trajectories[5].episode_reward == 1.0);

  // Hand-written history: per turn, player utterances in seat order, then
  // the environment's announcements.
  std::vector<std::pair<int, TokenSequence>> expected = {
      // turn 0 (night)
      {0, {env.kill_token(3), end}},
      {1, {env.kill_token(3), end}},
      {2, {env.inspect_token(0), end}},
      {3, {env.pass_token(), end}},
      {4, {env.pass_token(), end}},
      {5, {env.pass_token(), end}},
      {6, {env.out_token(3), end}},          // dawn announcement
      {6, {env.report_wolf_token(0), end}},  // private seer report
      {6, {env.phase_token(WerewolfPhase::day_discussion), end}},
      // turn 1 (discussion)
      {0, {env.accuse_token(4), end}},
      {1, {env.pass_token(), end}},
      {2, {env.report_wolf_token(0), end}},
      {4, {env.pass_token(), end}},
      {5, {env.pass_token(), end}},
      {6, {env.phase_token(WerewolfPhase::day_vote), end}},
      // turn 2 (vote): wolf 0 eliminated 3-2
      {0, {env.vote_token(4), end}},
      {1, {env.vote_token(4), end}},
      {2, {env.vote_token(0), end}},
      {4, {env.vote_token(0), end}},
      {5, {env.vote_token(0), end}},
      {6, {env.out_token(0), end}},
      {6, {env.phase_token(WerewolfPhase::night), end}},
      // turn 3 (night)
      {1, {env.kill_token(4), end}},
      {2, {env.inspect_token(1), end}},
      {4, {env.pass_token(), end}},
      {5, {env.pass_token(), end}},
      {6, {env.out_token(4), end}},
      {6, {env.report_wolf_token(1), end}},
      {6, {env.phase_token(WerewolfPhase::day_discussion), end}},
      // turn 4 (discussion)
      {1, {env.pass_token(), end}},
      {2, {env.report_wolf_token(1), end}},
      {5, {env.pass_token(), end}},
      {6, {env.phase_token(WerewolfPhase::day_vote), end}},
      // turn 5 (vote): last wolf out, villagers win
      {1, {env.vote_token(5), end}},
      {2, {env.vote_token(1), end}},
      {5, {env.vote_token(1), end}},
      {6, {env.out_token(1), end}},
  };
  REQUIRE(episode.final_state.history.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(episode.final_state.history[i].role_id == expected[i].first);
    CHECK(episode.final_state.history[i].tokens == expected[i].second);
  }

  // Eliminated players stop contributing turns.
  CHECK(episode.trajectories[3].turns.size() == 1);  // killed in round 1 night
  CHECK(episode.trajectories[0].turns.size() == 3);  // voted out in round 1
  CHECK(episode.trajectories[4].turns.size() == 4);  // killed in round 2 night
  CHECK(episode.trajectories[2].turns.size() == 6);
}

TEST_CASE("assemble_minibatch takes every participant trajectory") {
  NegotiationEnv env;
  PolicyParameters p = PolicyParameters::zero_init(env.vocabulary().size(), small_featurizer());
  SharedPolicyDispatch dispatch(p, env, SamplingConfig{}, 4);

  SUBCASE("one two-role episode gives a batch of two") {
    std::vector<EpisodeResult> episodes = {run_episode(dispatch, env, 1, default_options(4))};
    CHECK(assemble_minibatch(episodes).items.size() == 2);
  }
  SUBCASE("eight episodes with two roles each give sixteen") {
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < 8; ++i) seeds.push_back(100 + i);
    std::vector<EpisodeResult> episodes =
        collect_episodes(dispatch, env, seeds, default_options(4), 1);
    CHECK(assemble_minibatch(episodes).items.size() == 16);
  }
  SUBCASE("empty input is an error") {
    std::vector<EpisodeResult> none;
    CHECK_THROWS_AS(assemble_minibatch(none), std::invalid_argument);
  }
}

TEST_CASE("a werewolf batch keeps unequal turn counts per eliminated role") {
  WerewolfConfig cfg;
  cfg.n_players = 6;
  cfg.shuffle_roles = false;
  WerewolfEnv env(cfg);
  const TokenId end = env.vocabulary().end_utterance();
  std::map<std::pair<int, int>, TokenSequence> script;
  script[{0, 0}] = {env.kill_token(3)};
  script[{1, 0}] = {env.kill_token(3)};
  script[{0, 3}] = {env.kill_token(4)};
  script[{1, 3}] = {env.kill_token(4)};
  FixedScriptDispatch dispatch(script, env.pass_token(), end);
  std::vector<EpisodeResult> episodes = {run_episode(dispatch, env, 1, default_options())};
  TrainingBatch batch = assemble_minibatch(episodes);
  CHECK(batch.items.size() == 6);  // all six trajectories, unequal lengths
  CHECK(episodes[0].trajectories[3].turns.size() == 1);
  CHECK(episodes[0].trajectories[0].turns.size() == 4);
}

TEST_CASE("episodes are reproducible from (params, env, seed)") {
  NegotiationEnv env;
  PolicyParameters p = PolicyParameters::random_init(env.vocabulary().size(), small_featurizer(),
                                                     11, 0.2);
  SharedPolicyDispatch dispatch(p, env, SamplingConfig{}, 6);
  const EpisodeResult a = run_episode(dispatch, env, 42, default_options(6));
  const EpisodeResult b = run_episode(dispatch, env, 42, default_options(6));
  CHECK(to_record(a, env.vocabulary()) == to_record(b, env.vocabulary()));
  const EpisodeResult c = run_episode(dispatch, env, 43, default_options(6));
  CHECK(to_record(a, env.vocabulary()) != to_record(c, env.vocabulary()));
}

TEST_CASE("self-play closure: every utterance comes from the shared policy") {
  // With a seat-keyed deterministic policy, each seat's utterances are its
  // own signature token, so any cross-seat contamination would show up.
  NegotiationEnv env;
  PolicyParameters p = seat_policy(env, small_featurizer(),
                                   {{0, env.filler_token(2)}, {1, env.filler_token(3)}});
  SharedPolicyDispatch dispatch(p, env, SamplingConfig{0.01, false}, 4);
  EpisodeResult episode = run_episode(dispatch, env, 9, default_options(4));
  for (const Utterance& u : episode.final_state.history) {
    if (u.system) continue;
    CHECK(u.tokens[0] == (u.role_id == 0 ? env.filler_token(2) : env.filler_token(3)));
  }
}

TEST_CASE("per-turn context isolation: same-turn peers cannot influence an utterance") {
  // Role 1's script changes between runs, role 0's first-turn utterance must
  // not: y_i^t depends only on c^t and the persona.
  NegotiationEnv env;
  const TokenId end = env.vocabulary().end_utterance();
  std::map<std::pair<int, int>, TokenSequence> sa, sb;
  sa[{0, 0}] = {env.offer_token(4)};
  sb[{0, 0}] = {env.offer_token(4)};
  sa[{1, 0}] = {env.offer_token(1)};
  sb[{1, 0}] = {env.reject_token()};
  FixedScriptDispatch da(sa, env.filler_token(0), end);
  FixedScriptDispatch db(sb, env.filler_token(0), end);
  const EpisodeResult a = run_episode(da, env, 3, default_options(4));
  const EpisodeResult b = run_episode(db, env, 3, default_options(4));
  CHECK(a.trajectories[0].turns[0].tokens == b.trajectories[0].turns[0].tokens);
}

TEST_CASE("rebuilt contexts are bit-identical to the live rollout contexts") {
  // Wrap a dispatch to capture the contexts the rollout actually used.
  struct Capturing : PolicyDispatch {
    const PolicyDispatch* inner;
    mutable std::map<std::pair<int, int>, TokenSequence> seen;
    SampledUtterance sample(int role_id, const TokenSequence& context, const RoleSpec& role,
                            const ConversationState& state, RngStream& rng) const override {
      seen[{role_id, state.turn_index}] = context;
      return inner->sample(role_id, context, role, state, rng);
    }
  };

  for (const bool use_werewolf : {false, true}) {
    std::unique_ptr<Environment> env;
    if (use_werewolf) {
      WerewolfConfig cfg;
      cfg.n_players = 6;
      env = std::make_unique<WerewolfEnv>(cfg);
    } else {
      env = std::make_unique<NegotiationEnv>();
    }
    FeaturizerConfig fc = small_featurizer();
    PolicyParameters p =
        PolicyParameters::random_init(env->vocabulary().size(), fc, 29, 0.1);
    SharedPolicyDispatch inner(p, *env, SamplingConfig{}, 6);
    Capturing capture;
    capture.inner = &inner;
    EpisodeResult episode = run_episode(capture, *env, 1234, default_options(6));
    REQUIRE(!capture.seen.empty());
    for (const auto& [key, context] : capture.seen) {
      CHECK(rebuild_context(*env, episode, key.first, key.second) == context);
    }
  }
}

TEST_CASE("scripted demonstrations succeed and stay in grammar") {
  NegotiationEnv env;
  RolloutOptions options = default_options(6);
  std::vector<EpisodeResult> demos = generate_demonstrations(env, 40, 9, options);
  int agreements = 0, turns = 0, passed = 0;
  for (const EpisodeResult& d : demos) {
    CHECK(!d.aborted);
    agreements += d.outcome.end_condition == EndCondition::consensus;
    for (const TrajectoryRecord& t : d.trajectories) {
      for (const TurnEntry& turn : t.turns) {
        ++turns;
        passed += turn.filter_passed;
      }
    }
  }
  CHECK(agreements >= 35);  // the haggling scripts nearly always close
  CHECK(static_cast<double>(passed) / turns > 0.95);

  WerewolfConfig cfg;
  cfg.n_players = 6;
  WerewolfEnv wolf(cfg);
  std::vector<EpisodeResult> games = generate_demonstrations(wolf, 25, 11, default_options(6));
  int wolf_turns = 0, wolf_passed = 0;
  for (const EpisodeResult& g : games) {
    CHECK(!g.aborted);
    CHECK(g.outcome.winner_team.has_value());
    for (const TrajectoryRecord& t : g.trajectories) {
      for (const TurnEntry& turn : t.turns) {
        ++wolf_turns;
        wolf_passed += turn.filter_passed;
      }
    }
  }
  CHECK(static_cast<double>(wolf_passed) / wolf_turns > 0.95);
}
