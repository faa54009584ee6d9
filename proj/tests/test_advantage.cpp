#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "parley/advantage.hpp"
#include "parley/env.hpp"

using namespace parley;

namespace {

AdvantageConfig cfg_with(double gamma_turn, double lambda_turn, double gamma_token = 1.0,
                         double lambda_token = 1.0) {
  AdvantageConfig cfg;
  cfg.gamma_turn = gamma_turn;
  cfg.lambda_turn = lambda_turn;
  cfg.gamma_token = gamma_token;
  cfg.lambda_token = lambda_token;
  return cfg;
}

}  // namespace

TEST_CASE("single turn with zero value gets the full reward as advantage") {
  const TurnAdvantageResult r = turn_level_advantages({0.0}, 1.0, cfg_with(0.9, 1.0));
  CHECK(r.advantages == std::vector<double>{1.0});
  CHECK(r.value_targets == std::vector<double>{1.0});
}

TEST_CASE("perfect values produce zero advantages") {
  const TurnAdvantageResult r = turn_level_advantages({0.9, 1.0}, 1.0, cfg_with(0.9, 1.0));
  CHECK(std::abs(r.advantages[0]) < 1e-12);
  CHECK(std::abs(r.advantages[1]) < 1e-12);
}

TEST_CASE("three-turn worked example") {
  // Brute force with gamma 0.9, lambda 1: A_t = sum gamma^(k-t) r_k - V_t
  // gives [0.61, 0.40, 0.60] for V = [0.2, 0.5, 0.4], r = 1.
  const TurnAdvantageResult r = turn_level_advantages({0.2, 0.5, 0.4}, 1.0, cfg_with(0.9, 1.0));
  CHECK(r.advantages[0] == doctest::Approx(0.61).epsilon(1e-12));
  CHECK(r.advantages[1] == doctest::Approx(0.40).epsilon(1e-12));
  CHECK(r.advantages[2] == doctest::Approx(0.60).epsilon(1e-12));
  for (int t = 0; t < 3; ++t) {
    CHECK(r.value_targets[t] ==
          doctest::Approx(r.advantages[t] + std::vector<double>{0.2, 0.5, 0.4}[t]).epsilon(1e-12));
  }
}

TEST_CASE("empty trajectory is rejected") {
  CHECK_THROWS_AS(turn_level_advantages({}, 1.0, AdvantageConfig{}), std::invalid_argument);
}

TEST_CASE("turn-level GAE matches the brute-force oracles on random instances") {
  RngStream rng(2024);
  double max_dev_lambda1 = 0.0, max_dev_general = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int turns = 1 + rng.next_int(8);
    std::vector<double> values;
    for (int t = 0; t < turns; ++t) values.push_back(rng.next_range(-1.0, 1.0));
    const double reward = rng.next_range(-1.0, 1.0);
    const std::vector<double> rewards = oracles::terminal_rewards(values.size(), reward);

    AdvantageConfig cfg = cfg_with(rng.next_double(), 1.0);
    TurnAdvantageResult got = turn_level_advantages(values, reward, cfg);
    for (int t = 0; t < turns; ++t) {
      max_dev_lambda1 = std::max(
          max_dev_lambda1,
          std::abs(got.advantages[t] -
                   oracles::discounted_return_advantage(rewards, values, cfg.gamma_turn, t)));
    }

    cfg.lambda_turn = rng.next_double();
    got = turn_level_advantages(values, reward, cfg);
    for (int t = 0; t < turns; ++t) {
      max_dev_general = std::max(
          max_dev_general,
          std::abs(got.advantages[t] - oracles::delta_sum_advantage(rewards, values,
                                                                    cfg.gamma_turn,
                                                                    cfg.lambda_turn, t)));
    }
  }
  CHECK(max_dev_lambda1 < 1e-10);
  CHECK(max_dev_general < 1e-10);
}

TEST_CASE("quality filter masking") {
  const std::vector<double> advantages = {0.3, 0.4, -0.3};
  SUBCASE("all pass leaves advantages unchanged") {
    CHECK(apply_quality_filter(advantages, {true, true, true}) == advantages);
  }
  SUBCASE("a failed positive turn is zeroed") {
    const auto pseudo = apply_quality_filter(advantages, {true, false, true});
    CHECK(pseudo == std::vector<double>{0.3, 0.0, -0.3});
  }
  SUBCASE("a failed negative turn is zeroed under the rule as written") {
    const auto pseudo = apply_quality_filter(advantages, {true, true, false});
    CHECK(pseudo == std::vector<double>{0.3, 0.4, 0.0});
  }
  SUBCASE("the config switch can preserve failed negative advantages") {
    const auto pseudo = apply_quality_filter(advantages, {true, true, false},
                                             /*zero_negative_too=*/false);
    CHECK(pseudo == std::vector<double>{0.3, 0.4, -0.3});
  }
  SUBCASE("length mismatch is rejected") {
    CHECK_THROWS_AS(apply_quality_filter(advantages, {true}), std::invalid_argument);
  }
}

TEST_CASE("zero token values with gamma = lambda = 1 broadcast the pseudo-reward") {
  const double pseudo = 0.625;
  const auto advs = token_level_advantages({std::vector<double>(7, 0.0)}, {pseudo},
                                           cfg_with(0.9, 1.0, 1.0, 1.0));
  for (double a : advs[0]) CHECK(a == pseudo);  // exact
}

TEST_CASE("single-token turn with a value subtracts it from the pseudo-reward") {
  const auto advs = token_level_advantages({{0.3}}, {0.5}, AdvantageConfig{});
  CHECK(advs[0][0] == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("token-level GAE matches the brute-force oracle") {
  RngStream rng(55);
  double max_dev = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int len = 1 + rng.next_int(16);
    std::vector<double> values;
    for (int l = 0; l < len; ++l) values.push_back(rng.next_range(-1.0, 1.0));
    const double pseudo = rng.next_range(-1.0, 1.0);
    AdvantageConfig cfg = cfg_with(0.9, 1.0, rng.next_double(), rng.next_double());
    const auto got = token_level_advantages({values}, {pseudo}, cfg);
    const auto rewards = oracles::terminal_rewards(values.size(), pseudo);
    for (int l = 0; l < len; ++l) {
      max_dev = std::max(max_dev, std::abs(got[0][l] - oracles::delta_sum_advantage(
                                                           rewards, values, cfg.gamma_token,
                                                           cfg.lambda_token, l)));
    }
  }
  CHECK(max_dev < 1e-10);
}

TEST_CASE("token stage rejects empty turns and mismatched shapes") {
  CHECK_THROWS_AS(token_level_advantages({{}}, {0.5}, AdvantageConfig{}), std::invalid_argument);
  CHECK_THROWS_AS(token_level_advantages({{0.1}}, {0.5, 0.2}, AdvantageConfig{}),
                  std::invalid_argument);
}

TEST_CASE("single-token turns with zero values reduce to the turn advantages exactly") {
  RngStream rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const int turns = 1 + rng.next_int(6);
    std::vector<double> last_values;
    std::vector<std::vector<double>> token_values;
    for (int t = 0; t < turns; ++t) {
      last_values.push_back(0.0);
      token_values.push_back({0.0});
    }
    AdvantageConfig cfg = cfg_with(rng.next_double(), rng.next_double());
    const TurnAdvantageResult turn = turn_level_advantages(last_values, rng.next_range(-1, 1), cfg);
    const auto tok = token_level_advantages(token_values, turn.advantages, cfg);
    for (int t = 0; t < turns; ++t) {
      CHECK(tok[t].size() == 1);
      CHECK(tok[t][0] == turn.advantages[t]);  // exact
    }
  }
}

TEST_CASE("zero values and lambda 1 give geometric credit decay") {
  const double reward = 0.8;
  AdvantageConfig cfg = cfg_with(0.9, 1.0);
  const int turns = 6;
  const TurnAdvantageResult r =
      turn_level_advantages(std::vector<double>(turns, 0.0), reward, cfg);
  for (int t = 0; t < turns; ++t) {
    CHECK(r.advantages[t] ==
          doctest::Approx(std::pow(0.9, turns - 1 - t) * reward).epsilon(1e-12));
  }
}

TEST_CASE("zeroing one turn's pseudo-reward perturbs only that turn's tokens") {
  RngStream rng(31);
  const int turns = 5;
  std::vector<std::vector<double>> token_values;
  std::vector<double> pseudo;
  for (int t = 0; t < turns; ++t) {
    std::vector<double> v;
    for (int l = 0; l < 1 + rng.next_int(6); ++l) v.push_back(rng.next_range(-1, 1));
    token_values.push_back(v);
    pseudo.push_back(rng.next_range(-1, 1));
  }
  AdvantageConfig cfg;
  const auto base = token_level_advantages(token_values, pseudo, cfg);
  std::vector<double> masked = pseudo;
  masked[2] = 0.0;
  const auto got = token_level_advantages(token_values, masked, cfg);
  for (int t = 0; t < turns; ++t) {
    if (t == 2) {
      CHECK(got[t] != base[t]);
    } else {
      CHECK(got[t] == base[t]);
    }
  }
}

TEST_CASE("advantages are scale-equivariant in rewards and values") {
  RngStream rng(47);
  for (int trial = 0; trial < 50; ++trial) {
    const int turns = 1 + rng.next_int(6);
    std::vector<double> values;
    for (int t = 0; t < turns; ++t) values.push_back(rng.next_range(-1, 1));
    const double reward = rng.next_range(-1, 1);
    const double c = 0.1 + 5.0 * rng.next_double();
    AdvantageConfig cfg = cfg_with(rng.next_double(), rng.next_double());

    const TurnAdvantageResult base = turn_level_advantages(values, reward, cfg);
    std::vector<double> scaled_values;
    for (double v : values) scaled_values.push_back(c * v);
    const TurnAdvantageResult scaled = turn_level_advantages(scaled_values, c * reward, cfg);
    for (int t = 0; t < turns; ++t) {
      CHECK(scaled.advantages[t] == doctest::Approx(c * base.advantages[t]).epsilon(1e-9));
    }
  }
}

TEST_CASE("annotate_trajectory composes the stages in filter order") {
  TrajectoryRecord record;
  record.role_id = 0;
  record.episode_reward = 1.0;
  for (int t = 0; t < 3; ++t) {
    TurnEntry turn;
    turn.turn_index = t;
    turn.tokens = {0, 1};
    turn.token_values = {0.0, 0.1 * t};
    turn.last_token_value = 0.1 * t;
    turn.filter_passed = t != 1;
    record.turns.push_back(turn);
  }
  AdvantageConfig cfg;
  annotate_trajectory(record, cfg);

  const TurnAdvantageResult expect =
      turn_level_advantages({0.0, 0.1, 0.2}, 1.0, cfg);
  CHECK(record.turn_advantages == expect.advantages);
  CHECK(record.turn_value_targets == expect.value_targets);
  const auto pseudo = apply_quality_filter(expect.advantages, {true, false, true});
  const auto tokens = token_level_advantages({{0.0, 0.0}, {0.0, 0.1}, {0.0, 0.2}}, pseudo, cfg);
  CHECK(record.token_advantages == tokens);
  // The failed turn's last-token advantage carries no pseudo-reward.
  CHECK(record.token_advantages[1].back() == doctest::Approx(-0.1).epsilon(1e-12));
}

// --------------------------------------------------------------------------
// Rule-based quality filter.
// --------------------------------------------------------------------------

namespace {

Utterance make_utterance(int role, int turn, TokenSequence tokens) {
  Utterance u;
  u.role_id = role;
  u.turn_index = turn;
  u.tokens = std::move(tokens);
  return u;
}

}  // namespace

TEST_CASE("filter passes a short in-grammar utterance") {
  NegotiationEnv env;
  RngStream rng(1);
  EpisodeSetup setup = env.reset(rng);
  const Utterance u = make_utterance(
      0, 0, {env.offer_token(5), env.vocabulary().end_utterance()});
  const FilterVerdict v = quality_filter(u, setup.initial_state, env, QualityFilterConfig{});
  CHECK(v.passed);
  CHECK(v.reasons.empty());
}

TEST_CASE("filter flags a max-length single-token run as degeneration") {
  NegotiationEnv env;
  RngStream rng(1);
  EpisodeSetup setup = env.reset(rng);
  TokenSequence tokens(32, env.filler_token(1));
  const FilterVerdict v = quality_filter(make_utterance(0, 0, std::move(tokens)),
                                         setup.initial_state, env, QualityFilterConfig{});
  CHECK(!v.passed);
  CHECK(v.reasons == std::vector<std::string>{"degeneration"});
}

TEST_CASE("filter flags a run at exactly the threshold") {
  NegotiationEnv env;
  RngStream rng(1);
  EpisodeSetup setup = env.reset(rng);
  QualityFilterConfig cfg;
  cfg.max_consecutive_repeats = 4;
  const TokenId f = env.filler_token(0);
  const TokenId end = env.vocabulary().end_utterance();
  CHECK(quality_filter(make_utterance(0, 0, {f, f, f, end}), setup.initial_state, env, cfg).passed);
  CHECK(!quality_filter(make_utterance(0, 0, {f, f, f, f, end}), setup.initial_state, env, cfg)
             .passed);
}

TEST_CASE("filter flags verbatim copies of another participant") {
  NegotiationEnv env;
  RngStream rng(1);
  EpisodeSetup setup = env.reset(rng);
  const TokenId end = env.vocabulary().end_utterance();
  const TokenSequence line = {env.filler_token(0), env.offer_token(3), end};
  ConversationState state = append_turn(
      setup.initial_state,
      {make_utterance(0, 0, line), make_utterance(1, 0, {env.offer_token(9), end})});
  SUBCASE("copying the opponent fails") {
    const FilterVerdict v = quality_filter(make_utterance(1, 1, line), state, env, {});
    CHECK(!v.passed);
    CHECK(v.reasons == std::vector<std::string>{"copying"});
  }
  SUBCASE("repeating yourself is not copying") {
    CHECK(quality_filter(make_utterance(0, 1, line), state, env, {}).passed);
  }
  SUBCASE("short utterances are exempt") {
    const TokenSequence accept = {env.accept_token(), end};
    ConversationState with_accept = append_turn(
        state, {make_utterance(0, 1, accept), make_utterance(1, 1, {env.offer_token(2), end})});
    CHECK(quality_filter(make_utterance(1, 2, accept), with_accept, env, {}).passed);
  }
}

TEST_CASE("filter flags heavy out-of-grammar content") {
  NegotiationEnv env;
  RngStream rng(1);
  EpisodeSetup setup = env.reset(rng);
  const TokenId persona = *env.vocabulary().id_of("PERSONA_HIGH");
  const TokenId reserve = *env.vocabulary().id_of("RESERVE_3");
  const TokenId end = env.vocabulary().end_utterance();
  const FilterVerdict v = quality_filter(
      make_utterance(0, 0, {persona, reserve, env.offer_token(1), end}), setup.initial_state, env,
      QualityFilterConfig{});
  CHECK(!v.passed);
  CHECK(v.reasons == std::vector<std::string>{"out_of_grammar"});
}

TEST_CASE("filter flags phase-illegal werewolf actions") {
  WerewolfConfig wc;
  wc.shuffle_roles = false;  // seats 0,1 wolves; 2 seer; 3..5 villagers
  WerewolfEnv env(wc);
  RngStream rng(1);
  EpisodeSetup setup = env.reset(rng);
  const TokenId end = env.vocabulary().end_utterance();
  SUBCASE("a wolf may kill at night") {
    CHECK(quality_filter(make_utterance(0, 0, {env.kill_token(4), end}), setup.initial_state, env,
                         {})
              .passed);
  }
  SUBCASE("a villager may not kill at night") {
    const FilterVerdict v = quality_filter(make_utterance(3, 0, {env.kill_token(4), end}),
                                           setup.initial_state, env, {});
    CHECK(!v.passed);
    CHECK(v.reasons == std::vector<std::string>{"phase_illegal"});
  }
  SUBCASE("votes are illegal at night") {
    CHECK(!quality_filter(make_utterance(0, 0, {env.vote_token(4), end}), setup.initial_state,
                          env, {})
               .passed);
  }
  SUBCASE("legality check can be disabled") {
    QualityFilterConfig cfg;
    cfg.check_phase_legality = false;
    CHECK(quality_filter(make_utterance(3, 0, {env.kill_token(4), end}), setup.initial_state, env,
                         cfg)
              .passed);
  }
}

TEST_CASE("external evaluator overrides the rule verdict") {
  // Python responder: fail anything whose utterance contains FILLER_0.
  const std::string command =
      "python3 -c \"import sys, json\n"
      "for line in sys.stdin:\n"
      "    r = json.loads(line)\n"
      "    bad = 'FILLER_0' in r['utterance']\n"
      "    print(json.dumps({'passed': not bad, 'reasons': ['external'] if bad else []}), "
      "flush=True)\"";
  LineProtocolEvaluator evaluator(command, 5000);
  EvaluatorRequest request;
  request.utterance_text = "FILLER_0 END";
  FilterVerdict rules;  // passing rule verdict gets overridden
  const FilterVerdict v = resolve_filter_verdict(rules, &evaluator, request, true);
  CHECK(!v.passed);
  CHECK(v.reasons == std::vector<std::string>{"external"});

  request.utterance_text = "OFFER_5 END";
  const FilterVerdict ok = resolve_filter_verdict(rules, &evaluator, request, true);
  CHECK(ok.passed);
}

TEST_CASE("external evaluator timeout is fail-open by default, fail-closed on request") {
  LineProtocolEvaluator evaluator("sleep 30", 150);
  EvaluatorRequest request;
  FilterVerdict rules;
  rules.passed = false;  // rule verdict is irrelevant once the hook is configured
  bool timed_out = false;
  const FilterVerdict open = resolve_filter_verdict(rules, &evaluator, request, true, &timed_out);
  CHECK(timed_out);
  CHECK(open.passed);
  const FilterVerdict closed = resolve_filter_verdict(rules, &evaluator, request, false);
  CHECK(!closed.passed);
}
