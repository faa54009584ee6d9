#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "parley/env.hpp"
#include "parley/rng.hpp"

using namespace parley;

namespace {

struct Fixture {
  NegotiationEnv env;
  ConversationState state;
  NegotiationGoal goals[2];

  explicit Fixture(NegotiationConfig cfg = {}) : env(cfg) {
    RngStream rng(3);
    EpisodeSetup setup = env.reset(rng);
    state = setup.initial_state;
    const NegotiationPayload& payload = negotiation_payload(state);
    goals[0] = payload.goals[0];
    goals[1] = payload.goals[1];
  }

  Utterance say(int role, TokenSequence tokens) const {
    Utterance u;
    u.role_id = role;
    u.turn_index = state.turn_index;
    tokens.push_back(env.vocabulary().end_utterance());
    u.tokens = std::move(tokens);
    return u;
  }

  // Appends one synchronous turn and steps the environment.
  StepResult play(TokenSequence role0, TokenSequence role1) {
    std::vector<Utterance> utterances = {say(0, std::move(role0)), say(1, std::move(role1))};
    ConversationState appended = append_turn(state, utterances);
    StepResult r = env.step(appended, utterances);
    state = r.state;
    return r;
  }
};

}  // namespace

TEST_CASE("reward table from the agreement rule") {
  NegotiationGoal goals[2] = {{NegotiationGoal::Side::high, 5}, {NegotiationGoal::Side::low, 5}};
  SUBCASE("agreed price 7 favors the high side") {
    const auto r = negotiation_rewards(7, goals, 0.2);
    CHECK(r.at(0) == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(r.at(1) == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("midpoint is symmetric") {
    const auto r = negotiation_rewards(5, goals, 0.2);
    CHECK(r.at(0) == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(r.at(1) == doctest::Approx(0.7).epsilon(1e-12));
  }
  SUBCASE("no agreement pays zero") {
    const auto r = negotiation_rewards(std::nullopt, goals, 0.2);
    CHECK(r.at(0) == 0.0);
    CHECK(r.at(1) == 0.0);
  }
  SUBCASE("rewards stay within [0, 1.2]") {
    for (int k = 0; k <= 10; ++k) {
      const auto r = negotiation_rewards(k, goals, 0.2);
      for (const auto& [_, v] : r) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.2);
      }
    }
  }
}

TEST_CASE("an offer followed by acceptance terminates at that price") {
  Fixture f;
  StepResult r1 = f.play({f.env.offer_token(3)}, {f.env.filler_token(0)});
  CHECK(!r1.terminal);
  StepResult r2 = f.play({f.env.filler_token(1)}, {f.env.accept_token()});
  CHECK(r2.terminal);
  const EpisodeOutcome outcome = f.env.outcome(f.state);
  CHECK(outcome.end_condition == EndCondition::consensus);
  CHECK(outcome.per_role_rewards.at(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(outcome.per_role_rewards.at(1) == doctest::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("the turn limit ends the episode without agreement") {
  NegotiationConfig cfg;
  cfg.max_turns = 3;
  Fixture f(cfg);
  for (int t = 0; t < 3; ++t) {
    StepResult r = f.play({f.env.filler_token(0)}, {f.env.filler_token(1)});
    CHECK(r.terminal == (t == 2));
  }
  const EpisodeOutcome outcome = f.env.outcome(f.state);
  CHECK(outcome.end_condition == EndCondition::turn_limit);
  CHECK(outcome.per_role_rewards.at(0) == 0.0);
  CHECK(outcome.per_role_rewards.at(1) == 0.0);
  CHECK(outcome.turns_played == 3);
}

TEST_CASE("only a post-offer ACCEPT terminates") {
  // Enumerate all two-turn action prefixes over {OFFER_4, ACCEPT, FILLER} per
  // role and check that exactly the runs whose ACCEPT follows an opposing
  // offer from an earlier turn terminate with consensus.
  enum Act { offer, accept, filler };
  for (int a0 = 0; a0 < 3; ++a0) {
    for (int b0 = 0; b0 < 3; ++b0) {
      for (int a1 = 0; a1 < 3; ++a1) {
        for (int b1 = 0; b1 < 3; ++b1) {
          Fixture f;
          auto tokens = [&](int act) -> TokenSequence {
            if (act == offer) return {f.env.offer_token(4)};
            if (act == accept) return {f.env.accept_token()};
            return {f.env.filler_token(0)};
          };
          const StepResult r1 = f.play(tokens(a0), tokens(b0));
          CHECK(!r1.terminal);  // turn 0 has no standing offers to accept
          const StepResult r2 = f.play(tokens(a1), tokens(b1));
          const bool role0_binds = a1 == accept && b0 == offer;
          const bool role1_binds = b1 == accept && a0 == offer;
          CHECK(r2.terminal == (role0_binds || role1_binds));
          if (r2.terminal) {
            CHECK(f.env.outcome(f.state).end_condition == EndCondition::consensus);
            CHECK(negotiation_payload(f.state).agreed_price == 4);
          }
        }
      }
    }
  }
}

TEST_CASE("a lone ACCEPT with no standing offer degrades to filler") {
  Fixture f;
  StepResult r = f.play({f.env.accept_token()}, {f.env.accept_token()});
  CHECK(!r.terminal);
  CHECK(!negotiation_payload(f.state).agreed_price);
}

TEST_CASE("LEAVE terminates without agreement") {
  Fixture f;
  StepResult r = f.play({f.env.leave_token()}, {f.env.filler_token(0)});
  CHECK(r.terminal);
  const EpisodeOutcome outcome = f.env.outcome(f.state);
  CHECK(outcome.end_condition == EndCondition::abstention);
  CHECK(outcome.per_role_rewards.at(0) == 0.0);
}

TEST_CASE("a same-turn double REJECT terminates without agreement") {
  Fixture f;
  StepResult r1 = f.play({f.env.reject_token()}, {f.env.filler_token(0)});
  CHECK(!r1.terminal);  // a single reject continues
  StepResult r2 = f.play({f.env.reject_token()}, {f.env.reject_token()});
  CHECK(r2.terminal);
  CHECK(f.env.outcome(f.state).end_condition == EndCondition::abstention);
}

TEST_CASE("a simultaneous double ACCEPT resolves to role 0's binding") {
  Fixture f;
  f.play({f.env.offer_token(8)}, {f.env.offer_token(2)});
  StepResult r = f.play({f.env.accept_token()}, {f.env.accept_token()});
  CHECK(r.terminal);
  // Role 0 accepts role 1's standing offer of 2.
  CHECK(negotiation_payload(f.state).agreed_price == 2);
}

TEST_CASE("out-of-grammar tokens degrade the utterance to filler") {
  Fixture f;
  const TokenId persona = *f.env.vocabulary().id_of("PERSONA_LOW");
  StepResult r = f.play({persona}, {persona});
  CHECK(!r.terminal);
  CHECK(!negotiation_payload(f.state).last_offer_by_role[0]);
}

TEST_CASE("the first action token wins within an utterance") {
  Fixture f;
  f.play({f.env.offer_token(6)}, {f.env.filler_token(0)});
  // Role 1 says ACCEPT then OFFER_1: the accept binds first.
  StepResult r = f.play({f.env.filler_token(0)},
                        {f.env.accept_token(), f.env.offer_token(1)});
  CHECK(r.terminal);
  CHECK(negotiation_payload(f.state).agreed_price == 6);
}

TEST_CASE("reset samples personas with a nonempty agreement zone") {
  NegotiationEnv env;
  RngStream rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    EpisodeSetup setup = env.reset(rng);
    const NegotiationPayload& payload = negotiation_payload(setup.initial_state);
    CHECK(payload.goals[0].side == NegotiationGoal::Side::high);
    CHECK(payload.goals[1].side == NegotiationGoal::Side::low);
    CHECK(payload.goals[0].reserve >= 0);
    CHECK(payload.goals[1].reserve <= 10);
    CHECK(payload.goals[0].reserve <= payload.goals[1].reserve);
    for (const RoleSpec& role : setup.roles) CHECK(!role.persona_prompt.empty());
  }
}

TEST_CASE("stepping a terminal state is an error") {
  Fixture f;
  f.play({f.env.leave_token()}, {f.env.filler_token(0)});
  Utterance u = f.say(0, {f.env.filler_token(0)});
  Utterance v = f.say(1, {f.env.filler_token(0)});
  ConversationState appended = append_turn(f.state, {u, v});
  CHECK_THROWS_AS(f.env.step(appended, {u, v}), std::logic_error);
}
