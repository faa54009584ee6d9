#include "parley/demo.hpp"

#include <algorithm>
#include <optional>
#include <stdexcept>

namespace parley {

namespace {

SampledUtterance scripted(TokenSequence tokens, TokenId end_token) {
  tokens.push_back(end_token);
  SampledUtterance s;
  s.tokens = std::move(tokens);
  s.log_probs.assign(s.tokens.size(), 0.0);
  s.values.assign(s.tokens.size(), 0.0);
  return s;
}

}  // namespace

ScriptedDispatch::ScriptedDispatch(const Environment& env) : env_(&env) {}

SampledUtterance ScriptedDispatch::sample(int role_id, const TokenSequence&, const RoleSpec&,
                                          const ConversationState& state, RngStream& rng) const {
  if (const auto* nego = dynamic_cast<const NegotiationEnv*>(env_)) {
    return negotiation_move(*nego, role_id, state, rng);
  }
  if (const auto* wolf = dynamic_cast<const WerewolfEnv*>(env_)) {
    return werewolf_move(*wolf, role_id, state, rng);
  }
  throw std::invalid_argument("ScriptedDispatch: no script for env " + env_->env_id());
}

SampledUtterance ScriptedDispatch::negotiation_move(const NegotiationEnv& env, int role_id,
                                                    const ConversationState& state,
                                                    RngStream& rng) const {
  const NegotiationPayload& payload = negotiation_payload(state);
  const NegotiationGoal& goal = payload.goals[role_id];
  const bool high = goal.side == NegotiationGoal::Side::high;
  const TokenId end = env.vocabulary().end_utterance();

  const std::optional<int>& standing = payload.last_offer_by_role[1 - role_id];
  const bool acceptable = standing && (high ? *standing >= goal.reserve : *standing <= goal.reserve);

  TokenSequence tokens;
  if (rng.next_double() < 0.2) {
    tokens.push_back(env.filler_token(rng.next_int(4)));
  }
  if (acceptable) {
    tokens.push_back(env.accept_token());
  } else {
    // Open three away from the reserve and concede one step per turn.
    const int t = state.turn_index;
    const int price = high ? std::max(goal.reserve, std::min(10, goal.reserve + 3 - t))
                           : std::min(goal.reserve, std::max(0, goal.reserve - 3 + t));
    tokens.push_back(env.offer_token(price));
  }
  return scripted(std::move(tokens), end);
}

SampledUtterance ScriptedDispatch::werewolf_move(const WerewolfEnv& env, int role_id,
                                                 const ConversationState& state,
                                                 RngStream& rng) const {
  const WerewolfPayload& payload = werewolf_payload(state);
  const WerewolfRole my_role = payload.roles[static_cast<std::size_t>(role_id)];
  const TokenId end = env.vocabulary().end_utterance();
  const int n = static_cast<int>(payload.roles.size());

  auto alive_matching = [&](auto&& pred) {
    std::vector<int> out;
    for (int s = 0; s < n; ++s) {
      if (payload.alive[static_cast<std::size_t>(s)] && pred(s)) out.push_back(s);
    }
    return out;
  };
  auto is_wolf = [&](int s) { return payload.roles[static_cast<std::size_t>(s)] == WerewolfRole::werewolf; };
  auto villagers_alive = alive_matching([&](int s) { return !is_wolf(s) && s != role_id; });
  auto pick = [&](const std::vector<int>& candidates) {
    return candidates[static_cast<std::size_t>(rng.next_int(static_cast<int>(candidates.size())))];
  };

  // Most recent public wolf accusation (a REPORT_WOLF during the day) that
  // still points at a living player.
  auto latest_tip = [&]() -> std::optional<int> {
    std::optional<int> tip;
    for (const Utterance& u : state.history) {
      if (u.system || u.turn_index >= static_cast<int>(payload.phase_by_turn.size())) continue;
      if (payload.phase_by_turn[static_cast<std::size_t>(u.turn_index)] !=
          WerewolfPhase::day_discussion) {
        continue;
      }
      for (TokenId tok : u.tokens) {
        if (auto target = env.report_wolf_target(tok)) {
          if (payload.alive[static_cast<std::size_t>(*target)]) tip = *target;
        }
      }
    }
    return tip;
  };

  switch (payload.phase) {
    case WerewolfPhase::night: {
      if (my_role == WerewolfRole::werewolf && !villagers_alive.empty()) {
        // Coordinate on the lowest-index victim most of the time.
        const int target = rng.next_double() < 0.75 ? villagers_alive.front()
                                                    : pick(villagers_alive);
        return scripted({env.kill_token(target)}, end);
      }
      if (my_role == WerewolfRole::seer) {
        std::vector<int> fresh;
        for (int s : alive_matching([&](int s2) { return s2 != role_id; })) {
          bool known = false;
          for (const auto& [target, _] : payload.seer_knowledge) {
            if (target == s) known = true;
          }
          if (!known) fresh.push_back(s);
        }
        if (!fresh.empty()) return scripted({env.inspect_token(pick(fresh))}, end);
      }
      return scripted({env.pass_token()}, end);
    }
    case WerewolfPhase::day_discussion: {
      if (my_role == WerewolfRole::werewolf) {
        const double roll = rng.next_double();
        if (roll < 0.10) return scripted({env.claim_seer_token()}, end);
        if (roll < 0.25 && !villagers_alive.empty()) {
          // Fake report to steer votes at a villager.
          return scripted({env.report_wolf_token(pick(villagers_alive))}, end);
        }
        auto teammates = alive_matching([&](int s) { return is_wolf(s) && s != role_id; });
        if (roll < 0.35 && !teammates.empty()) {
          return scripted({env.defend_token(pick(teammates))}, end);
        }
        if (!villagers_alive.empty()) return scripted({env.accuse_token(pick(villagers_alive))}, end);
        return scripted({env.pass_token()}, end);
      }
      if (my_role == WerewolfRole::seer) {
        for (auto it = payload.seer_knowledge.rbegin(); it != payload.seer_knowledge.rend(); ++it) {
          if (it->second == WerewolfRole::werewolf && payload.alive[static_cast<std::size_t>(it->first)]) {
            return scripted({env.report_wolf_token(it->first)}, end);
          }
        }
        if (!payload.seer_knowledge.empty() &&
            payload.alive[static_cast<std::size_t>(payload.seer_knowledge.back().first)]) {
          return scripted({env.report_good_token(payload.seer_knowledge.back().first)}, end);
        }
        return scripted({env.pass_token()}, end);
      }
      if (auto tip = latest_tip(); tip && *tip != role_id && rng.next_double() < 0.8) {
        return scripted({env.accuse_token(*tip)}, end);
      }
      if (rng.next_double() < 0.3) {
        auto others = alive_matching([&](int s) { return s != role_id; });
        if (!others.empty()) return scripted({env.accuse_token(pick(others))}, end);
      }
      return scripted({env.pass_token()}, end);
    }
    case WerewolfPhase::day_vote: {
      if (my_role == WerewolfRole::werewolf) {
        if (auto tip = latest_tip(); tip && !is_wolf(*tip)) {
          return scripted({env.vote_token(*tip)}, end);
        }
        if (!villagers_alive.empty()) return scripted({env.vote_token(villagers_alive.front())}, end);
        return scripted({env.pass_token()}, end);
      }
      if (my_role == WerewolfRole::seer) {
        for (auto it = payload.seer_knowledge.rbegin(); it != payload.seer_knowledge.rend(); ++it) {
          if (it->second == WerewolfRole::werewolf && payload.alive[static_cast<std::size_t>(it->first)]) {
            return scripted({env.vote_token(it->first)}, end);
          }
        }
      }
      if (auto tip = latest_tip(); tip && *tip != role_id) {
        return scripted({env.vote_token(*tip)}, end);
      }
      auto others = alive_matching([&](int s) { return s != role_id; });
      if (!others.empty()) return scripted({env.vote_token(pick(others))}, end);
      return scripted({env.pass_token()}, end);
    }
  }
  return scripted({env.pass_token()}, end);
}

std::vector<EpisodeResult> generate_demonstrations(const Environment& env, int n_episodes,
                                                   std::uint64_t seed,
                                                   const RolloutOptions& options) {
  ScriptedDispatch bots(env);
  std::vector<std::uint64_t> seeds;
  seeds.reserve(static_cast<std::size_t>(n_episodes));
  for (int i = 0; i < n_episodes; ++i) {
    seeds.push_back(derive_stream(seed, "demo", {static_cast<std::uint64_t>(i)}));
  }
  return collect_episodes(bots, env, seeds, options, 1);
}

}  // namespace parley
