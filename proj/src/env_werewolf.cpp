#include <algorithm>
#include <stdexcept>
#include <string>

#include "parley/env.hpp"

namespace parley {

std::string to_string(WerewolfRole r) {
  switch (r) {
    case WerewolfRole::werewolf: return "werewolf";
    case WerewolfRole::seer: return "seer";
    case WerewolfRole::villager: return "villager";
  }
  throw std::logic_error("bad WerewolfRole");
}

std::string to_string(WerewolfPhase p) {
  switch (p) {
    case WerewolfPhase::night: return "night";
    case WerewolfPhase::day_discussion: return "day_discussion";
    case WerewolfPhase::day_vote: return "day_vote";
  }
  throw std::logic_error("bad WerewolfPhase");
}

int WerewolfPayload::alive_werewolves() const {
  int n = 0;
  for (std::size_t i = 0; i < roles.size(); ++i) {
    if (alive[i] && roles[i] == WerewolfRole::werewolf) ++n;
  }
  return n;
}

int WerewolfPayload::alive_villager_side() const {
  int n = 0;
  for (std::size_t i = 0; i < roles.size(); ++i) {
    if (alive[i] && roles[i] != WerewolfRole::werewolf) ++n;
  }
  return n;
}

std::optional<std::string> werewolf_win_check(int alive_werewolves, int alive_villager_side) {
  if (alive_werewolves == 0) return std::string(kVillagerTeam);
  if (alive_werewolves >= alive_villager_side) return std::string(kWerewolfTeam);
  return std::nullopt;
}

std::optional<std::string> werewolf_win_check(const ConversationState& state) {
  const WerewolfPayload& p = werewolf_payload(state);
  return werewolf_win_check(p.alive_werewolves(), p.alive_villager_side());
}

std::map<int, double> werewolf_rewards(const EpisodeOutcome& outcome,
                                       const std::vector<RoleSpec>& roles,
                                       const std::set<int>& eliminated_before_end) {
  if (!outcome.winner_team) throw std::invalid_argument("werewolf_rewards: missing winner");
  std::map<int, double> rewards;
  for (const RoleSpec& role : roles) {
    const bool won = role.team && *role.team == *outcome.winner_team;
    double r = won ? 1.0 : 0.0;
    if (eliminated_before_end.count(role.role_id)) r *= 0.75;
    rewards[role.role_id] = r;
  }
  return rewards;
}

WerewolfEnv::WerewolfEnv(WerewolfConfig cfg) : cfg_(cfg) {
  if (cfg_.n_players != 6 && cfg_.n_players != 9) {
    throw std::invalid_argument("werewolf: n_players must be 6 or 9");
  }
  max_rounds_ = cfg_.max_rounds > 0 ? cfg_.max_rounds : cfg_.n_players;
  const int n = cfg_.n_players;

  std::vector<std::string> tokens;
  auto targeted_block = [&](const char* prefix, TokenId& first) {
    first = static_cast<TokenId>(tokens.size());
    for (int i = 0; i < n; ++i) tokens.push_back(std::string(prefix) + "_" + std::to_string(i));
  };
  tokens.push_back("GAME_WEREWOLF");
  game_tag_ = 0;
  targeted_block("ACCUSE", first_accuse_);
  targeted_block("DEFEND", first_defend_);
  targeted_block("REPORT_GOOD", first_report_good_);
  targeted_block("REPORT_WOLF", first_report_wolf_);
  targeted_block("VOTE", first_vote_);
  targeted_block("KILL", first_kill_);
  targeted_block("INSPECT", first_inspect_);
  claim_seer_ = static_cast<TokenId>(tokens.size());
  tokens.push_back("CLAIM_SEER");
  pass_ = static_cast<TokenId>(tokens.size());
  tokens.push_back("PASS");
  targeted_block("PLAYER", first_player_);
  targeted_block("OUT", first_out_);
  phase_night_ = static_cast<TokenId>(tokens.size());
  tokens.push_back("PHASE_NIGHT");
  phase_day_ = static_cast<TokenId>(tokens.size());
  tokens.push_back("PHASE_DAY");
  phase_vote_ = static_cast<TokenId>(tokens.size());
  tokens.push_back("PHASE_VOTE");
  role_werewolf_ = static_cast<TokenId>(tokens.size());
  tokens.push_back("ROLE_WEREWOLF");
  role_seer_ = static_cast<TokenId>(tokens.size());
  tokens.push_back("ROLE_SEER");
  role_villager_ = static_cast<TokenId>(tokens.size());
  tokens.push_back("ROLE_VILLAGER");
  moderator_tag_ = static_cast<TokenId>(tokens.size());
  tokens.push_back("MODERATOR");
  first_filler_ = static_cast<TokenId>(tokens.size());
  for (int i = 0; i < n_filler_; ++i) tokens.push_back("FILLER_" + std::to_string(i));
  tokens.push_back(kEndUtteranceSymbol);
  vocab_ = Vocabulary::from_tokens(std::move(tokens));
  initial_prompt_ = {game_tag_, phase_night_};
  for (int s = 0; s < n; ++s) speaker_tags_.push_back(first_player_ + s);
  speaker_tags_.push_back(moderator_tag_);
}

TokenId WerewolfEnv::targeted(TokenId first, int target) const {
  if (target < 0 || target >= cfg_.n_players) throw std::invalid_argument("bad target seat");
  return first + target;
}

std::optional<int> WerewolfEnv::target_of(TokenId token, TokenId first) const {
  if (token >= first && token < first + cfg_.n_players) return token - first;
  return std::nullopt;
}

TokenId WerewolfEnv::phase_token(WerewolfPhase p) const {
  switch (p) {
    case WerewolfPhase::night: return phase_night_;
    case WerewolfPhase::day_discussion: return phase_day_;
    case WerewolfPhase::day_vote: return phase_vote_;
  }
  throw std::logic_error("bad WerewolfPhase");
}

bool WerewolfEnv::player_token(TokenId token) const {
  return (token >= first_accuse_ && token < first_accuse_ + 7 * cfg_.n_players) ||
         token == claim_seer_ || token == pass_ ||
         (token >= first_filler_ && token < first_filler_ + n_filler_);
}

EpisodeSetup WerewolfEnv::reset(RngStream& rng) const {
  const int n = cfg_.n_players;
  std::vector<WerewolfRole> roles;
  const int n_wolves = n == 6 ? 2 : 3;
  for (int i = 0; i < n_wolves; ++i) roles.push_back(WerewolfRole::werewolf);
  roles.push_back(WerewolfRole::seer);
  while (static_cast<int>(roles.size()) < n) roles.push_back(WerewolfRole::villager);
  if (cfg_.shuffle_roles) rng.shuffle(roles);

  WerewolfPayload payload;
  payload.roles = roles;
  payload.alive.assign(static_cast<std::size_t>(n), true);
  payload.eliminated_turn.assign(static_cast<std::size_t>(n), -1);

  EpisodeSetup setup;
  for (int s = 0; s < n; ++s) {
    RoleSpec role;
    role.role_id = s;
    role.goal = to_string(roles[static_cast<std::size_t>(s)]);
    switch (roles[static_cast<std::size_t>(s)]) {
      case WerewolfRole::werewolf: {
        role.team = kWerewolfTeam;
        role.persona_prompt = {role_werewolf_, player_tag_token(s)};
        for (int t = 0; t < n; ++t) {
          if (t != s && roles[static_cast<std::size_t>(t)] == WerewolfRole::werewolf) {
            role.persona_prompt.push_back(player_tag_token(t));
          }
        }
        break;
      }
      case WerewolfRole::seer:
        role.team = kVillagerTeam;
        role.persona_prompt = {role_seer_, player_tag_token(s)};
        break;
      case WerewolfRole::villager:
        role.team = kVillagerTeam;
        role.persona_prompt = {role_villager_, player_tag_token(s)};
        break;
    }
    setup.roles.push_back(std::move(role));
  }
  setup.initial_state.active.assign(static_cast<std::size_t>(n), true);
  setup.initial_state.env_state = payload;
  return setup;
}

StepResult WerewolfEnv::step(const ConversationState& state,
                             const std::vector<Utterance>& utterances) const {
  WerewolfPayload payload = werewolf_payload(state);
  if (payload.terminal) throw std::logic_error("werewolf: step on terminal state");
  const int resolved_turn = state.turn_index - 1;  // state is post-append
  if (static_cast<int>(payload.phase_by_turn.size()) != resolved_turn) {
    throw std::logic_error("werewolf: phase log out of sync with turn index");
  }
  const WerewolfPhase phase = payload.phase;
  payload.phase_by_turn.push_back(phase);

  StepResult result;
  std::vector<Utterance> announcements;
  auto announce = [&](TokenSequence tokens) {
    Utterance u;
    u.role_id = moderator_role();
    u.turn_index = resolved_turn;
    u.system = true;
    tokens.push_back(vocab_.end_utterance());
    u.tokens = std::move(tokens);
    announcements.push_back(std::move(u));
  };

  auto is_wolf = [&](int s) { return payload.roles[static_cast<std::size_t>(s)] == WerewolfRole::werewolf; };
  auto eliminate = [&](int s) {
    payload.alive[static_cast<std::size_t>(s)] = false;
    payload.eliminated_turn[static_cast<std::size_t>(s)] = resolved_turn;
    announce({out_token(s)});
  };

  switch (phase) {
    case WerewolfPhase::night: {
      // Werewolves pick victims; plurality resolves, ties to the lowest seat.
      std::vector<int> tally(static_cast<std::size_t>(cfg_.n_players), 0);
      bool any_kill_vote = false;
      int seer_inspect = -1;
      for (const Utterance& u : utterances) {
        if (u.system || !payload.alive[static_cast<std::size_t>(u.role_id)]) continue;
        const WerewolfRole author = payload.roles[static_cast<std::size_t>(u.role_id)];
        for (TokenId tok : u.tokens) {
          if (author == WerewolfRole::werewolf) {
            if (auto target = kill_target(tok)) {
              if (payload.alive[static_cast<std::size_t>(*target)] && !is_wolf(*target)) {
                ++tally[static_cast<std::size_t>(*target)];
                any_kill_vote = true;
                break;
              }
            }
          } else if (author == WerewolfRole::seer) {
            if (auto target = inspect_target(tok)) {
              if (payload.alive[static_cast<std::size_t>(*target)] && *target != u.role_id) {
                seer_inspect = *target;
                break;
              }
            }
          }
        }
      }
      if (any_kill_vote) {
        int victim = 0;
        for (int s = 1; s < cfg_.n_players; ++s) {
          if (tally[static_cast<std::size_t>(s)] > tally[static_cast<std::size_t>(victim)]) victim = s;
        }
        eliminate(victim);
      }
      if (seer_inspect >= 0) {
        const WerewolfRole inspected = payload.roles[static_cast<std::size_t>(seer_inspect)];
        payload.seer_knowledge.emplace_back(seer_inspect, inspected);
        announce({inspected == WerewolfRole::werewolf ? report_wolf_token(seer_inspect)
                                                      : report_good_token(seer_inspect)});
      }
      if (auto winner = werewolf_win_check(payload.alive_werewolves(),
                                           payload.alive_villager_side())) {
        payload.terminal = true;
        payload.winner = winner;
      } else {
        payload.phase = WerewolfPhase::day_discussion;
        announce({phase_token(WerewolfPhase::day_discussion)});
      }
      break;
    }
    case WerewolfPhase::day_discussion: {
      payload.phase = WerewolfPhase::day_vote;
      announce({phase_token(WerewolfPhase::day_vote)});
      break;
    }
    case WerewolfPhase::day_vote: {
      std::vector<int> tally(static_cast<std::size_t>(cfg_.n_players), 0);
      bool any_vote = false;
      for (const Utterance& u : utterances) {
        if (u.system || !payload.alive[static_cast<std::size_t>(u.role_id)]) continue;
        for (TokenId tok : u.tokens) {
          if (auto target = vote_target(tok)) {
            if (payload.alive[static_cast<std::size_t>(*target)] && *target != u.role_id) {
              ++tally[static_cast<std::size_t>(*target)];
              any_vote = true;
              break;
            }
          }
        }
      }
      if (any_vote) {
        int victim = 0;
        for (int s = 1; s < cfg_.n_players; ++s) {
          if (tally[static_cast<std::size_t>(s)] > tally[static_cast<std::size_t>(victim)]) victim = s;
        }
        eliminate(victim);
      }
      if (auto winner = werewolf_win_check(payload.alive_werewolves(),
                                           payload.alive_villager_side())) {
        payload.terminal = true;
        payload.winner = winner;
      } else if (payload.round >= max_rounds_) {
        // Round budget exhausted: score the standing board by the same rule.
        payload.terminal = true;
        payload.winner = payload.alive_werewolves() >= payload.alive_villager_side()
                             ? kWerewolfTeam
                             : kVillagerTeam;
        payload.round_limited = true;
      } else {
        payload.round += 1;
        payload.phase = WerewolfPhase::night;
        announce({phase_token(WerewolfPhase::night)});
      }
      break;
    }
  }

  result.state = state;
  result.state.history.insert(result.state.history.end(), announcements.begin(),
                              announcements.end());
  for (int s = 0; s < cfg_.n_players; ++s) {
    result.state.active[static_cast<std::size_t>(s)] = payload.alive[static_cast<std::size_t>(s)];
  }
  result.terminal = payload.terminal;
  result.state.env_state = std::move(payload);
  return result;
}

EpisodeOutcome WerewolfEnv::outcome(const ConversationState& state) const {
  const WerewolfPayload& payload = werewolf_payload(state);
  EpisodeOutcome out;
  out.turns_played = state.turn_index;
  if (payload.terminal) {
    out.winner_team = payload.winner;
    out.end_condition = payload.round_limited ? EndCondition::turn_limit : EndCondition::win_loss;
  } else {
    out.winner_team = payload.alive_werewolves() >= payload.alive_villager_side()
                          ? kWerewolfTeam
                          : kVillagerTeam;
    out.end_condition = EndCondition::turn_limit;
  }
  std::set<int> eliminated;
  std::vector<RoleSpec> roles;
  for (int s = 0; s < cfg_.n_players; ++s) {
    RoleSpec role;
    role.role_id = s;
    role.team = payload.roles[static_cast<std::size_t>(s)] == WerewolfRole::werewolf
                    ? kWerewolfTeam
                    : kVillagerTeam;
    roles.push_back(std::move(role));
    if (payload.eliminated_turn[static_cast<std::size_t>(s)] >= 0) eliminated.insert(s);
  }
  out.per_role_rewards = werewolf_rewards(out, roles, eliminated);
  return out;
}

bool WerewolfEnv::utterance_visible(const ConversationState& state, const Utterance& utterance,
                                    int viewer_role) const {
  const WerewolfPayload& payload = werewolf_payload(state);
  if (utterance.system) {
    // Seer inspection reports are private; OUT/PHASE announcements public.
    for (TokenId tok : utterance.tokens) {
      if (report_wolf_target(tok) || report_good_target(tok)) {
        for (std::size_t s = 0; s < payload.roles.size(); ++s) {
          if (payload.roles[s] == WerewolfRole::seer) return viewer_role == static_cast<int>(s);
        }
        return false;
      }
    }
    return true;
  }
  if (utterance.turn_index >= static_cast<int>(payload.phase_by_turn.size())) {
    // Same-turn utterances are never part of a context build.
    return false;
  }
  const WerewolfPhase phase = payload.phase_by_turn[static_cast<std::size_t>(utterance.turn_index)];
  if (phase != WerewolfPhase::night) return true;
  if (viewer_role == utterance.role_id) return true;
  const auto author = payload.roles[static_cast<std::size_t>(utterance.role_id)];
  if (viewer_role < 0 || viewer_role >= cfg_.n_players) return false;
  const auto viewer = payload.roles[static_cast<std::size_t>(viewer_role)];
  return author == WerewolfRole::werewolf && viewer == WerewolfRole::werewolf;
}

bool WerewolfEnv::token_legal_for(WerewolfPhase phase, WerewolfRole role, TokenId token) const {
  if (token == pass_ || (token >= first_filler_ && token < first_filler_ + n_filler_)) return true;
  switch (phase) {
    case WerewolfPhase::night:
      if (kill_target(token)) return role == WerewolfRole::werewolf;
      if (inspect_target(token)) return role == WerewolfRole::seer;
      return false;
    case WerewolfPhase::day_discussion:
      return accuse_target(token) || defend_target(token) || report_wolf_target(token) ||
             report_good_target(token) || token == claim_seer_;
    case WerewolfPhase::day_vote:
      return vote_target(token).has_value();
  }
  return false;
}

bool WerewolfEnv::utterance_phase_legal(const ConversationState& state,
                                        const Utterance& utterance) const {
  const WerewolfPayload& payload = werewolf_payload(state);
  if (utterance.role_id < 0 || utterance.role_id >= cfg_.n_players) return false;
  const WerewolfRole role = payload.roles[static_cast<std::size_t>(utterance.role_id)];
  for (TokenId tok : utterance.tokens) {
    if (tok == vocab_.end_utterance() || !player_token(tok)) continue;
    if (!token_legal_for(payload.phase, role, tok)) return false;
  }
  return true;
}

}  // namespace parley
