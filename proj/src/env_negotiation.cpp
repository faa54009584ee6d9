#include <algorithm>
#include <stdexcept>
#include <string>

#include "parley/env.hpp"

namespace parley {

namespace {

enum class Action { none, offer, accept, reject, leave };

struct ParsedAction {
  Action kind = Action::none;
  int price = -1;
};

}  // namespace

NegotiationEnv::NegotiationEnv(NegotiationConfig cfg) : cfg_(cfg) {
  if (cfg_.max_turns < 1) throw std::invalid_argument("negotiation: max_turns must be >= 1");
  if (cfg_.n_filler_tokens < 1) throw std::invalid_argument("negotiation: need filler tokens");
  std::vector<std::string> tokens;
  tokens.push_back("GAME_NEGOTIATION");
  game_tag_ = 0;
  first_offer_ = static_cast<TokenId>(tokens.size());
  for (int k = 0; k <= 10; ++k) tokens.push_back("OFFER_" + std::to_string(k));
  accept_ = static_cast<TokenId>(tokens.size());
  tokens.push_back("ACCEPT");
  reject_ = static_cast<TokenId>(tokens.size());
  tokens.push_back("REJECT");
  leave_ = static_cast<TokenId>(tokens.size());
  tokens.push_back("LEAVE");
  first_filler_ = static_cast<TokenId>(tokens.size());
  for (int i = 0; i < cfg_.n_filler_tokens; ++i) tokens.push_back("FILLER_" + std::to_string(i));
  persona_high_ = static_cast<TokenId>(tokens.size());
  tokens.push_back("PERSONA_HIGH");
  persona_low_ = static_cast<TokenId>(tokens.size());
  tokens.push_back("PERSONA_LOW");
  first_reserve_ = static_cast<TokenId>(tokens.size());
  for (int k = 0; k <= 10; ++k) tokens.push_back("RESERVE_" + std::to_string(k));
  const TokenId first_player = static_cast<TokenId>(tokens.size());
  tokens.push_back("PLAYER_0");
  tokens.push_back("PLAYER_1");
  tokens.push_back(kEndUtteranceSymbol);
  vocab_ = Vocabulary::from_tokens(std::move(tokens));
  initial_prompt_ = {game_tag_};
  speaker_tags_ = {first_player, static_cast<TokenId>(first_player + 1)};
}

TokenId NegotiationEnv::offer_token(int price) const {
  if (price < 0 || price > 10) throw std::invalid_argument("offer price outside grid");
  return first_offer_ + price;
}

TokenId NegotiationEnv::filler_token(int i) const {
  if (i < 0 || i >= cfg_.n_filler_tokens) throw std::invalid_argument("bad filler index");
  return first_filler_ + i;
}

std::optional<int> NegotiationEnv::offer_price(TokenId token) const {
  if (token >= first_offer_ && token < first_offer_ + 11) return token - first_offer_;
  return std::nullopt;
}

bool NegotiationEnv::player_token(TokenId token) const {
  return (token >= first_offer_ && token < first_offer_ + 11) || token == accept_ ||
         token == reject_ || token == leave_ ||
         (token >= first_filler_ && token < first_filler_ + cfg_.n_filler_tokens);
}

EpisodeSetup NegotiationEnv::reset(RngStream& rng) const {
  // Reserves are sampled with a nonempty agreement zone (high <= low) so a
  // deal is always reachable.
  NegotiationPayload payload;
  int high_reserve = cfg_.fixed_high_reserve;
  int low_reserve = cfg_.fixed_low_reserve;
  if (cfg_.randomize_reserves) {
    high_reserve = 2 + rng.next_int(5);                     // 2..6
    low_reserve = high_reserve + rng.next_int(9 - high_reserve);  // high..8
  }
  payload.goals[0] = {NegotiationGoal::Side::high, high_reserve};
  payload.goals[1] = {NegotiationGoal::Side::low, low_reserve};

  EpisodeSetup setup;
  for (int r = 0; r < 2; ++r) {
    RoleSpec role;
    role.role_id = r;
    const bool high = payload.goals[r].side == NegotiationGoal::Side::high;
    role.persona_prompt = {high ? persona_high_ : persona_low_,
                           first_reserve_ + payload.goals[r].reserve, speaker_tags_[r]};
    role.goal = (high ? "high:" : "low:") + std::to_string(payload.goals[r].reserve);
    setup.roles.push_back(std::move(role));
  }
  setup.initial_state.active = {true, true};
  setup.initial_state.env_state = payload;
  return setup;
}

StepResult NegotiationEnv::step(const ConversationState& state,
                                const std::vector<Utterance>& utterances) const {
  NegotiationPayload payload = negotiation_payload(state);
  if (payload.terminal) throw std::logic_error("negotiation: step on terminal state");

  // Effective action per role: the first grammar action in the utterance.
  // An ACCEPT with no standing opposing offer is non-binding and the
  // utterance degrades to filler.
  ParsedAction actions[2];
  for (const Utterance& u : utterances) {
    if (u.system) continue;
    ParsedAction parsed;
    for (TokenId t : u.tokens) {
      if (auto price = offer_price(t)) {
        parsed = {Action::offer, *price};
        break;
      }
      if (t == accept_) {
        if (payload.last_offer_by_role[1 - u.role_id].has_value()) {
          parsed = {Action::accept, *payload.last_offer_by_role[1 - u.role_id]};
        }
        break;
      }
      if (t == reject_) {
        parsed = {Action::reject, -1};
        break;
      }
      if (t == leave_) {
        parsed = {Action::leave, -1};
        break;
      }
    }
    actions[u.role_id] = parsed;
  }

  // Agreement first; a lone ACCEPT binds its opponent's standing offer, and a
  // simultaneous double ACCEPT resolves in favor of role 0's acceptance.
  for (int r = 0; r < 2; ++r) {
    if (actions[r].kind == Action::accept) {
      payload.agreed_price = actions[r].price;
      payload.terminal = true;
      payload.end_condition = EndCondition::consensus;
      break;
    }
  }
  if (!payload.terminal) {
    const bool left = actions[0].kind == Action::leave || actions[1].kind == Action::leave;
    const bool double_reject =
        actions[0].kind == Action::reject && actions[1].kind == Action::reject;
    if (left || double_reject) {
      payload.terminal = true;
      payload.end_condition = EndCondition::abstention;
    }
  }
  if (!payload.terminal) {
    for (int r = 0; r < 2; ++r) {
      if (actions[r].kind == Action::offer) payload.last_offer_by_role[r] = actions[r].price;
    }
    if (state.turn_index >= cfg_.max_turns) {
      payload.terminal = true;
      payload.end_condition = EndCondition::turn_limit;
    }
  }

  StepResult result;
  result.state = state;
  result.state.env_state = payload;
  result.terminal = payload.terminal;
  return result;
}

std::map<int, double> negotiation_rewards(const std::optional<int>& agreed_price,
                                          const NegotiationGoal goals[2],
                                          double agreement_bonus) {
  std::map<int, double> rewards;
  if (!agreed_price) {
    rewards[0] = 0.0;
    rewards[1] = 0.0;
    return rewards;
  }
  const double k = static_cast<double>(*agreed_price);
  for (int r = 0; r < 2; ++r) {
    const double base = goals[r].side == NegotiationGoal::Side::high ? k / 10.0 : (10.0 - k) / 10.0;
    rewards[r] = base + agreement_bonus;
  }
  return rewards;
}

EpisodeOutcome NegotiationEnv::outcome(const ConversationState& state) const {
  const NegotiationPayload& payload = negotiation_payload(state);
  EpisodeOutcome out;
  out.end_condition = payload.terminal ? payload.end_condition : EndCondition::turn_limit;
  out.turns_played = state.turn_index;
  out.per_role_rewards = negotiation_rewards(payload.agreed_price, payload.goals,
                                             cfg_.agreement_bonus);
  return out;
}

}  // namespace parley
