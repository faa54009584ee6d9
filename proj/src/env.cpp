#include "parley/env.hpp"

#include <stdexcept>

namespace parley {

VisibilityFilter Environment::visibility_filter() const {
  return [this](const ConversationState& state, const Utterance& u, int viewer) {
    return utterance_visible(state, u, viewer);
  };
}

const WerewolfPayload& werewolf_payload(const ConversationState& state) {
  const WerewolfPayload* p = std::any_cast<WerewolfPayload>(&state.env_state);
  if (!p) throw std::invalid_argument("expected a werewolf environment state");
  return *p;
}

const NegotiationPayload& negotiation_payload(const ConversationState& state) {
  const NegotiationPayload* p = std::any_cast<NegotiationPayload>(&state.env_state);
  if (!p) throw std::invalid_argument("expected a negotiation environment state");
  return *p;
}

std::unique_ptr<Environment> make_environment(const EnvConfig& cfg) {
  if (cfg.env_id == "negotiation") return std::make_unique<NegotiationEnv>(cfg.negotiation);
  if (cfg.env_id == "werewolf") return std::make_unique<WerewolfEnv>(cfg.werewolf);
  throw std::invalid_argument("unknown env_id '" + cfg.env_id + "'");
}

}  // namespace parley
