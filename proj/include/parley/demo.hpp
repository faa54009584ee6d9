#pragma once

#include <cstdint>
#include <vector>

#include "parley/env.hpp"
#include "parley/rollout.hpp"

namespace parley {

// Rule-based players used to generate cold-start demonstrations: negotiation
// bots that haggle toward their reserve and accept acceptable offers, and
// werewolf bots that coordinate kills and votes (wolves) or follow seer
// reports (villager side). They read the true environment payload, which is
// fine for demonstration data.
class ScriptedDispatch : public PolicyDispatch {
 public:
  explicit ScriptedDispatch(const Environment& env);
  SampledUtterance sample(int role_id, const TokenSequence& context, const RoleSpec& role,
                          const ConversationState& state, RngStream& rng) const override;

 private:
  SampledUtterance negotiation_move(const NegotiationEnv& env, int role_id,
                                    const ConversationState& state, RngStream& rng) const;
  SampledUtterance werewolf_move(const WerewolfEnv& env, int role_id,
                                 const ConversationState& state, RngStream& rng) const;

  const Environment* env_;
};

std::vector<EpisodeResult> generate_demonstrations(const Environment& env, int n_episodes,
                                                   std::uint64_t seed,
                                                   const RolloutOptions& options);

}  // namespace parley
