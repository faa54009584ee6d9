#pragma once

#include <any>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace parley {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

// Symbol of the reserved utterance terminator present in every vocabulary.
inline constexpr const char* kEndUtteranceSymbol = "END";

class Vocabulary {
 public:
  Vocabulary() = default;

  // Token symbols must be unique; ids are assigned contiguously from 0 in the
  // given order. The list must contain the reserved END symbol.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  TokenId end_utterance() const { return end_id_; }
  bool valid(TokenId id) const { return id >= 0 && id < size(); }
  const std::string& symbol(TokenId id) const;
  std::optional<TokenId> id_of(std::string_view symbol) const;
  TokenId require(std::string_view symbol) const;  // throws if absent
  const std::vector<std::string>& symbols() const { return tokens_; }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId end_id_ = -1;
};

struct RoleSpec {
  int role_id = 0;
  TokenSequence persona_prompt;
  std::optional<std::string> team;
  std::string goal;  // environment-specific descriptor, e.g. "high:7"

  bool operator==(const RoleSpec&) const = default;
};

struct Utterance {
  int role_id = 0;
  int turn_index = 0;
  TokenSequence tokens;
  bool truncated = false;  // END was never sampled; cut at max length
  bool system = false;     // emitted by the environment, not the policy

  bool operator==(const Utterance&) const = default;
};

// Shared conversation history plus per-role activity flags. Immutable by
// convention: append_turn returns a new value, so a state snapshot can be
// shared read-only across concurrent per-role context builds.
struct ConversationState {
  std::vector<Utterance> history;  // ordered by (turn_index, role_id)
  int turn_index = 0;
  std::vector<bool> active;  // indexed by role_id
  std::any env_state;        // opaque environment payload

  int n_roles() const { return static_cast<int>(active.size()); }
  bool is_active(int role_id) const {
    return role_id >= 0 && role_id < n_roles() && active[static_cast<std::size_t>(role_id)];
  }
  int n_active() const;
};

struct TurnEntry {
  int turn_index = 0;
  TokenSequence tokens;
  std::vector<double> token_log_probs;
  std::vector<double> token_values;
  double last_token_value = 0.0;
  bool filter_passed = true;
  std::vector<std::string> filter_reasons;
  bool truncated = false;

  bool operator==(const TurnEntry&) const = default;
};

// One participant's multi-turn rollout with the credit-assignment annotations
// filled in after the advantage pass.
struct TrajectoryRecord {
  int role_id = 0;
  std::vector<TurnEntry> turns;
  double episode_reward = 0.0;
  std::vector<double> turn_advantages;
  std::vector<std::vector<double>> token_advantages;
  std::vector<double> turn_value_targets;

  bool operator==(const TrajectoryRecord&) const = default;
};

enum class EndCondition { consensus, abstention, win_loss, task_complete, turn_limit };

std::string to_string(EndCondition c);
EndCondition end_condition_from_string(std::string_view s);

struct EpisodeOutcome {
  EndCondition end_condition = EndCondition::turn_limit;
  std::map<int, double> per_role_rewards;
  std::optional<std::string> winner_team;
  int turns_played = 0;

  bool operator==(const EpisodeOutcome&) const = default;
};

// Environment-supplied predicate deciding whether a history utterance is
// visible to a viewer role when building its context.
using VisibilityFilter =
    std::function<bool(const ConversationState&, const Utterance&, int viewer_role)>;

const VisibilityFilter& full_visibility();

// Appends one synchronous turn: exactly one utterance per active role, all
// carrying the current turn index. The returned state has the utterances in
// role_id order and the turn counter advanced.
ConversationState append_turn(const ConversationState& state,
                              std::vector<Utterance> utterances);

// initial_prompt + persona_prompt + flattened visible history, in stored
// (turn, role) order. When speaker_tags is nonempty (one token per role_id,
// including any moderator pseudo-role), each utterance is prefixed with its
// author's tag, the token-level analogue of a "Player N:" transcript label.
TokenSequence build_context(const ConversationState& state, const RoleSpec& role,
                            const TokenSequence& initial_prompt,
                            const VisibilityFilter& visible = full_visibility(),
                            const TokenSequence& speaker_tags = {});

std::string render_tokens(const Vocabulary& vocab, const TokenSequence& tokens);

}  // namespace parley
