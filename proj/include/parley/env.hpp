#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "parley/core.hpp"
#include "parley/rng.hpp"

namespace parley {

struct EpisodeSetup {
  std::vector<RoleSpec> roles;
  ConversationState initial_state;
};

struct StepResult {
  ConversationState state;
  bool terminal = false;
};

// A multi-turn, multi-agent environment: roles and goals, an end condition,
// and one end-of-episode scalar reward per participant. Instances are
// immutable rule objects; all per-episode state lives in the
// ConversationState payload, so distinct episodes can run concurrently.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual const std::string& env_id() const = 0;
  virtual const Vocabulary& vocabulary() const = 0;
  virtual int n_roles() const = 0;
  virtual const TokenSequence& initial_prompt() const = 0;
  virtual int max_total_turns() const = 0;

  // Samples per-episode goals / role assignments.
  virtual EpisodeSetup reset(RngStream& rng) const = 0;

  // Resolves one synchronous turn. `state` is the post-append state; the
  // turn's utterances are passed separately for rule processing.
  virtual StepResult step(const ConversationState& state,
                          const std::vector<Utterance>& utterances) const = 0;

  // End condition and per-role rewards; callable on a terminal state or on a
  // turn-limited one.
  virtual EpisodeOutcome outcome(const ConversationState& state) const = 0;

  virtual bool utterance_visible(const ConversationState& state, const Utterance& utterance,
                                 int viewer_role) const {
    (void)state;
    (void)utterance;
    (void)viewer_role;
    return true;
  }

  // Token legality for the quality filter. Default: everything a player may
  // ever say is legal in any phase.
  virtual bool utterance_phase_legal(const ConversationState& state,
                                     const Utterance& utterance) const {
    (void)state;
    (void)utterance;
    return true;
  }

  // True for tokens a player may legitimately emit (the action grammar);
  // moderator-only and persona tokens are out of grammar.
  virtual bool player_token(TokenId token) const = 0;

  // Per-author tokens prefixed to each flattened utterance (indexable by every
  // role_id appearing in history, including a moderator pseudo-role). Empty
  // disables tagging.
  virtual const TokenSequence& speaker_tags() const {
    static const TokenSequence none;
    return none;
  }

  VisibilityFilter visibility_filter() const;
};

// ---------------------------------------------------------------------------
// Negotiation: two participants haggle over a price grid 0..10. ACCEPT binds
// to the most recent opposing OFFER from an earlier turn; LEAVE or a
// same-turn double REJECT ends the episode without agreement.
// ---------------------------------------------------------------------------

struct NegotiationGoal {
  enum class Side { high, low };
  Side side = Side::high;
  int reserve = 5;  // price threshold on the 0..10 grid
};

struct NegotiationConfig {
  int max_turns = 5;  // synchronous turns (== turns per participant)
  int n_filler_tokens = 36;
  double agreement_bonus = 0.2;
  bool randomize_reserves = true;
  int fixed_high_reserve = 4;
  int fixed_low_reserve = 6;

  bool operator==(const NegotiationConfig&) const = default;
};

struct NegotiationPayload {
  std::optional<int> last_offer_by_role[2];  // standing offers from past turns
  std::optional<int> agreed_price;
  bool terminal = false;
  EndCondition end_condition = EndCondition::turn_limit;
  NegotiationGoal goals[2];
};

class NegotiationEnv : public Environment {
 public:
  explicit NegotiationEnv(NegotiationConfig cfg = {});

  const std::string& env_id() const override { return id_; }
  const Vocabulary& vocabulary() const override { return vocab_; }
  int n_roles() const override { return 2; }
  const TokenSequence& initial_prompt() const override { return initial_prompt_; }
  int max_total_turns() const override { return cfg_.max_turns; }

  EpisodeSetup reset(RngStream& rng) const override;
  StepResult step(const ConversationState& state,
                  const std::vector<Utterance>& utterances) const override;
  EpisodeOutcome outcome(const ConversationState& state) const override;
  bool player_token(TokenId token) const override;
  const TokenSequence& speaker_tags() const override { return speaker_tags_; }

  const NegotiationConfig& config() const { return cfg_; }

  TokenId offer_token(int price) const;
  TokenId accept_token() const { return accept_; }
  TokenId reject_token() const { return reject_; }
  TokenId leave_token() const { return leave_; }
  TokenId filler_token(int i) const;
  std::optional<int> offer_price(TokenId token) const;

 private:
  std::string id_ = "negotiation";
  NegotiationConfig cfg_;
  Vocabulary vocab_;
  TokenSequence initial_prompt_;
  TokenSequence speaker_tags_;
  TokenId first_offer_ = 0, accept_ = 0, reject_ = 0, leave_ = 0, first_filler_ = 0;
  TokenId persona_high_ = 0, persona_low_ = 0, first_reserve_ = 0, game_tag_ = 0;
};

// Rewards per the agreement rule: price k gives the high side k/10 and the low
// side (10-k)/10, plus the agreement bonus for both; no agreement gives zero.
std::map<int, double> negotiation_rewards(const std::optional<int>& agreed_price,
                                          const NegotiationGoal goals[2], double agreement_bonus);

// ---------------------------------------------------------------------------
// Werewolf: 6 or 9 players, two teams, night/discussion/vote phases. Night
// kills and day votes resolve by plurality with ties to the lowest index.
// ---------------------------------------------------------------------------

enum class WerewolfRole { werewolf, seer, villager };
enum class WerewolfPhase { night, day_discussion, day_vote };

std::string to_string(WerewolfRole r);
std::string to_string(WerewolfPhase p);

inline constexpr const char* kWerewolfTeam = "werewolf";
inline constexpr const char* kVillagerTeam = "villager";

struct WerewolfConfig {
  int n_players = 6;   // 6 => 2 wolves + seer + 3 villagers; 9 => 3 wolves + seer + 5
  int max_rounds = 0;  // 0 => n_players
  bool shuffle_roles = true;

  bool operator==(const WerewolfConfig&) const = default;
};

struct WerewolfPayload {
  std::vector<WerewolfRole> roles;    // by seat
  std::vector<bool> alive;
  std::vector<int> eliminated_turn;   // -1 while alive
  WerewolfPhase phase = WerewolfPhase::night;
  int round = 1;
  std::vector<WerewolfPhase> phase_by_turn;  // acting phase of each past turn
  std::vector<std::pair<int, WerewolfRole>> seer_knowledge;
  bool terminal = false;
  bool round_limited = false;
  std::optional<std::string> winner;

  int alive_werewolves() const;
  int alive_villager_side() const;
};

class WerewolfEnv : public Environment {
 public:
  explicit WerewolfEnv(WerewolfConfig cfg = {});

  const std::string& env_id() const override { return id_; }
  const Vocabulary& vocabulary() const override { return vocab_; }
  int n_roles() const override { return cfg_.n_players; }
  const TokenSequence& initial_prompt() const override { return initial_prompt_; }
  int max_total_turns() const override { return 3 * max_rounds_; }

  EpisodeSetup reset(RngStream& rng) const override;
  StepResult step(const ConversationState& state,
                  const std::vector<Utterance>& utterances) const override;
  EpisodeOutcome outcome(const ConversationState& state) const override;
  bool utterance_visible(const ConversationState& state, const Utterance& utterance,
                         int viewer_role) const override;
  bool utterance_phase_legal(const ConversationState& state,
                             const Utterance& utterance) const override;
  bool player_token(TokenId token) const override;
  const TokenSequence& speaker_tags() const override { return speaker_tags_; }

  const WerewolfConfig& config() const { return cfg_; }
  int moderator_role() const { return cfg_.n_players; }

  // Targeted grammar accessors (target is a seat index).
  TokenId accuse_token(int target) const { return targeted(first_accuse_, target); }
  TokenId defend_token(int target) const { return targeted(first_defend_, target); }
  TokenId report_good_token(int target) const { return targeted(first_report_good_, target); }
  TokenId report_wolf_token(int target) const { return targeted(first_report_wolf_, target); }
  TokenId vote_token(int target) const { return targeted(first_vote_, target); }
  TokenId kill_token(int target) const { return targeted(first_kill_, target); }
  TokenId inspect_token(int target) const { return targeted(first_inspect_, target); }
  TokenId player_tag_token(int seat) const { return targeted(first_player_, seat); }
  TokenId out_token(int seat) const { return targeted(first_out_, seat); }
  TokenId claim_seer_token() const { return claim_seer_; }
  TokenId pass_token() const { return pass_; }
  TokenId phase_token(WerewolfPhase p) const;

  std::optional<int> target_of(TokenId token, TokenId first) const;
  std::optional<int> vote_target(TokenId token) const { return target_of(token, first_vote_); }
  std::optional<int> kill_target(TokenId token) const { return target_of(token, first_kill_); }
  std::optional<int> inspect_target(TokenId token) const { return target_of(token, first_inspect_); }
  std::optional<int> accuse_target(TokenId token) const { return target_of(token, first_accuse_); }
  std::optional<int> defend_target(TokenId token) const { return target_of(token, first_defend_); }
  std::optional<int> report_wolf_target(TokenId t) const { return target_of(t, first_report_wolf_); }
  std::optional<int> report_good_target(TokenId t) const { return target_of(t, first_report_good_); }

 private:
  TokenId targeted(TokenId first, int target) const;
  bool token_legal_for(WerewolfPhase phase, WerewolfRole role, TokenId token) const;

  std::string id_ = "werewolf";
  WerewolfConfig cfg_;
  int max_rounds_ = 6;
  Vocabulary vocab_;
  TokenSequence initial_prompt_;
  TokenSequence speaker_tags_;
  TokenId first_accuse_ = 0, first_defend_ = 0, first_report_good_ = 0, first_report_wolf_ = 0;
  TokenId first_vote_ = 0, first_kill_ = 0, first_inspect_ = 0, first_player_ = 0, first_out_ = 0;
  TokenId claim_seer_ = 0, pass_ = 0, phase_night_ = 0, phase_day_ = 0, phase_vote_ = 0;
  TokenId moderator_tag_ = 0;
  TokenId first_filler_ = 0, n_filler_ = 4;
  TokenId role_werewolf_ = 0, role_seer_ = 0, role_villager_ = 0, game_tag_ = 0;
};

// Winner if either side's condition holds: werewolves win when they are no
// fewer than the surviving villager side; villagers win when no werewolf
// remains.
std::optional<std::string> werewolf_win_check(int alive_werewolves, int alive_villager_side);
std::optional<std::string> werewolf_win_check(const ConversationState& state);

// +1 to each winner, discounted to 0.75 for winners eliminated before the
// end; losers get 0 either way.
std::map<int, double> werewolf_rewards(const EpisodeOutcome& outcome,
                                       const std::vector<RoleSpec>& roles,
                                       const std::set<int>& eliminated_before_end);

const WerewolfPayload& werewolf_payload(const ConversationState& state);
const NegotiationPayload& negotiation_payload(const ConversationState& state);

struct EnvConfig {
  std::string env_id = "negotiation";
  int max_utterance_tokens = 32;
  NegotiationConfig negotiation;
  WerewolfConfig werewolf;

  bool operator==(const EnvConfig&) const = default;
};

std::unique_ptr<Environment> make_environment(const EnvConfig& cfg);

}  // namespace parley
