#pragma once

#include <optional>
#include <string>
#include <vector>

#include "parley/core.hpp"

namespace parley {

class Environment;

// Hierarchical advantage estimation: a turn-level GAE pass over last-token
// values with the end-of-episode reward, then an independent token-level GAE
// pass inside each turn using the (filter-masked) turn advantage as the
// pseudo-reward at the turn's last token.
struct AdvantageConfig {
  double gamma_turn = 0.9;
  double lambda_turn = 1.0;
  double gamma_token = 1.0;
  double lambda_token = 1.0;
  bool filter_enabled = true;
  // The masking rule as written zeroes failed turns unconditionally; set to
  // false to preserve negative advantages on failed turns.
  bool zero_negative_pseudo_rewards = true;

  bool operator==(const AdvantageConfig&) const = default;
};

struct TurnAdvantageResult {
  std::vector<double> advantages;
  std::vector<double> value_targets;  // advantage + value, per turn
};

// Per-turn rewards are zero except the last turn, which receives the episode
// reward; values bootstrap to zero past the final turn.
TurnAdvantageResult turn_level_advantages(const std::vector<double>& last_token_values,
                                          double episode_reward, const AdvantageConfig& cfg);

// pseudo_reward[t] = turn_advantages[t] if the turn passed, else 0.
std::vector<double> apply_quality_filter(const std::vector<double>& turn_advantages,
                                         const std::vector<bool>& filter_passed,
                                         bool zero_negative_too = true);

// Each turn is a closed sub-episode: zero rewards except the pseudo-reward at
// the last token, terminal value bootstrap of zero.
std::vector<std::vector<double>> token_level_advantages(
    const std::vector<std::vector<double>>& token_values_per_turn,
    const std::vector<double>& pseudo_rewards, const AdvantageConfig& cfg);

// Runs the full hierarchy on one trajectory in place: turn advantages and
// value targets from the recorded last-token values, filter masking, then
// per-turn token advantages.
void annotate_trajectory(TrajectoryRecord& record, const AdvantageConfig& cfg);

struct FilterVerdict {
  bool passed = true;
  std::vector<std::string> reasons;
};

// Rule-based proxies for the per-turn quality checks: grammar conformance,
// consecutive-token degeneration, verbatim copying of another participant,
// and environment phase legality.
struct QualityFilterConfig {
  bool enabled = true;
  double max_out_of_grammar_fraction = 0.25;
  int max_consecutive_repeats = 4;  // a run of this length fails
  int copy_min_tokens = 3;          // shorter utterances are never "copies"
  bool check_phase_legality = true;

  bool operator==(const QualityFilterConfig&) const = default;
};

FilterVerdict quality_filter(const Utterance& utterance, const ConversationState& pre_state,
                             const Environment& env, const QualityFilterConfig& cfg);

// Optional external per-turn evaluator speaking a line-delimited JSON
// request/response protocol on a child process's stdin/stdout.
struct EvaluatorRequest {
  std::int64_t episode_id = 0;
  int role_id = 0;
  int turn_index = 0;
  std::string utterance_text;
  std::string context_text;
};

class TurnEvaluator {
 public:
  virtual ~TurnEvaluator() = default;
  // nullopt signals timeout or protocol failure.
  virtual std::optional<FilterVerdict> evaluate(const EvaluatorRequest& request) = 0;
};

class LineProtocolEvaluator : public TurnEvaluator {
 public:
  // Spawns `command` via /bin/sh. One JSON request per line on its stdin; one
  // JSON response {"passed": bool, "reasons": [...]} per line on its stdout.
  LineProtocolEvaluator(const std::string& command, int timeout_ms);
  ~LineProtocolEvaluator() override;

  LineProtocolEvaluator(const LineProtocolEvaluator&) = delete;
  LineProtocolEvaluator& operator=(const LineProtocolEvaluator&) = delete;

  std::optional<FilterVerdict> evaluate(const EvaluatorRequest& request) override;

 private:
  int child_pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  int timeout_ms_ = 1000;
  std::string buffer_;
};

// Override semantics: a responding evaluator replaces the rule verdict; on
// timeout the turn is treated as passed (fail-open) or failed (fail-closed).
FilterVerdict resolve_filter_verdict(const FilterVerdict& rule_verdict, TurnEvaluator* evaluator,
                                     const EvaluatorRequest& request, bool fail_open,
                                     bool* timed_out = nullptr);

}  // namespace parley
