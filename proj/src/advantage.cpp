#include "parley/advantage.hpp"

#include <algorithm>
#include <cerrno>
#include <csignal>
#include <cstring>
#include <iostream>
#include <stdexcept>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "parley/env.hpp"

namespace parley {

TurnAdvantageResult turn_level_advantages(const std::vector<double>& last_token_values,
                                          double episode_reward, const AdvantageConfig& cfg) {
  const int n = static_cast<int>(last_token_values.size());
  if (n == 0) throw std::invalid_argument("turn_level_advantages: empty trajectory");
  TurnAdvantageResult out;
  out.advantages.assign(static_cast<std::size_t>(n), 0.0);
  out.value_targets.assign(static_cast<std::size_t>(n), 0.0);
  double next_advantage = 0.0;
  double next_value = 0.0;  // bootstrap past the final turn is zero
  for (int t = n - 1; t >= 0; --t) {
    const double reward = (t == n - 1) ? episode_reward : 0.0;
    const double value = last_token_values[static_cast<std::size_t>(t)];
    const double delta = reward + cfg.gamma_turn * next_value - value;
    const double advantage = delta + cfg.gamma_turn * cfg.lambda_turn * next_advantage;
    out.advantages[static_cast<std::size_t>(t)] = advantage;
    out.value_targets[static_cast<std::size_t>(t)] = advantage + value;
    next_advantage = advantage;
    next_value = value;
  }
  return out;
}

std::vector<double> apply_quality_filter(const std::vector<double>& turn_advantages,
                                         const std::vector<bool>& filter_passed,
                                         bool zero_negative_too) {
  if (turn_advantages.size() != filter_passed.size()) {
    throw std::invalid_argument("apply_quality_filter: length mismatch");
  }
  std::vector<double> pseudo = turn_advantages;
  for (std::size_t t = 0; t < pseudo.size(); ++t) {
    if (filter_passed[t]) continue;
    if (zero_negative_too || pseudo[t] > 0.0) pseudo[t] = 0.0;
  }
  return pseudo;
}

std::vector<std::vector<double>> token_level_advantages(
    const std::vector<std::vector<double>>& token_values_per_turn,
    const std::vector<double>& pseudo_rewards, const AdvantageConfig& cfg) {
  if (token_values_per_turn.size() != pseudo_rewards.size()) {
    throw std::invalid_argument("token_level_advantages: turn count mismatch");
  }
  std::vector<std::vector<double>> out(token_values_per_turn.size());
  for (std::size_t t = 0; t < token_values_per_turn.size(); ++t) {
    const std::vector<double>& values = token_values_per_turn[t];
    const int len = static_cast<int>(values.size());
    if (len == 0) throw std::invalid_argument("token_level_advantages: empty turn");
    out[t].assign(static_cast<std::size_t>(len), 0.0);
    double next_advantage = 0.0;
    double next_value = 0.0;  // each turn is a closed sub-episode
    for (int l = len - 1; l >= 0; --l) {
      const double reward = (l == len - 1) ? pseudo_rewards[t] : 0.0;
      const double delta = reward + cfg.gamma_token * next_value - values[static_cast<std::size_t>(l)];
      const double advantage = delta + cfg.gamma_token * cfg.lambda_token * next_advantage;
      out[t][static_cast<std::size_t>(l)] = advantage;
      next_advantage = advantage;
      next_value = values[static_cast<std::size_t>(l)];
    }
  }
  return out;
}

void annotate_trajectory(TrajectoryRecord& record, const AdvantageConfig& cfg) {
  std::vector<double> last_values;
  std::vector<bool> passed;
  std::vector<std::vector<double>> token_values;
  last_values.reserve(record.turns.size());
  for (const TurnEntry& turn : record.turns) {
    last_values.push_back(turn.last_token_value);
    passed.push_back(turn.filter_passed);
    token_values.push_back(turn.token_values);
  }
  TurnAdvantageResult turn_stage = turn_level_advantages(last_values, record.episode_reward, cfg);
  record.turn_advantages = turn_stage.advantages;
  record.turn_value_targets = turn_stage.value_targets;
  std::vector<double> pseudo =
      cfg.filter_enabled
          ? apply_quality_filter(turn_stage.advantages, passed, cfg.zero_negative_pseudo_rewards)
          : turn_stage.advantages;
  record.token_advantages = token_level_advantages(token_values, pseudo, cfg);
}

FilterVerdict quality_filter(const Utterance& utterance, const ConversationState& pre_state,
                             const Environment& env, const QualityFilterConfig& cfg) {
  FilterVerdict verdict;
  if (!cfg.enabled) return verdict;
  const TokenId end = env.vocabulary().end_utterance();

  int content = 0, out_of_grammar = 0;
  for (TokenId t : utterance.tokens) {
    if (t == end) continue;
    ++content;
    if (!env.player_token(t)) ++out_of_grammar;
  }
  if (content > 0 &&
      static_cast<double>(out_of_grammar) / content > cfg.max_out_of_grammar_fraction) {
    verdict.passed = false;
    verdict.reasons.push_back("out_of_grammar");
  }

  int run = 1;
  for (std::size_t i = 1; i < utterance.tokens.size(); ++i) {
    run = (utterance.tokens[i] == utterance.tokens[i - 1]) ? run + 1 : 1;
    if (run >= cfg.max_consecutive_repeats) {
      verdict.passed = false;
      verdict.reasons.push_back("degeneration");
      break;
    }
  }

  if (static_cast<int>(utterance.tokens.size()) >= cfg.copy_min_tokens) {
    for (const Utterance& prior : pre_state.history) {
      if (prior.system || prior.role_id == utterance.role_id) continue;
      if (prior.tokens == utterance.tokens) {
        verdict.passed = false;
        verdict.reasons.push_back("copying");
        break;
      }
    }
  }

  if (cfg.check_phase_legality && !env.utterance_phase_legal(pre_state, utterance)) {
    verdict.passed = false;
    verdict.reasons.push_back("phase_illegal");
  }
  return verdict;
}

// ---------------------------------------------------------------------------
// External evaluator over a child process pipe.
// ---------------------------------------------------------------------------

LineProtocolEvaluator::LineProtocolEvaluator(const std::string& command, int timeout_ms)
    : timeout_ms_(timeout_ms) {
  int to_child[2], from_child[2];
  if (pipe(to_child) != 0 || pipe(from_child) != 0) {
    throw std::runtime_error("LineProtocolEvaluator: pipe() failed");
  }
  const pid_t pid = fork();
  if (pid < 0) throw std::runtime_error("LineProtocolEvaluator: fork() failed");
  if (pid == 0) {
    dup2(to_child[0], STDIN_FILENO);
    dup2(from_child[1], STDOUT_FILENO);
    close(to_child[0]);
    close(to_child[1]);
    close(from_child[0]);
    close(from_child[1]);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  child_pid_ = pid;
  to_child_ = to_child[1];
  from_child_ = from_child[0];
  close(to_child[0]);
  close(from_child[1]);
}

LineProtocolEvaluator::~LineProtocolEvaluator() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  if (child_pid_ > 0) {
    kill(child_pid_, SIGTERM);
    int status = 0;
    waitpid(child_pid_, &status, 0);
  }
}

std::optional<FilterVerdict> LineProtocolEvaluator::evaluate(const EvaluatorRequest& request) {
  nlohmann::json j = {{"episode_id", request.episode_id},
                      {"role_id", request.role_id},
                      {"turn_index", request.turn_index},
                      {"utterance", request.utterance_text},
                      {"context", request.context_text}};
  std::string line = j.dump() + "\n";
  std::size_t written = 0;
  while (written < line.size()) {
    ssize_t n = write(to_child_, line.data() + written, line.size() - written);
    if (n <= 0) return std::nullopt;
    written += static_cast<std::size_t>(n);
  }

  while (true) {
    auto newline = buffer_.find('\n');
    if (newline != std::string::npos) {
      std::string response = buffer_.substr(0, newline);
      buffer_.erase(0, newline + 1);
      try {
        nlohmann::json r = nlohmann::json::parse(response);
        FilterVerdict v;
        v.passed = r.at("passed").get<bool>();
        if (r.contains("reasons")) {
          for (const auto& reason : r["reasons"]) v.reasons.push_back(reason.get<std::string>());
        }
        return v;
      } catch (const nlohmann::json::exception&) {
        return std::nullopt;
      }
    }
    pollfd pfd{from_child_, POLLIN, 0};
    const int ready = poll(&pfd, 1, timeout_ms_);
    if (ready <= 0) return std::nullopt;  // timeout or error
    char chunk[4096];
    const ssize_t n = read(from_child_, chunk, sizeof(chunk));
    if (n <= 0) return std::nullopt;
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

FilterVerdict resolve_filter_verdict(const FilterVerdict& rule_verdict, TurnEvaluator* evaluator,
                                     const EvaluatorRequest& request, bool fail_open,
                                     bool* timed_out) {
  if (timed_out) *timed_out = false;
  if (evaluator == nullptr) return rule_verdict;
  if (auto verdict = evaluator->evaluate(request)) return *verdict;
  if (timed_out) *timed_out = true;
  FilterVerdict fallback;
  if (fail_open) {
    fallback.passed = true;
    fallback.reasons.push_back("external_evaluator_timeout");
  } else {
    fallback.passed = false;
    fallback.reasons.push_back("external_evaluator_timeout");
  }
  return fallback;
}

}  // namespace parley
