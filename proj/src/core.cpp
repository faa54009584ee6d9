#include "parley/core.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace parley {

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.index_.reserve(v.tokens_.size());
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    auto [it, inserted] = v.index_.emplace(v.tokens_[i], static_cast<TokenId>(i));
    if (!inserted) {
      throw std::invalid_argument("Vocabulary: duplicate token symbol '" + v.tokens_[i] + "'");
    }
  }
  auto end = v.index_.find(kEndUtteranceSymbol);
  if (end == v.index_.end()) {
    throw std::invalid_argument("Vocabulary: missing reserved END token");
  }
  v.end_id_ = end->second;
  return v;
}

const std::string& Vocabulary::symbol(TokenId id) const {
  if (!valid(id)) throw std::out_of_range("Vocabulary::symbol: bad token id");
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::id_of(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::require(std::string_view symbol) const {
  auto id = id_of(symbol);
  if (!id) throw std::invalid_argument("Vocabulary: unknown symbol '" + std::string(symbol) + "'");
  return *id;
}

int ConversationState::n_active() const {
  int n = 0;
  for (bool a : active) n += a ? 1 : 0;
  return n;
}

std::string to_string(EndCondition c) {
  switch (c) {
    case EndCondition::consensus: return "consensus";
    case EndCondition::abstention: return "abstention";
    case EndCondition::win_loss: return "win_loss";
    case EndCondition::task_complete: return "task_complete";
    case EndCondition::turn_limit: return "turn_limit";
  }
  throw std::logic_error("bad EndCondition");
}

EndCondition end_condition_from_string(std::string_view s) {
  if (s == "consensus") return EndCondition::consensus;
  if (s == "abstention") return EndCondition::abstention;
  if (s == "win_loss") return EndCondition::win_loss;
  if (s == "task_complete") return EndCondition::task_complete;
  if (s == "turn_limit") return EndCondition::turn_limit;
  throw std::invalid_argument("unknown end condition '" + std::string(s) + "'");
}

const VisibilityFilter& full_visibility() {
  static const VisibilityFilter f = [](const ConversationState&, const Utterance&, int) {
    return true;
  };
  return f;
}

ConversationState append_turn(const ConversationState& state,
                              std::vector<Utterance> utterances) {
  std::vector<bool> seen(static_cast<std::size_t>(state.n_roles()), false);
  for (const Utterance& u : utterances) {
    if (u.turn_index != state.turn_index) {
      throw std::invalid_argument("append_turn: utterance turn_index " +
                                  std::to_string(u.turn_index) + " != state turn " +
                                  std::to_string(state.turn_index));
    }
    if (u.role_id < 0 || u.role_id >= state.n_roles()) {
      throw std::invalid_argument("append_turn: unknown role_id " + std::to_string(u.role_id));
    }
    if (!state.is_active(u.role_id)) {
      throw std::invalid_argument("append_turn: utterance from inactive role " +
                                  std::to_string(u.role_id));
    }
    if (seen[static_cast<std::size_t>(u.role_id)]) {
      throw std::invalid_argument("append_turn: duplicate role_id " + std::to_string(u.role_id));
    }
    seen[static_cast<std::size_t>(u.role_id)] = true;
  }
  for (int r = 0; r < state.n_roles(); ++r) {
    if (state.is_active(r) && !seen[static_cast<std::size_t>(r)]) {
      throw std::invalid_argument("append_turn: missing utterance for active role " +
                                  std::to_string(r));
    }
  }

  ConversationState next = state;
  std::sort(utterances.begin(), utterances.end(),
            [](const Utterance& a, const Utterance& b) { return a.role_id < b.role_id; });
  next.history.insert(next.history.end(), std::make_move_iterator(utterances.begin()),
                      std::make_move_iterator(utterances.end()));
  next.turn_index = state.turn_index + 1;
  return next;
}

TokenSequence build_context(const ConversationState& state, const RoleSpec& role,
                            const TokenSequence& initial_prompt,
                            const VisibilityFilter& visible,
                            const TokenSequence& speaker_tags) {
  if (role.role_id < 0 || role.role_id >= state.n_roles()) {
    throw std::invalid_argument("build_context: unknown role_id " + std::to_string(role.role_id));
  }
  TokenSequence out;
  out.reserve(initial_prompt.size() + role.persona_prompt.size() + state.history.size() * 4);
  out.insert(out.end(), initial_prompt.begin(), initial_prompt.end());
  out.insert(out.end(), role.persona_prompt.begin(), role.persona_prompt.end());
  for (const Utterance& u : state.history) {
    if (!visible(state, u, role.role_id)) continue;
    if (!speaker_tags.empty()) {
      if (u.role_id < 0 || u.role_id >= static_cast<int>(speaker_tags.size())) {
        throw std::invalid_argument("build_context: no speaker tag for role " +
                                    std::to_string(u.role_id));
      }
      out.push_back(speaker_tags[static_cast<std::size_t>(u.role_id)]);
    }
    out.insert(out.end(), u.tokens.begin(), u.tokens.end());
  }
  return out;
}

std::string render_tokens(const Vocabulary& vocab, const TokenSequence& tokens) {
  std::ostringstream os;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) os << ' ';
    os << vocab.symbol(tokens[i]);
  }
  return os.str();
}

}  // namespace parley
