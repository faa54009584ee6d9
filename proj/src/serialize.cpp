#include "parley/serialize.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace parley {

using nlohmann::json;

namespace {

json role_to_json(const RoleSpec& r) {
  json j = {{"role_id", r.role_id}, {"persona_prompt", r.persona_prompt}, {"goal", r.goal}};
  if (r.team) j["team"] = *r.team;
  return j;
}

RoleSpec role_from_json(const json& j) {
  RoleSpec r;
  r.role_id = j.at("role_id").get<int>();
  r.persona_prompt = j.at("persona_prompt").get<TokenSequence>();
  r.goal = j.at("goal").get<std::string>();
  if (j.contains("team")) r.team = j["team"].get<std::string>();
  return r;
}

json utterance_to_json(const Utterance& u) {
  return {{"role_id", u.role_id},
          {"turn_index", u.turn_index},
          {"tokens", u.tokens},
          {"truncated", u.truncated},
          {"system", u.system}};
}

Utterance utterance_from_json(const json& j) {
  Utterance u;
  u.role_id = j.at("role_id").get<int>();
  u.turn_index = j.at("turn_index").get<int>();
  u.tokens = j.at("tokens").get<TokenSequence>();
  u.truncated = j.at("truncated").get<bool>();
  u.system = j.at("system").get<bool>();
  return u;
}

json turn_to_json(const TurnEntry& t) {
  return {{"turn_index", t.turn_index},
          {"tokens", t.tokens},
          {"token_log_probs", t.token_log_probs},
          {"token_values", t.token_values},
          {"last_token_value", t.last_token_value},
          {"filter_passed", t.filter_passed},
          {"filter_reasons", t.filter_reasons},
          {"truncated", t.truncated}};
}

TurnEntry turn_from_json(const json& j) {
  TurnEntry t;
  t.turn_index = j.at("turn_index").get<int>();
  t.tokens = j.at("tokens").get<TokenSequence>();
  t.token_log_probs = j.at("token_log_probs").get<std::vector<double>>();
  t.token_values = j.at("token_values").get<std::vector<double>>();
  t.last_token_value = j.at("last_token_value").get<double>();
  t.filter_passed = j.at("filter_passed").get<bool>();
  t.filter_reasons = j.at("filter_reasons").get<std::vector<std::string>>();
  t.truncated = j.at("truncated").get<bool>();
  return t;
}

json trajectory_to_json(const TrajectoryRecord& t) {
  json turns = json::array();
  for (const TurnEntry& e : t.turns) turns.push_back(turn_to_json(e));
  return {{"role_id", t.role_id},
          {"turns", std::move(turns)},
          {"episode_reward", t.episode_reward},
          {"turn_advantages", t.turn_advantages},
          {"token_advantages", t.token_advantages},
          {"turn_value_targets", t.turn_value_targets}};
}

TrajectoryRecord trajectory_from_json(const json& j) {
  TrajectoryRecord t;
  t.role_id = j.at("role_id").get<int>();
  for (const json& e : j.at("turns")) t.turns.push_back(turn_from_json(e));
  t.episode_reward = j.at("episode_reward").get<double>();
  t.turn_advantages = j.at("turn_advantages").get<std::vector<double>>();
  t.token_advantages = j.at("token_advantages").get<std::vector<std::vector<double>>>();
  t.turn_value_targets = j.at("turn_value_targets").get<std::vector<double>>();
  return t;
}

json outcome_to_json(const EpisodeOutcome& o) {
  json rewards = json::object();
  for (const auto& [role, reward] : o.per_role_rewards) rewards[std::to_string(role)] = reward;
  json j = {{"end_condition", to_string(o.end_condition)},
            {"per_role_rewards", std::move(rewards)},
            {"turns_played", o.turns_played}};
  if (o.winner_team) j["winner_team"] = *o.winner_team;
  return j;
}

EpisodeOutcome outcome_from_json(const json& j) {
  EpisodeOutcome o;
  o.end_condition = end_condition_from_string(j.at("end_condition").get<std::string>());
  for (const auto& [key, value] : j.at("per_role_rewards").items()) {
    o.per_role_rewards[std::stoi(key)] = value.get<double>();
  }
  o.turns_played = j.at("turns_played").get<int>();
  if (j.contains("winner_team")) o.winner_team = j["winner_team"].get<std::string>();
  return o;
}

}  // namespace

EpisodeRecord to_record(const EpisodeResult& result, const Vocabulary& vocab) {
  EpisodeRecord record;
  record.episode_id = result.episode_id;
  record.env_id = result.env_id;
  record.seed = result.seed;
  record.roles = result.roles;
  record.history = result.final_state.history;
  record.history_text.reserve(record.history.size());
  for (const Utterance& u : record.history) {
    record.history_text.push_back(render_tokens(vocab, u.tokens));
  }
  record.trajectories = result.trajectories;
  record.outcome = result.outcome;
  record.aborted = result.aborted;
  record.abort_reason = result.abort_reason;
  return record;
}

std::string episode_record_to_json(const EpisodeRecord& record) {
  json history = json::array();
  for (const Utterance& u : record.history) history.push_back(utterance_to_json(u));
  json trajectories = json::array();
  for (const TrajectoryRecord& t : record.trajectories) {
    trajectories.push_back(trajectory_to_json(t));
  }
  json roles = json::array();
  for (const RoleSpec& r : record.roles) roles.push_back(role_to_json(r));
  json j = {{"episode_id", record.episode_id},
            {"env_id", record.env_id},
            {"seed", record.seed},
            {"roles", std::move(roles)},
            {"history", std::move(history)},
            {"history_text", record.history_text},
            {"trajectories", std::move(trajectories)},
            {"outcome", outcome_to_json(record.outcome)},
            {"aborted", record.aborted},
            {"abort_reason", record.abort_reason}};
  return j.dump();
}

EpisodeRecord episode_record_from_json(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("episode record: parse error: ") + e.what());
  }
  EpisodeRecord record;
  record.episode_id = j.at("episode_id").get<std::int64_t>();
  record.env_id = j.at("env_id").get<std::string>();
  record.seed = j.at("seed").get<std::uint64_t>();
  for (const json& r : j.at("roles")) record.roles.push_back(role_from_json(r));
  for (const json& u : j.at("history")) record.history.push_back(utterance_from_json(u));
  record.history_text = j.at("history_text").get<std::vector<std::string>>();
  for (const json& t : j.at("trajectories")) {
    record.trajectories.push_back(trajectory_from_json(t));
  }
  record.outcome = outcome_from_json(j.at("outcome"));
  record.aborted = j.at("aborted").get<bool>();
  record.abort_reason = j.at("abort_reason").get<std::string>();
  return record;
}

void append_episodes_jsonl(std::ostream& out, const std::vector<EpisodeRecord>& records) {
  for (const EpisodeRecord& r : records) out << episode_record_to_json(r) << '\n';
}

std::vector<EpisodeRecord> read_episodes_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trajectory file " + path);
  std::vector<EpisodeRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    records.push_back(episode_record_from_json(line));
  }
  return records;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

std::string render_transcript(const EpisodeRecord& record) {
  std::ostringstream os;
  os << "episode " << record.episode_id << "  env=" << record.env_id << "  seed=" << record.seed
     << "\n";
  for (const RoleSpec& role : record.roles) {
    os << "  role " << role.role_id;
    if (role.team) os << "  team=" << *role.team;
    if (!role.goal.empty()) os << "  goal=" << role.goal;
    os << "\n";
  }
  if (record.aborted) {
    os << "ABORTED: " << record.abort_reason << "\n";
  }

  // Per-trajectory turn annotations keyed by (role, turn).
  auto annotation = [&](int role_id, int turn_index) -> const TurnEntry* {
    for (const TrajectoryRecord& t : record.trajectories) {
      if (t.role_id != role_id) continue;
      for (const TurnEntry& e : t.turns) {
        if (e.turn_index == turn_index) return &e;
      }
    }
    return nullptr;
  };
  auto turn_advantage = [&](int role_id, int turn_index) -> const double* {
    for (const TrajectoryRecord& t : record.trajectories) {
      if (t.role_id != role_id) continue;
      for (std::size_t i = 0; i < t.turns.size(); ++i) {
        if (t.turns[i].turn_index == turn_index && i < t.turn_advantages.size()) {
          return &t.turn_advantages[i];
        }
      }
    }
    return nullptr;
  };

  int current_turn = -1;
  for (std::size_t i = 0; i < record.history.size(); ++i) {
    const Utterance& u = record.history[i];
    if (u.turn_index != current_turn) {
      current_turn = u.turn_index;
      os << "-- turn " << current_turn << "\n";
    }
    os << (u.system ? "  [env]    " : "  [role " + std::to_string(u.role_id) + "] ");
    os << (i < record.history_text.size() ? record.history_text[i] : std::string("<?>"));
    if (u.truncated) os << "  (truncated)";
    if (!u.system) {
      if (const TurnEntry* entry = annotation(u.role_id, u.turn_index)) {
        if (!entry->filter_passed) {
          os << "  FILTERED";
          for (const std::string& reason : entry->filter_reasons) os << ":" << reason;
        }
      }
      if (const double* adv = turn_advantage(u.role_id, u.turn_index)) {
        os << "  A=" << format_double(*adv);
      }
    }
    os << "\n";
  }
  os << "outcome: " << to_string(record.outcome.end_condition);
  if (record.outcome.winner_team) os << "  winner=" << *record.outcome.winner_team;
  os << "  turns=" << record.outcome.turns_played << "\n";
  for (const auto& [role, reward] : record.outcome.per_role_rewards) {
    os << "  reward[" << role << "] = " << format_double(reward) << "\n";
  }
  return os.str();
}

std::string metrics_csv_header() {
  return "step,mean_episode_reward,policy_entropy,clip_fraction,value_loss,filter_pass_rate,"
         "win_rate";
}

std::string metrics_csv_row(const TrainingMetrics& m) {
  std::ostringstream os;
  os << m.step << ',' << format_double(m.mean_episode_reward) << ','
     << format_double(m.policy_entropy) << ',' << format_double(m.clip_fraction) << ','
     << format_double(m.value_loss) << ',' << format_double(m.filter_pass_rate) << ','
     << format_double(m.win_rate);
  return os.str();
}

}  // namespace parley
