#include "parley/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace parley {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("config: unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

void parse_negotiation(const json& j, NegotiationConfig& cfg) {
  reject_unknown_keys(j, {"max_turns", "n_filler_tokens", "agreement_bonus",
                          "randomize_reserves", "fixed_high_reserve", "fixed_low_reserve"},
                      "env.negotiation");
  read(j, "max_turns", cfg.max_turns);
  read(j, "n_filler_tokens", cfg.n_filler_tokens);
  read(j, "agreement_bonus", cfg.agreement_bonus);
  read(j, "randomize_reserves", cfg.randomize_reserves);
  read(j, "fixed_high_reserve", cfg.fixed_high_reserve);
  read(j, "fixed_low_reserve", cfg.fixed_low_reserve);
}

void parse_werewolf(const json& j, WerewolfConfig& cfg) {
  reject_unknown_keys(j, {"n_players", "max_rounds", "shuffle_roles"}, "env.werewolf");
  read(j, "n_players", cfg.n_players);
  read(j, "max_rounds", cfg.max_rounds);
  read(j, "shuffle_roles", cfg.shuffle_roles);
}

void parse_env(const json& j, EnvConfig& cfg) {
  reject_unknown_keys(j, {"env_id", "max_utterance_tokens", "negotiation", "werewolf"}, "env");
  read(j, "env_id", cfg.env_id);
  read(j, "max_utterance_tokens", cfg.max_utterance_tokens);
  if (j.contains("negotiation")) parse_negotiation(j["negotiation"], cfg.negotiation);
  if (j.contains("werewolf")) parse_werewolf(j["werewolf"], cfg.werewolf);
}

void parse_featurizer(const json& j, FeaturizerConfig& cfg) {
  reject_unknown_keys(j, {"feature_dim", "embed_dim", "window", "max_roles", "max_ngram",
                          "recency_decay", "hash_seed"},
                      "featurizer");
  read(j, "feature_dim", cfg.feature_dim);
  read(j, "embed_dim", cfg.embed_dim);
  read(j, "window", cfg.window);
  read(j, "max_roles", cfg.max_roles);
  read(j, "max_ngram", cfg.max_ngram);
  read(j, "recency_decay", cfg.recency_decay);
  read(j, "hash_seed", cfg.hash_seed);
}

void parse_sampling(const json& j, SamplingConfig& cfg) {
  reject_unknown_keys(j, {"temperature", "greedy"}, "sampling");
  read(j, "temperature", cfg.temperature);
  read(j, "greedy", cfg.greedy);
}

void parse_advantage(const json& j, AdvantageConfig& cfg) {
  reject_unknown_keys(j, {"gamma_turn", "lambda_turn", "gamma_token", "lambda_token",
                          "filter_enabled", "zero_negative_pseudo_rewards"},
                      "advantage");
  read(j, "gamma_turn", cfg.gamma_turn);
  read(j, "lambda_turn", cfg.lambda_turn);
  read(j, "gamma_token", cfg.gamma_token);
  read(j, "lambda_token", cfg.lambda_token);
  read(j, "filter_enabled", cfg.filter_enabled);
  read(j, "zero_negative_pseudo_rewards", cfg.zero_negative_pseudo_rewards);
}

void parse_filter(const json& j, QualityFilterConfig& cfg) {
  reject_unknown_keys(j, {"enabled", "max_out_of_grammar_fraction", "max_consecutive_repeats",
                          "copy_min_tokens", "check_phase_legality"},
                      "filter");
  read(j, "enabled", cfg.enabled);
  read(j, "max_out_of_grammar_fraction", cfg.max_out_of_grammar_fraction);
  read(j, "max_consecutive_repeats", cfg.max_consecutive_repeats);
  read(j, "copy_min_tokens", cfg.copy_min_tokens);
  read(j, "check_phase_legality", cfg.check_phase_legality);
}

void parse_external(const json& j, ExternalEvaluatorConfig& cfg) {
  reject_unknown_keys(j, {"command", "timeout_ms", "fail_open"}, "external_evaluator");
  read(j, "command", cfg.command);
  read(j, "timeout_ms", cfg.timeout_ms);
  read(j, "fail_open", cfg.fail_open);
}

void parse_early_stop(const json& j, EarlyStopConfig& cfg) {
  reject_unknown_keys(j, {"entropy_rise_patience", "filter_fail_threshold"}, "train.early_stop");
  read(j, "entropy_rise_patience", cfg.entropy_rise_patience);
  read(j, "filter_fail_threshold", cfg.filter_fail_threshold);
}

void parse_train(const json& j, TrainConfig& cfg) {
  reject_unknown_keys(j, {"clip_epsilon", "learning_rate", "epochs", "value_loss_coeff",
                          "entropy_bonus_coeff", "entropy_log_interval", "early_stop", "steps",
                          "episodes_per_batch", "warm_start_steps", "imitation_learning_rate",
                          "demo_pool_episodes", "normalize_advantages", "checkpoint_interval",
                          "log_trajectories"},
                      "train");
  read(j, "clip_epsilon", cfg.clip_epsilon);
  read(j, "learning_rate", cfg.learning_rate);
  read(j, "epochs", cfg.epochs);
  read(j, "value_loss_coeff", cfg.value_loss_coeff);
  read(j, "entropy_bonus_coeff", cfg.entropy_bonus_coeff);
  read(j, "entropy_log_interval", cfg.entropy_log_interval);
  if (j.contains("early_stop")) parse_early_stop(j["early_stop"], cfg.early_stop);
  read(j, "steps", cfg.steps);
  read(j, "episodes_per_batch", cfg.episodes_per_batch);
  read(j, "warm_start_steps", cfg.warm_start_steps);
  read(j, "imitation_learning_rate", cfg.imitation_learning_rate);
  read(j, "demo_pool_episodes", cfg.demo_pool_episodes);
  read(j, "normalize_advantages", cfg.normalize_advantages);
  read(j, "checkpoint_interval", cfg.checkpoint_interval);
  read(j, "log_trajectories", cfg.log_trajectories);
}

void parse_arena(const json& j, ArenaSection& cfg) {
  reject_unknown_keys(j, {"n_episodes", "side_swap", "temperature", "greedy"}, "arena");
  read(j, "n_episodes", cfg.n_episodes);
  read(j, "side_swap", cfg.side_swap);
  read(j, "temperature", cfg.temperature);
  read(j, "greedy", cfg.greedy);
}

void parse_io(const json& j, IoConfig& cfg) {
  reject_unknown_keys(j, {"out_dir", "workers"}, "io");
  read(j, "out_dir", cfg.out_dir);
  read(j, "workers", cfg.workers);
}

void check(bool ok, const std::string& message) {
  if (!ok) throw ConfigError("config: " + message);
}

void check_unit_interval(double v, const char* name) {
  check(v >= 0.0 && v <= 1.0, std::string(name) + " must be in [0, 1]");
}

}  // namespace

FullConfig parse_config_text(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  reject_unknown_keys(j, {"seed", "env", "featurizer", "sampling", "advantage", "filter",
                          "external_evaluator", "train", "arena", "io"},
                      "top level");
  FullConfig cfg;
  read(j, "seed", cfg.seed);
  if (j.contains("env")) parse_env(j["env"], cfg.env);
  if (j.contains("featurizer")) parse_featurizer(j["featurizer"], cfg.featurizer);
  if (j.contains("sampling")) parse_sampling(j["sampling"], cfg.sampling);
  if (j.contains("advantage")) parse_advantage(j["advantage"], cfg.advantage);
  if (j.contains("filter")) parse_filter(j["filter"], cfg.filter);
  if (j.contains("external_evaluator")) parse_external(j["external_evaluator"], cfg.external_evaluator);
  if (j.contains("train")) parse_train(j["train"], cfg.train);
  if (j.contains("arena")) parse_arena(j["arena"], cfg.arena);
  if (j.contains("io")) parse_io(j["io"], cfg.io);
  validate_config(cfg);
  return cfg;
}

FullConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

void validate_config(const FullConfig& cfg) {
  check(cfg.env.env_id == "negotiation" || cfg.env.env_id == "werewolf",
        "env.env_id must be 'negotiation' or 'werewolf'");
  check(cfg.env.max_utterance_tokens >= 1, "env.max_utterance_tokens must be >= 1");
  check(cfg.env.negotiation.max_turns >= 1, "env.negotiation.max_turns must be >= 1");
  check(cfg.env.negotiation.n_filler_tokens >= 1, "env.negotiation.n_filler_tokens must be >= 1");
  check(cfg.env.negotiation.fixed_high_reserve >= 0 && cfg.env.negotiation.fixed_high_reserve <= 10,
        "env.negotiation.fixed_high_reserve must be in [0, 10]");
  check(cfg.env.negotiation.fixed_low_reserve >= 0 && cfg.env.negotiation.fixed_low_reserve <= 10,
        "env.negotiation.fixed_low_reserve must be in [0, 10]");
  check(cfg.env.werewolf.n_players == 6 || cfg.env.werewolf.n_players == 9,
        "env.werewolf.n_players must be 6 or 9");
  check(cfg.env.werewolf.max_rounds >= 0, "env.werewolf.max_rounds must be >= 0");

  check(cfg.featurizer.feature_dim > cfg.featurizer.max_roles + cfg.featurizer.embed_dim,
        "featurizer.feature_dim must exceed max_roles + embed_dim");
  check(cfg.featurizer.embed_dim >= 1, "featurizer.embed_dim must be >= 1");
  check(cfg.featurizer.window >= 1, "featurizer.window must be >= 1");
  check(cfg.featurizer.max_ngram >= 1, "featurizer.max_ngram must be >= 1");
  check(cfg.featurizer.recency_decay > 0.0 && cfg.featurizer.recency_decay <= 1.0,
        "featurizer.recency_decay must be in (0, 1]");
  if (cfg.env.env_id == "werewolf") {
    check(cfg.featurizer.max_roles >= cfg.env.werewolf.n_players,
          "featurizer.max_roles must cover env.werewolf.n_players");
  }

  check(cfg.sampling.temperature > 0.0, "sampling.temperature must be positive");
  check(cfg.arena.temperature > 0.0, "arena.temperature must be positive");

  check_unit_interval(cfg.advantage.gamma_turn, "advantage.gamma_turn");
  check_unit_interval(cfg.advantage.lambda_turn, "advantage.lambda_turn");
  check_unit_interval(cfg.advantage.gamma_token, "advantage.gamma_token");
  check_unit_interval(cfg.advantage.lambda_token, "advantage.lambda_token");

  check(cfg.filter.max_out_of_grammar_fraction >= 0.0 &&
            cfg.filter.max_out_of_grammar_fraction <= 1.0,
        "filter.max_out_of_grammar_fraction must be in [0, 1]");
  check(cfg.filter.max_consecutive_repeats >= 2, "filter.max_consecutive_repeats must be >= 2");
  check(cfg.filter.copy_min_tokens >= 1, "filter.copy_min_tokens must be >= 1");
  check(cfg.external_evaluator.timeout_ms >= 1, "external_evaluator.timeout_ms must be >= 1");

  check(cfg.train.clip_epsilon > 0.0 && cfg.train.clip_epsilon < 1.0,
        "train.clip_epsilon must be in (0, 1)");
  check(cfg.train.learning_rate > 0.0, "train.learning_rate must be positive");
  check(cfg.train.imitation_learning_rate > 0.0,
        "train.imitation_learning_rate must be positive");
  check(cfg.train.epochs >= 1, "train.epochs must be >= 1");
  check(cfg.train.value_loss_coeff >= 0.0, "train.value_loss_coeff must be >= 0");
  check(cfg.train.entropy_bonus_coeff >= 0.0, "train.entropy_bonus_coeff must be >= 0");
  check(cfg.train.entropy_log_interval >= 1, "train.entropy_log_interval must be >= 1");
  check(cfg.train.steps >= 0, "train.steps must be >= 0");
  check(cfg.train.episodes_per_batch >= 1, "train.episodes_per_batch must be >= 1");
  check(cfg.train.warm_start_steps >= 0, "train.warm_start_steps must be >= 0");
  check(cfg.train.demo_pool_episodes >= 1, "train.demo_pool_episodes must be >= 1");
  check(cfg.train.early_stop.entropy_rise_patience >= 1,
        "train.early_stop.entropy_rise_patience must be >= 1");
  check_unit_interval(cfg.train.early_stop.filter_fail_threshold,
                      "train.early_stop.filter_fail_threshold");
  check(cfg.train.checkpoint_interval >= 0, "train.checkpoint_interval must be >= 0");

  check(cfg.arena.n_episodes >= 1, "arena.n_episodes must be >= 1");
  check(cfg.io.workers >= 1, "io.workers must be >= 1");
}

std::string effective_config_text(const FullConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["env"] = {{"env_id", cfg.env.env_id},
              {"max_utterance_tokens", cfg.env.max_utterance_tokens},
              {"negotiation",
               {{"max_turns", cfg.env.negotiation.max_turns},
                {"n_filler_tokens", cfg.env.negotiation.n_filler_tokens},
                {"agreement_bonus", cfg.env.negotiation.agreement_bonus},
                {"randomize_reserves", cfg.env.negotiation.randomize_reserves},
                {"fixed_high_reserve", cfg.env.negotiation.fixed_high_reserve},
                {"fixed_low_reserve", cfg.env.negotiation.fixed_low_reserve}}},
              {"werewolf",
               {{"n_players", cfg.env.werewolf.n_players},
                {"max_rounds", cfg.env.werewolf.max_rounds},
                {"shuffle_roles", cfg.env.werewolf.shuffle_roles}}}};
  j["featurizer"] = {{"feature_dim", cfg.featurizer.feature_dim},
                     {"embed_dim", cfg.featurizer.embed_dim},
                     {"window", cfg.featurizer.window},
                     {"max_roles", cfg.featurizer.max_roles},
                     {"max_ngram", cfg.featurizer.max_ngram},
                     {"recency_decay", cfg.featurizer.recency_decay},
                     {"hash_seed", cfg.featurizer.hash_seed}};
  j["sampling"] = {{"temperature", cfg.sampling.temperature}, {"greedy", cfg.sampling.greedy}};
  j["advantage"] = {{"gamma_turn", cfg.advantage.gamma_turn},
                    {"lambda_turn", cfg.advantage.lambda_turn},
                    {"gamma_token", cfg.advantage.gamma_token},
                    {"lambda_token", cfg.advantage.lambda_token},
                    {"filter_enabled", cfg.advantage.filter_enabled},
                    {"zero_negative_pseudo_rewards", cfg.advantage.zero_negative_pseudo_rewards}};
  j["filter"] = {{"enabled", cfg.filter.enabled},
                 {"max_out_of_grammar_fraction", cfg.filter.max_out_of_grammar_fraction},
                 {"max_consecutive_repeats", cfg.filter.max_consecutive_repeats},
                 {"copy_min_tokens", cfg.filter.copy_min_tokens},
                 {"check_phase_legality", cfg.filter.check_phase_legality}};
  j["external_evaluator"] = {{"command", cfg.external_evaluator.command},
                             {"timeout_ms", cfg.external_evaluator.timeout_ms},
                             {"fail_open", cfg.external_evaluator.fail_open}};
  j["train"] = {{"clip_epsilon", cfg.train.clip_epsilon},
                {"learning_rate", cfg.train.learning_rate},
                {"epochs", cfg.train.epochs},
                {"value_loss_coeff", cfg.train.value_loss_coeff},
                {"entropy_bonus_coeff", cfg.train.entropy_bonus_coeff},
                {"entropy_log_interval", cfg.train.entropy_log_interval},
                {"early_stop",
                 {{"entropy_rise_patience", cfg.train.early_stop.entropy_rise_patience},
                  {"filter_fail_threshold", cfg.train.early_stop.filter_fail_threshold}}},
                {"steps", cfg.train.steps},
                {"episodes_per_batch", cfg.train.episodes_per_batch},
                {"warm_start_steps", cfg.train.warm_start_steps},
                {"imitation_learning_rate", cfg.train.imitation_learning_rate},
                {"demo_pool_episodes", cfg.train.demo_pool_episodes},
                {"normalize_advantages", cfg.train.normalize_advantages},
                {"checkpoint_interval", cfg.train.checkpoint_interval},
                {"log_trajectories", cfg.train.log_trajectories}};
  j["arena"] = {{"n_episodes", cfg.arena.n_episodes},
                {"side_swap", cfg.arena.side_swap},
                {"temperature", cfg.arena.temperature},
                {"greedy", cfg.arena.greedy}};
  j["io"] = {{"out_dir", cfg.io.out_dir}, {"workers", cfg.io.workers}};
  return j.dump(2);
}

RolloutOptions rollout_options(const FullConfig& cfg) {
  RolloutOptions options;
  options.sampling = cfg.sampling;
  options.max_utterance_tokens = cfg.env.max_utterance_tokens;
  options.filter = cfg.filter;
  return options;
}

}  // namespace parley
