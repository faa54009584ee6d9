#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "parley/advantage.hpp"
#include "parley/env.hpp"
#include "parley/policy.hpp"
#include "parley/train.hpp"

namespace parley {

// Thrown on parse or validation failures; the CLI maps it to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExternalEvaluatorConfig {
  std::string command;  // empty: no external evaluator
  int timeout_ms = 1000;
  bool fail_open = true;

  bool operator==(const ExternalEvaluatorConfig&) const = default;
};

struct ArenaSection {
  int n_episodes = 100;
  bool side_swap = true;
  double temperature = 1.0;
  bool greedy = false;

  bool operator==(const ArenaSection&) const = default;
};

struct IoConfig {
  std::string out_dir = "out";
  int workers = 1;

  bool operator==(const IoConfig&) const = default;
};

// One human-editable file configures the whole pipeline. Unknown keys are
// rejected; defaults are materialized on load so the effective config
// round-trips exactly.
struct FullConfig {
  std::uint64_t seed = 0;
  EnvConfig env;
  FeaturizerConfig featurizer;
  SamplingConfig sampling;
  AdvantageConfig advantage;
  QualityFilterConfig filter;
  ExternalEvaluatorConfig external_evaluator;
  TrainConfig train;
  ArenaSection arena;
  IoConfig io;

  bool operator==(const FullConfig&) const = default;
};

FullConfig load_config(const std::string& path);
FullConfig parse_config_text(const std::string& json_text);
void validate_config(const FullConfig& cfg);

// Fully-defaulted JSON rendering of the configuration; reloading it yields an
// identical FullConfig.
std::string effective_config_text(const FullConfig& cfg);

RolloutOptions rollout_options(const FullConfig& cfg);

}  // namespace parley
