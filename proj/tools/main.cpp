#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "parley/arena.hpp"
#include "parley/config.hpp"
#include "parley/serialize.hpp"
#include "parley/train.hpp"

namespace {

using namespace parley;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

void apply_env_overrides(FullConfig& cfg) {
  if (const char* dir = std::getenv("PARLEY_OUT_DIR")) cfg.io.out_dir = dir;
  if (const char* workers = std::getenv("PARLEY_WORKERS")) {
    cfg.io.workers = std::max(1, std::atoi(workers));
  }
}

int cmd_train(const std::string& config_path, std::uint64_t seed, bool seed_given,
              const std::string& out_dir, const std::string& resume_path) {
  FullConfig cfg = load_config(config_path);
  apply_env_overrides(cfg);
  if (!out_dir.empty()) cfg.io.out_dir = out_dir;
  const std::uint64_t run_seed = seed_given ? seed : cfg.seed;

  auto env = make_environment(cfg.env);
  TrainOutputs outputs{cfg.io.out_dir};
  std::filesystem::create_directories(cfg.io.out_dir);
  {
    std::ofstream eff(cfg.io.out_dir + "/effective_config.json");
    eff << effective_config_text(cfg) << '\n';
  }

  PolicyParameters resume_params;
  const PolicyParameters* resume = nullptr;
  int start_step = 0;
  if (!resume_path.empty()) {
    Checkpoint ck = load_checkpoint(resume_path);
    resume_params = std::move(ck.params);
    start_step = static_cast<int>(ck.step);
    resume = &resume_params;
  }

  TrainResult result = train_loop(*env, cfg, run_seed, &outputs, resume, start_step);
  save_checkpoint(cfg.io.out_dir + "/final.json", result.params, result.steps_run);
  std::cout << "trained " << result.steps_run << " steps";
  if (result.stop_reason != StopReason::none) {
    std::cout << " (early stop: " << to_string(result.stop_reason) << ")";
  }
  std::cout << "\n";
  if (!result.history.empty()) {
    const TrainingMetrics& last = result.history.back();
    std::cout << "final mean reward " << format_double(last.mean_episode_reward)
              << ", entropy " << format_double(last.policy_entropy) << ", win rate "
              << format_double(last.win_rate) << "\n";
  }
  std::cout << "outputs in " << cfg.io.out_dir << "\n";
  return kExitOk;
}

int cmd_arena(const std::string& config_path, const std::string& policy_a_path,
              const std::string& policy_b_path, int episodes, std::uint64_t seed, bool seed_given,
              const std::string& out_dir) {
  FullConfig cfg = load_config(config_path);
  apply_env_overrides(cfg);
  if (!out_dir.empty()) cfg.io.out_dir = out_dir;

  auto env = make_environment(cfg.env);
  Checkpoint a = load_checkpoint(policy_a_path);
  Checkpoint b = load_checkpoint(policy_b_path);

  ArenaSpec spec;
  spec.n_episodes = episodes > 0 ? episodes : cfg.arena.n_episodes;
  spec.seed = seed_given ? seed : cfg.seed;
  spec.side_swap = cfg.arena.side_swap;
  spec.sampling.temperature = cfg.arena.temperature;
  spec.sampling.greedy = cfg.arena.greedy;

  RolloutOptions options = rollout_options(cfg);
  ArenaReport report = run_arena(*env, a.params, b.params, spec, options, cfg.io.workers);

  std::filesystem::create_directories(cfg.io.out_dir);
  {
    std::ofstream csv(cfg.io.out_dir + "/arena.csv");
    csv << arena_csv(report);
  }
  std::string summary = render_arena_summary(report);
  {
    std::ofstream txt(cfg.io.out_dir + "/arena_summary.txt");
    txt << summary;
  }
  std::cout << summary;
  return kExitOk;
}

int cmd_replay(const std::string& file, std::int64_t episode_id) {
  std::vector<EpisodeRecord> records = read_episodes_jsonl(file);
  if (records.empty()) throw std::runtime_error("replay: no episodes in " + file);
  for (const EpisodeRecord& record : records) {
    if (record.episode_id == episode_id) {
      std::cout << render_transcript(record);
      return kExitOk;
    }
  }
  std::cerr << "replay: episode " << episode_id << " not found in " << file << "\n";
  return kExitUsage;
}

// Brute-force references, independent of the production recursion:
// lambda = 1 uses discounted returns; general lambda sums (gamma*lambda)^k
// weighted one-step residuals.
double oracle_discounted_return_advantage(const std::vector<double>& rewards,
                                          const std::vector<double>& values, double gamma, int t) {
  double ret = 0.0;
  double scale = 1.0;
  for (std::size_t k = static_cast<std::size_t>(t); k < rewards.size(); ++k) {
    ret += scale * rewards[k];
    scale *= gamma;
  }
  return ret - values[static_cast<std::size_t>(t)];
}

double oracle_delta_sum_advantage(const std::vector<double>& rewards,
                                  const std::vector<double>& values, double gamma, double lambda,
                                  int t) {
  double advantage = 0.0;
  double scale = 1.0;
  for (std::size_t j = static_cast<std::size_t>(t); j < rewards.size(); ++j) {
    const double next_value = j + 1 < values.size() ? values[j + 1] : 0.0;
    const double delta = rewards[j] + gamma * next_value - values[j];
    advantage += scale * delta;
    scale *= gamma * lambda;
  }
  return advantage;
}

int cmd_gae_check(std::uint64_t seed, int instances, bool perturb) {
  if (instances == 0) {
    std::cout << "gae-check: 0 instances requested; vacuous pass\n";
    return kExitOk;
  }
  RngStream rng(derive_stream(seed, "gae-check"));
  const double inject = perturb ? 1e-6 : 0.0;
  double max_dev = 0.0;

  for (int i = 0; i < instances; ++i) {
    const int turns = 1 + rng.next_int(8);
    std::vector<double> values, rewards(static_cast<std::size_t>(turns), 0.0);
    for (int t = 0; t < turns; ++t) values.push_back(rng.next_range(-1.0, 1.0));
    const double episode_reward = rng.next_range(-1.0, 1.0);
    rewards.back() = episode_reward;

    AdvantageConfig cfg;
    cfg.gamma_turn = rng.next_double();
    cfg.lambda_turn = 1.0;
    TurnAdvantageResult got = turn_level_advantages(values, episode_reward, cfg);
    for (int t = 0; t < turns; ++t) {
      const double expect = oracle_discounted_return_advantage(rewards, values, cfg.gamma_turn, t);
      max_dev = std::max(max_dev,
                        std::abs(got.advantages[static_cast<std::size_t>(t)] + inject - expect));
    }

    cfg.lambda_turn = rng.next_double();
    got = turn_level_advantages(values, episode_reward, cfg);
    for (int t = 0; t < turns; ++t) {
      const double expect =
          oracle_delta_sum_advantage(rewards, values, cfg.gamma_turn, cfg.lambda_turn, t);
      max_dev = std::max(max_dev,
                        std::abs(got.advantages[static_cast<std::size_t>(t)] + inject - expect));
    }

    // Token stage on a random turn shape.
    const int len = 1 + rng.next_int(16);
    std::vector<double> token_values, token_rewards(static_cast<std::size_t>(len), 0.0);
    for (int l = 0; l < len; ++l) token_values.push_back(rng.next_range(-1.0, 1.0));
    const double pseudo = rng.next_range(-1.0, 1.0);
    token_rewards.back() = pseudo;
    cfg.gamma_token = rng.next_double();
    cfg.lambda_token = rng.next_double();
    auto token_got = token_level_advantages({token_values}, {pseudo}, cfg);
    for (int l = 0; l < len; ++l) {
      const double expect = oracle_delta_sum_advantage(token_rewards, token_values,
                                                       cfg.gamma_token, cfg.lambda_token, l);
      max_dev = std::max(max_dev,
                        std::abs(token_got[0][static_cast<std::size_t>(l)] + inject - expect));
    }
  }

  // Reduction invariants.
  {
    AdvantageConfig cfg;  // defaults: gamma_turn 0.9, lambdas 1, gamma_token 1
    const std::vector<double> zero_values(4, 0.0);
    TurnAdvantageResult turn = turn_level_advantages(zero_values, 1.0, cfg);
    for (int t = 0; t < 4; ++t) {
      const double expect = std::pow(cfg.gamma_turn, 3 - t);
      max_dev = std::max(max_dev,
                        std::abs(turn.advantages[static_cast<std::size_t>(t)] + inject - expect));
    }
    auto broadcast = token_level_advantages({{0.0, 0.0, 0.0, 0.0, 0.0}}, {0.625}, cfg);
    for (double a : broadcast[0]) max_dev = std::max(max_dev, std::abs(a + inject - 0.625));
  }

  std::cout << "gae-check: " << instances << " instances, max abs deviation "
            << format_double(max_dev) << "\n";
  if (max_dev >= 1e-10) {
    std::cout << "gae-check: FAIL\n";
    return kExitRuntime;
  }
  std::cout << "gae-check: PASS\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-turn multi-agent conversational self-play RL"};
  app.require_subcommand(1);

  std::string config_path, out_dir, resume_path, policy_a, policy_b, replay_file;
  std::uint64_t seed = 0;
  std::int64_t episode_id = 0;
  int episodes = 0, instances = 1000;
  bool perturb = false;

  CLI::App* train = app.add_subcommand("train", "run the training pipeline");
  train->add_option("--config", config_path, "config file")->required();
  auto* train_seed = train->add_option("--seed", seed, "run seed");
  train->add_option("--out", out_dir, "output directory");
  train->add_option("--resume", resume_path, "checkpoint to resume from");

  CLI::App* arena = app.add_subcommand("arena", "head-to-head evaluation");
  arena->add_option("--config", config_path, "config file")->required();
  arena->add_option("--policy-a", policy_a, "checkpoint for policy A")->required();
  arena->add_option("--policy-b", policy_b, "checkpoint for policy B")->required();
  arena->add_option("--episodes", episodes, "episode count");
  auto* arena_seed = arena->add_option("--seed", seed, "arena seed");
  arena->add_option("--out", out_dir, "output directory");

  CLI::App* replay = app.add_subcommand("replay", "render an episode transcript");
  replay->add_option("--file", replay_file, "trajectory JSONL file")->required();
  replay->add_option("--episode", episode_id, "episode id")->required();

  CLI::App* gae = app.add_subcommand("gae-check", "advantage estimator verification suite");
  gae->add_option("--seed", seed, "rng seed");
  gae->add_option("--instances", instances, "random instance count");
  gae->add_flag("--perturb", perturb, "inject a deviation (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (train->parsed()) {
      return cmd_train(config_path, seed, !train_seed->empty(), out_dir, resume_path);
    }
    if (arena->parsed()) {
      return cmd_arena(config_path, policy_a, policy_b, episodes, seed, !arena_seed->empty(),
                       out_dir);
    }
    if (replay->parsed()) return cmd_replay(replay_file, episode_id);
    if (gae->parsed()) return cmd_gae_check(seed, instances, perturb);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
