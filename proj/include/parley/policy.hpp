#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "parley/core.hpp"
#include "parley/rng.hpp"

namespace parley {

// Deterministic context encoder standing in for a sequence model: signed
// hashed n-grams over a recency-weighted window of the most recent tokens,
// a fixed (config-seeded, untrained) token-embedding summary, the viewer's
// role one-hot, and hashed persona tokens so role identity never scrolls out
// of the window.
struct FeaturizerConfig {
  int feature_dim = 256;
  int embed_dim = 16;     // width of the fixed token-embedding block
  int window = 48;        // K most recent context tokens
  int max_roles = 16;     // width of the role one-hot block
  int max_ngram = 3;      // n-grams of size 1..max_ngram
  double recency_decay = 0.95;
  std::uint64_t hash_seed = 0x7a1e9bb5c3d2f041ULL;

  bool operator==(const FeaturizerConfig&) const = default;
};

struct ContextFeatures {
  Eigen::VectorXd values;
};

class Featurizer {
 public:
  Featurizer(FeaturizerConfig cfg, int vocab_size);

  ContextFeatures features(const TokenSequence& context, const RoleSpec& role) const;
  const FeaturizerConfig& config() const { return cfg_; }
  int vocab_size() const { return vocab_size_; }

 private:
  FeaturizerConfig cfg_;
  int vocab_size_;
  Eigen::MatrixXd embed_;  // vocab_size x embed_dim, derived from hash_seed
};

ContextFeatures featurize(const TokenSequence& context, const RoleSpec& role,
                          const FeaturizerConfig& cfg, int vocab_size);

// Weights of the reference linear-softmax policy plus its scalar value head.
// Per-token logits are features * context_weights; the value head shares the
// featurization and keeps separate weights.
struct PolicyParameters {
  Eigen::MatrixXd context_weights;  // feature_dim x vocab_size
  Eigen::VectorXd value_weights;    // feature_dim
  FeaturizerConfig featurizer;

  int vocab_size() const { return static_cast<int>(context_weights.cols()); }
  int feature_dim() const { return static_cast<int>(context_weights.rows()); }
  bool finite() const;

  static PolicyParameters zero_init(int vocab_size, const FeaturizerConfig& cfg);
  static PolicyParameters random_init(int vocab_size, const FeaturizerConfig& cfg,
                                      std::uint64_t seed, double scale);
};

struct SamplingConfig {
  double temperature = 1.0;
  bool greedy = false;  // argmax decode, ties resolved to the lowest token id

  bool operator==(const SamplingConfig&) const = default;
};

Eigen::VectorXd policy_logits(const PolicyParameters& params, const ContextFeatures& features);

// Softmax over logits/temperature. Entries are positive and sum to 1; a
// non-finite logit is a hard failure.
Eigen::VectorXd token_distribution(const PolicyParameters& params,
                                   const ContextFeatures& features,
                                   double temperature = 1.0);

double policy_value(const PolicyParameters& params, const ContextFeatures& features);

double distribution_entropy(const Eigen::VectorXd& probs);

struct LogProbGrad {
  double log_prob = 0.0;
  Eigen::MatrixXd d_context_weights;  // feature_dim x vocab_size
};

// Analytic gradient of log pi(token) with respect to context_weights:
// outer(F, onehot(token) - pi) / temperature.
LogProbGrad log_prob_and_grad(const PolicyParameters& params, const ContextFeatures& features,
                              TokenId token, double temperature = 1.0);

// Accumulation form used by the training loop: grad += coeff * d log pi / dW,
// returning the log-prob. Avoids allocating a dense gradient per token.
double accumulate_log_prob_grad(const PolicyParameters& params, const ContextFeatures& features,
                                TokenId token, double temperature, double coeff,
                                Eigen::MatrixXd& grad_context_weights);

struct SampledUtterance {
  TokenSequence tokens;
  std::vector<double> log_probs;
  std::vector<double> values;
  double last_token_value = 0.0;
  bool truncated = false;
  double entropy_sum = 0.0;  // sum of per-step distribution entropies
};

// Autoregressive sampling until END or max_tokens. Log-prob and value-head
// output are recorded for every emitted token.
SampledUtterance sample_utterance(const PolicyParameters& params, const Featurizer& featurizer,
                                  const TokenSequence& context, const RoleSpec& role,
                                  const SamplingConfig& sampling, int max_tokens,
                                  TokenId end_token, RngStream& rng);

void save_checkpoint(const std::string& path, const PolicyParameters& params,
                     std::int64_t step = 0);

struct Checkpoint {
  PolicyParameters params;
  std::int64_t step = 0;
};

// Rejects shape mismatches between the declared dimensions and the arrays.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace parley
