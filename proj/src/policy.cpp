#include "parley/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace parley {

namespace {

constexpr std::uint64_t kEmbedSalt = 0x45304d42ULL;
constexpr std::uint64_t kPersonaSalt = 0x5045525349ULL;
constexpr std::uint64_t kInteractionSalt = 0x58494e54ULL;
constexpr int kMaxPersonaInteractions = 6;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

}  // namespace

Featurizer::Featurizer(FeaturizerConfig cfg, int vocab_size)
    : cfg_(cfg), vocab_size_(vocab_size) {
  if (cfg_.feature_dim <= cfg_.max_roles + cfg_.embed_dim) {
    throw std::invalid_argument("Featurizer: feature_dim too small for role/embedding blocks");
  }
  if (vocab_size_ <= 0) throw std::invalid_argument("Featurizer: vocab_size must be positive");
  embed_.resize(vocab_size_, cfg_.embed_dim);
  for (int t = 0; t < vocab_size_; ++t) {
    for (int j = 0; j < cfg_.embed_dim; ++j) {
      std::uint64_t h = mix(mix(cfg_.hash_seed, kEmbedSalt),
                            static_cast<std::uint64_t>(t) * 0x10001ULL + static_cast<std::uint64_t>(j));
      // uniform in [-1, 1]
      embed_(t, j) = static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
    }
  }
}

ContextFeatures Featurizer::features(const TokenSequence& context, const RoleSpec& role) const {
  if (role.role_id < 0 || role.role_id >= cfg_.max_roles) {
    throw std::invalid_argument("Featurizer: role_id outside one-hot block");
  }
  const int role_block = cfg_.max_roles;
  const int embed_block = cfg_.embed_dim;
  const int gram_block = cfg_.feature_dim - role_block - embed_block;

  Eigen::VectorXd f = Eigen::VectorXd::Zero(cfg_.feature_dim);
  f[role.role_id] = 1.0;

  // Persona tokens hash into the gram block with a dedicated salt so team and
  // goal identity stay visible regardless of history length.
  if (!role.persona_prompt.empty()) {
    const double w = 1.0 / std::sqrt(static_cast<double>(role.persona_prompt.size()));
    for (TokenId t : role.persona_prompt) {
      std::uint64_t h = mix(mix(cfg_.hash_seed, kPersonaSalt), static_cast<std::uint64_t>(t));
      int bucket = role_block + embed_block + static_cast<int>(h % static_cast<std::uint64_t>(gram_block));
      f[bucket] += (h & 0x8000000000000000ULL) ? w : -w;
    }
  }

  const int n = static_cast<int>(context.size());
  const int start = std::max(0, n - cfg_.window);
  const int n_interactions =
      std::min<int>(kMaxPersonaInteractions, static_cast<int>(role.persona_prompt.size()));
  double weight_sum = 0.0;
  int gram_count = 0;
  for (int pos = start; pos < n; ++pos) {
    const int age = n - 1 - pos;
    const double w = std::pow(cfg_.recency_decay, age);
    weight_sum += w;
    const TokenId tok = context[static_cast<std::size_t>(pos)];
    f.segment(role_block, embed_block) += w * embed_.row(tok).transpose();
    std::uint64_t h = mix(cfg_.hash_seed, 1);
    for (int g = 0; g < cfg_.max_ngram && pos - g >= start; ++g) {
      h = mix(h, static_cast<std::uint64_t>(context[static_cast<std::size_t>(pos - g)]) + 1);
      int bucket = role_block + embed_block + static_cast<int>(h % static_cast<std::uint64_t>(gram_block));
      f[bucket] += (h & 0x4000000000000000ULL) ? w : -w;
      ++gram_count;
      // Persona-conditioned gram features. A linear policy needs these
      // conjunctions: goal- and team-dependent reactions to what was just
      // said (accept an offer that crosses *my* reserve, kill only as a
      // wolf, weigh a report by who spoke it).
      if (g < 2) {
        for (int pi = 0; pi < n_interactions; ++pi) {
          std::uint64_t hx =
              mix(mix(mix(cfg_.hash_seed, kInteractionSalt), h),
                  static_cast<std::uint64_t>(
                      role.persona_prompt[static_cast<std::size_t>(pi)]) + 1);
          int bucket =
              role_block + embed_block + static_cast<int>(hx % static_cast<std::uint64_t>(gram_block));
          f[bucket] += (hx & 0x4000000000000000ULL) ? w : -w;
          ++gram_count;
        }
      }
    }
  }
  if (weight_sum > 0.0) {
    f.segment(role_block, embed_block) /= weight_sum;
  }
  if (gram_count > 0) {
    f.tail(gram_block) /= std::sqrt(static_cast<double>(gram_count));
  }
  return ContextFeatures{std::move(f)};
}

ContextFeatures featurize(const TokenSequence& context, const RoleSpec& role,
                          const FeaturizerConfig& cfg, int vocab_size) {
  return Featurizer(cfg, vocab_size).features(context, role);
}

bool PolicyParameters::finite() const {
  return context_weights.allFinite() && value_weights.allFinite();
}

PolicyParameters PolicyParameters::zero_init(int vocab_size, const FeaturizerConfig& cfg) {
  PolicyParameters p;
  p.context_weights = Eigen::MatrixXd::Zero(cfg.feature_dim, vocab_size);
  p.value_weights = Eigen::VectorXd::Zero(cfg.feature_dim);
  p.featurizer = cfg;
  return p;
}

PolicyParameters PolicyParameters::random_init(int vocab_size, const FeaturizerConfig& cfg,
                                               std::uint64_t seed, double scale) {
  PolicyParameters p = zero_init(vocab_size, cfg);
  RngStream rng(derive_stream(seed, "param-init"));
  for (int i = 0; i < p.context_weights.rows(); ++i) {
    for (int j = 0; j < p.context_weights.cols(); ++j) {
      p.context_weights(i, j) = rng.next_range(-scale, scale);
    }
  }
  for (int i = 0; i < p.value_weights.size(); ++i) {
    p.value_weights[i] = rng.next_range(-scale, scale);
  }
  return p;
}

Eigen::VectorXd policy_logits(const PolicyParameters& params, const ContextFeatures& features) {
  if (features.values.size() != params.context_weights.rows()) {
    throw std::invalid_argument("policy_logits: feature dimension mismatch");
  }
  return params.context_weights.transpose() * features.values;
}

namespace {

// Stable log-softmax pieces shared by the distribution and gradient paths.
struct SoftmaxParts {
  Eigen::VectorXd probs;
  Eigen::VectorXd scaled;  // logits / temperature
  double log_z = 0.0;      // logsumexp of scaled
};

SoftmaxParts softmax_parts(const Eigen::VectorXd& logits, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax: temperature must be positive");
  if (!logits.allFinite()) {
    std::ostringstream os;
    os << "token_distribution: non-finite logits (min " << logits.minCoeff() << ", max "
       << logits.maxCoeff() << ")";
    throw std::runtime_error(os.str());
  }
  SoftmaxParts out;
  out.scaled = logits / temperature;
  const double m = out.scaled.maxCoeff();
  Eigen::VectorXd e = (out.scaled.array() - m).exp();
  const double z = e.sum();
  out.probs = e / z;
  out.log_z = m + std::log(z);
  return out;
}

}  // namespace

Eigen::VectorXd token_distribution(const PolicyParameters& params,
                                   const ContextFeatures& features, double temperature) {
  return softmax_parts(policy_logits(params, features), temperature).probs;
}

double policy_value(const PolicyParameters& params, const ContextFeatures& features) {
  return params.value_weights.dot(features.values);
}

double distribution_entropy(const Eigen::VectorXd& probs) {
  double h = 0.0;
  for (int i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0.0) h -= probs[i] * std::log(probs[i]);
  }
  return h;
}

LogProbGrad log_prob_and_grad(const PolicyParameters& params, const ContextFeatures& features,
                              TokenId token, double temperature) {
  if (token < 0 || token >= params.vocab_size()) {
    throw std::invalid_argument("log_prob_and_grad: bad token id");
  }
  const SoftmaxParts sm = softmax_parts(policy_logits(params, features), temperature);
  LogProbGrad out;
  out.log_prob = sm.scaled[token] - sm.log_z;
  Eigen::VectorXd residual = -sm.probs;
  residual[token] += 1.0;
  out.d_context_weights = (features.values / temperature) * residual.transpose();
  return out;
}

double accumulate_log_prob_grad(const PolicyParameters& params, const ContextFeatures& features,
                                TokenId token, double temperature, double coeff,
                                Eigen::MatrixXd& grad_context_weights) {
  const SoftmaxParts sm = softmax_parts(policy_logits(params, features), temperature);
  Eigen::VectorXd residual = -sm.probs;
  residual[token] += 1.0;
  grad_context_weights.noalias() +=
      (coeff / temperature) * features.values * residual.transpose();
  return sm.scaled[token] - sm.log_z;
}

SampledUtterance sample_utterance(const PolicyParameters& params, const Featurizer& featurizer,
                                  const TokenSequence& context, const RoleSpec& role,
                                  const SamplingConfig& sampling, int max_tokens,
                                  TokenId end_token, RngStream& rng) {
  if (max_tokens < 1) throw std::invalid_argument("sample_utterance: max_tokens must be >= 1");
  SampledUtterance out;
  TokenSequence working = context;
  for (int step = 0; step < max_tokens; ++step) {
    const ContextFeatures f = featurizer.features(working, role);
    const SoftmaxParts sm = softmax_parts(policy_logits(params, f), sampling.temperature);
    int pick;
    if (sampling.greedy) {
      pick = 0;
      for (int i = 1; i < sm.probs.size(); ++i) {
        if (sm.scaled[i] > sm.scaled[pick]) pick = i;  // strict: ties keep the lowest id
      }
    } else {
      pick = rng.sample_categorical(std::span<const double>(sm.probs.data(),
                                                            static_cast<std::size_t>(sm.probs.size())));
    }
    out.tokens.push_back(static_cast<TokenId>(pick));
    out.log_probs.push_back(sm.scaled[pick] - sm.log_z);
    out.values.push_back(policy_value(params, f));
    out.entropy_sum += distribution_entropy(sm.probs);
    working.push_back(static_cast<TokenId>(pick));
    if (pick == end_token) {
      out.last_token_value = out.values.back();
      return out;
    }
  }
  out.truncated = true;
  out.last_token_value = out.values.back();
  return out;
}

namespace {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, int rows, int cols,
                                 const char* name) {
  if (!j.is_array() || static_cast<int>(j.size()) != rows) {
    throw std::runtime_error(std::string("checkpoint: shape mismatch in ") + name);
  }
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<int>(row.size()) != cols) {
      throw std::runtime_error(std::string("checkpoint: shape mismatch in ") + name);
    }
    for (int c = 0; c < cols; ++c) m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const PolicyParameters& params, std::int64_t step) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["step"] = step;
  j["vocab_size"] = params.vocab_size();
  j["feature_dim"] = params.feature_dim();
  const FeaturizerConfig& fc = params.featurizer;
  j["featurizer"] = {{"feature_dim", fc.feature_dim}, {"embed_dim", fc.embed_dim},
                     {"window", fc.window},           {"max_roles", fc.max_roles},
                     {"max_ngram", fc.max_ngram},     {"recency_decay", fc.recency_decay},
                     {"hash_seed", fc.hash_seed}};
  j["context_weights"] = matrix_to_json(params.context_weights);
  nlohmann::json vw = nlohmann::json::array();
  for (int i = 0; i < params.value_weights.size(); ++i) vw.push_back(params.value_weights[i]);
  j["value_weights"] = std::move(vw);

  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << j.dump() << '\n';
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_checkpoint: parse error in " + path + ": " + e.what());
  }
  if (j.value("format_version", 0) != 1) {
    throw std::runtime_error("load_checkpoint: unsupported format version");
  }
  Checkpoint ck;
  ck.step = j.value("step", std::int64_t{0});
  const auto& fj = j.at("featurizer");
  FeaturizerConfig fc;
  fc.feature_dim = fj.at("feature_dim").get<int>();
  fc.embed_dim = fj.at("embed_dim").get<int>();
  fc.window = fj.at("window").get<int>();
  fc.max_roles = fj.at("max_roles").get<int>();
  fc.max_ngram = fj.at("max_ngram").get<int>();
  fc.recency_decay = fj.at("recency_decay").get<double>();
  fc.hash_seed = fj.at("hash_seed").get<std::uint64_t>();

  const int vocab = j.at("vocab_size").get<int>();
  const int fdim = j.at("feature_dim").get<int>();
  if (fdim != fc.feature_dim) {
    throw std::runtime_error("load_checkpoint: feature_dim disagrees with featurizer config");
  }
  ck.params.featurizer = fc;
  ck.params.context_weights = matrix_from_json(j.at("context_weights"), fdim, vocab,
                                               "context_weights");
  const auto& vw = j.at("value_weights");
  if (!vw.is_array() || static_cast<int>(vw.size()) != fdim) {
    throw std::runtime_error("checkpoint: shape mismatch in value_weights");
  }
  ck.params.value_weights.resize(fdim);
  for (int i = 0; i < fdim; ++i) ck.params.value_weights[i] = vw[static_cast<std::size_t>(i)].get<double>();
  if (!ck.params.finite()) throw std::runtime_error("load_checkpoint: non-finite weights");
  return ck;
}

}  // namespace parley
