#include "fairdec/lm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "json.hpp"

#include "fairdec/errors.hpp"
#include "fairdec/version.hpp"

namespace fairdec {

using nlohmann::json;

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

LanguageModel::LanguageModel(std::shared_ptr<const EmbeddingTable> table, Eigen::MatrixXd encoder,
                             int window)
    : table_(std::move(table)), encoder_(std::move(encoder)), window_(window) {
  if (!table_) throw ConfigError("language model needs an embedding table");
  if (window_ < 1) throw ConfigError("window must be at least 1");
  if (encoder_.rows() != encoder_.cols()) {
    throw DimensionMismatchError("encoder must be square");
  }
  if (encoder_.rows() != table_->dim()) {
    throw DimensionMismatchError("encoder size does not match embedding dimension");
  }
  if (!encoder_.allFinite()) throw NonFiniteValueError("encoder contains non-finite values");
}

std::vector<std::size_t> LanguageModel::to_ids(std::span<const std::string> tokens) const {
  if (tokens.empty()) throw EmptyContextError("empty token sequence");
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (const auto& tok : tokens) {
    if (auto idx = vocab().find(tok)) {
      ids.push_back(*idx);
    } else {
      log_warn("skipping out-of-vocabulary token '" + tok + "'");
    }
  }
  if (ids.empty()) throw AllTokensOovError("every token is out of vocabulary");
  return ids;
}

Eigen::VectorXd LanguageModel::context_embedding(std::span<const std::size_t> ids) const {
  if (ids.empty()) throw EmptyContextError("empty context");
  const std::size_t n = std::min<std::size_t>(ids.size(), static_cast<std::size_t>(window_));
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(table_->dim());
  for (std::size_t i = ids.size() - n; i < ids.size(); ++i) {
    mean += table_->row(ids[i]);
  }
  mean /= static_cast<double>(n);
  return encoder_ * mean;
}

Eigen::VectorXd LanguageModel::context_embedding(const std::vector<std::string>& tokens) const {
  const auto ids = to_ids(tokens);
  return context_embedding(std::span<const std::size_t>(ids));
}

Eigen::VectorXd LanguageModel::logits(std::span<const std::size_t> ids) const {
  return table_->matrix() * context_embedding(ids);
}

Eigen::VectorXd LanguageModel::next_token_distribution(std::span<const std::size_t> ids) const {
  return softmax(logits(ids));
}

Eigen::VectorXd LanguageModel::next_token_distribution(const std::vector<std::string>& tokens) const {
  const auto ids = to_ids(tokens);
  return next_token_distribution(std::span<const std::size_t>(ids));
}

void LanguageModel::save(const std::filesystem::path& path, const std::string& embeddings_ref,
                         const ArtifactMeta* meta) const {
  json j;
  j["format"] = "fairdec-lm";
  j["format_version"] = 1;
  j["tool_version"] = kVersion;
  if (meta) {
    j["config_hash"] = meta->config_hash;
    j["seed"] = meta->seed;
  }
  j["window"] = window_;
  j["dim"] = table_->dim();
  j["embeddings"] = embeddings_ref;
  json rows = json::array();
  for (Eigen::Index r = 0; r < encoder_.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < encoder_.cols(); ++c) row.push_back(encoder_(r, c));
    rows.push_back(std::move(row));
  }
  j["encoder"] = std::move(rows);
  write_text_file(path, j.dump(2) + "\n");
}

LanguageModel LanguageModel::load(const std::filesystem::path& path,
                                  std::shared_ptr<const EmbeddingTable> table) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw FormatError("cannot parse model checkpoint " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "fairdec-lm") {
    throw FormatError("not a model checkpoint: " + path.string());
  }
  if (!table) throw ConfigError("language model needs an embedding table");
  try {
    const int window = j.at("window").get<int>();
    const Eigen::Index dim = j.at("dim").get<Eigen::Index>();
    if (dim != table->dim()) {
      throw DimensionMismatchError("checkpoint dim " + std::to_string(dim) +
                                   " does not match embeddings dim " + std::to_string(table->dim()));
    }
    const auto& enc = j.at("encoder");
    Eigen::MatrixXd encoder(dim, dim);
    if (static_cast<Eigen::Index>(enc.size()) != dim) {
      throw DimensionMismatchError("encoder row count does not match dim");
    }
    for (Eigen::Index r = 0; r < dim; ++r) {
      const auto& row = enc.at(static_cast<std::size_t>(r));
      if (static_cast<Eigen::Index>(row.size()) != dim) {
        throw DimensionMismatchError("encoder column count does not match dim");
      }
      for (Eigen::Index c = 0; c < dim; ++c) {
        encoder(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
      }
    }
    return LanguageModel(std::move(table), std::move(encoder), window);
  } catch (const json::exception& e) {
    throw FormatError("bad model checkpoint " + path.string() + ": " + e.what());
  }
}

namespace {

Eigen::VectorXd window_mean(const EmbeddingTable& table, std::span<const std::size_t> context,
                            int window) {
  if (context.empty()) throw EmptyContextError("empty context");
  if (window < 1) throw ConfigError("window must be at least 1");
  const std::size_t n = std::min<std::size_t>(context.size(), static_cast<std::size_t>(window));
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(table.dim());
  for (std::size_t i = context.size() - n; i < context.size(); ++i) mean += table.row(context[i]);
  return mean / static_cast<double>(n);
}

}

double example_loss(const EmbeddingTable& table, const Eigen::MatrixXd& encoder,
                    std::span<const std::size_t> context, std::size_t target, int window) {
  if (target >= table.size()) throw OutOfVocabularyError("target index out of range");
  const Eigen::VectorXd m = window_mean(table, context, window);
  const Eigen::VectorXd p = softmax(table.matrix() * (encoder * m));
  return -std::log(std::max(p[static_cast<Eigen::Index>(target)], 1e-300));
}

Eigen::MatrixXd encoder_gradient(const EmbeddingTable& table, const Eigen::MatrixXd& encoder,
                                 std::span<const std::size_t> context, std::size_t target,
                                 int window) {
  if (target >= table.size()) throw OutOfVocabularyError("target index out of range");
  const Eigen::VectorXd m = window_mean(table, context, window);
  Eigen::VectorXd p = softmax(table.matrix() * (encoder * m));
  p[static_cast<Eigen::Index>(target)] -= 1.0;
  return (table.matrix().transpose() * p) * m.transpose();
}

void LmTrainConfig::validate() const {
  if (window < 1) throw ConfigError("window must be at least 1");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (init_scale < 0.0) throw ConfigError("init scale cannot be negative");
}

LmTrainResult train_toy_lm(const std::vector<std::vector<std::string>>& corpus,
                           std::shared_ptr<const EmbeddingTable> table, const LmTrainConfig& cfg) {
  cfg.validate();
  if (!table) throw ConfigError("training needs an embedding table");
  if (corpus.empty()) throw EmptyCorpusError("corpus has no sentences");

  struct Example {
    std::vector<std::size_t> context;
    std::size_t target;
  };
  std::vector<Example> examples;
  std::size_t oov_dropped = 0;
  for (const auto& sentence : corpus) {
    std::vector<std::size_t> ids;
    ids.reserve(sentence.size());
    for (const auto& tok : sentence) {
      if (auto idx = table->vocab().find(tok)) {
        ids.push_back(*idx);
      } else {
        ++oov_dropped;
      }
    }
    if (ids.size() < 2) continue;
    for (std::size_t t = 1; t < ids.size(); ++t) {
      examples.push_back({std::vector<std::size_t>(ids.begin(), ids.begin() + t), ids[t]});
    }
  }
  if (oov_dropped > 0) {
    log_warn("dropped " + std::to_string(oov_dropped) + " out-of-vocabulary corpus tokens");
  }
  if (examples.empty()) throw EmptyCorpusError("corpus has no usable training examples");

  Rng rng(cfg.seed);
  const Eigen::Index dim = table->dim();
  Eigen::MatrixXd encoder = Eigen::MatrixXd::Identity(dim, dim);
  if (cfg.init_scale > 0.0) {
    for (Eigen::Index r = 0; r < dim; ++r) {
      for (Eigen::Index c = 0; c < dim; ++c) encoder(r, c) += cfg.init_scale * rng.normal();
    }
  }

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> epoch_losses;
  epoch_losses.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (const std::size_t i : order) {
      const auto& ex = examples[i];
      encoder -= cfg.learning_rate *
                 encoder_gradient(*table, encoder, ex.context, ex.target, cfg.window);
    }
    double loss = 0.0;
    for (const auto& ex : examples) {
      loss += example_loss(*table, encoder, ex.context, ex.target, cfg.window);
    }
    epoch_losses.push_back(loss / static_cast<double>(examples.size()));
  }
  return LmTrainResult{LanguageModel(std::move(table), std::move(encoder), cfg.window),
                       std::move(epoch_losses)};
}

void GenerationConfig::validate() const {
  if (max_length < 1) throw ConfigError("max_length must be positive");
  if (top_k < 1) throw ConfigError("top_k must be at least 1");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(repetition_penalty > 0.0)) throw ConfigError("repetition penalty must be positive");
  if (no_repeat_ngram < 0) throw ConfigError("no_repeat_ngram cannot be negative");
}

std::string GenerationResult::text() const { return join(generated_tokens, " "); }

std::string GenerationResult::full_text() const {
  const std::string head = join(prompt_tokens, " ");
  const std::string tail = join(generated_tokens, " ");
  if (head.empty()) return tail;
  if (tail.empty()) return head;
  return head + " " + tail;
}

std::vector<std::string> GenerationResult::full_token_list() const {
  std::vector<std::string> out = prompt_tokens;
  out.insert(out.end(), generated_tokens.begin(), generated_tokens.end());
  return out;
}

namespace {

// softmax over entries that are not -inf; masked entries get zero mass
Eigen::VectorXd masked_softmax(const Eigen::VectorXd& logits) {
  double m = kNegInf;
  for (Eigen::Index i = 0; i < logits.size(); ++i) m = std::max(m, logits[i]);
  if (m == kNegInf) throw NonFiniteValueError("all logits are masked");
  Eigen::VectorXd p(logits.size());
  double z = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    p[i] = logits[i] == kNegInf ? 0.0 : std::exp(logits[i] - m);
    z += p[i];
  }
  return p / z;
}

void apply_top_k(Eigen::VectorXd& logits, int k) {
  const Eigen::Index n = logits.size();
  if (k >= n) return;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return a < b;
  });
  for (std::size_t i = static_cast<std::size_t>(k); i < idx.size(); ++i) logits[idx[i]] = kNegInf;
}

void apply_repetition_penalty(Eigen::VectorXd& logits, std::span<const std::size_t> seen,
                              double penalty) {
  if (penalty == 1.0) return;
  std::unordered_set<std::size_t> distinct(seen.begin(), seen.end());
  for (const std::size_t id : distinct) {
    double& l = logits[static_cast<Eigen::Index>(id)];
    if (l == kNegInf) continue;
    l = l > 0.0 ? l / penalty : l * penalty;
  }
}

std::vector<std::size_t> banned_ngram_tokens(std::span<const std::size_t> seq, int n) {
  std::vector<std::size_t> banned;
  if (n <= 0 || seq.size() + 1 < static_cast<std::size_t>(n)) return banned;
  const std::size_t prefix_len = static_cast<std::size_t>(n) - 1;
  const auto prefix = seq.subspan(seq.size() - prefix_len);
  for (std::size_t start = 0; start + prefix_len < seq.size(); ++start) {
    bool match = true;
    for (std::size_t j = 0; j < prefix_len; ++j) {
      if (seq[start + j] != prefix[j]) {
        match = false;
        break;
      }
    }
    if (match) banned.push_back(seq[start + prefix_len]);
  }
  return banned;
}

}

GenerationResult generate(const LanguageModel& lm, std::span<const std::size_t> prompt,
                          const GenerationConfig& cfg, DistributionHook* hook) {
  cfg.validate();
  if (prompt.empty()) throw EmptyContextError("generation needs a non-empty prompt");
  for (const std::size_t id : prompt) {
    if (id >= lm.vocab().size()) throw OutOfVocabularyError("prompt id out of range");
  }

  GenerationResult result;
  result.prompt_ids.assign(prompt.begin(), prompt.end());
  for (const std::size_t id : prompt) result.prompt_tokens.push_back(lm.vocab().token(id));

  std::vector<std::size_t> seq(prompt.begin(), prompt.end());
  Rng rng(cfg.seed);
  for (int step = 0; step < cfg.max_length; ++step) {
    const Eigen::VectorXd base =
        hook ? hook->next_distribution(lm, seq) : lm.next_token_distribution(seq);
    if (base.size() != static_cast<Eigen::Index>(lm.vocab().size())) {
      throw DimensionMismatchError("hook distribution size does not match vocabulary");
    }
    Eigen::VectorXd logits(base.size());
    for (Eigen::Index i = 0; i < base.size(); ++i) {
      logits[i] = base[i] > 0.0 ? std::log(base[i]) : kNegInf;
    }
    apply_top_k(logits, cfg.top_k);
    logits /= cfg.temperature;
    apply_repetition_penalty(logits, seq, cfg.repetition_penalty);
    if (cfg.no_repeat_ngram > 0) {
      const Eigen::VectorXd before_ban = logits;
      for (const std::size_t id : banned_ngram_tokens(seq, cfg.no_repeat_ngram)) {
        logits[static_cast<Eigen::Index>(id)] = kNegInf;
      }
      if (logits.maxCoeff() == kNegInf) logits = before_ban;  // the ban emptied the distribution
    }
    const Eigen::VectorXd p = masked_softmax(logits);
    const std::size_t next = sample_categorical(p, rng);
    seq.push_back(next);
    result.generated_ids.push_back(next);
    result.generated_tokens.push_back(lm.vocab().token(next));
    if (hook) hook->on_sampled(next);
  }
  return result;
}

GenerationResult generate(const LanguageModel& lm, const std::vector<std::string>& prompt,
                          const GenerationConfig& cfg, DistributionHook* hook) {
  const auto ids = lm.to_ids(prompt);
  return generate(lm, std::span<const std::size_t>(ids), cfg, hook);
}

}
