#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fairdec/embeddings.hpp"
#include "fairdec/util.hpp"

namespace fairdec {

class LanguageModel;

// Lets a caller replace the next-token distribution during generation.
class DistributionHook {
 public:
  virtual ~DistributionHook() = default;
  virtual Eigen::VectorXd next_distribution(const LanguageModel& lm,
                                            std::span<const std::size_t> context) = 0;
  virtual void on_sampled(std::size_t token_id) { (void)token_id; }
};

// Tiny autoregressive model: the context embedding is a learned square map
// applied to the mean of the last `window` token embeddings, and next-token
// logits are its dot products with every output embedding.
class LanguageModel {
 public:
  LanguageModel(std::shared_ptr<const EmbeddingTable> table, Eigen::MatrixXd encoder, int window);

  const EmbeddingTable& table() const { return *table_; }
  std::shared_ptr<const EmbeddingTable> table_ptr() const { return table_; }
  const Vocabulary& vocab() const { return table_->vocab(); }
  const Eigen::MatrixXd& encoder() const { return encoder_; }
  int window() const { return window_; }
  Eigen::Index dim() const { return encoder_.rows(); }

  // Maps tokens to ids, skipping out-of-vocabulary tokens with a warning.
  std::vector<std::size_t> to_ids(std::span<const std::string> tokens) const;

  Eigen::VectorXd context_embedding(std::span<const std::size_t> ids) const;
  Eigen::VectorXd context_embedding(const std::vector<std::string>& tokens) const;
  Eigen::VectorXd logits(std::span<const std::size_t> ids) const;
  Eigen::VectorXd next_token_distribution(std::span<const std::size_t> ids) const;
  Eigen::VectorXd next_token_distribution(const std::vector<std::string>& tokens) const;

  void save(const std::filesystem::path& path, const std::string& embeddings_ref,
            const ArtifactMeta* meta = nullptr) const;
  static LanguageModel load(const std::filesystem::path& path,
                            std::shared_ptr<const EmbeddingTable> table);

 private:
  std::shared_ptr<const EmbeddingTable> table_;
  Eigen::MatrixXd encoder_;  // dim x dim
  int window_;
};

// Mean cross-entropy of predicting `target` after `context`.
double example_loss(const EmbeddingTable& table, const Eigen::MatrixXd& encoder,
                    std::span<const std::size_t> context, std::size_t target, int window);

// Analytic gradient of example_loss with respect to the encoder.
Eigen::MatrixXd encoder_gradient(const EmbeddingTable& table, const Eigen::MatrixXd& encoder,
                                 std::span<const std::size_t> context, std::size_t target,
                                 int window);

struct LmTrainConfig {
  int window = 8;
  int epochs = 30;
  double learning_rate = 0.05;
  double init_scale = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LmTrainResult {
  LanguageModel model;
  std::vector<double> epoch_losses;  // full-corpus loss after each epoch
};

// Tokenized corpus: one sentence per entry. Out-of-vocabulary tokens are
// dropped with a warning; sentences left with fewer than two tokens are skipped.
LmTrainResult train_toy_lm(const std::vector<std::vector<std::string>>& corpus,
                           std::shared_ptr<const EmbeddingTable> table, const LmTrainConfig& cfg);

struct GenerationConfig {
  int max_length = 30;
  int top_k = 40;
  double temperature = 1.0;
  double repetition_penalty = 1.5;
  int no_repeat_ngram = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GenerationResult {
  std::vector<std::size_t> prompt_ids;
  std::vector<std::size_t> generated_ids;
  std::vector<std::string> prompt_tokens;
  std::vector<std::string> generated_tokens;

  std::string text() const;       // generated tokens joined by spaces
  std::string full_text() const;  // prompt plus generated tokens
  std::vector<std::string> full_token_list() const;
};

GenerationResult generate(const LanguageModel& lm, std::span<const std::size_t> prompt,
                          const GenerationConfig& cfg, DistributionHook* hook = nullptr);
GenerationResult generate(const LanguageModel& lm, const std::vector<std::string>& prompt,
                          const GenerationConfig& cfg, DistributionHook* hook = nullptr);

}
