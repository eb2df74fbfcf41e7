#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fairdec/embeddings.hpp"

namespace fairdec {

// KL(p || q) with q floored at 1e-12; terms with p_i = 0 contribute nothing.
double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

// Squared Hellinger distance, 0.5 * sum (sqrt(p) - sqrt(q))^2.
double hellinger_sq(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

// Maps each identity term to its replacement in the next class (cyclically).
// Matching is done on the lowercased token; original casing is preserved.
class SwapMap {
 public:
  SwapMap(const std::vector<std::vector<std::string>>& tuples, std::size_t num_classes,
          std::size_t shift = 1);

  // One-directional entries, for maps that are not bijections (his/him -> her).
  static SwapMap from_directed(const std::vector<std::pair<std::string, std::string>>& entries);

  std::optional<std::string> replacement(const std::string& token) const;
  std::size_t size() const { return map_.size(); }

 private:
  SwapMap() = default;
  std::unordered_map<std::string, std::string> map_;
};

struct ContextPair {
  std::vector<std::string> original;
  std::vector<std::string> swapped;
  std::vector<std::string> swapped_terms;  // original tokens that were replaced
};

// Replaces every identity term in the context by its counterpart.
ContextPair counterfactual_swap(const std::vector<std::string>& context, const SwapMap& swap_map);

// All cyclic substitution variants of a context; index 0 is the original.
std::vector<std::vector<std::string>> counterfactual_variants(
    const std::vector<std::string>& context, const std::vector<std::vector<std::string>>& tuples,
    std::size_t num_classes);

using ContextDistribution = std::function<Eigen::VectorXd(const std::vector<std::string>&)>;

struct LocalBias {
  double kl = 0.0;          // KL(p(.|c1) || p(.|c2))
  double kl_reverse = 0.0;  // KL(p(.|c2) || p(.|c1))
  double hellinger = 0.0;   // squared Hellinger
};

LocalBias local_bias(const ContextDistribution& model, const std::vector<std::string>& c1,
                     const std::vector<std::string>& c2);
LocalBias local_bias(const ContextDistribution& model, const ContextPair& pair);

// Worst divergences over all ordered pairs of counterfactual variants.
LocalBias local_bias_max(const ContextDistribution& model,
                         const std::vector<std::vector<std::string>>& variants);

// Sentence regard score in [0, 1]; 0.5 is neutral.
class SentenceScorer {
 public:
  virtual ~SentenceScorer() = default;
  virtual std::string name() const = 0;
  virtual double score(const std::vector<std::string>& tokens) const = 0;
};

// Mean signed polarity of the known tokens, mapped from [-1, 1] to [0, 1].
class LexiconScorer final : public SentenceScorer {
 public:
  explicit LexiconScorer(std::unordered_map<std::string, double> polarity);
  static LexiconScorer from_file(const std::filesystem::path& path);

  std::string name() const override { return "lexicon"; }
  double score(const std::vector<std::string>& tokens) const override;

 private:
  std::unordered_map<std::string, double> polarity_;
};

using GenerateFn =
    std::function<std::vector<std::string>(const std::vector<std::string>& prompt, std::uint64_t seed)>;

// Mean absolute score gap between completions of c1 and c2, sampled with
// paired seeds so draw i uses the same seed under both contexts.
double global_bias(const GenerateFn& generate_fn, const SentenceScorer& scorer,
                   const std::vector<std::string>& c1, const std::vector<std::string>& c2,
                   int n_samples, std::uint64_t base_seed);

// Worst pairwise gap over all counterfactual variants.
double global_bias_max(const GenerateFn& generate_fn, const SentenceScorer& scorer,
                       const std::vector<std::vector<std::string>>& variants, int n_samples,
                       std::uint64_t base_seed);

struct Performance {
  double p_gold_eval = 0.0;      // probability of the gold token under the evaluated model
  double p_gold_original = 0.0;  // same context, original model
  double kl_drift = 0.0;         // KL(eval || original)
  double hellinger_drift = 0.0;
};

Performance performance(const ContextDistribution& eval_model, const ContextDistribution& original,
                        const std::vector<std::string>& context, const std::string& gold,
                        const Vocabulary& vocab);

// Full per-pair record: local divergences, gold-token probabilities under the
// evaluated model for both contexts, drift against the original model, and
// one generation-based score gap per scorer.
struct BiasReport {
  LocalBias local;
  double p_gold_c1 = 0.0;
  double p_gold_c2 = 0.0;
  double kl_to_original = 0.0;
  double hellinger_to_original = 0.0;
  std::vector<std::pair<std::string, double>> global;  // (scorer name, score diff)
};

}
