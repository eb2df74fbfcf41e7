#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fairdec/classifier.hpp"
#include "fairdec/lm.hpp"
#include "fairdec/metrics.hpp"
#include "fairdec/subspace.hpp"

namespace fairdec {

enum class DebiasMethod { None, Inlp, Subspace };
enum class AlphaMode { Fixed, Learned };

const char* debias_method_name(DebiasMethod m);
DebiasMethod debias_method_from_name(const std::string& name);
const char* alpha_mode_name(AlphaMode m);
AlphaMode alpha_mode_from_name(const std::string& name);

struct DebiasConfig {
  DebiasMethod method = DebiasMethod::Inlp;
  AlphaMode alpha_mode = AlphaMode::Learned;
  double alpha = 0.0;        // mixing weight when alpha_mode is Fixed
  double alpha_scale = 1.0;  // multiplies the learned weight when alpha_mode is Learned
  int top_k = 50;            // candidate pool size for the learned weight
  std::shared_ptr<const NullspaceProjector> projector;
  std::shared_ptr<const BiasSubspace> subspace;
  std::shared_ptr<const BiasSensitiveSet> bias_set;  // optional; absent means alpha_t = 0

  void validate(Eigen::Index lm_dim) const;
};

// Next-token distribution with the projector applied to the context embedding.
Eigen::VectorXd debiased_distribution(const LanguageModel& lm, std::span<const std::size_t> context,
                                      const Eigen::MatrixXd& projector);

// Same with the subspace component of the context embedding removed.
Eigen::VectorXd subspace_debiased_distribution(const LanguageModel& lm,
                                               std::span<const std::size_t> context,
                                               const BiasSubspace& subspace);

// Ids of the top_k most likely tokens that are also bias-sensitive,
// boundary ties broken toward the lower id. Requires top_k <= |V|.
std::vector<std::size_t> candidate_set(const Eigen::VectorXd& p_star, int top_k,
                                       const std::vector<std::uint8_t>& bias_mask);
std::vector<std::size_t> candidate_set(const Eigen::VectorXd& p_star, int top_k,
                                       const BiasSensitiveSet& set, const Vocabulary& vocab);
std::vector<std::uint8_t> bias_set_mask(const BiasSensitiveSet& set, const Vocabulary& vocab);
std::vector<double> q_by_id(const BiasSensitiveSet& set, const Vocabulary& vocab);

// Probability-weighted mean of q over the candidate pool; 0 when the pool is empty.
double compute_alpha(const Eigen::VectorXd& p_star, const std::vector<std::size_t>& candidates,
                     const std::vector<double>& q);

// alpha * p_hat + (1 - alpha) * p_star; the endpoints return the inputs untouched.
Eigen::VectorXd mix(const Eigen::VectorXd& p_hat, const Eigen::VectorXd& p_star, double alpha);

inline constexpr std::size_t kNotSampled = static_cast<std::size_t>(-1);

struct StepTrace {
  int step = 0;
  double alpha = 0.0;
  std::size_t candidate_count = 0;
  Eigen::VectorXd p_star;
  Eigen::VectorXd p_hat;
  Eigen::VectorXd mixed;
  std::size_t sampled_id = kNotSampled;
  std::string sampled_token;
};

std::pair<Eigen::VectorXd, StepTrace> a_inlp_step(const LanguageModel& lm,
                                                  std::span<const std::size_t> context,
                                                  const DebiasConfig& cfg,
                                                  const std::vector<std::uint8_t>& bias_mask,
                                                  const std::vector<double>& q);

std::pair<Eigen::VectorXd, StepTrace> a_subspace_step(const LanguageModel& lm,
                                                      std::span<const std::size_t> context,
                                                      const DebiasConfig& cfg,
                                                      const std::vector<std::uint8_t>& bias_mask,
                                                      const std::vector<double>& q);

// Generation hook that swaps in the debiased mixture at every step and keeps
// a per-step trace.
class DebiasHook : public DistributionHook {
 public:
  DebiasHook(DebiasConfig cfg, const Vocabulary& vocab);

  Eigen::VectorXd next_distribution(const LanguageModel& lm,
                                    std::span<const std::size_t> context) override;
  void on_sampled(std::size_t token_id) override;

  const std::vector<StepTrace>& traces() const { return traces_; }
  void clear_traces() { traces_.clear(); }
  const DebiasConfig& config() const { return cfg_; }

  // One JSON object per line: a header record naming the mixing space,
  // then one record per step.
  void write_trace(std::ostream& out, const std::string& config_hash, std::uint64_t seed) const;

 private:
  DebiasConfig cfg_;
  const Vocabulary* vocab_;
  std::vector<std::uint8_t> bias_mask_;
  std::vector<double> q_;
  std::vector<StepTrace> traces_;
};

// Convenience closure over a fixed configuration, for metric evaluation.
ContextDistribution debias_context_distribution(const LanguageModel& lm, const DebiasConfig& cfg);

}
