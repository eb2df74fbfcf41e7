#include "fairdec/debias.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "json.hpp"

#include "fairdec/errors.hpp"
#include "fairdec/util.hpp"
#include "fairdec/version.hpp"

namespace fairdec {

using nlohmann::json;

const char* debias_method_name(DebiasMethod m) {
  switch (m) {
    case DebiasMethod::None: return "none";
    case DebiasMethod::Inlp: return "inlp";
    case DebiasMethod::Subspace: return "subspace";
  }
  throw ConfigError("unknown debias method");
}

DebiasMethod debias_method_from_name(const std::string& name) {
  if (name == "none") return DebiasMethod::None;
  if (name == "inlp") return DebiasMethod::Inlp;
  if (name == "subspace") return DebiasMethod::Subspace;
  throw ConfigError("unknown debias method: " + name);
}

const char* alpha_mode_name(AlphaMode m) {
  switch (m) {
    case AlphaMode::Fixed: return "fixed";
    case AlphaMode::Learned: return "learned";
  }
  throw ConfigError("unknown alpha mode");
}

AlphaMode alpha_mode_from_name(const std::string& name) {
  if (name == "fixed") return AlphaMode::Fixed;
  if (name == "learned") return AlphaMode::Learned;
  throw ConfigError("unknown alpha mode: " + name);
}

void DebiasConfig::validate(Eigen::Index lm_dim) const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(alpha_scale >= 0.0 && alpha_scale <= 1.0)) {
    throw ConfigError("alpha_scale must lie in [0, 1]");
  }
  if (top_k < 1) throw ConfigError("top_k must be at least 1");
  if (method == DebiasMethod::Inlp) {
    if (!projector) throw ConfigError("inlp debiasing needs a projector");
    if (projector->matrix.rows() != lm_dim || projector->matrix.cols() != lm_dim) {
      throw DimensionMismatchError("projector size does not match model dimension");
    }
  }
  if (method == DebiasMethod::Subspace) {
    if (!subspace) throw ConfigError("subspace debiasing needs a subspace");
    if (subspace->dim() != lm_dim) {
      throw DimensionMismatchError("subspace size does not match model dimension");
    }
  }
}

Eigen::VectorXd debiased_distribution(const LanguageModel& lm, std::span<const std::size_t> context,
                                      const Eigen::MatrixXd& projector) {
  if (projector.rows() != lm.dim() || projector.cols() != lm.dim()) {
    throw DimensionMismatchError("projector size does not match model dimension");
  }
  const Eigen::VectorXd f = lm.context_embedding(context);
  return softmax(lm.table().matrix() * (projector * f));
}

Eigen::VectorXd subspace_debiased_distribution(const LanguageModel& lm,
                                               std::span<const std::size_t> context,
                                               const BiasSubspace& subspace) {
  if (subspace.dim() != lm.dim()) {
    throw DimensionMismatchError("subspace size does not match model dimension");
  }
  const Eigen::VectorXd f = lm.context_embedding(context);
  return softmax(lm.table().matrix() * subspace.reject(f));
}

std::vector<std::uint8_t> bias_set_mask(const BiasSensitiveSet& set, const Vocabulary& vocab) {
  std::vector<std::uint8_t> mask(vocab.size(), 0);
  std::size_t found = 0;
  for (const auto& ranked : set.ranked()) {
    for (const auto& st : ranked) {
      if (auto idx = vocab.find(st.token)) {
        mask[*idx] = 1;
        ++found;
      }
    }
  }
  if (found == 0) log_warn("no bias-sensitive token appears in the model vocabulary");
  return mask;
}

std::vector<double> q_by_id(const BiasSensitiveSet& set, const Vocabulary& vocab) {
  std::vector<double> q(vocab.size(), 0.0);
  for (const auto& ranked : set.ranked()) {
    for (const auto& st : ranked) {
      if (auto idx = vocab.find(st.token)) q[*idx] = std::abs(st.score) / set.normalization();
    }
  }
  return q;
}

std::vector<std::size_t> candidate_set(const Eigen::VectorXd& p_star, int top_k,
                                       const std::vector<std::uint8_t>& bias_mask) {
  if (static_cast<std::size_t>(p_star.size()) != bias_mask.size()) {
    throw DimensionMismatchError("mask size does not match distribution");
  }
  if (top_k < 1) throw ConfigError("top_k must be at least 1");
  if (static_cast<Eigen::Index>(top_k) > p_star.size()) {
    throw ConfigError("top_k exceeds vocabulary size");
  }
  std::vector<std::size_t> order(static_cast<std::size_t>(p_star.size()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double pa = p_star[static_cast<Eigen::Index>(a)];
    const double pb = p_star[static_cast<Eigen::Index>(b)];
    if (pa != pb) return pa > pb;
    return a < b;
  });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < static_cast<std::size_t>(top_k); ++i) {
    if (bias_mask[order[i]]) out.push_back(order[i]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> candidate_set(const Eigen::VectorXd& p_star, int top_k,
                                       const BiasSensitiveSet& set, const Vocabulary& vocab) {
  return candidate_set(p_star, top_k, bias_set_mask(set, vocab));
}

double compute_alpha(const Eigen::VectorXd& p_star, const std::vector<std::size_t>& candidates,
                     const std::vector<double>& q) {
  if (static_cast<std::size_t>(p_star.size()) != q.size()) {
    throw DimensionMismatchError("q size does not match distribution");
  }
  if (candidates.empty()) return 0.0;
  double num = 0.0;
  double den = 0.0;
  for (const std::size_t id : candidates) {
    if (id >= q.size()) throw DimensionMismatchError("candidate id out of range");
    const double qv = q[id];
    if (!(qv >= 0.0 && qv <= 1.0)) throw ConfigError("q values must lie in [0, 1]");
    const double p = p_star[static_cast<Eigen::Index>(id)];
    num += p * qv;
    den += p;
  }
  if (den <= 0.0) return 0.0;
  return std::clamp(num / den, 0.0, 1.0);
}

Eigen::VectorXd mix(const Eigen::VectorXd& p_hat, const Eigen::VectorXd& p_star, double alpha) {
  if (p_hat.size() != p_star.size()) {
    throw DimensionMismatchError("distributions have different sizes");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (alpha == 0.0) return p_star;
  if (alpha == 1.0) return p_hat;
  Eigen::VectorXd p = alpha * p_hat + (1.0 - alpha) * p_star;
  const double z = p.sum();
  if (!(z > 0.0) || !std::isfinite(z)) throw NonFiniteValueError("mixture has no positive mass");
  return p / z;
}

namespace {

std::pair<Eigen::VectorXd, StepTrace> blend(const LanguageModel& lm,
                                            std::span<const std::size_t> context,
                                            const DebiasConfig& cfg,
                                            const std::vector<std::uint8_t>& bias_mask,
                                            const std::vector<double>& q, Eigen::VectorXd p_hat) {
  StepTrace trace;
  trace.p_star = lm.next_token_distribution(context);
  trace.p_hat = std::move(p_hat);
  if (cfg.alpha_mode == AlphaMode::Fixed) {
    trace.alpha = cfg.alpha;
    trace.candidate_count = 0;
  } else {
    const int k = static_cast<int>(
        std::min<Eigen::Index>(static_cast<Eigen::Index>(cfg.top_k), trace.p_star.size()));
    const auto candidates = candidate_set(trace.p_star, k, bias_mask);
    trace.candidate_count = candidates.size();
    trace.alpha = std::clamp(compute_alpha(trace.p_star, candidates, q) * cfg.alpha_scale, 0.0, 1.0);
  }
  trace.mixed = mix(trace.p_hat, trace.p_star, trace.alpha);
  return {trace.mixed, std::move(trace)};
}

}

std::pair<Eigen::VectorXd, StepTrace> a_inlp_step(const LanguageModel& lm,
                                                  std::span<const std::size_t> context,
                                                  const DebiasConfig& cfg,
                                                  const std::vector<std::uint8_t>& bias_mask,
                                                  const std::vector<double>& q) {
  if (!cfg.projector) throw ConfigError("inlp step needs a projector");
  return blend(lm, context, cfg, bias_mask, q,
               debiased_distribution(lm, context, cfg.projector->matrix));
}

std::pair<Eigen::VectorXd, StepTrace> a_subspace_step(const LanguageModel& lm,
                                                      std::span<const std::size_t> context,
                                                      const DebiasConfig& cfg,
                                                      const std::vector<std::uint8_t>& bias_mask,
                                                      const std::vector<double>& q) {
  if (!cfg.subspace) throw ConfigError("subspace step needs a subspace");
  return blend(lm, context, cfg, bias_mask, q,
               subspace_debiased_distribution(lm, context, *cfg.subspace));
}

DebiasHook::DebiasHook(DebiasConfig cfg, const Vocabulary& vocab)
    : cfg_(std::move(cfg)), vocab_(&vocab) {
  if (cfg_.method == DebiasMethod::None) {
    throw ConfigError("debias hook needs an active method");
  }
  if (cfg_.bias_set) {
    bias_mask_ = bias_set_mask(*cfg_.bias_set, vocab);
    q_ = q_by_id(*cfg_.bias_set, vocab);
  } else {
    bias_mask_.assign(vocab.size(), 0);
    q_.assign(vocab.size(), 0.0);
  }
}

Eigen::VectorXd DebiasHook::next_distribution(const LanguageModel& lm,
                                              std::span<const std::size_t> context) {
  cfg_.validate(lm.dim());
  auto [dist, trace] = cfg_.method == DebiasMethod::Inlp
                           ? a_inlp_step(lm, context, cfg_, bias_mask_, q_)
                           : a_subspace_step(lm, context, cfg_, bias_mask_, q_);
  trace.step = static_cast<int>(traces_.size());
  traces_.push_back(std::move(trace));
  return dist;
}

void DebiasHook::on_sampled(std::size_t token_id) {
  if (traces_.empty()) return;
  StepTrace& trace = traces_.back();
  trace.sampled_id = token_id;
  trace.sampled_token = vocab_->token(token_id);
}

void DebiasHook::write_trace(std::ostream& out, const std::string& config_hash,
                             std::uint64_t seed) const {
  json header;
  header["record"] = "header";
  header["mixing"] = "probabilities";
  header["method"] = debias_method_name(cfg_.method);
  header["alpha_mode"] = alpha_mode_name(cfg_.alpha_mode);
  if (cfg_.alpha_mode == AlphaMode::Fixed) header["alpha"] = cfg_.alpha;
  else header["alpha_scale"] = cfg_.alpha_scale;
  header["top_k"] = cfg_.top_k;
  header["config_hash"] = config_hash;
  header["seed"] = seed;
  header["tool_version"] = kVersion;
  out << header.dump() << "\n";
  for (const auto& t : traces_) {
    json rec;
    rec["record"] = "step";
    rec["step"] = t.step;
    rec["alpha"] = t.alpha;
    rec["candidates"] = t.candidate_count;
    if (t.sampled_id != kNotSampled) {
      rec["sampled_id"] = t.sampled_id;
      rec["sampled"] = t.sampled_token;
      const Eigen::Index id = static_cast<Eigen::Index>(t.sampled_id);
      rec["p_star"] = t.p_star[id];
      rec["p_hat"] = t.p_hat[id];
      rec["p_mixed"] = t.mixed[id];
    }
    out << rec.dump() << "\n";
  }
}

ContextDistribution debias_context_distribution(const LanguageModel& lm, const DebiasConfig& cfg) {
  cfg.validate(lm.dim());
  if (cfg.method == DebiasMethod::None) {
    return [&lm](const std::vector<std::string>& ctx) { return lm.next_token_distribution(ctx); };
  }
  auto mask = std::make_shared<std::vector<std::uint8_t>>(
      cfg.bias_set ? bias_set_mask(*cfg.bias_set, lm.vocab())
                   : std::vector<std::uint8_t>(lm.vocab().size(), 0));
  auto q = std::make_shared<std::vector<double>>(
      cfg.bias_set ? q_by_id(*cfg.bias_set, lm.vocab())
                   : std::vector<double>(lm.vocab().size(), 0.0));
  return [&lm, cfg, mask, q](const std::vector<std::string>& ctx) {
    const auto ids = lm.to_ids(ctx);
    auto [dist, trace] = cfg.method == DebiasMethod::Inlp
                             ? a_inlp_step(lm, ids, cfg, *mask, *q)
                             : a_subspace_step(lm, ids, cfg, *mask, *q);
    return dist;
  };
}

}
