#include "fairdec/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "fairdec/errors.hpp"
#include "fairdec/util.hpp"

namespace fairdec {

namespace {

constexpr double kFloor = 1e-12;

void check_distribution(const Eigen::VectorXd& p, const char* which) {
  if (p.size() == 0) throw DimensionMismatchError(std::string(which) + " is empty");
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (!std::isfinite(p[i])) throw NonFiniteValueError(std::string(which) + " has a non-finite entry");
    if (p[i] < 0.0) throw NotNormalizedError(std::string(which) + " has a negative entry");
    total += p[i];
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw NotNormalizedError(std::string(which) + " does not sum to 1");
  }
}

}

double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  if (p.size() != q.size()) throw DimensionMismatchError("distributions have different sizes");
  check_distribution(p, "p");
  check_distribution(q, "q");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    kl += p[i] * std::log(p[i] / std::max(q[i], kFloor));
  }
  return kl;
}

double hellinger_sq(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  if (p.size() != q.size()) throw DimensionMismatchError("distributions have different sizes");
  check_distribution(p, "p");
  check_distribution(q, "q");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double d = std::sqrt(p[i]) - std::sqrt(q[i]);
    acc += d * d;
  }
  return 0.5 * acc;
}

SwapMap::SwapMap(const std::vector<std::vector<std::string>>& tuples, std::size_t num_classes,
                 std::size_t shift) {
  if (num_classes < 2) throw FormatError("swap map needs at least two classes");
  if (shift % num_classes == 0) throw ConfigError("swap shift maps every term to itself");
  for (const auto& tuple : tuples) {
    if (tuple.size() != num_classes) {
      throw DimensionMismatchError("tuple size does not match class count");
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
      const std::string key = to_lower(tuple[c]);
      const std::string value = to_lower(tuple[(c + shift) % num_classes]);
      auto [it, inserted] = map_.emplace(key, value);
      if (!inserted && it->second != value) {
        throw DuplicateTokenError("term '" + key + "' has conflicting replacements");
      }
    }
  }
}

SwapMap SwapMap::from_directed(const std::vector<std::pair<std::string, std::string>>& entries) {
  SwapMap out;
  for (const auto& [from, to] : entries) {
    const std::string key = to_lower(from);
    const std::string value = to_lower(to);
    auto [it, inserted] = out.map_.emplace(key, value);
    if (!inserted && it->second != value) {
      throw DuplicateTokenError("term '" + key + "' has conflicting replacements");
    }
  }
  if (out.map_.empty()) throw EmptyResultError("swap map has no entries");
  return out;
}

std::optional<std::string> SwapMap::replacement(const std::string& token) const {
  auto it = map_.find(to_lower(token));
  if (it == map_.end()) return std::nullopt;
  return it->second;
}

namespace {

std::string match_case(const std::string& replacement, const std::string& original) {
  if (original.empty() || replacement.empty()) return replacement;
  const bool first_upper = std::isupper(static_cast<unsigned char>(original[0]));
  bool all_upper = first_upper && original.size() > 1;
  for (char c : original) {
    if (std::isalpha(static_cast<unsigned char>(c)) && !std::isupper(static_cast<unsigned char>(c))) {
      all_upper = false;
      break;
    }
  }
  std::string out = replacement;
  if (all_upper) {
    for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  } else if (first_upper) {
    out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  }
  return out;
}

}

ContextPair counterfactual_swap(const std::vector<std::string>& context, const SwapMap& swap_map) {
  if (context.empty()) throw EmptyContextError("cannot swap an empty context");
  ContextPair pair;
  pair.original = context;
  pair.swapped.reserve(context.size());
  for (const auto& tok : context) {
    if (auto rep = swap_map.replacement(tok)) {
      pair.swapped.push_back(match_case(*rep, tok));
      pair.swapped_terms.push_back(tok);
    } else {
      pair.swapped.push_back(tok);
    }
  }
  if (pair.swapped_terms.empty()) {
    throw NoSwappableTokenError("context contains no identity terms: " + join(context, " "));
  }
  return pair;
}

std::vector<std::vector<std::string>> counterfactual_variants(
    const std::vector<std::string>& context, const std::vector<std::vector<std::string>>& tuples,
    std::size_t num_classes) {
  std::vector<std::vector<std::string>> variants;
  variants.push_back(context);
  for (std::size_t shift = 1; shift < num_classes; ++shift) {
    const SwapMap map(tuples, num_classes, shift);
    variants.push_back(counterfactual_swap(context, map).swapped);
  }
  return variants;
}

LocalBias local_bias(const ContextDistribution& model, const std::vector<std::string>& c1,
                     const std::vector<std::string>& c2) {
  const Eigen::VectorXd p1 = model(c1);
  const Eigen::VectorXd p2 = model(c2);
  LocalBias out;
  out.kl = kl_divergence(p1, p2);
  out.kl_reverse = kl_divergence(p2, p1);
  out.hellinger = hellinger_sq(p1, p2);
  return out;
}

LocalBias local_bias(const ContextDistribution& model, const ContextPair& pair) {
  return local_bias(model, pair.original, pair.swapped);
}

LocalBias local_bias_max(const ContextDistribution& model,
                         const std::vector<std::vector<std::string>>& variants) {
  if (variants.size() < 2) throw DimensionMismatchError("need at least two variants");
  std::vector<Eigen::VectorXd> ps;
  ps.reserve(variants.size());
  for (const auto& v : variants) ps.push_back(model(v));
  LocalBias out;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (std::size_t j = 0; j < ps.size(); ++j) {
      if (i == j) continue;
      out.kl = std::max(out.kl, kl_divergence(ps[i], ps[j]));
      if (i < j) out.hellinger = std::max(out.hellinger, hellinger_sq(ps[i], ps[j]));
    }
  }
  out.kl_reverse = out.kl;
  return out;
}

LexiconScorer::LexiconScorer(std::unordered_map<std::string, double> polarity)
    : polarity_(std::move(polarity)) {
  if (polarity_.empty()) throw EmptyFileError("sentiment lexicon is empty");
  for (const auto& [token, value] : polarity_) {
    if (!std::isfinite(value) || value < -1.0 || value > 1.0) {
      throw FormatError("polarity of '" + token + "' outside [-1, 1]");
    }
  }
}

LexiconScorer LexiconScorer::from_file(const std::filesystem::path& path) {
  std::unordered_map<std::string, double> polarity;
  for (const auto& line : read_lines(path)) {
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto fields = split_ws(t);
    if (fields.size() != 2) throw FormatError("bad lexicon line: " + line);
    double v = 0.0;
    try {
      v = std::stod(fields[1]);
    } catch (const std::exception&) {
      throw FormatError("bad polarity value: " + line);
    }
    auto [it, inserted] = polarity.emplace(to_lower(fields[0]), v);
    if (!inserted) throw DuplicateTokenError("duplicate lexicon token: " + fields[0]);
  }
  return LexiconScorer(std::move(polarity));
}

double LexiconScorer::score(const std::vector<std::string>& tokens) const {
  if (tokens.empty()) return 0.5;
  double total = 0.0;
  for (const auto& tok : tokens) {
    auto it = polarity_.find(to_lower(tok));
    if (it != polarity_.end()) total += it->second;
  }
  const double mean = total / static_cast<double>(tokens.size());
  return (mean + 1.0) / 2.0;
}

double global_bias(const GenerateFn& generate_fn, const SentenceScorer& scorer,
                   const std::vector<std::string>& c1, const std::vector<std::string>& c2,
                   int n_samples, std::uint64_t base_seed) {
  return global_bias_max(generate_fn, scorer, {c1, c2}, n_samples, base_seed);
}

double global_bias_max(const GenerateFn& generate_fn, const SentenceScorer& scorer,
                       const std::vector<std::vector<std::string>>& variants, int n_samples,
                       std::uint64_t base_seed) {
  if (variants.size() < 2) throw DimensionMismatchError("need at least two variants");
  if (n_samples < 1) throw ConfigError("need at least one sample");
  double acc = 0.0;
  for (int s = 0; s < n_samples; ++s) {
    const std::uint64_t seed = derive_seed(base_seed, static_cast<std::uint64_t>(s));
    std::vector<double> scores;
    scores.reserve(variants.size());
    for (const auto& v : variants) scores.push_back(scorer.score(generate_fn(v, seed)));
    double worst = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      for (std::size_t j = i + 1; j < scores.size(); ++j) {
        worst = std::max(worst, std::abs(scores[i] - scores[j]));
      }
    }
    acc += worst;
  }
  return acc / static_cast<double>(n_samples);
}

Performance performance(const ContextDistribution& eval_model, const ContextDistribution& original,
                        const std::vector<std::string>& context, const std::string& gold,
                        const Vocabulary& vocab) {
  const std::size_t gold_id = vocab.index_of(gold);
  const Eigen::VectorXd pe = eval_model(context);
  const Eigen::VectorXd po = original(context);
  if (pe.size() != static_cast<Eigen::Index>(vocab.size()) || pe.size() != po.size()) {
    throw DimensionMismatchError("distribution size does not match vocabulary");
  }
  Performance out;
  out.p_gold_eval = pe[static_cast<Eigen::Index>(gold_id)];
  out.p_gold_original = po[static_cast<Eigen::Index>(gold_id)];
  out.kl_drift = kl_divergence(pe, po);
  out.hellinger_drift = hellinger_sq(pe, po);
  return out;
}

}
