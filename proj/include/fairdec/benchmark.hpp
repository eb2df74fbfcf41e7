#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "fairdec/debias.hpp"
#include "fairdec/metrics.hpp"
#include "fairdec/subspace.hpp"

namespace fairdec {

struct MinedContext {
  std::vector<std::string> tokens;
  std::size_t class_id = 0;
  std::size_t line_no = 0;  // 1-based line in the source corpus
};

// Sentences of at least min_len tokens that mention exactly one class.
// cap_per_class > 0 keeps a seeded random sample of that size per class.
std::vector<MinedContext> extract_diverse_contexts(
    const std::vector<std::vector<std::string>>& corpus,
    const std::vector<std::unordered_set<std::string>>& class_tokens, int min_len,
    int cap_per_class = 0, std::uint64_t seed = 0);

// Distinct random contiguous subsequences of the context, each at least
// min_len tokens and still containing one of the class tokens.
std::vector<std::vector<std::string>> subsequence_augment(
    const std::vector<std::string>& context, const std::unordered_set<std::string>& class_tokens,
    int n_subseqs, int min_len, std::uint64_t seed);

struct SuiteEntry {
  std::vector<std::vector<std::string>> variants;  // counterfactuals, [0] is the original
  std::optional<std::string> gold;                 // next token after the context, when known
  std::string source;                              // "template" or "corpus"
  std::size_t line_no = 0;                         // 1-based line in the source file
  std::size_t class_id = 0;                        // class of the original context
};

struct BenchmarkSuite {
  std::string domain;
  std::vector<std::string> class_names;
  std::vector<SuiteEntry> simple_entries;
  std::vector<SuiteEntry> diverse_entries;
  std::vector<SuiteEntry> performance_entries;

  std::size_t bias_entry_count() const { return simple_entries.size() + diverse_entries.size(); }
  std::vector<const SuiteEntry*> bias_entries() const;
  void validate() const;

  void save(const std::filesystem::path& path, const std::string& config_hash,
            std::uint64_t seed) const;
  static BenchmarkSuite load(const std::filesystem::path& path);
};

struct SuiteConfig {
  bool use_simple = true;
  bool use_diverse = true;
  int min_tokens = 5;
  int bias_cap_per_class = 100;
  int performance_cap_per_class = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

// Assembles counterfactual evaluation entries from templates and the corpus.
BenchmarkSuite build_suite(const std::vector<std::string>& templates,
                           const std::vector<std::vector<std::string>>& corpus,
                           const DefinitionalSets& defs, const BiasSensitiveSet& bias_set,
                           const SuiteConfig& cfg);

std::vector<std::string> load_templates(const std::filesystem::path& path);
std::vector<std::vector<std::string>> load_corpus(const std::filesystem::path& path);

struct SweepRow {
  std::string variant;
  double alpha = 0.0;
  double kl_local = 0.0;
  double h2_local = 0.0;
  double global_diff = 0.0;
  double p_gold = 0.0;
  double kl_drift = 0.0;
};

struct SweepDetailRow {
  std::string variant;
  double alpha = 0.0;
  std::string kind;  // "bias" or "performance"
  std::size_t entry = 0;
  double kl_local = 0.0;
  double h2_local = 0.0;
  double global_diff = 0.0;
  double p_gold = 0.0;
  double kl_drift = 0.0;
};

struct SweepVariant {
  std::string name;
  DebiasConfig config;
};

struct SweepConfig {
  std::vector<double> alpha_grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  GenerationConfig generation;
  int global_samples = 3;
  std::uint64_t seed = 0;
  int jobs = 1;

  void validate() const;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<SweepDetailRow> details;
};

// Evaluates every variant at every grid point. For fixed-weight variants the
// grid value is the mixing weight itself; for learned-weight variants it
// scales the per-step weight, so the grid origin is always the plain model.
SweepResult run_sweep(const BenchmarkSuite& suite, const LanguageModel& lm,
                      const std::vector<SweepVariant>& variants, const SentenceScorer& scorer,
                      const SweepConfig& cfg);

void write_sweep_csv(const SweepResult& result, std::ostream& out, const std::string& config_hash,
                     std::uint64_t seed);
void write_sweep_detail_csv(const SweepResult& result, std::ostream& out,
                            const std::string& config_hash, std::uint64_t seed);

std::string sweep_file_name(const std::string& domain, const std::string& tag);

struct ExportConfig {
  GenerationConfig generation;
  int samples_per_prompt = 1;
  std::uint64_t base_seed = 0;

  void validate() const;
};

// Writes a header record, then one {"prompt", "completion", "seed"} record
// per prompt/sample pair. Seeds are paired across prompts for comparisons.
void export_generations(const LanguageModel& lm, const DebiasConfig& debias,
                        const std::vector<std::vector<std::string>>& prompts,
                        const ExportConfig& cfg, std::ostream& out,
                        const ArtifactMeta* meta = nullptr);

}
