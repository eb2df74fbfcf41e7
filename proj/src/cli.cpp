#include "fairdec/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fairdec/benchmark.hpp"
#include "fairdec/classifier.hpp"
#include "fairdec/debias.hpp"
#include "fairdec/embeddings.hpp"
#include "fairdec/errors.hpp"
#include "fairdec/lm.hpp"
#include "fairdec/metrics.hpp"
#include "fairdec/subspace.hpp"
#include "fairdec/util.hpp"
#include "fairdec/version.hpp"

namespace fairdec {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

json default_config() {
  return json{
      {"seed", 0},
      {"jobs", 1},
      {"paths",
       {{"embeddings", ""},
        {"corpus", ""},
        {"templates", ""},
        {"definitional", ""},
        {"stopwords", ""},
        {"lexicon", ""},
        {"lm", ""},
        {"subspace", ""},
        {"projector", ""},
        {"bias_tokens", ""},
        {"dataset", ""},
        {"export_dataset", ""},
        {"suite", ""},
        {"export_suite", ""},
        {"prompts", ""},
        {"trace", ""},
        {"out_dir", "out"}}},
      {"subspace", {{"k", 3}, {"top_n", 40}}},
      {"lm_train",
       {{"window", 8}, {"epochs", 30}, {"learning_rate", 0.05}, {"init_scale", 0.01}}},
      {"dataset",
       {{"use_simple", true},
        {"use_diverse", true},
        {"use_subsequences", true},
        {"simple_words_per_class", 25},
        {"min_tokens", 5},
        {"subsequences_per_context", 3},
        {"train_frac", 0.49},
        {"val_frac", 0.21}}},
      {"svm", {{"penalty", 1.0}, {"max_iterations", 500}, {"learning_rate", 0.1}}},
      {"inlp",
       {{"iterations", 80},
        {"early_stop", true},
        {"early_stop_margin", 0.02},
        {"early_stop_patience", 3}}},
      {"debias",
       {{"method", "inlp"},
        {"alpha_mode", "learned"},
        {"alpha", 0.0},
        {"alpha_scale", 1.0},
        {"top_k", 50}}},
      {"generation",
       {{"max_length", 30},
        {"top_k", 40},
        {"temperature", 1.0},
        {"repetition_penalty", 1.5},
        {"no_repeat_ngram", 3}}},
      {"suite",
       {{"use_simple", true},
        {"use_diverse", true},
        {"min_tokens", 5},
        {"bias_cap_per_class", 100},
        {"performance_cap_per_class", 50}}},
      {"evaluate", {{"global_samples", 3}}},
      {"sweep",
       {{"alpha_grid", {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0}},
        {"global_samples", 3},
        {"variants", {"a-inlp", "a-inlp-learned", "a-subspace"}},
        {"tag", ""}}},
      {"export", {{"samples_per_prompt", 1}}},
      {"generate", {{"prompt", ""}}},
  };
}

const json* find_key(const json& cfg, const std::string& dotted) {
  const json* cur = &cfg;
  for (const auto& part : split_char(dotted, '.')) {
    if (!cur->is_object() || !cur->contains(part)) return nullptr;
    cur = &cur->at(part);
  }
  return cur;
}

template <typename T>
T get_as(const json& cfg, const std::string& key) {
  const json* v = find_key(cfg, key);
  if (!v) throw ConfigError("missing config key: " + key);
  try {
    return v->get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for config key " + key + ": " + v->dump());
  }
}

void set_key(json& cfg, const std::string& dotted, json value) {
  const auto parts = split_char(dotted, '.');
  if (dotted.empty() || parts.empty()) throw ConfigError("empty config key");
  json* cur = &cfg;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (parts[i].empty()) throw ConfigError("bad config key: " + dotted);
    if (!cur->is_object()) throw ConfigError("config key is not an object: " + parts[i]);
    cur = &(*cur)[parts[i]];
    if (cur->is_null()) *cur = json::object();
  }
  if (parts.back().empty()) throw ConfigError("bad config key: " + dotted);
  if (!cur->is_object()) throw ConfigError("config key is not an object: " + dotted);
  (*cur)[parts.back()] = std::move(value);
}

// Scalar flags accept bare JSON (numbers, booleans, arrays); anything that
// does not parse is taken as a string.
json parse_scalar(const std::string& raw) {
  try {
    return json::parse(raw);
  } catch (const json::exception&) {
    return json(raw);
  }
}

// Overrides collected while parsing flags, applied in precedence order:
// defaults < config file < FAIRDEC_SEED < --set < named flags.
struct Pending {
  std::string config_file;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, json>> flags;
  bool quiet = false;
};

void bind_str(CLI::App* cmd, Pending& p, const std::string& flag, const std::string& key,
              const std::string& help) {
  cmd->add_option_function<std::string>(
      flag, [&p, key](const std::string& v) { p.flags.emplace_back(key, json(v)); }, help);
}

void bind_value(CLI::App* cmd, Pending& p, const std::string& flag, const std::string& key,
                const std::string& help) {
  cmd->add_option_function<std::string>(
      flag, [&p, key](const std::string& v) { p.flags.emplace_back(key, parse_scalar(v)); }, help);
}

void bind_list(CLI::App* cmd, Pending& p, const std::string& flag, const std::string& key,
               const std::string& help) {
  cmd->add_option_function<std::string>(
      flag,
      [&p, key](const std::string& v) {
        json arr = json::array();
        for (const auto& part : split_char(v, ',')) arr.push_back(parse_scalar(trim(part)));
        p.flags.emplace_back(key, std::move(arr));
      },
      help);
}

void add_common(CLI::App* cmd, Pending& p) {
  cmd->add_option("--config", p.config_file, "JSON config file merged over built-in defaults");
  cmd->add_option("--set", p.sets, "Override one config key, e.g. --set subspace.k=2");
  cmd->add_flag("--quiet", p.quiet, "Suppress informational log lines");
  bind_value(cmd, p, "--seed", "seed", "Base random seed");
  bind_value(cmd, p, "--jobs", "jobs", "Worker thread cap");
  bind_str(cmd, p, "--out-dir", "paths.out_dir", "Directory for output artifacts");
}

json merge_config(const Pending& p) {
  json cfg = default_config();
  if (!p.config_file.empty()) {
    const fs::path path(p.config_file);
    if (!fs::exists(path)) throw ConfigError("--config: no such file: " + p.config_file);
    json file_cfg = json::parse(read_text_file(path));
    if (!file_cfg.is_object()) throw ConfigError("config file must hold a JSON object");
    cfg.update(file_cfg, true);
  }
  if (const char* env = std::getenv("FAIRDEC_SEED")) {
    try {
      std::size_t used = 0;
      const std::string text(env);
      const std::uint64_t seed = std::stoull(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      cfg["seed"] = seed;
    } catch (const std::exception&) {
      throw ConfigError("FAIRDEC_SEED is not an unsigned integer");
    }
  }
  for (const auto& entry : p.sets) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + entry);
    set_key(cfg, entry.substr(0, eq), parse_scalar(entry.substr(eq + 1)));
  }
  for (const auto& [key, value] : p.flags) set_key(cfg, key, value);
  return cfg;
}

std::string hash_config(const json& cfg) { return hex64(fnv1a(cfg.dump())); }

fs::path require_path(const json& cfg, const std::string& key) {
  const auto value = get_as<std::string>(cfg, key);
  if (value.empty()) throw ConfigError(key + " is required");
  const fs::path path(value);
  if (!fs::exists(path)) throw ConfigError(key + ": no such file: " + value);
  return path;
}

std::optional<fs::path> optional_path(const json& cfg, const std::string& key) {
  const auto value = get_as<std::string>(cfg, key);
  if (value.empty()) return std::nullopt;
  const fs::path path(value);
  if (!fs::exists(path)) throw ConfigError(key + ": no such file: " + value);
  return path;
}

// Output location; existence is not checked.
fs::path out_file(const json& cfg, const std::string& name) {
  const fs::path dir(get_as<std::string>(cfg, "paths.out_dir"));
  return dir / name;
}

void write_with_provenance(const fs::path& path, const ArtifactMeta& meta,
                           const std::string& body) {
  std::ostringstream out;
  out << "# tool_version: " << kVersion << "\n";
  out << "# config_hash: " << meta.config_hash << "\n";
  out << "# seed: " << meta.seed << "\n";
  out << body;
  write_text_file(path, out.str());
  log_info("wrote " + path.string());
}

struct LoadedModel {
  std::shared_ptr<const EmbeddingTable> table;
  std::shared_ptr<const LanguageModel> lm;
};

std::shared_ptr<const EmbeddingTable> load_table(const json& cfg) {
  return std::make_shared<EmbeddingTable>(parse_embedding_file(require_path(cfg, "paths.embeddings")));
}

LoadedModel load_model(const json& cfg) {
  LoadedModel m;
  m.table = load_table(cfg);
  m.lm = std::make_shared<LanguageModel>(
      LanguageModel::load(require_path(cfg, "paths.lm"), m.table));
  return m;
}

std::shared_ptr<const BiasSensitiveSet> load_bias_tokens(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return std::make_shared<BiasSensitiveSet>(BiasSensitiveSet::read_csv(in));
}

// Resources shared by every debiased decoding configuration.
struct DebiasResources {
  std::shared_ptr<const NullspaceProjector> projector;
  std::shared_ptr<const BiasSubspace> subspace;
  std::shared_ptr<const BiasSensitiveSet> bias_set;
};

DebiasResources load_debias_resources(const json& cfg, bool need_projector, bool need_subspace) {
  DebiasResources r;
  if (need_projector) {
    r.projector = std::make_shared<NullspaceProjector>(
        NullspaceProjector::load(require_path(cfg, "paths.projector")));
  }
  if (need_subspace) {
    r.subspace =
        std::make_shared<BiasSubspace>(BiasSubspace::load(require_path(cfg, "paths.subspace")));
  }
  if (const auto path = optional_path(cfg, "paths.bias_tokens")) {
    r.bias_set = load_bias_tokens(*path);
  }
  return r;
}

DebiasConfig build_debias(const json& cfg, Eigen::Index lm_dim) {
  DebiasConfig dc;
  dc.method = debias_method_from_name(get_as<std::string>(cfg, "debias.method"));
  dc.alpha_mode = alpha_mode_from_name(get_as<std::string>(cfg, "debias.alpha_mode"));
  dc.alpha = get_as<double>(cfg, "debias.alpha");
  dc.alpha_scale = get_as<double>(cfg, "debias.alpha_scale");
  dc.top_k = get_as<int>(cfg, "debias.top_k");
  const DebiasResources r = load_debias_resources(cfg, dc.method == DebiasMethod::Inlp,
                                                  dc.method == DebiasMethod::Subspace);
  dc.projector = r.projector;
  dc.subspace = r.subspace;
  dc.bias_set = r.bias_set;
  if (dc.method != DebiasMethod::None) dc.validate(lm_dim);
  return dc;
}

GenerationConfig build_generation(const json& cfg) {
  GenerationConfig g;
  g.max_length = get_as<int>(cfg, "generation.max_length");
  g.top_k = get_as<int>(cfg, "generation.top_k");
  g.temperature = get_as<double>(cfg, "generation.temperature");
  g.repetition_penalty = get_as<double>(cfg, "generation.repetition_penalty");
  g.no_repeat_ngram = get_as<int>(cfg, "generation.no_repeat_ngram");
  g.seed = get_as<std::uint64_t>(cfg, "seed");
  g.validate();
  return g;
}

SuiteConfig build_suite_config(const json& cfg) {
  SuiteConfig sc;
  sc.use_simple = get_as<bool>(cfg, "suite.use_simple");
  sc.use_diverse = get_as<bool>(cfg, "suite.use_diverse");
  sc.min_tokens = get_as<int>(cfg, "suite.min_tokens");
  sc.bias_cap_per_class = get_as<int>(cfg, "suite.bias_cap_per_class");
  sc.performance_cap_per_class = get_as<int>(cfg, "suite.performance_cap_per_class");
  sc.seed = get_as<std::uint64_t>(cfg, "seed");
  sc.validate();
  return sc;
}

// Loads a saved suite when paths.suite is set, otherwise assembles one from
// the templates, corpus, and definitional sets named in the config.
BenchmarkSuite obtain_suite(const json& cfg, const LanguageModel& lm,
                            const BiasSensitiveSet& bias_set) {
  (void)lm;
  if (const auto path = optional_path(cfg, "paths.suite")) {
    BenchmarkSuite suite = BenchmarkSuite::load(*path);
    suite.validate();
    return suite;
  }
  const SuiteConfig sc = build_suite_config(cfg);
  const DefinitionalSets defs = load_definitional_sets(require_path(cfg, "paths.definitional"));
  std::vector<std::string> templates;
  if (sc.use_simple) templates = load_templates(require_path(cfg, "paths.templates"));
  std::vector<std::vector<std::string>> corpus;
  if (sc.use_diverse) corpus = load_corpus(require_path(cfg, "paths.corpus"));
  BenchmarkSuite suite = build_suite(templates, corpus, defs, bias_set, sc);
  suite.validate();
  return suite;
}

int cmd_subspace(const json& cfg, const ArtifactMeta& meta) {
  std::shared_ptr<const EmbeddingTable> table;
  DefinitionalSets defs;
  std::unordered_set<std::string> stopwords;
  int k = 0;
  int top_n = 0;
  try {
    table = load_table(cfg);
    defs = load_definitional_sets(require_path(cfg, "paths.definitional"));
    if (const auto path = optional_path(cfg, "paths.stopwords")) stopwords = load_stopwords(*path);
    k = get_as<int>(cfg, "subspace.k");
    top_n = get_as<int>(cfg, "subspace.top_n");
    if (k < 1) throw ConfigError("subspace.k must be positive");
    if (top_n < 1) throw ConfigError("subspace.top_n must be positive");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  try {
    const BiasSubspace subspace = estimate_subspace(*table, defs, k);
    const BiasSensitiveSet set = rank_bias_sensitive(subspace, *table, top_n, stopwords);
    subspace.save(out_file(cfg, "subspace.json"), &meta);
    log_info("wrote " + out_file(cfg, "subspace.json").string());
    std::ostringstream body;
    set.write_csv(body);
    write_with_provenance(out_file(cfg, "bias_tokens.csv"), meta, body.str());
    std::ostringstream ev;
    for (Eigen::Index i = 0; i < subspace.explained_variance().size(); ++i) {
      if (i) ev << ' ';
      ev << format_double(subspace.explained_variance()[i]);
    }
    log_info("explained variance: " + ev.str());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int cmd_train_lm(const json& cfg, const ArtifactMeta& meta) {
  std::shared_ptr<const EmbeddingTable> table;
  std::vector<std::vector<std::string>> corpus;
  std::string embeddings_ref;
  LmTrainConfig tc;
  try {
    table = load_table(cfg);
    embeddings_ref = get_as<std::string>(cfg, "paths.embeddings");
    corpus = load_corpus(require_path(cfg, "paths.corpus"));
    tc.window = get_as<int>(cfg, "lm_train.window");
    tc.epochs = get_as<int>(cfg, "lm_train.epochs");
    tc.learning_rate = get_as<double>(cfg, "lm_train.learning_rate");
    tc.init_scale = get_as<double>(cfg, "lm_train.init_scale");
    tc.seed = get_as<std::uint64_t>(cfg, "seed");
    tc.validate();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  try {
    const LmTrainResult result = train_toy_lm(corpus, table, tc);
    result.model.save(out_file(cfg, "lm.json"), embeddings_ref, &meta);
    log_info("wrote " + out_file(cfg, "lm.json").string());
    std::ostringstream body;
    body << "epoch,loss\n";
    for (std::size_t i = 0; i < result.epoch_losses.size(); ++i) {
      body << (i + 1) << ',' << format_double(result.epoch_losses[i]) << '\n';
    }
    write_with_provenance(out_file(cfg, "train_loss.csv"), meta, body.str());
    if (!result.epoch_losses.empty()) {
      log_info("final loss: " + format_double(result.epoch_losses.back()));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int cmd_train_inlp(const json& cfg, const ArtifactMeta& meta) {
  LabeledContextDataset dataset;
  InlpConfig ic;
  std::string export_dataset;
  try {
    if (const auto path = optional_path(cfg, "paths.dataset")) {
      dataset = LabeledContextDataset::load_csv(*path);
    } else {
      const LoadedModel m = load_model(cfg);
      const auto bias_set = load_bias_tokens(require_path(cfg, "paths.bias_tokens"));
      const auto templates = load_templates(require_path(cfg, "paths.templates"));
      const auto corpus = load_corpus(require_path(cfg, "paths.corpus"));
      DatasetConfig dc;
      dc.use_simple = get_as<bool>(cfg, "dataset.use_simple");
      dc.use_diverse = get_as<bool>(cfg, "dataset.use_diverse");
      dc.use_subsequences = get_as<bool>(cfg, "dataset.use_subsequences");
      dc.simple_words_per_class = get_as<int>(cfg, "dataset.simple_words_per_class");
      dc.min_tokens = get_as<int>(cfg, "dataset.min_tokens");
      dc.subsequences_per_context = get_as<int>(cfg, "dataset.subsequences_per_context");
      dc.train_frac = get_as<double>(cfg, "dataset.train_frac");
      dc.val_frac = get_as<double>(cfg, "dataset.val_frac");
      dc.seed = get_as<std::uint64_t>(cfg, "seed");
      dc.validate();
      dataset = build_classifier_dataset(templates, corpus, *bias_set, *m.lm, dc);
    }
    dataset.validate();
    ic.iterations = get_as<int>(cfg, "inlp.iterations");
    ic.early_stop = get_as<bool>(cfg, "inlp.early_stop");
    ic.early_stop_margin = get_as<double>(cfg, "inlp.early_stop_margin");
    ic.early_stop_patience = get_as<int>(cfg, "inlp.early_stop_patience");
    ic.svm.penalty = get_as<double>(cfg, "svm.penalty");
    ic.svm.max_iterations = get_as<int>(cfg, "svm.max_iterations");
    ic.svm.learning_rate = get_as<double>(cfg, "svm.learning_rate");
    ic.svm.seed = get_as<std::uint64_t>(cfg, "seed");
    ic.validate();
    export_dataset = get_as<std::string>(cfg, "paths.export_dataset");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  try {
    if (!export_dataset.empty()) {
      dataset.save_csv(export_dataset, &meta);
      log_info("wrote " + export_dataset);
    }
    const NullspaceProjector projector = run_inlp(dataset, ic);
    projector.save(out_file(cfg, "projector.json"), &meta);
    log_info("wrote " + out_file(cfg, "projector.json").string());
    std::ostringstream body;
    body << "iteration,val_accuracy,rank\n";
    for (std::size_t i = 0; i < projector.val_accuracies.size(); ++i) {
      body << (i + 1) << ',' << format_double(projector.val_accuracies[i]) << ','
           << projector.ranks[i] << '\n';
    }
    write_with_provenance(out_file(cfg, "inlp_trajectory.csv"), meta, body.str());
    log_info("iterations used: " + std::to_string(projector.iterations_used) +
             ", final rank: " + std::to_string(projector.ranks.empty() ? -1 : projector.ranks.back()));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int cmd_generate(const json& cfg, const ArtifactMeta& meta) {
  LoadedModel m;
  DebiasConfig dc;
  GenerationConfig gc;
  std::vector<std::string> prompt;
  std::string trace_path;
  try {
    m = load_model(cfg);
    dc = build_debias(cfg, m.lm->dim());
    gc = build_generation(cfg);
    prompt = split_ws(get_as<std::string>(cfg, "generate.prompt"));
    if (prompt.empty()) throw ConfigError("generate.prompt is required");
    trace_path = get_as<std::string>(cfg, "paths.trace");
    if (!trace_path.empty() && dc.method == DebiasMethod::None) {
      throw ConfigError("tracing requires a debiasing method");
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  try {
    GenerationResult result;
    if (dc.method == DebiasMethod::None) {
      result = generate(*m.lm, prompt, gc);
    } else {
      DebiasHook hook(dc, m.lm->vocab());
      result = generate(*m.lm, prompt, gc, &hook);
      if (!trace_path.empty()) {
        const fs::path path(trace_path);
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        std::ofstream out(path);
        if (!out) throw IoError("cannot open " + trace_path);
        hook.write_trace(out, meta.config_hash, meta.seed);
        log_info("wrote " + trace_path);
      }
    }
    std::cout << result.text() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

// Linear-interpolation quantile of an unsorted sample.
double quantile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

json quantile_block(const std::vector<double>& values) {
  return json{{"q25", quantile(values, 0.25)},
              {"median", quantile(values, 0.5)},
              {"q75", quantile(values, 0.75)}};
}

// Per-entry evaluation records assembled by cmd_evaluate.
struct EvaluatedEntry {
  std::string kind;
  std::size_t index = 0;
  std::string source;
  std::size_t line_no = 0;
  BiasReport report;
  Performance perf;
  std::string gold;
};

int cmd_evaluate(const json& cfg, const ArtifactMeta& meta) {
  LoadedModel m;
  DebiasConfig dc;
  GenerationConfig gc;
  BenchmarkSuite suite;
  std::shared_ptr<const BiasSensitiveSet> bias_set;
  std::unique_ptr<LexiconScorer> scorer;
  int global_samples = 0;
  try {
    m = load_model(cfg);
    dc = build_debias(cfg, m.lm->dim());
    gc = build_generation(cfg);
    bias_set = dc.bias_set ? dc.bias_set : load_bias_tokens(require_path(cfg, "paths.bias_tokens"));
    suite = obtain_suite(cfg, *m.lm, *bias_set);
    scorer = std::make_unique<LexiconScorer>(
        LexiconScorer::from_file(require_path(cfg, "paths.lexicon")));
    global_samples = get_as<int>(cfg, "evaluate.global_samples");
    if (global_samples < 1) throw ConfigError("evaluate.global_samples must be positive");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  try {
    const std::string export_suite = get_as<std::string>(cfg, "paths.export_suite");
    if (!export_suite.empty()) {
      suite.save(export_suite, meta.config_hash, meta.seed);
      log_info("wrote " + export_suite);
    }
    const LanguageModel& lm = *m.lm;
    const ContextDistribution eval_fn = debias_context_distribution(lm, dc);
    const ContextDistribution base_fn = [&lm](const std::vector<std::string>& ctx) {
      return lm.next_token_distribution(ctx);
    };
    const GenerateFn gen_fn = [&lm, &dc, &gc](const std::vector<std::string>& prompt,
                                              std::uint64_t seed) {
      GenerationConfig g = gc;
      g.seed = seed;
      if (dc.method == DebiasMethod::None) return generate(lm, prompt, g).full_token_list();
      DebiasHook hook(dc, lm.vocab());
      return generate(lm, prompt, g, &hook).full_token_list();
    };
    const std::uint64_t seed = meta.seed;

    std::vector<EvaluatedEntry> entries;
    const auto bias = suite.bias_entries();
    for (std::size_t i = 0; i < bias.size(); ++i) {
      const auto& entry = *bias[i];
      EvaluatedEntry rec;
      rec.kind = "bias";
      rec.index = i;
      rec.source = entry.source;
      rec.line_no = entry.line_no;
      rec.report.local = local_bias_max(eval_fn, entry.variants);
      rec.report.global.emplace_back(
          scorer->name(), global_bias_max(gen_fn, *scorer, entry.variants, global_samples,
                                          derive_seed(seed, 0xb1a5ULL, i)));
      const Eigen::VectorXd p_eval = eval_fn(entry.variants[0]);
      const Eigen::VectorXd p_base = base_fn(entry.variants[0]);
      rec.report.kl_to_original = kl_divergence(p_eval, p_base);
      rec.report.hellinger_to_original = hellinger_sq(p_eval, p_base);
      entries.push_back(std::move(rec));
    }
    for (std::size_t i = 0; i < suite.performance_entries.size(); ++i) {
      const auto& entry = suite.performance_entries[i];
      EvaluatedEntry rec;
      rec.kind = "performance";
      rec.index = i;
      rec.source = entry.source;
      rec.line_no = entry.line_no;
      rec.gold = *entry.gold;
      Performance sum;
      for (const auto& ctx : entry.variants) {
        const Performance p = performance(eval_fn, base_fn, ctx, *entry.gold, lm.vocab());
        sum.p_gold_eval += p.p_gold_eval;
        sum.p_gold_original += p.p_gold_original;
        sum.kl_drift += p.kl_drift;
        sum.hellinger_drift += p.hellinger_drift;
      }
      const double n = static_cast<double>(entry.variants.size());
      rec.perf = {sum.p_gold_eval / n, sum.p_gold_original / n, sum.kl_drift / n,
                  sum.hellinger_drift / n};
      entries.push_back(std::move(rec));
    }

    std::ostringstream bias_body;
    bias_body << "entry,source,line,kl,kl_reverse,hellinger,global_" << scorer->name()
              << ",kl_drift,hellinger_drift\n";
    double mean_kl = 0.0, mean_h2 = 0.0, mean_global = 0.0, max_kl = 0.0, max_h2 = 0.0;
    std::vector<double> kl_vals, h2_vals;
    std::size_t n_bias = 0;
    for (const auto& rec : entries) {
      if (rec.kind != "bias") continue;
      bias_body << rec.index << ',' << rec.source << ',' << rec.line_no << ','
                << format_double(rec.report.local.kl) << ','
                << format_double(rec.report.local.kl_reverse) << ','
                << format_double(rec.report.local.hellinger) << ','
                << format_double(rec.report.global[0].second) << ','
                << format_double(rec.report.kl_to_original) << ','
                << format_double(rec.report.hellinger_to_original) << '\n';
      mean_kl += rec.report.local.kl;
      mean_h2 += rec.report.local.hellinger;
      mean_global += rec.report.global[0].second;
      max_kl = std::max(max_kl, rec.report.local.kl);
      max_h2 = std::max(max_h2, rec.report.local.hellinger);
      kl_vals.push_back(rec.report.local.kl);
      h2_vals.push_back(rec.report.local.hellinger);
      ++n_bias;
    }
    if (n_bias > 0) {
      mean_kl /= static_cast<double>(n_bias);
      mean_h2 /= static_cast<double>(n_bias);
      mean_global /= static_cast<double>(n_bias);
    }
    write_with_provenance(out_file(cfg, "bias_report.csv"), meta, bias_body.str());

    std::ostringstream perf_body;
    perf_body << "entry,source,line,gold,p_gold_eval,p_gold_original,kl_drift,hellinger_drift\n";
    double mean_p_gold = 0.0, mean_p_gold_orig = 0.0, mean_drift = 0.0;
    std::size_t n_perf = 0;
    for (const auto& rec : entries) {
      if (rec.kind != "performance") continue;
      perf_body << rec.index << ',' << rec.source << ',' << rec.line_no << ',' << rec.gold << ','
                << format_double(rec.perf.p_gold_eval) << ','
                << format_double(rec.perf.p_gold_original) << ','
                << format_double(rec.perf.kl_drift) << ','
                << format_double(rec.perf.hellinger_drift) << '\n';
      mean_p_gold += rec.perf.p_gold_eval;
      mean_p_gold_orig += rec.perf.p_gold_original;
      mean_drift += rec.perf.kl_drift;
      ++n_perf;
    }
    if (n_perf > 0) {
      mean_p_gold /= static_cast<double>(n_perf);
      mean_p_gold_orig /= static_cast<double>(n_perf);
      mean_drift /= static_cast<double>(n_perf);
    }
    write_with_provenance(out_file(cfg, "performance_report.csv"), meta, perf_body.str());

    json summary;
    summary["tool_version"] = kVersion;
    summary["config_hash"] = meta.config_hash;
    summary["seed"] = meta.seed;
    summary["domain"] = suite.domain;
    summary["class_names"] = suite.class_names;
    summary["method"] = debias_method_name(dc.method);
    summary["scorer"] = scorer->name();
    summary["counts"] = {{"simple", suite.simple_entries.size()},
                         {"diverse", suite.diverse_entries.size()},
                         {"performance", suite.performance_entries.size()}};
    summary["local"] = {{"mean_kl", mean_kl},
                        {"mean_hellinger", mean_h2},
                        {"max_kl", max_kl},
                        {"max_hellinger", max_h2},
                        {"kl_quantiles", quantile_block(kl_vals)},
                        {"hellinger_quantiles", quantile_block(h2_vals)}};
    summary["global"] = {{"mean_diff", mean_global}};
    summary["performance"] = {{"mean_p_gold", mean_p_gold},
                              {"mean_p_gold_original", mean_p_gold_orig},
                              {"mean_kl_drift", mean_drift}};
    write_text_file(out_file(cfg, "summary.json"), summary.dump(2) + "\n");
    log_info("wrote " + out_file(cfg, "summary.json").string());
    log_info("mean local hellinger: " + format_double(mean_h2) +
             ", mean p_gold: " + format_double(mean_p_gold));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d%H%M%S", &tm_utc);
  return buf;
}

SweepVariant make_variant(const std::string& name, const DebiasResources& r, int top_k) {
  SweepVariant v;
  v.name = name;
  v.config.top_k = top_k;
  v.config.bias_set = r.bias_set;
  if (name == "a-inlp") {
    v.config.method = DebiasMethod::Inlp;
    v.config.alpha_mode = AlphaMode::Fixed;
    v.config.projector = r.projector;
  } else if (name == "a-inlp-learned") {
    v.config.method = DebiasMethod::Inlp;
    v.config.alpha_mode = AlphaMode::Learned;
    v.config.projector = r.projector;
  } else if (name == "a-subspace") {
    v.config.method = DebiasMethod::Subspace;
    v.config.alpha_mode = AlphaMode::Fixed;
    v.config.subspace = r.subspace;
  } else if (name == "a-subspace-learned") {
    v.config.method = DebiasMethod::Subspace;
    v.config.alpha_mode = AlphaMode::Learned;
    v.config.subspace = r.subspace;
  } else {
    throw ConfigError("unknown sweep variant: " + name);
  }
  return v;
}

int cmd_sweep(const json& cfg, const ArtifactMeta& meta) {
  LoadedModel m;
  BenchmarkSuite suite;
  std::vector<SweepVariant> variants;
  std::unique_ptr<LexiconScorer> scorer;
  SweepConfig sc;
  std::string tag;
  try {
    m = load_model(cfg);
    const auto names = get_as<std::vector<std::string>>(cfg, "sweep.variants");
    if (names.empty()) throw ConfigError("sweep.variants must not be empty");
    bool need_projector = false;
    bool need_subspace = false;
    for (const auto& name : names) {
      if (name.rfind("a-inlp", 0) == 0) need_projector = true;
      if (name.rfind("a-subspace", 0) == 0) need_subspace = true;
    }
    if (get_as<std::string>(cfg, "paths.bias_tokens").empty()) {
      throw ConfigError("paths.bias_tokens is required");
    }
    const DebiasResources resources = load_debias_resources(cfg, need_projector, need_subspace);
    const int top_k = get_as<int>(cfg, "debias.top_k");
    for (const auto& name : names) {
      variants.push_back(make_variant(name, resources, top_k));
      variants.back().config.validate(m.lm->dim());
    }
    suite = obtain_suite(cfg, *m.lm, *resources.bias_set);
    scorer = std::make_unique<LexiconScorer>(
        LexiconScorer::from_file(require_path(cfg, "paths.lexicon")));
    sc.alpha_grid = get_as<std::vector<double>>(cfg, "sweep.alpha_grid");
    sc.generation = build_generation(cfg);
    sc.global_samples = get_as<int>(cfg, "sweep.global_samples");
    sc.seed = get_as<std::uint64_t>(cfg, "seed");
    sc.jobs = get_as<int>(cfg, "jobs");
    sc.validate();
    tag = get_as<std::string>(cfg, "sweep.tag");
    if (tag.empty()) tag = utc_timestamp();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  try {
    const SweepResult result = run_sweep(suite, *m.lm, variants, *scorer, sc);
    const fs::path csv_path = out_file(cfg, sweep_file_name(suite.domain, tag));
    if (csv_path.has_parent_path()) fs::create_directories(csv_path.parent_path());
    {
      std::ofstream out(csv_path);
      if (!out) throw IoError("cannot open " + csv_path.string());
      write_sweep_csv(result, out, meta.config_hash, meta.seed);
    }
    log_info("wrote " + csv_path.string());
    fs::path detail_path = csv_path;
    detail_path.replace_extension();
    detail_path += "_detail.csv";
    {
      std::ofstream out(detail_path);
      if (!out) throw IoError("cannot open " + detail_path.string());
      write_sweep_detail_csv(result, out, meta.config_hash, meta.seed);
    }
    log_info("wrote " + detail_path.string());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int cmd_export(const json& cfg, const ArtifactMeta& meta) {
  LoadedModel m;
  DebiasConfig dc;
  ExportConfig ec;
  std::vector<std::vector<std::string>> prompts;
  try {
    m = load_model(cfg);
    dc = build_debias(cfg, m.lm->dim());
    ec.generation = build_generation(cfg);
    ec.samples_per_prompt = get_as<int>(cfg, "export.samples_per_prompt");
    ec.base_seed = get_as<std::uint64_t>(cfg, "seed");
    ec.validate();
    for (const auto& line : read_lines(require_path(cfg, "paths.prompts"))) {
      const auto tokens = split_ws(line);
      if (!tokens.empty()) prompts.push_back(tokens);
    }
    if (prompts.empty()) throw ConfigError("paths.prompts holds no prompts");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  try {
    const fs::path path = out_file(cfg, "generations.jsonl");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string());
    export_generations(*m.lm, dc, prompts, ec, out, &meta);
    log_info("wrote " + path.string());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Measures representational bias in a toy autoregressive language model and"
               " mitigates it at decode time."};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  Pending p;

  auto* sub = app.add_subcommand("subspace", "Estimate the bias direction system and rank"
                                             " bias-sensitive tokens");
  add_common(sub, p);
  bind_str(sub, p, "--embeddings", "paths.embeddings", "Token embedding file");
  bind_str(sub, p, "--definitional", "paths.definitional", "Definitional tuple JSON");
  bind_str(sub, p, "--stopwords", "paths.stopwords", "Stopword list, one token per line");
  bind_value(sub, p, "--k", "subspace.k", "Number of principal directions");
  bind_value(sub, p, "--top-n", "subspace.top_n", "Ranked tokens kept per class");

  auto* tlm = app.add_subcommand("train-lm", "Train the toy language model on a corpus");
  add_common(tlm, p);
  bind_str(tlm, p, "--embeddings", "paths.embeddings", "Token embedding file");
  bind_str(tlm, p, "--corpus", "paths.corpus", "Training corpus, one sentence per line");
  bind_value(tlm, p, "--window", "lm_train.window", "Context window length");
  bind_value(tlm, p, "--epochs", "lm_train.epochs", "Training epochs");
  bind_value(tlm, p, "--learning-rate", "lm_train.learning_rate", "SGD step size");

  auto* ti = app.add_subcommand("train-inlp", "Train the iterated nullspace projector");
  add_common(ti, p);
  bind_str(ti, p, "--embeddings", "paths.embeddings", "Token embedding file");
  bind_str(ti, p, "--lm", "paths.lm", "Language model checkpoint");
  bind_str(ti, p, "--corpus", "paths.corpus", "Corpus for diverse contexts");
  bind_str(ti, p, "--templates", "paths.templates", "Placeholder templates file");
  bind_str(ti, p, "--bias-tokens", "paths.bias_tokens", "Ranked bias-sensitive token CSV");
  bind_str(ti, p, "--dataset", "paths.dataset", "Pre-built labeled dataset CSV");
  bind_str(ti, p, "--export-dataset", "paths.export_dataset", "Write the built dataset here");
  bind_value(ti, p, "--iterations", "inlp.iterations", "Projection iterations");

  auto* gen = app.add_subcommand("generate", "Generate a continuation, optionally debiased");
  add_common(gen, p);
  bind_str(gen, p, "--embeddings", "paths.embeddings", "Token embedding file");
  bind_str(gen, p, "--lm", "paths.lm", "Language model checkpoint");
  bind_str(gen, p, "--projector", "paths.projector", "Nullspace projector checkpoint");
  bind_str(gen, p, "--subspace-file", "paths.subspace", "Bias subspace checkpoint");
  bind_str(gen, p, "--bias-tokens", "paths.bias_tokens", "Ranked bias-sensitive token CSV");
  bind_str(gen, p, "--prompt", "generate.prompt", "Prompt text");
  bind_str(gen, p, "--method", "debias.method", "none, inlp, or subspace");
  bind_str(gen, p, "--alpha-mode", "debias.alpha_mode", "fixed or learned");
  bind_value(gen, p, "--alpha", "debias.alpha", "Fixed mixing weight");
  bind_value(gen, p, "--alpha-scale", "debias.alpha_scale", "Scale on the learned weight");
  bind_str(gen, p, "--trace", "paths.trace", "Write per-step trace records here");
  bind_value(gen, p, "--max-length", "generation.max_length", "Tokens to generate");
  bind_value(gen, p, "--top-k", "generation.top_k", "Top-k sampling cutoff");
  bind_value(gen, p, "--temperature", "generation.temperature", "Softmax temperature");

  auto* ev = app.add_subcommand("evaluate", "Evaluate bias and performance metrics over a suite");
  add_common(ev, p);
  bind_str(ev, p, "--embeddings", "paths.embeddings", "Token embedding file");
  bind_str(ev, p, "--lm", "paths.lm", "Language model checkpoint");
  bind_str(ev, p, "--projector", "paths.projector", "Nullspace projector checkpoint");
  bind_str(ev, p, "--subspace-file", "paths.subspace", "Bias subspace checkpoint");
  bind_str(ev, p, "--bias-tokens", "paths.bias_tokens", "Ranked bias-sensitive token CSV");
  bind_str(ev, p, "--definitional", "paths.definitional", "Definitional tuple JSON");
  bind_str(ev, p, "--templates", "paths.templates", "Placeholder templates file");
  bind_str(ev, p, "--corpus", "paths.corpus", "Corpus to mine diverse contexts from");
  bind_str(ev, p, "--lexicon", "paths.lexicon", "Sentiment lexicon file");
  bind_str(ev, p, "--suite", "paths.suite", "Pre-built suite JSON");
  bind_str(ev, p, "--export-suite", "paths.export_suite", "Write the built suite here");
  bind_str(ev, p, "--method", "debias.method", "none, inlp, or subspace");
  bind_str(ev, p, "--alpha-mode", "debias.alpha_mode", "fixed or learned");
  bind_value(ev, p, "--alpha", "debias.alpha", "Fixed mixing weight");
  bind_value(ev, p, "--global-samples", "evaluate.global_samples", "Completions per context");

  auto* sw = app.add_subcommand("sweep", "Trade-off sweep over mixing weights and variants");
  add_common(sw, p);
  bind_str(sw, p, "--embeddings", "paths.embeddings", "Token embedding file");
  bind_str(sw, p, "--lm", "paths.lm", "Language model checkpoint");
  bind_str(sw, p, "--projector", "paths.projector", "Nullspace projector checkpoint");
  bind_str(sw, p, "--subspace-file", "paths.subspace", "Bias subspace checkpoint");
  bind_str(sw, p, "--bias-tokens", "paths.bias_tokens", "Ranked bias-sensitive token CSV");
  bind_str(sw, p, "--definitional", "paths.definitional", "Definitional tuple JSON");
  bind_str(sw, p, "--templates", "paths.templates", "Placeholder templates file");
  bind_str(sw, p, "--corpus", "paths.corpus", "Corpus to mine diverse contexts from");
  bind_str(sw, p, "--lexicon", "paths.lexicon", "Sentiment lexicon file");
  bind_str(sw, p, "--suite", "paths.suite", "Pre-built suite JSON");
  bind_list(sw, p, "--grid", "sweep.alpha_grid", "Comma-separated mixing weights");
  bind_list(sw, p, "--variants", "sweep.variants", "Comma-separated variant names");
  bind_str(sw, p, "--tag", "sweep.tag", "Output file tag; defaults to a UTC timestamp");
  bind_value(sw, p, "--global-samples", "sweep.global_samples", "Completions per context");

  auto* ex = app.add_subcommand("export", "Write prompt completions as JSON records");
  add_common(ex, p);
  bind_str(ex, p, "--embeddings", "paths.embeddings", "Token embedding file");
  bind_str(ex, p, "--lm", "paths.lm", "Language model checkpoint");
  bind_str(ex, p, "--projector", "paths.projector", "Nullspace projector checkpoint");
  bind_str(ex, p, "--subspace-file", "paths.subspace", "Bias subspace checkpoint");
  bind_str(ex, p, "--bias-tokens", "paths.bias_tokens", "Ranked bias-sensitive token CSV");
  bind_str(ex, p, "--prompts", "paths.prompts", "Prompt file, one prompt per line");
  bind_str(ex, p, "--method", "debias.method", "none, inlp, or subspace");
  bind_value(ex, p, "--samples", "export.samples_per_prompt", "Completions per prompt");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  set_quiet(p.quiet);
  json cfg;
  try {
    cfg = merge_config(p);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  ArtifactMeta meta;
  meta.config_hash = hash_config(cfg);
  try {
    meta.seed = get_as<std::uint64_t>(cfg, "seed");
    fs::create_directories(get_as<std::string>(cfg, "paths.out_dir"));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  if (sub->parsed()) return cmd_subspace(cfg, meta);
  if (tlm->parsed()) return cmd_train_lm(cfg, meta);
  if (ti->parsed()) return cmd_train_inlp(cfg, meta);
  if (gen->parsed()) return cmd_generate(cfg, meta);
  if (ev->parsed()) return cmd_evaluate(cfg, meta);
  if (sw->parsed()) return cmd_sweep(cfg, meta);
  if (ex->parsed()) return cmd_export(cfg, meta);
  std::cerr << "error: no subcommand given\n";
  return 2;
}

}
