#include "fairdec/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <set>
#include <unordered_set>

#include "json.hpp"

#include "fairdec/errors.hpp"
#include "fairdec/util.hpp"
#include "fairdec/version.hpp"

namespace fairdec {

using nlohmann::json;

std::vector<MinedContext> extract_diverse_contexts(
    const std::vector<std::vector<std::string>>& corpus,
    const std::vector<std::unordered_set<std::string>>& class_tokens, int min_len,
    int cap_per_class, std::uint64_t seed) {
  if (corpus.empty()) throw EmptyCorpusError("corpus has no sentences");
  if (class_tokens.size() < 2) throw ConfigError("need token sets for at least two classes");
  if (min_len < 1) throw ConfigError("min_len must be positive");

  std::vector<MinedContext> mined;
  for (std::size_t line = 0; line < corpus.size(); ++line) {
    const auto& tokens = corpus[line];
    if (tokens.size() < static_cast<std::size_t>(min_len)) continue;
    std::size_t cls = class_tokens.size();
    bool multi = false;
    for (const auto& tok : tokens) {
      const std::string low = to_lower(tok);
      for (std::size_t c = 0; c < class_tokens.size(); ++c) {
        if (!class_tokens[c].count(low)) continue;
        if (cls == class_tokens.size()) {
          cls = c;
        } else if (cls != c) {
          multi = true;
        }
        break;
      }
      if (multi) break;
    }
    if (multi || cls == class_tokens.size()) continue;
    mined.push_back({tokens, cls, line + 1});
  }
  if (mined.empty()) throw EmptyResultError("no sentence satisfied the context filters");

  if (cap_per_class > 0) {
    std::vector<MinedContext> kept;
    for (std::size_t c = 0; c < class_tokens.size(); ++c) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < mined.size(); ++i) {
        if (mined[i].class_id == c) members.push_back(i);
      }
      if (members.size() > static_cast<std::size_t>(cap_per_class)) {
        Rng rng(derive_seed(seed, c));
        rng.shuffle(members);
        members.resize(static_cast<std::size_t>(cap_per_class));
        std::sort(members.begin(), members.end());
      }
      for (const std::size_t i : members) kept.push_back(mined[i]);
    }
    std::sort(kept.begin(), kept.end(),
              [](const MinedContext& a, const MinedContext& b) { return a.line_no < b.line_no; });
    mined = std::move(kept);
  }
  return mined;
}

std::vector<std::vector<std::string>> subsequence_augment(
    const std::vector<std::string>& context, const std::unordered_set<std::string>& class_tokens,
    int n_subseqs, int min_len, std::uint64_t seed) {
  if (min_len < 1) throw ConfigError("min_len must be positive");
  if (n_subseqs < 0) throw ConfigError("n_subseqs cannot be negative");
  const std::size_t len = context.size();
  if (len < static_cast<std::size_t>(min_len)) {
    throw TooShortError("context shorter than min_len");
  }

  auto has_class_token = [&](std::size_t start, std::size_t count) {
    for (std::size_t i = start; i < start + count; ++i) {
      if (class_tokens.count(to_lower(context[i]))) return true;
    }
    return false;
  };

  Rng rng(seed);
  std::set<std::pair<std::size_t, std::size_t>> spans;
  std::vector<std::vector<std::string>> out;
  for (int draw = 0; draw < n_subseqs; ++draw) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      const std::size_t span_len =
          static_cast<std::size_t>(min_len) + rng.uniform_index(len - min_len + 1);
      const std::size_t start = rng.uniform_index(len - span_len + 1);
      if (!has_class_token(start, span_len)) continue;
      if (spans.emplace(start, span_len).second) {
        out.emplace_back(context.begin() + static_cast<std::ptrdiff_t>(start),
                         context.begin() + static_cast<std::ptrdiff_t>(start + span_len));
      }
      break;
    }
  }
  return out;
}

std::vector<const SuiteEntry*> BenchmarkSuite::bias_entries() const {
  std::vector<const SuiteEntry*> out;
  out.reserve(bias_entry_count());
  for (const auto& e : simple_entries) out.push_back(&e);
  for (const auto& e : diverse_entries) out.push_back(&e);
  return out;
}

void BenchmarkSuite::validate() const {
  if (class_names.size() < 2) throw FormatError("suite needs at least two classes");
  if (bias_entry_count() == 0) throw EmptyResultError("suite has no bias entries");
  std::unordered_set<std::string> seen;
  auto check = [&](const SuiteEntry& e, bool dedupe) {
    if (e.variants.size() != class_names.size()) {
      throw DimensionMismatchError("entry needs one variant per class");
    }
    const std::size_t len = e.variants[0].size();
    if (len == 0) throw EmptyContextError("empty context in suite");
    for (const auto& v : e.variants) {
      if (v.size() != len) throw DimensionMismatchError("variant lengths differ");
    }
    if (e.class_id >= class_names.size()) throw FormatError("entry class out of range");
    if (dedupe && !seen.insert(join(e.variants[0], " ")).second) {
      throw DuplicateTokenError("duplicate context in suite: " + join(e.variants[0], " "));
    }
  };
  for (const auto& e : simple_entries) check(e, true);
  for (const auto& e : diverse_entries) check(e, true);
  for (const auto& e : performance_entries) {
    check(e, false);
    if (!e.gold) throw FormatError("performance entry without gold token");
  }
}

namespace {

json entry_to_json(const SuiteEntry& e) {
  json j;
  j["variants"] = e.variants;
  if (e.gold) j["gold"] = *e.gold;
  else j["gold"] = nullptr;
  j["source"] = e.source;
  j["line"] = e.line_no;
  j["class"] = e.class_id;
  return j;
}

SuiteEntry entry_from_json(const json& j) {
  SuiteEntry e;
  e.variants = j.at("variants").get<std::vector<std::vector<std::string>>>();
  if (!j.at("gold").is_null()) e.gold = j.at("gold").get<std::string>();
  e.source = j.at("source").get<std::string>();
  e.line_no = j.at("line").get<std::size_t>();
  e.class_id = j.at("class").get<std::size_t>();
  return e;
}

}

void BenchmarkSuite::save(const std::filesystem::path& path, const std::string& config_hash,
                          std::uint64_t seed) const {
  validate();
  json j;
  j["format"] = "fairdec-suite";
  j["format_version"] = 1;
  j["domain"] = domain;
  j["class_names"] = class_names;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["tool_version"] = kVersion;
  for (const auto* list : {&simple_entries, &diverse_entries, &performance_entries}) {
    json arr = json::array();
    for (const auto& e : *list) arr.push_back(entry_to_json(e));
    if (list == &simple_entries) j["simple"] = std::move(arr);
    else if (list == &diverse_entries) j["diverse"] = std::move(arr);
    else j["performance"] = std::move(arr);
  }
  write_text_file(path, j.dump(2) + "\n");
}

BenchmarkSuite BenchmarkSuite::load(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw FormatError("cannot parse suite manifest " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "fairdec-suite") {
    throw FormatError("not a suite manifest: " + path.string());
  }
  BenchmarkSuite suite;
  try {
    suite.domain = j.at("domain").get<std::string>();
    suite.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const auto& e : j.at("simple")) suite.simple_entries.push_back(entry_from_json(e));
    for (const auto& e : j.at("diverse")) suite.diverse_entries.push_back(entry_from_json(e));
    for (const auto& e : j.at("performance")) {
      suite.performance_entries.push_back(entry_from_json(e));
    }
  } catch (const json::exception& e) {
    throw FormatError("bad suite manifest " + path.string() + ": " + e.what());
  }
  suite.validate();
  return suite;
}

void SuiteConfig::validate() const {
  if (!use_simple && !use_diverse) throw ConfigError("at least one suite source must be enabled");
  if (min_tokens < 1) throw ConfigError("min_tokens must be positive");
  if (bias_cap_per_class < 1) throw ConfigError("bias cap must be positive");
  if (performance_cap_per_class < 1) throw ConfigError("performance cap must be positive");
}

BenchmarkSuite build_suite(const std::vector<std::string>& templates,
                           const std::vector<std::vector<std::string>>& corpus,
                           const DefinitionalSets& defs, const BiasSensitiveSet& bias_set,
                           const SuiteConfig& cfg) {
  cfg.validate();
  defs.validate();
  const std::size_t n_classes = defs.num_classes();
  BenchmarkSuite suite;
  suite.domain = defs.domain;
  suite.class_names = defs.class_names;

  std::unordered_set<std::string> seen;
  auto unseen = [&](const std::vector<std::string>& ctx) { return seen.insert(join(ctx, " ")).second; };

  if (cfg.use_simple) {
    if (templates.empty()) throw EmptyFileError("no templates for the simple tier");
    for (std::size_t t = 0; t < templates.size(); ++t) {
      const auto tokens = split_ws(templates[t]);
      if (std::find(tokens.begin(), tokens.end(), std::string("XYZ")) == tokens.end()) {
        throw FormatError("template has no XYZ placeholder: " + templates[t]);
      }
      for (const auto& tuple : defs.sets) {
        SuiteEntry entry;
        entry.source = "template";
        entry.line_no = t + 1;
        entry.class_id = 0;
        for (std::size_t c = 0; c < n_classes; ++c) {
          std::vector<std::string> filled = tokens;
          for (auto& tok : filled) {
            if (tok == "XYZ") tok = tuple[c];
          }
          entry.variants.push_back(std::move(filled));
        }
        if (unseen(entry.variants[0])) suite.simple_entries.push_back(std::move(entry));
      }
    }
  }

  if (cfg.use_diverse) {
    std::vector<std::unordered_set<std::string>> def_tokens(n_classes);
    for (const auto& tuple : defs.sets) {
      for (std::size_t c = 0; c < n_classes; ++c) def_tokens[c].insert(to_lower(tuple[c]));
    }
    (void)bias_set;  // labels come from the definitional terms, which are the swappable ones
    const auto mined = extract_diverse_contexts(corpus, def_tokens, cfg.min_tokens);

    std::vector<std::size_t> bias_pool;
    std::vector<std::size_t> perf_pool;
    for (std::size_t i = 0; i < mined.size(); ++i) {
      bias_pool.push_back(i);
      const auto& tokens = mined[i].tokens;
      if (tokens.size() < static_cast<std::size_t>(cfg.min_tokens) + 1) continue;
      const std::string gold = to_lower(tokens.back());
      bool gold_is_identity = false;
      for (const auto& set : def_tokens) {
        if (set.count(gold)) {
          gold_is_identity = true;
          break;
        }
      }
      if (gold_is_identity) continue;
      bool context_keeps_term = false;
      for (std::size_t p = 0; p + 1 < tokens.size(); ++p) {
        if (def_tokens[mined[i].class_id].count(to_lower(tokens[p]))) {
          context_keeps_term = true;
          break;
        }
      }
      if (context_keeps_term) perf_pool.push_back(i);
    }

    auto cap_pool = [&](std::vector<std::size_t>& pool, int cap, std::uint64_t salt) {
      std::vector<std::size_t> kept;
      for (std::size_t c = 0; c < n_classes; ++c) {
        std::vector<std::size_t> members;
        for (const std::size_t i : pool) {
          if (mined[i].class_id == c) members.push_back(i);
        }
        if (members.size() > static_cast<std::size_t>(cap)) {
          Rng rng(derive_seed(cfg.seed, salt, c));
          rng.shuffle(members);
          members.resize(static_cast<std::size_t>(cap));
          std::sort(members.begin(), members.end());
        }
        kept.insert(kept.end(), members.begin(), members.end());
      }
      std::sort(kept.begin(), kept.end());
      pool = std::move(kept);
    };
    cap_pool(bias_pool, cfg.bias_cap_per_class, 1);
    cap_pool(perf_pool, cfg.performance_cap_per_class, 2);

    for (const std::size_t i : bias_pool) {
      if (!unseen(mined[i].tokens)) continue;
      SuiteEntry entry;
      entry.variants = counterfactual_variants(mined[i].tokens, defs.sets, n_classes);
      entry.source = "corpus";
      entry.line_no = mined[i].line_no;
      entry.class_id = mined[i].class_id;
      suite.diverse_entries.push_back(std::move(entry));
    }
    for (const std::size_t i : perf_pool) {
      SuiteEntry entry;
      std::vector<std::string> context(mined[i].tokens.begin(), mined[i].tokens.end() - 1);
      entry.variants = counterfactual_variants(context, defs.sets, n_classes);
      entry.gold = mined[i].tokens.back();
      entry.source = "corpus";
      entry.line_no = mined[i].line_no;
      entry.class_id = mined[i].class_id;
      suite.performance_entries.push_back(std::move(entry));
    }

    std::vector<std::size_t> diverse_counts(n_classes, 0);
    for (const auto& e : suite.diverse_entries) ++diverse_counts[e.class_id];
    for (std::size_t c = 0; c < n_classes; ++c) {
      if (diverse_counts[c] == 0) {
        throw NoExamplesForClassError("no diverse contexts for class '" + defs.class_names[c] + "'");
      }
    }
  }

  suite.validate();
  return suite;
}

std::vector<std::string> load_templates(const std::filesystem::path& path) {
  std::vector<std::string> out;
  for (const auto& line : read_lines(path)) {
    const auto t = trim(line);
    if (!t.empty() && t[0] != '#') out.push_back(t);
  }
  if (out.empty()) throw EmptyFileError("no templates in " + path.string());
  return out;
}

std::vector<std::vector<std::string>> load_corpus(const std::filesystem::path& path) {
  std::vector<std::vector<std::string>> out;
  for (const auto& line : read_lines(path)) {
    auto tokens = split_ws(line);
    if (!tokens.empty()) out.push_back(std::move(tokens));
  }
  if (out.empty()) throw EmptyCorpusError("no sentences in " + path.string());
  return out;
}

void SweepConfig::validate() const {
  if (alpha_grid.empty()) throw ConfigError("alpha grid is empty");
  for (const double a : alpha_grid) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("alpha grid values must lie in [0, 1]");
  }
  generation.validate();
  if (global_samples < 1) throw ConfigError("global_samples must be positive");
  if (jobs < 1) throw ConfigError("jobs must be positive");
}

namespace {

struct SweepCell {
  SweepRow row;
  std::vector<SweepDetailRow> details;
};

SweepCell evaluate_cell(const BenchmarkSuite& suite, const LanguageModel& lm,
                        const SweepVariant& variant, double alpha, const SentenceScorer& scorer,
                        const SweepConfig& cfg) {
  DebiasConfig dc = variant.config;
  if (dc.alpha_mode == AlphaMode::Fixed) dc.alpha = alpha;
  else dc.alpha_scale = alpha;
  dc.validate(lm.dim());

  const ContextDistribution eval_fn = debias_context_distribution(lm, dc);
  const ContextDistribution base_fn = [&lm](const std::vector<std::string>& ctx) {
    return lm.next_token_distribution(ctx);
  };
  const GenerateFn gen_fn = [&lm, &dc, &cfg](const std::vector<std::string>& prompt,
                                             std::uint64_t seed) {
    GenerationConfig g = cfg.generation;
    g.seed = seed;
    if (dc.method == DebiasMethod::None) return generate(lm, prompt, g).full_token_list();
    DebiasHook hook(dc, lm.vocab());
    return generate(lm, prompt, g, &hook).full_token_list();
  };

  SweepCell cell;
  cell.row.variant = variant.name;
  cell.row.alpha = alpha;

  const auto bias = suite.bias_entries();
  for (std::size_t i = 0; i < bias.size(); ++i) {
    const auto& entry = *bias[i];
    const LocalBias lb = local_bias_max(eval_fn, entry.variants);
    const double gd = global_bias_max(gen_fn, scorer, entry.variants, cfg.global_samples,
                                      derive_seed(cfg.seed, 0xb1a5ULL, i));
    cell.row.kl_local += lb.kl;
    cell.row.h2_local += lb.hellinger;
    cell.row.global_diff += gd;
    SweepDetailRow d;
    d.variant = variant.name;
    d.alpha = alpha;
    d.kind = "bias";
    d.entry = i;
    d.kl_local = lb.kl;
    d.h2_local = lb.hellinger;
    d.global_diff = gd;
    cell.details.push_back(std::move(d));
  }
  if (!bias.empty()) {
    const double n = static_cast<double>(bias.size());
    cell.row.kl_local /= n;
    cell.row.h2_local /= n;
    cell.row.global_diff /= n;
  }

  for (std::size_t i = 0; i < suite.performance_entries.size(); ++i) {
    const auto& entry = suite.performance_entries[i];
    double p_gold = 0.0;
    double drift = 0.0;
    for (const auto& ctx : entry.variants) {
      const Performance perf = performance(eval_fn, base_fn, ctx, *entry.gold, lm.vocab());
      p_gold += perf.p_gold_eval;
      drift += perf.kl_drift;
    }
    const double nv = static_cast<double>(entry.variants.size());
    p_gold /= nv;
    drift /= nv;
    cell.row.p_gold += p_gold;
    cell.row.kl_drift += drift;
    SweepDetailRow d;
    d.variant = variant.name;
    d.alpha = alpha;
    d.kind = "performance";
    d.entry = i;
    d.p_gold = p_gold;
    d.kl_drift = drift;
    cell.details.push_back(std::move(d));
  }
  if (!suite.performance_entries.empty()) {
    const double n = static_cast<double>(suite.performance_entries.size());
    cell.row.p_gold /= n;
    cell.row.kl_drift /= n;
  }
  return cell;
}

}

SweepResult run_sweep(const BenchmarkSuite& suite, const LanguageModel& lm,
                      const std::vector<SweepVariant>& variants, const SentenceScorer& scorer,
                      const SweepConfig& cfg) {
  cfg.validate();
  suite.validate();
  if (variants.empty()) throw ConfigError("sweep needs at least one variant");

  std::vector<double> grid = cfg.alpha_grid;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  const std::size_t n_cells = variants.size() * grid.size();
  std::vector<SweepCell> cells(n_cells);
  parallel_for(n_cells, cfg.jobs, [&](std::size_t idx) {
    const std::size_t vi = idx / grid.size();
    const std::size_t ai = idx % grid.size();
    cells[idx] = evaluate_cell(suite, lm, variants[vi], grid[ai], scorer, cfg);
  });

  SweepResult result;
  for (auto& cell : cells) {
    result.rows.push_back(std::move(cell.row));
    for (auto& d : cell.details) result.details.push_back(std::move(d));
  }
  return result;
}

namespace {

void write_provenance(std::ostream& out, const std::string& config_hash, std::uint64_t seed) {
  out << "# tool_version: " << kVersion << "\n";
  out << "# config_hash: " << config_hash << "\n";
  out << "# seed: " << seed << "\n";
}

}

void write_sweep_csv(const SweepResult& result, std::ostream& out, const std::string& config_hash,
                     std::uint64_t seed) {
  write_provenance(out, config_hash, seed);
  out << "variant,alpha,kl_local,h2_local,global_diff,p_gold,kl_drift\n";
  for (const auto& r : result.rows) {
    out << r.variant << ',' << format_double(r.alpha) << ',' << format_double(r.kl_local) << ','
        << format_double(r.h2_local) << ',' << format_double(r.global_diff) << ','
        << format_double(r.p_gold) << ',' << format_double(r.kl_drift) << '\n';
  }
}

void write_sweep_detail_csv(const SweepResult& result, std::ostream& out,
                            const std::string& config_hash, std::uint64_t seed) {
  write_provenance(out, config_hash, seed);
  out << "variant,alpha,kind,entry,kl_local,h2_local,global_diff,p_gold,kl_drift\n";
  for (const auto& d : result.details) {
    out << d.variant << ',' << format_double(d.alpha) << ',' << d.kind << ',' << d.entry << ','
        << format_double(d.kl_local) << ',' << format_double(d.h2_local) << ','
        << format_double(d.global_diff) << ',' << format_double(d.p_gold) << ','
        << format_double(d.kl_drift) << '\n';
  }
}

std::string sweep_file_name(const std::string& domain, const std::string& tag) {
  return "sweep_" + domain + "_" + tag + ".csv";
}

void ExportConfig::validate() const {
  generation.validate();
  if (samples_per_prompt < 1) throw ConfigError("samples_per_prompt must be positive");
}

void export_generations(const LanguageModel& lm, const DebiasConfig& debias,
                        const std::vector<std::vector<std::string>>& prompts,
                        const ExportConfig& cfg, std::ostream& out,
                        const ArtifactMeta* meta) {
  cfg.validate();
  debias.validate(lm.dim());
  if (prompts.empty()) throw ConfigError("no prompts to generate from");
  json header;
  header["record"] = "header";
  header["tool_version"] = kVersion;
  header["method"] = debias_method_name(debias.method);
  header["samples_per_prompt"] = cfg.samples_per_prompt;
  if (meta) {
    header["config_hash"] = meta->config_hash;
    header["seed"] = meta->seed;
  }
  out << header.dump() << "\n";
  for (const auto& prompt : prompts) {
    for (int s = 0; s < cfg.samples_per_prompt; ++s) {
      const std::uint64_t seed = derive_seed(cfg.base_seed, static_cast<std::uint64_t>(s));
      GenerationConfig g = cfg.generation;
      g.seed = seed;
      GenerationResult r;
      if (debias.method == DebiasMethod::None) {
        r = generate(lm, prompt, g);
      } else {
        DebiasHook hook(debias, lm.vocab());
        r = generate(lm, prompt, g, &hook);
      }
      json rec;
      rec["prompt"] = join(prompt, " ");
      rec["completion"] = r.text();
      rec["seed"] = seed;
      out << rec.dump() << "\n";
    }
  }
}

}
