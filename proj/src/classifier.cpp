#include "fairdec/classifier.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "fairdec/benchmark.hpp"
#include "fairdec/errors.hpp"
#include "fairdec/util.hpp"
#include "fairdec/version.hpp"

namespace fairdec {

using nlohmann::json;

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::SimpleTemplate: return "simple";
    case Provenance::DiverseCorpus: return "diverse";
    case Provenance::Subsequence: return "subsequence";
  }
  throw ConfigError("unknown provenance");
}

Provenance provenance_from_name(const std::string& name) {
  if (name == "simple") return Provenance::SimpleTemplate;
  if (name == "diverse") return Provenance::DiverseCorpus;
  if (name == "subsequence") return Provenance::Subsequence;
  throw FormatError("unknown provenance: " + name);
}

Eigen::Index LabeledContextDataset::dim() const {
  if (examples.empty()) throw EmptyResultError("dataset has no examples");
  return examples.front().x.size();
}

void LabeledContextDataset::validate() const {
  if (class_names.size() < 2) throw SingleClassDatasetError("dataset needs at least two classes");
  if (examples.empty()) throw EmptyResultError("dataset has no examples");
  const Eigen::Index d = examples.front().x.size();
  std::vector<std::size_t> counts(class_names.size(), 0);
  for (const auto& ex : examples) {
    if (ex.x.size() != d) throw DimensionMismatchError("inconsistent feature dimensions");
    if (!ex.x.allFinite()) throw NonFiniteValueError("non-finite feature vector");
    if (ex.label >= class_names.size()) throw FormatError("label out of range");
    ++counts[ex.label];
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) {
      throw NoExamplesForClassError("no examples for class '" + class_names[c] + "'");
    }
  }
  std::vector<std::uint8_t> seen(examples.size(), 0);
  auto check_split = [&](const std::vector<std::size_t>& idx, const char* name) {
    for (const std::size_t i : idx) {
      if (i >= examples.size()) throw FormatError(std::string(name) + " index out of range");
      if (seen[i]) throw FormatError("example in more than one split");
      seen[i] = 1;
    }
  };
  check_split(train_idx, "train");
  check_split(val_idx, "val");
  check_split(test_idx, "test");
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

}

void LabeledContextDataset::save_csv(const std::filesystem::path& path,
                                     const ArtifactMeta* meta) const {
  validate();
  std::ostringstream out;
  out << "# fairdec-dataset 1\n";
  out << "# tool_version: " << kVersion << "\n";
  if (meta) {
    out << "# config_hash: " << meta->config_hash << "\n";
    out << "# seed: " << meta->seed << "\n";
  }
  out << "# classes: " << join(class_names, ",") << "\n";
  out << "label,provenance,split,text\n";
  std::vector<std::string> split(examples.size(), "none");
  for (const std::size_t i : train_idx) split[i] = "train";
  for (const std::size_t i : val_idx) split[i] = "val";
  for (const std::size_t i : test_idx) split[i] = "test";
  for (std::size_t i = 0; i < examples.size(); ++i) {
    out << examples[i].label << ',' << provenance_name(examples[i].provenance) << ',' << split[i]
        << ',' << csv_escape(examples[i].text) << '\n';
  }
  write_text_file(path, out.str());

  std::ostringstream vecs;
  vecs << dim() << '\n';
  for (const auto& ex : examples) {
    for (Eigen::Index j = 0; j < ex.x.size(); ++j) {
      if (j) vecs << ' ';
      vecs << format_double(ex.x[j]);
    }
    vecs << '\n';
  }
  auto vec_path = path;
  vec_path += ".vecs";
  write_text_file(vec_path, vecs.str());
}

namespace {

std::vector<std::string> parse_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

}

LabeledContextDataset LabeledContextDataset::load_csv(const std::filesystem::path& path) {
  LabeledContextDataset data;
  bool saw_header = false;
  std::vector<std::string> splits;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string prefix = "# classes: ";
      if (line.rfind(prefix, 0) == 0) data.class_names = split_char(line.substr(prefix.size()), ',');
      continue;
    }
    if (!saw_header) {
      saw_header = true;
      continue;
    }
    const auto fields = parse_csv_row(line);
    if (fields.size() != 4) throw FormatError("bad dataset row: " + line);
    LabeledExample ex;
    ex.label = static_cast<std::size_t>(std::stoul(fields[0]));
    ex.provenance = provenance_from_name(fields[1]);
    ex.text = fields[3];
    splits.push_back(fields[2]);
    data.examples.push_back(std::move(ex));
  }
  if (data.examples.empty()) throw EmptyFileError("dataset CSV has no rows: " + path.string());

  auto vec_path = path;
  vec_path += ".vecs";
  const auto vec_lines = read_lines(vec_path);
  if (vec_lines.empty()) throw EmptyFileError("empty embedding cache: " + vec_path.string());
  const Eigen::Index d = static_cast<Eigen::Index>(std::stol(vec_lines[0]));
  std::size_t row = 0;
  for (std::size_t i = 1; i < vec_lines.size(); ++i) {
    if (trim(vec_lines[i]).empty()) continue;
    if (row >= data.examples.size()) throw FormatError("embedding cache has extra rows");
    const auto fields = split_ws(vec_lines[i]);
    if (static_cast<Eigen::Index>(fields.size()) != d) {
      throw DimensionMismatchError("embedding cache row has wrong width");
    }
    Eigen::VectorXd x(d);
    for (Eigen::Index j = 0; j < d; ++j) x[j] = std::stod(fields[static_cast<std::size_t>(j)]);
    data.examples[row].x = std::move(x);
    ++row;
  }
  if (row != data.examples.size()) throw FormatError("embedding cache is missing rows");
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == "train") data.train_idx.push_back(i);
    else if (splits[i] == "val") data.val_idx.push_back(i);
    else if (splits[i] == "test") data.test_idx.push_back(i);
  }
  data.validate();
  return data;
}

void DatasetConfig::validate() const {
  if (!use_simple && !use_diverse) throw ConfigError("at least one data source must be enabled");
  if (simple_words_per_class < 1) throw ConfigError("simple_words_per_class must be positive");
  if (min_tokens < 1) throw ConfigError("min_tokens must be positive");
  if (subsequences_per_context < 0) throw ConfigError("subsequences_per_context cannot be negative");
  if (!(train_frac > 0.0) || !(val_frac >= 0.0) || train_frac + val_frac >= 1.0) {
    throw ConfigError("split fractions must satisfy 0 < train, 0 <= val, train + val < 1");
  }
}

LabeledContextDataset build_classifier_dataset(const std::vector<std::string>& templates,
                                               const std::vector<std::vector<std::string>>& corpus,
                                               const BiasSensitiveSet& bias_set,
                                               const LanguageModel& lm, const DatasetConfig& cfg) {
  cfg.validate();
  LabeledContextDataset data;
  data.class_names = bias_set.class_names();
  const std::size_t n_classes = data.class_names.size();

  auto add_example = [&](const std::vector<std::string>& tokens, std::size_t label, Provenance prov) {
    try {
      LabeledExample ex;
      ex.x = lm.context_embedding(tokens);
      ex.label = label;
      ex.provenance = prov;
      ex.text = join(tokens, " ");
      data.examples.push_back(std::move(ex));
    } catch (const AllTokensOovError&) {
      log_warn("skipping context with no in-vocabulary tokens: " + join(tokens, " "));
    }
  };

  if (cfg.use_simple) {
    if (templates.empty()) throw EmptyFileError("no templates for the simple tier");
    for (const auto& tmpl : templates) {
      const auto tokens = split_ws(tmpl);
      const bool has_slot =
          std::find(tokens.begin(), tokens.end(), std::string("XYZ")) != tokens.end();
      if (!has_slot) throw FormatError("template has no XYZ placeholder: " + tmpl);
      for (std::size_t c = 0; c < n_classes; ++c) {
        const auto& ranked = bias_set.ranked()[c];
        const std::size_t m =
            std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(cfg.simple_words_per_class));
        for (std::size_t w = 0; w < m; ++w) {
          std::vector<std::string> filled = tokens;
          for (auto& tok : filled) {
            if (tok == "XYZ") tok = ranked[w].token;
          }
          add_example(filled, c, Provenance::SimpleTemplate);
        }
      }
    }
  }

  if (cfg.use_diverse) {
    std::vector<std::unordered_set<std::string>> class_tokens(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) {
      for (const auto& st : bias_set.ranked()[c]) class_tokens[c].insert(to_lower(st.token));
    }
    const auto mined = extract_diverse_contexts(corpus, class_tokens, cfg.min_tokens);
    for (const auto& mc : mined) add_example(mc.tokens, mc.class_id, Provenance::DiverseCorpus);
    if (cfg.use_subsequences && cfg.subsequences_per_context > 0) {
      for (std::size_t i = 0; i < mined.size(); ++i) {
        const auto subs = subsequence_augment(
            mined[i].tokens, class_tokens[mined[i].class_id], cfg.subsequences_per_context,
            cfg.min_tokens, derive_seed(cfg.seed, 0x5eedULL, i));
        for (const auto& sub : subs) add_example(sub, mined[i].class_id, Provenance::Subsequence);
      }
    }
  }

  if (data.examples.empty()) throw EmptyAfterFilteringError("no classifier examples were produced");

  std::vector<std::size_t> order(data.examples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed);
  rng.shuffle(order);
  const std::size_t n = order.size();
  const std::size_t n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(
                                                           static_cast<double>(n) * cfg.train_frac)));
  const std::size_t n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * cfg.val_frac));
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train) data.train_idx.push_back(order[i]);
    else if (i < n_train + n_val) data.val_idx.push_back(order[i]);
    else data.test_idx.push_back(order[i]);
  }
  data.validate();
  return data;
}

std::size_t LinearBiasClassifier::predict(const Eigen::VectorXd& x) const {
  if (x.size() != weights.cols()) throw DimensionMismatchError("feature size does not match weights");
  Eigen::Index best = 0;
  (weights * x + bias).maxCoeff(&best);
  return static_cast<std::size_t>(best);
}

double LinearBiasClassifier::accuracy(const LabeledContextDataset& data,
                                      const std::vector<std::size_t>& idx) const {
  if (idx.empty()) throw EmptyResultError("cannot score an empty split");
  std::size_t hits = 0;
  for (const std::size_t i : idx) {
    if (predict(data.examples[i].x) == data.examples[i].label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

void SvmConfig::validate() const {
  if (!(penalty > 0.0)) throw ConfigError("penalty must be positive");
  if (max_iterations < 1) throw ConfigError("max_iterations must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
}

namespace {

struct BinaryProblem {
  const Eigen::MatrixXd& X;  // n x dim
  const Eigen::VectorXd& y;  // +-1

  double objective(const Eigen::VectorXd& w, double b, double penalty) const {
    const Eigen::VectorXd margins =
        Eigen::VectorXd::Ones(X.rows()) - y.cwiseProduct(X * w + Eigen::VectorXd::Constant(X.rows(), b));
    const double hinge = margins.cwiseMax(0.0).squaredNorm() / static_cast<double>(X.rows());
    return 0.5 * w.squaredNorm() / penalty + hinge;
  }

  void gradient(const Eigen::VectorXd& w, double b, double penalty, Eigen::VectorXd& gw,
                double& gb) const {
    const Eigen::VectorXd margins =
        Eigen::VectorXd::Ones(X.rows()) - y.cwiseProduct(X * w + Eigen::VectorXd::Constant(X.rows(), b));
    const Eigen::VectorXd active = margins.cwiseMax(0.0);
    const Eigen::VectorXd coeff = -2.0 * y.cwiseProduct(active) / static_cast<double>(X.rows());
    gw = w / penalty + X.transpose() * coeff;
    gb = coeff.sum();
  }
};

}

LinearBiasClassifier train_linear_classifier(const LabeledContextDataset& data,
                                             const SvmConfig& cfg) {
  cfg.validate();
  data.validate();
  if (data.train_idx.empty()) throw EmptyResultError("training split is empty");
  std::vector<std::size_t> train_labels;
  for (const std::size_t i : data.train_idx) train_labels.push_back(data.examples[i].label);
  std::sort(train_labels.begin(), train_labels.end());
  train_labels.erase(std::unique(train_labels.begin(), train_labels.end()), train_labels.end());
  if (train_labels.size() < 2) {
    throw SingleClassDatasetError("training split contains a single class");
  }

  const Eigen::Index d = data.dim();
  const Eigen::Index n = static_cast<Eigen::Index>(data.train_idx.size());
  Eigen::MatrixXd X(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    X.row(r) = data.examples[data.train_idx[static_cast<std::size_t>(r)]].x.transpose();
  }

  const std::size_t n_classes = data.num_classes();
  LinearBiasClassifier clf;
  clf.class_names = data.class_names;
  clf.weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_classes), d);
  clf.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_classes));

  Rng rng(cfg.seed);
  double total_obj = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    Eigen::VectorXd y(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      y[r] = data.examples[data.train_idx[static_cast<std::size_t>(r)]].label == c ? 1.0 : -1.0;
    }
    BinaryProblem prob{X, y};
    Eigen::VectorXd w(d);
    for (Eigen::Index j = 0; j < d; ++j) w[j] = 1e-4 * rng.normal();
    double b = 0.0;
    double lr = cfg.learning_rate;
    double obj = prob.objective(w, b, cfg.penalty);
    Eigen::VectorXd gw(d);
    double gb = 0.0;
    for (int it = 0; it < cfg.max_iterations; ++it) {
      prob.gradient(w, b, cfg.penalty, gw, gb);
      const Eigen::VectorXd w2 = w - lr * gw;
      const double b2 = b - lr * gb;
      const double obj2 = prob.objective(w2, b2, cfg.penalty);
      if (obj2 <= obj) {
        const bool converged = obj - obj2 < 1e-12 * std::max(1.0, obj);
        w = w2;
        b = b2;
        obj = obj2;
        lr = std::min(lr * 1.1, cfg.learning_rate * 16.0);
        if (converged) break;
      } else {
        lr *= 0.5;
        if (lr < 1e-14) break;
      }
    }
    clf.weights.row(static_cast<Eigen::Index>(c)) = w.transpose();
    clf.bias[static_cast<Eigen::Index>(c)] = b;
    total_obj += obj;
  }
  // Remove the shared component of the one-vs-rest rows. Argmax predictions
  // are unchanged and the row space keeps only between-class directions, so
  // each projection step removes at most num_classes - 1 dimensions.
  const Eigen::RowVectorXd mean_row = clf.weights.colwise().mean();
  clf.weights.rowwise() -= mean_row;
  clf.bias.array() -= clf.bias.mean();
  clf.final_objective = total_obj / static_cast<double>(n_classes);
  clf.train_accuracy = clf.accuracy(data, data.train_idx);
  clf.val_accuracy = data.val_idx.empty() ? 0.0 : clf.accuracy(data, data.val_idx);
  return clf;
}

Eigen::MatrixXd nullspace_projector(const LinearBiasClassifier& clf) {
  const Eigen::MatrixXd& W = clf.weights;
  if (W.rows() == 0 || W.cols() == 0) throw DimensionMismatchError("empty weight matrix");
  if (W.cwiseAbs().maxCoeff() == 0.0) throw ZeroWeightMatrixError("weight matrix is zero");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(W, Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double tol = std::max(W.rows(), W.cols()) * std::numeric_limits<double>::epsilon() * sv[0];
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv[i] > tol) ++rank;
  }
  if (rank == 0) throw ZeroWeightMatrixError("weight matrix has no numerical row space");
  const Eigen::MatrixXd R = svd.matrixV().leftCols(rank);
  return Eigen::MatrixXd::Identity(W.cols(), W.cols()) - R * R.transpose();
}

void NullspaceProjector::save(const std::filesystem::path& path, const ArtifactMeta* meta) const {
  json j;
  j["format"] = "fairdec-projector";
  j["format_version"] = 1;
  j["tool_version"] = kVersion;
  if (meta) {
    j["config_hash"] = meta->config_hash;
    j["seed"] = meta->seed;
  }
  j["iterations_used"] = iterations_used;
  j["val_accuracies"] = val_accuracies;
  j["ranks"] = ranks;
  json rows = json::array();
  for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < matrix.cols(); ++c) row.push_back(matrix(r, c));
    rows.push_back(std::move(row));
  }
  j["matrix"] = std::move(rows);
  write_text_file(path, j.dump(2) + "\n");
}

NullspaceProjector NullspaceProjector::load(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw FormatError("cannot parse projector checkpoint " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "fairdec-projector") {
    throw FormatError("not a projector checkpoint: " + path.string());
  }
  NullspaceProjector out;
  try {
    out.iterations_used = j.at("iterations_used").get<int>();
    out.val_accuracies = j.at("val_accuracies").get<std::vector<double>>();
    out.ranks = j.at("ranks").get<std::vector<int>>();
    const auto& rows = j.at("matrix");
    const Eigen::Index d = static_cast<Eigen::Index>(rows.size());
    out.matrix.resize(d, d);
    for (Eigen::Index r = 0; r < d; ++r) {
      const auto& row = rows.at(static_cast<std::size_t>(r));
      if (static_cast<Eigen::Index>(row.size()) != d) {
        throw DimensionMismatchError("projector matrix is not square");
      }
      for (Eigen::Index c = 0; c < d; ++c) {
        out.matrix(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
      }
    }
  } catch (const json::exception& e) {
    throw FormatError("bad projector checkpoint " + path.string() + ": " + e.what());
  }
  return out;
}

void InlpConfig::validate() const {
  if (iterations < 1) throw ConfigError("iterations must be positive");
  svm.validate();
  if (early_stop_margin < 0.0) throw ConfigError("early stop margin cannot be negative");
  if (early_stop_patience < 1) throw ConfigError("early stop patience must be positive");
}

namespace {

// keeps the matrix an orthogonal projector as compositions accumulate error
void reproject(Eigen::MatrixXd& P) {
  P = 0.5 * (P + P.transpose());
  const double drift = (P * P - P).norm();
  if (drift <= 1e-8) return;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(P);
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) ev[i] = ev[i] >= 0.5 ? 1.0 : 0.0;
  P = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  P = 0.5 * (P + P.transpose());
}

}

NullspaceProjector run_inlp(const LabeledContextDataset& data, const InlpConfig& cfg) {
  cfg.validate();
  data.validate();
  if (data.val_idx.empty()) throw EmptyResultError("validation split is empty");

  const Eigen::Index d = data.dim();
  NullspaceProjector out;
  out.matrix = Eigen::MatrixXd::Identity(d, d);
  const double chance = 1.0 / static_cast<double>(data.num_classes());
  int consecutive_at_chance = 0;

  LabeledContextDataset projected = data;
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    for (std::size_t i = 0; i < data.examples.size(); ++i) {
      projected.examples[i].x = out.matrix * data.examples[i].x;
    }
    SvmConfig svm = cfg.svm;
    svm.seed = derive_seed(cfg.svm.seed, static_cast<std::uint64_t>(iter));
    LinearBiasClassifier clf;
    try {
      clf = train_linear_classifier(projected, svm);
    } catch (const ZeroWeightMatrixError&) {
      break;
    }
    out.val_accuracies.push_back(clf.val_accuracy);

    Eigen::MatrixXd step;
    try {
      step = nullspace_projector(clf);
    } catch (const ZeroWeightMatrixError&) {
      break;
    }
    out.matrix = step * out.matrix;
    reproject(out.matrix);
    out.ranks.push_back(static_cast<int>(std::lround(out.matrix.trace())));
    out.iterations_used = iter + 1;

    if (cfg.early_stop) {
      if (clf.val_accuracy <= chance + cfg.early_stop_margin) {
        if (++consecutive_at_chance >= cfg.early_stop_patience) break;
      } else {
        consecutive_at_chance = 0;
      }
    }
  }
  return out;
}

}
