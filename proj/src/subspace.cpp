#include "fairdec/subspace.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "fairdec/errors.hpp"
#include "fairdec/util.hpp"
#include "fairdec/version.hpp"

namespace fairdec {

using nlohmann::json;

void DefinitionalSets::validate() const {
  if (class_names.size() < 2) throw FormatError("need at least two classes");
  for (const auto& name : class_names) {
    if (name.empty()) throw FormatError("empty class name");
  }
  if (sets.empty()) throw FormatError("need at least one definitional tuple");
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (sets[i].size() != class_names.size()) {
      throw DimensionMismatchError("tuple " + std::to_string(i) + " has " +
                                   std::to_string(sets[i].size()) + " terms, expected " +
                                   std::to_string(class_names.size()));
    }
    for (const auto& w : sets[i]) {
      if (w.empty()) throw FormatError("empty term in tuple " + std::to_string(i));
    }
  }
}

DefinitionalSets load_definitional_sets(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw FormatError("cannot parse definitional sets " + path.string() + ": " + e.what());
  }
  DefinitionalSets defs;
  try {
    defs.domain = j.value("domain", std::string("bias"));
    defs.class_names = j.at("class_names").get<std::vector<std::string>>();
    defs.sets = j.at("sets").get<std::vector<std::vector<std::string>>>();
  } catch (const json::exception& e) {
    throw FormatError("bad definitional sets " + path.string() + ": " + e.what());
  }
  defs.validate();
  return defs;
}

void save_definitional_sets(const DefinitionalSets& defs, const std::filesystem::path& path) {
  defs.validate();
  json j;
  j["domain"] = defs.domain;
  j["class_names"] = defs.class_names;
  j["sets"] = defs.sets;
  write_text_file(path, j.dump(2) + "\n");
}

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw FormatError("expected non-empty matrix");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j.at(static_cast<std::size_t>(r));
    if (static_cast<Eigen::Index>(row.size()) != cols) {
      throw DimensionMismatchError("ragged matrix in checkpoint");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

}

BiasSubspace::BiasSubspace(Eigen::MatrixXd basis, Eigen::VectorXd explained_variance,
                           Eigen::MatrixXd class_directions, std::vector<std::string> class_names)
    : basis_(std::move(basis)),
      explained_variance_(std::move(explained_variance)),
      class_directions_(std::move(class_directions)),
      class_names_(std::move(class_names)) {
  if (basis_.rows() == 0 || basis_.cols() == 0) throw DimensionMismatchError("empty basis");
  if (explained_variance_.size() != basis_.rows()) {
    throw DimensionMismatchError("explained variance length does not match basis rank");
  }
  if (class_directions_.rows() != static_cast<Eigen::Index>(class_names_.size()) ||
      class_directions_.cols() != basis_.cols()) {
    throw DimensionMismatchError("class direction shape does not match basis");
  }
  if (!basis_.allFinite() || !class_directions_.allFinite()) {
    throw NonFiniteValueError("subspace contains non-finite values");
  }
  const Eigen::MatrixXd gram = basis_ * basis_.transpose();
  const double err = (gram - Eigen::MatrixXd::Identity(k(), k())).cwiseAbs().maxCoeff();
  if (err > 1e-8) throw NotNormalizedError("basis rows are not orthonormal");
  for (Eigen::Index c = 0; c < class_directions_.rows(); ++c) {
    if (std::abs(class_directions_.row(c).norm() - 1.0) > 1e-8) {
      throw NotNormalizedError("class direction " + std::to_string(c) + " is not unit length");
    }
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < explained_variance_.size(); ++i) {
    const double v = explained_variance_[i];
    if (!(v >= 0.0 && v <= 1.0 + 1e-12)) throw FormatError("explained variance outside [0, 1]");
    total += v;
  }
  if (total > 1.0 + 1e-9) throw FormatError("explained variance sums above 1");
}

Eigen::VectorXd BiasSubspace::reject(const Eigen::VectorXd& v) const {
  if (v.size() != dim()) throw DimensionMismatchError("vector size does not match subspace dim");
  return v - basis_.transpose() * (basis_ * v);
}

void BiasSubspace::save(const std::filesystem::path& path, const ArtifactMeta* meta) const {
  json j;
  j["format"] = "fairdec-subspace";
  j["format_version"] = 1;
  j["tool_version"] = kVersion;
  if (meta) {
    j["config_hash"] = meta->config_hash;
    j["seed"] = meta->seed;
  }
  j["class_names"] = class_names_;
  j["basis"] = matrix_to_json(basis_);
  json ev = json::array();
  for (Eigen::Index i = 0; i < explained_variance_.size(); ++i) ev.push_back(explained_variance_[i]);
  j["explained_variance"] = std::move(ev);
  j["class_directions"] = matrix_to_json(class_directions_);
  write_text_file(path, j.dump(2) + "\n");
}

BiasSubspace BiasSubspace::load(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw FormatError("cannot parse subspace checkpoint " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "fairdec-subspace") {
    throw FormatError("not a subspace checkpoint: " + path.string());
  }
  try {
    Eigen::MatrixXd basis = matrix_from_json(j.at("basis"));
    const auto ev_list = j.at("explained_variance").get<std::vector<double>>();
    Eigen::VectorXd ev = Eigen::Map<const Eigen::VectorXd>(ev_list.data(),
                                                           static_cast<Eigen::Index>(ev_list.size()));
    Eigen::MatrixXd dirs = matrix_from_json(j.at("class_directions"));
    auto names = j.at("class_names").get<std::vector<std::string>>();
    return BiasSubspace(std::move(basis), std::move(ev), std::move(dirs), std::move(names));
  } catch (const json::exception& e) {
    throw FormatError("bad subspace checkpoint " + path.string() + ": " + e.what());
  }
}

BiasSubspace estimate_subspace(const EmbeddingTable& table, const DefinitionalSets& defs, int k) {
  defs.validate();
  if (k < 1) throw ConfigError("subspace rank must be at least 1");
  const Eigen::Index dim = table.dim();
  const std::size_t n_classes = defs.num_classes();

  Eigen::MatrixXd centered(static_cast<Eigen::Index>(defs.sets.size() * n_classes), dim);
  Eigen::Index r = 0;
  for (const auto& tuple : defs.sets) {
    Eigen::MatrixXd members(static_cast<Eigen::Index>(n_classes), dim);
    for (std::size_t c = 0; c < n_classes; ++c) {
      members.row(static_cast<Eigen::Index>(c)) = table.lookup(tuple[c]).transpose();
    }
    const Eigen::RowVectorXd mu = members.colwise().mean();
    for (std::size_t c = 0; c < n_classes; ++c) {
      centered.row(r++) = members.row(static_cast<Eigen::Index>(c)) - mu;
    }
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double tol = std::max(centered.rows(), centered.cols()) *
                     std::numeric_limits<double>::epsilon() * (sv.size() ? sv[0] : 0.0);
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv[i] > tol) ++rank;
  }
  if (rank < k) {
    throw RankDeficientError("definitional tuples span rank " + std::to_string(rank) +
                             ", need at least " + std::to_string(k));
  }

  Eigen::MatrixXd basis = svd.matrixV().leftCols(k).transpose();
  const double total_var = sv.array().square().sum();
  Eigen::VectorXd ev(k);
  for (int i = 0; i < k; ++i) ev[i] = sv[i] * sv[i] / total_var;

  Eigen::MatrixXd dirs(static_cast<Eigen::Index>(n_classes), dim);
  for (std::size_t c = 0; c < n_classes; ++c) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(dim);
    for (const auto& tuple : defs.sets) mu += table.lookup(tuple[c]);
    mu /= static_cast<double>(defs.sets.size());
    Eigen::VectorXd proj = basis.transpose() * (basis * mu);
    const double n = proj.norm();
    if (n < 1e-12) {
      throw RankDeficientError("class '" + defs.class_names[c] +
                               "' has no component inside the subspace");
    }
    dirs.row(static_cast<Eigen::Index>(c)) = (proj / n).transpose();
  }
  return BiasSubspace(std::move(basis), std::move(ev), std::move(dirs), defs.class_names);
}

double projection_score(const BiasSubspace& subspace, const Eigen::VectorXd& w) {
  if (w.size() != subspace.dim()) {
    throw DimensionMismatchError("vector size does not match subspace dim");
  }
  return (subspace.basis() * w).sum();
}

BiasSensitiveSet::BiasSensitiveSet(std::vector<std::string> class_names,
                                   std::vector<std::vector<ScoredToken>> ranked)
    : class_names_(std::move(class_names)), ranked_(std::move(ranked)) {
  if (class_names_.size() != ranked_.size()) {
    throw DimensionMismatchError("one ranked list per class required");
  }
  std::size_t total = 0;
  for (std::size_t c = 0; c < ranked_.size(); ++c) {
    for (const auto& st : ranked_[c]) {
      if (!std::isfinite(st.score)) throw NonFiniteValueError("non-finite token score");
      auto [it, inserted] = by_token_.emplace(st.token, std::make_pair(c, st.score));
      if (!inserted) throw DuplicateTokenError("token in multiple classes: " + st.token);
      normalization_ = std::max(normalization_, std::abs(st.score));
      ++total;
    }
  }
  if (total == 0) throw EmptyResultError("bias-sensitive set is empty");
  if (normalization_ == 0.0) throw ZeroNormError("all token scores are zero");
}

std::size_t BiasSensitiveSet::size() const { return by_token_.size(); }

bool BiasSensitiveSet::contains(std::string_view token) const {
  return by_token_.count(std::string(token)) > 0;
}

std::size_t BiasSensitiveSet::class_of(std::string_view token) const {
  auto it = by_token_.find(std::string(token));
  if (it == by_token_.end()) throw OutOfVocabularyError("token not in bias-sensitive set");
  return it->second.first;
}

std::optional<double> BiasSensitiveSet::raw_score(std::string_view token) const {
  auto it = by_token_.find(std::string(token));
  if (it == by_token_.end()) return std::nullopt;
  return it->second.second;
}

void BiasSensitiveSet::write_csv(std::ostream& out) const {
  out << "token,class,raw_score,normalized_score\n";
  for (std::size_t c = 0; c < ranked_.size(); ++c) {
    for (const auto& st : ranked_[c]) {
      out << st.token << ',' << class_names_[c] << ',' << format_double(st.score) << ','
          << format_double(std::abs(st.score) / normalization_) << '\n';
    }
  }
}

BiasSensitiveSet BiasSensitiveSet::read_csv(std::istream& in) {
  std::vector<std::string> class_names;
  std::vector<std::vector<ScoredToken>> ranked;
  std::string line;
  bool saw_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!saw_header) {
      if (line.rfind("token,", 0) != 0) throw FormatError("missing bias set CSV header");
      saw_header = true;
      continue;
    }
    const auto fields = split_char(line, ',');
    if (fields.size() != 4) throw FormatError("bad bias set CSV row: " + line);
    std::size_t cls = class_names.size();
    for (std::size_t c = 0; c < class_names.size(); ++c) {
      if (class_names[c] == fields[1]) {
        cls = c;
        break;
      }
    }
    if (cls == class_names.size()) {
      class_names.push_back(fields[1]);
      ranked.emplace_back();
    }
    ScoredToken st;
    st.token = fields[0];
    try {
      st.score = std::stod(fields[2]);
    } catch (const std::exception&) {
      throw FormatError("bad score in bias set CSV row: " + line);
    }
    ranked[cls].push_back(std::move(st));
  }
  if (!saw_header) throw EmptyFileError("empty bias set CSV");
  return BiasSensitiveSet(std::move(class_names), std::move(ranked));
}

double q_normalized(const BiasSensitiveSet& set, std::string_view token) {
  const auto score = set.raw_score(token);
  if (!score) return 0.0;
  return std::abs(*score) / set.normalization();
}

std::unordered_set<std::string> load_stopwords(const std::filesystem::path& path) {
  std::unordered_set<std::string> out;
  for (const auto& line : read_lines(path)) {
    const auto t = trim(line);
    if (!t.empty() && t[0] != '#') out.insert(to_lower(t));
  }
  return out;
}

BiasSensitiveSet rank_bias_sensitive(const BiasSubspace& subspace, const EmbeddingTable& table,
                                     int top_n, const std::unordered_set<std::string>& stopwords) {
  if (top_n < 1) throw ConfigError("top_n must be at least 1");
  struct Candidate {
    std::size_t vocab_index;
    double score;
    std::size_t cls;
  };
  std::vector<std::vector<Candidate>> per_class(subspace.class_names().size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    const std::string& tok = table.vocab().token(i);
    if (stopwords.count(to_lower(tok))) continue;
    const Eigen::VectorXd w = table.row(i);
    if (w.norm() == 0.0) continue;
    const double score = projection_score(subspace, w);
    double best_cos = 0.0;
    std::size_t best_cls = per_class.size();
    for (Eigen::Index c = 0; c < subspace.class_directions().rows(); ++c) {
      const double cs = cosine(subspace.class_directions().row(c).transpose(), w);
      if (cs > best_cos) {
        best_cos = cs;
        best_cls = static_cast<std::size_t>(c);
      }
    }
    if (best_cls == per_class.size()) continue;  // no positive alignment with any class
    per_class[best_cls].push_back({i, score, best_cls});
  }
  std::vector<std::vector<ScoredToken>> ranked(per_class.size());
  bool any = false;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    auto& cands = per_class[c];
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      const double sa = std::abs(a.score), sb = std::abs(b.score);
      if (sa != sb) return sa > sb;
      return a.vocab_index < b.vocab_index;
    });
    if (cands.size() > static_cast<std::size_t>(top_n)) cands.resize(static_cast<std::size_t>(top_n));
    for (const auto& cand : cands) {
      ranked[c].push_back({table.vocab().token(cand.vocab_index), cand.score});
      any = true;
    }
  }
  if (!any) throw EmptyAfterFilteringError("no tokens survived stopword and alignment filtering");
  return BiasSensitiveSet(subspace.class_names(), std::move(ranked));
}

}
