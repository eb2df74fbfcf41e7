#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fairdec/embeddings.hpp"
#include "fairdec/util.hpp"

namespace fairdec {

// Tuples of paired identity terms, one term per class.
struct DefinitionalSets {
  std::string domain;
  std::vector<std::string> class_names;
  std::vector<std::vector<std::string>> sets;

  std::size_t num_classes() const { return class_names.size(); }
  void validate() const;
};

DefinitionalSets load_definitional_sets(const std::filesystem::path& path);
void save_definitional_sets(const DefinitionalSets& defs, const std::filesystem::path& path);

// Low-rank direction system separating the classes, estimated from the
// definitional tuples by per-tuple mean centering followed by SVD.
class BiasSubspace {
 public:
  BiasSubspace(Eigen::MatrixXd basis, Eigen::VectorXd explained_variance,
               Eigen::MatrixXd class_directions, std::vector<std::string> class_names);

  Eigen::Index k() const { return basis_.rows(); }
  Eigen::Index dim() const { return basis_.cols(); }
  const Eigen::MatrixXd& basis() const { return basis_; }
  const Eigen::VectorXd& explained_variance() const { return explained_variance_; }
  const Eigen::MatrixXd& class_directions() const { return class_directions_; }
  const std::vector<std::string>& class_names() const { return class_names_; }

  // Removes the subspace component: v - B^T B v.
  Eigen::VectorXd reject(const Eigen::VectorXd& v) const;

  void save(const std::filesystem::path& path, const ArtifactMeta* meta = nullptr) const;
  static BiasSubspace load(const std::filesystem::path& path);

 private:
  Eigen::MatrixXd basis_;  // k x dim, orthonormal rows
  Eigen::VectorXd explained_variance_;
  Eigen::MatrixXd class_directions_;  // classes x dim, unit rows
  std::vector<std::string> class_names_;
};

BiasSubspace estimate_subspace(const EmbeddingTable& table, const DefinitionalSets& defs, int k);

// Signed sum of basis projections, sum_b <b, w>.
double projection_score(const BiasSubspace& subspace, const Eigen::VectorXd& w);

struct ScoredToken {
  std::string token;
  double score;  // signed raw projection score
};

// Per-class ranked lists of the tokens most aligned with the subspace.
class BiasSensitiveSet {
 public:
  BiasSensitiveSet(std::vector<std::string> class_names,
                   std::vector<std::vector<ScoredToken>> ranked);

  const std::vector<std::string>& class_names() const { return class_names_; }
  const std::vector<std::vector<ScoredToken>>& ranked() const { return ranked_; }
  double normalization() const { return normalization_; }
  std::size_t size() const;
  bool contains(std::string_view token) const;
  std::size_t class_of(std::string_view token) const;  // throws OutOfVocabularyError
  std::optional<double> raw_score(std::string_view token) const;

  void write_csv(std::ostream& out) const;
  static BiasSensitiveSet read_csv(std::istream& in);

 private:
  std::vector<std::string> class_names_;
  std::vector<std::vector<ScoredToken>> ranked_;
  std::unordered_map<std::string, std::pair<std::size_t, double>> by_token_;
  double normalization_ = 0.0;
};

// |projection score| / max over the set for members, 0 for everything else.
double q_normalized(const BiasSensitiveSet& set, std::string_view token);

std::unordered_set<std::string> load_stopwords(const std::filesystem::path& path);

BiasSensitiveSet rank_bias_sensitive(const BiasSubspace& subspace, const EmbeddingTable& table,
                                     int top_n, const std::unordered_set<std::string>& stopwords);

}
