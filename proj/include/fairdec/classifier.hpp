#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fairdec/lm.hpp"
#include "fairdec/subspace.hpp"

namespace fairdec {

enum class Provenance { SimpleTemplate, DiverseCorpus, Subsequence };

const char* provenance_name(Provenance p);
Provenance provenance_from_name(const std::string& name);

struct LabeledExample {
  Eigen::VectorXd x;
  std::size_t label = 0;
  Provenance provenance = Provenance::DiverseCorpus;
  std::string text;
};

struct LabeledContextDataset {
  std::vector<std::string> class_names;
  std::vector<LabeledExample> examples;
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;
  std::vector<std::size_t> test_idx;

  Eigen::Index dim() const;
  std::size_t num_classes() const { return class_names.size(); }
  void validate() const;

  void save_csv(const std::filesystem::path& path, const ArtifactMeta* meta = nullptr) const;
  static LabeledContextDataset load_csv(const std::filesystem::path& path);
};

struct DatasetConfig {
  bool use_simple = true;
  bool use_diverse = true;
  bool use_subsequences = true;
  int simple_words_per_class = 25;  // ranked tokens substituted into each template
  int min_tokens = 5;
  int subsequences_per_context = 3;
  double train_frac = 0.49;
  double val_frac = 0.21;
  std::uint64_t seed = 0;

  void validate() const;
};

// Builds (context embedding, class) pairs from three sources: placeholder
// templates filled with ranked tokens, corpus sentences mentioning exactly
// one class, and random subsequences of those sentences.
LabeledContextDataset build_classifier_dataset(const std::vector<std::string>& templates,
                                               const std::vector<std::vector<std::string>>& corpus,
                                               const BiasSensitiveSet& bias_set,
                                               const LanguageModel& lm, const DatasetConfig& cfg);

struct LinearBiasClassifier {
  Eigen::MatrixXd weights;  // classes x dim
  Eigen::VectorXd bias;
  std::vector<std::string> class_names;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double final_objective = 0.0;

  std::size_t predict(const Eigen::VectorXd& x) const;
  double accuracy(const LabeledContextDataset& data, const std::vector<std::size_t>& idx) const;
};

struct SvmConfig {
  double penalty = 1.0;  // inverse regularization strength
  int max_iterations = 500;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

// One-vs-rest squared-hinge linear SVM fit by full-batch gradient descent.
LinearBiasClassifier train_linear_classifier(const LabeledContextDataset& data,
                                             const SvmConfig& cfg);

// P = I - R R^T where R spans the row space of the classifier weights.
Eigen::MatrixXd nullspace_projector(const LinearBiasClassifier& clf);

struct NullspaceProjector {
  Eigen::MatrixXd matrix;
  int iterations_used = 0;
  std::vector<double> val_accuracies;  // one per INLP iteration
  std::vector<int> ranks;              // projector rank after each iteration

  void save(const std::filesystem::path& path, const ArtifactMeta* meta = nullptr) const;
  static NullspaceProjector load(const std::filesystem::path& path);
};

struct InlpConfig {
  int iterations = 80;
  SvmConfig svm;
  bool early_stop = true;
  double early_stop_margin = 0.02;  // above chance accuracy
  int early_stop_patience = 3;

  void validate() const;
};

// Iterated nullspace projection: train a classifier on projected features,
// remove its row space from the projector, repeat.
NullspaceProjector run_inlp(const LabeledContextDataset& data, const InlpConfig& cfg);

}
