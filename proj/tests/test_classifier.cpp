#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "doctest.h"

#include "fairdec/classifier.hpp"
#include "fairdec/errors.hpp"
#include "test_helpers.hpp"

using namespace fairdec;

namespace {

// Gaussian blobs around per-class means, split 50/25/25 within each class so
// the validation split is exactly balanced.
LabeledContextDataset gaussian_dataset(const std::vector<Eigen::VectorXd>& means, int per_class,
                                       double noise, std::uint64_t seed) {
  LabeledContextDataset data;
  for (std::size_t c = 0; c < means.size(); ++c) data.class_names.push_back("c" + std::to_string(c));
  Rng rng(seed);
  for (std::size_t c = 0; c < means.size(); ++c) {
    for (int i = 0; i < per_class; ++i) {
      LabeledExample ex;
      ex.x = means[c];
      for (Eigen::Index d = 0; d < ex.x.size(); ++d) ex.x[d] += noise * rng.normal();
      ex.label = c;
      data.examples.push_back(std::move(ex));
    }
  }
  for (std::size_t c = 0; c < means.size(); ++c) {
    std::vector<std::size_t> order(static_cast<std::size_t>(per_class));
    std::iota(order.begin(), order.end(), c * static_cast<std::size_t>(per_class));
    rng.shuffle(order);
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (i < order.size() / 2) data.train_idx.push_back(order[i]);
      else if (i < 3 * order.size() / 4) data.val_idx.push_back(order[i]);
      else data.test_idx.push_back(order[i]);
    }
  }
  return data;
}

std::vector<Eigen::VectorXd> axis_means(int classes, int dim, double scale) {
  std::vector<Eigen::VectorXd> means;
  for (int c = 0; c < classes; ++c) {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(dim);
    m[c] = scale;
    means.push_back(std::move(m));
  }
  return means;
}

LinearBiasClassifier manual_classifier(const Eigen::MatrixXd& w) {
  LinearBiasClassifier clf;
  clf.weights = w;
  clf.bias = Eigen::VectorXd::Zero(w.rows());
  for (Eigen::Index c = 0; c < w.rows(); ++c) clf.class_names.push_back("c" + std::to_string(c));
  return clf;
}

}

TEST_CASE("well-separated blobs are fit perfectly") {
  const auto data = gaussian_dataset(axis_means(2, 2, 2.0), 40, 0.05, 11);
  const LinearBiasClassifier clf = train_linear_classifier(data, SvmConfig{});
  CHECK(clf.train_accuracy == 1.0);
  CHECK(clf.val_accuracy == 1.0);
  CHECK(clf.accuracy(data, data.test_idx) == 1.0);
}

TEST_CASE("three noisy gaussian classes reach high validation accuracy") {
  const auto data = gaussian_dataset(axis_means(3, 10, 1.5), 60, 0.5, 13);
  const LinearBiasClassifier clf = train_linear_classifier(data, SvmConfig{});
  CHECK(clf.val_accuracy >= 0.95);
}

TEST_CASE("prediction picks the highest scoring class") {
  Eigen::MatrixXd w(3, 2);
  w << 1.0, 0.0, 0.0, 1.0, -1.0, -1.0;
  const LinearBiasClassifier clf = manual_classifier(w);
  Eigen::VectorXd x(2);
  x << 2.0, 0.5;
  CHECK(clf.predict(x) == 0);
  x << 0.1, 3.0;
  CHECK(clf.predict(x) == 1);
  x << -2.0, -2.0;
  CHECK(clf.predict(x) == 2);
  Eigen::VectorXd bad(3);
  CHECK_THROWS_AS(clf.predict(bad), DimensionMismatchError);
}

TEST_CASE("training rejects degenerate datasets") {
  LabeledContextDataset single;
  single.class_names = {"only"};
  LabeledExample ex;
  ex.x = Eigen::VectorXd::Ones(2);
  ex.label = 0;
  single.examples.push_back(ex);
  single.train_idx = {0};
  CHECK_THROWS_AS(train_linear_classifier(single, SvmConfig{}), SingleClassDatasetError);

  auto data = gaussian_dataset(axis_means(2, 2, 2.0), 10, 0.05, 3);
  auto one_sided = data;
  one_sided.train_idx.clear();
  for (std::size_t i = 0; i < one_sided.examples.size(); ++i) {
    if (one_sided.examples[i].label == 0) one_sided.train_idx.push_back(i);
  }
  one_sided.val_idx.clear();
  one_sided.test_idx.clear();
  CHECK_THROWS_AS(train_linear_classifier(one_sided, SvmConfig{}), SingleClassDatasetError);

  auto empty_train = data;
  empty_train.train_idx.clear();
  CHECK_THROWS_AS(train_linear_classifier(empty_train, SvmConfig{}), EmptyResultError);
}

TEST_CASE("svm config validation rejects bad values") {
  SvmConfig cfg;
  cfg.penalty = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.max_iterations = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.learning_rate = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("an axis-aligned row nulls exactly that axis") {
  Eigen::MatrixXd w(1, 2);
  w << 1.0, 0.0;
  const Eigen::MatrixXd p = nullspace_projector(manual_classifier(w));
  Eigen::MatrixXd expect(2, 2);
  expect << 0.0, 0.0, 0.0, 1.0;
  CHECK((p - expect).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("a full-rank square weight matrix leaves nothing") {
  Eigen::MatrixXd w(2, 2);
  w << 1.0, 2.0, 3.0, 4.0;
  const Eigen::MatrixXd p = nullspace_projector(manual_classifier(w));
  CHECK(p.cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("a zero weight matrix cannot define a projector") {
  CHECK_THROWS_AS(nullspace_projector(manual_classifier(Eigen::MatrixXd::Zero(2, 3))),
                  ZeroWeightMatrixError);
}

TEST_CASE("projectors annihilate the row space and are idempotent") {
  Rng rng(21);
  for (int t = 0; t < 10; ++t) {
    const int dim = 4 + static_cast<int>(rng.uniform_index(8));
    const int classes = 2 + static_cast<int>(rng.uniform_index(3));
    std::vector<Eigen::VectorXd> means;
    for (int c = 0; c < classes; ++c) {
      Eigen::VectorXd m(dim);
      for (int d = 0; d < dim; ++d) m[d] = rng.normal();
      means.push_back(2.0 * m / m.norm());
    }
    const auto data = gaussian_dataset(means, 30, 0.4, rng.next_u64());
    SvmConfig cfg;
    cfg.seed = t;
    const LinearBiasClassifier clf = train_linear_classifier(data, cfg);
    const Eigen::MatrixXd p = nullspace_projector(clf);
    const double wnorm = clf.weights.norm();
    CHECK((clf.weights * p).cwiseAbs().maxCoeff() <= 1e-8 * wnorm);
    CHECK((p * p - p).norm() <= 1e-8);
    CHECK((p - p.transpose()).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("training keeps only between-class weight directions") {
  const auto data = gaussian_dataset(axis_means(2, 6, 2.0), 40, 0.3, 29);
  const LinearBiasClassifier clf = train_linear_classifier(data, SvmConfig{});
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(clf.weights);
  const Eigen::VectorXd& sv = svd.singularValues();
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv[i] > 1e-10 * sv[0]) ++rank;
  }
  CHECK(rank == 1);
  const Eigen::MatrixXd p = nullspace_projector(clf);
  CHECK(std::lround(p.trace()) == 5);
}

TEST_CASE("one projection round equals the single-classifier projector") {
  const auto data = gaussian_dataset(axis_means(2, 5, 2.0), 30, 0.3, 37);
  InlpConfig cfg;
  cfg.iterations = 1;
  cfg.early_stop = false;
  cfg.svm.seed = 7;
  const NullspaceProjector inlp = run_inlp(data, cfg);
  REQUIRE(inlp.iterations_used == 1);

  SvmConfig svm;
  svm.seed = derive_seed(7, 0);
  const LinearBiasClassifier clf = train_linear_classifier(data, svm);
  const Eigen::MatrixXd direct = nullspace_projector(clf);
  CHECK((inlp.matrix - direct).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("iterated projection drives validation accuracy toward chance") {
  const auto data = gaussian_dataset(axis_means(2, 8, 2.0), 50, 0.4, 41);
  InlpConfig cfg;
  cfg.iterations = 10;
  cfg.early_stop = true;
  const NullspaceProjector proj = run_inlp(data, cfg);
  REQUIRE_FALSE(proj.val_accuracies.empty());
  CHECK(proj.val_accuracies.front() > 0.9);
  CHECK(proj.val_accuracies.back() <= 0.5 + 0.02);

  int rises = 0;
  for (std::size_t i = 1; i < proj.val_accuracies.size(); ++i) {
    if (proj.val_accuracies[i] > proj.val_accuracies[i - 1] + 1e-9) ++rises;
  }
  CHECK(rises <= 3);

  const Eigen::MatrixXd& p = proj.matrix;
  CHECK((p * p - p).norm() <= 1e-8);
  CHECK((p - p.transpose()).cwiseAbs().maxCoeff() <= 1e-10);
  REQUIRE(proj.ranks.size() == proj.val_accuracies.size());
  for (std::size_t i = 1; i < proj.ranks.size(); ++i) {
    CHECK(proj.ranks[i] <= proj.ranks[i - 1]);
  }
  CHECK(proj.ranks.back() >= 8 - proj.iterations_used - 2);
}

TEST_CASE("inlp config validation rejects bad values") {
  InlpConfig cfg;
  cfg.iterations = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.early_stop_margin = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.early_stop_patience = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("dataset config validation rejects bad fractions") {
  DatasetConfig cfg;
  cfg.train_frac = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.train_frac = 0.8;
  cfg.val_frac = 0.3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.min_tokens = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.simple_words_per_class = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("provenance names round-trip") {
  CHECK(provenance_name(Provenance::SimpleTemplate) == std::string("simple"));
  CHECK(provenance_from_name("simple") == Provenance::SimpleTemplate);
  CHECK(provenance_from_name("diverse") == Provenance::DiverseCorpus);
  CHECK(provenance_from_name("subsequence") == Provenance::Subsequence);
  CHECK_THROWS_AS(provenance_from_name("nope"), FormatError);
}

TEST_CASE("dataset csv round-trips examples and splits") {
  testing::TempDir dir;
  auto data = gaussian_dataset(axis_means(2, 3, 1.0), 5, 0.2, 51);
  data.examples[0].text = "hello world";
  data.examples[0].provenance = Provenance::Subsequence;
  ArtifactMeta meta{"abcdef0123456789", 5};
  data.save_csv(dir.file("d.csv"), &meta);
  const LabeledContextDataset back = LabeledContextDataset::load_csv(dir.file("d.csv"));
  REQUIRE(back.examples.size() == data.examples.size());
  CHECK(back.class_names == data.class_names);
  // The file keeps each example's split, not the order within a split.
  auto sorted = [](std::vector<std::size_t> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  CHECK(sorted(back.train_idx) == sorted(data.train_idx));
  CHECK(sorted(back.val_idx) == sorted(data.val_idx));
  CHECK(sorted(back.test_idx) == sorted(data.test_idx));
  for (std::size_t i = 0; i < back.examples.size(); ++i) {
    CHECK((back.examples[i].x - data.examples[i].x).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.examples[i].label == data.examples[i].label);
    CHECK(back.examples[i].provenance == data.examples[i].provenance);
    CHECK(back.examples[i].text == data.examples[i].text);
  }
}

TEST_CASE("dataset csv loader rejects corrupt input") {
  testing::TempDir dir;
  write_text_file(dir.file("bad.csv"), "not,a,dataset\n1,2,3\n");
  CHECK_THROWS(LabeledContextDataset::load_csv(dir.file("bad.csv")));
}

namespace {

struct BuilderFixture {
  std::shared_ptr<const EmbeddingTable> table;
  std::unique_ptr<LanguageModel> lm;
  std::unique_ptr<BiasSensitiveSet> bias_set;
  std::vector<std::string> templates = {"the XYZ was known for"};
  std::vector<std::vector<std::string>> corpus = {
      {"the", "nurse", "helped", "every", "patient"},
      {"he", "met", "she", "at", "noon"},
      {"the", "man", "ran"},
      {"the", "engineer", "fixed", "the", "engine", "today"},
  };

  BuilderFixture() {
    const std::vector<std::string> tokens = {"the",    "she",   "woman", "nurse", "he",
                                             "man",    "engineer", "was", "known", "for",
                                             "helped", "every", "patient", "fixed", "engine",
                                             "today",  "met",   "at",    "noon",  "ran"};
    Rng rng(71);
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(tokens.size()), 4);
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
      for (int c = 0; c < 4; ++c) rows(r, c) = rng.normal();
    }
    table = std::make_shared<const EmbeddingTable>(Vocabulary(tokens), rows);
    lm = std::make_unique<LanguageModel>(table, Eigen::MatrixXd::Identity(4, 4), 8);
    bias_set = std::make_unique<BiasSensitiveSet>(
        std::vector<std::string>{"female", "male"},
        std::vector<std::vector<ScoredToken>>{
            {{"she", 1.0}, {"woman", 0.9}, {"nurse", 0.5}},
            {{"he", -1.0}, {"man", -0.9}, {"engineer", -0.5}}});
  }
};

}

TEST_CASE("dataset builder fills templates and labels by token class") {
  BuilderFixture fx;
  DatasetConfig cfg;
  cfg.use_diverse = false;
  cfg.use_subsequences = false;
  cfg.seed = 1;
  const auto data =
      build_classifier_dataset(fx.templates, fx.corpus, *fx.bias_set, *fx.lm, cfg);
  REQUIRE(data.examples.size() == 6);
  std::size_t female = 0, male = 0;
  for (const auto& ex : data.examples) {
    CHECK(ex.provenance == Provenance::SimpleTemplate);
    (ex.label == 0 ? female : male) += 1;
    if (ex.text == "the man was known for") CHECK(ex.label == 1);
    if (ex.text == "the nurse was known for") CHECK(ex.label == 0);
  }
  CHECK(female == 3);
  CHECK(male == 3);
  const Eigen::VectorXd expect =
      fx.lm->context_embedding(std::vector<std::string>{"the", "man", "was", "known", "for"});
  bool found = false;
  for (const auto& ex : data.examples) {
    if (ex.text == "the man was known for") {
      CHECK((ex.x - expect).cwiseAbs().maxCoeff() == 0.0);
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("dataset builder keeps only single-class sentences of full length") {
  BuilderFixture fx;
  DatasetConfig cfg;
  cfg.use_simple = false;
  cfg.use_subsequences = false;
  cfg.min_tokens = 5;
  const auto data =
      build_classifier_dataset(fx.templates, fx.corpus, *fx.bias_set, *fx.lm, cfg);
  REQUIRE(data.examples.size() == 2);
  CHECK(data.examples[0].text == "the nurse helped every patient");
  CHECK(data.examples[0].label == 0);
  CHECK(data.examples[0].provenance == Provenance::DiverseCorpus);
  CHECK(data.examples[1].text == "the engineer fixed the engine today");
  CHECK(data.examples[1].label == 1);
}

TEST_CASE("subsequence examples keep a class token and are unique") {
  BuilderFixture fx;
  DatasetConfig cfg;
  cfg.use_simple = false;
  cfg.min_tokens = 5;
  cfg.subsequences_per_context = 3;
  cfg.seed = 2;
  const auto data =
      build_classifier_dataset(fx.templates, fx.corpus, *fx.bias_set, *fx.lm, cfg);
  std::vector<std::string> sub_texts;
  for (const auto& ex : data.examples) {
    if (ex.provenance != Provenance::Subsequence) continue;
    sub_texts.push_back(ex.text);
    const auto toks = split_ws(ex.text);
    CHECK(toks.size() >= 5);
    const bool has_class = std::find(toks.begin(), toks.end(), "nurse") != toks.end() ||
                           std::find(toks.begin(), toks.end(), "engineer") != toks.end();
    CHECK(has_class);
  }
  auto sorted = sub_texts;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
}

TEST_CASE("dataset builder is deterministic for a fixed seed") {
  BuilderFixture fx;
  DatasetConfig cfg;
  cfg.seed = 9;
  const auto a = build_classifier_dataset(fx.templates, fx.corpus, *fx.bias_set, *fx.lm, cfg);
  const auto b = build_classifier_dataset(fx.templates, fx.corpus, *fx.bias_set, *fx.lm, cfg);
  REQUIRE(a.examples.size() == b.examples.size());
  for (std::size_t i = 0; i < a.examples.size(); ++i) {
    CHECK(a.examples[i].text == b.examples[i].text);
    CHECK(a.examples[i].label == b.examples[i].label);
    CHECK((a.examples[i].x - b.examples[i].x).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(a.train_idx == b.train_idx);
  CHECK(a.val_idx == b.val_idx);
  CHECK(a.test_idx == b.test_idx);
}

TEST_CASE("dataset builder splits by the configured fractions") {
  BuilderFixture fx;
  DatasetConfig cfg;
  cfg.seed = 3;
  cfg.train_frac = 0.49;
  cfg.val_frac = 0.21;
  const auto data = build_classifier_dataset(fx.templates, fx.corpus, *fx.bias_set, *fx.lm, cfg);
  const std::size_t n = data.examples.size();
  CHECK(data.train_idx.size() ==
        std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(0.49 * static_cast<double>(n)))));
  CHECK(data.val_idx.size() == static_cast<std::size_t>(std::floor(0.21 * static_cast<double>(n))));
  CHECK(data.train_idx.size() + data.val_idx.size() + data.test_idx.size() == n);
  CHECK_NOTHROW(data.validate());
}

TEST_CASE("a template without the placeholder is rejected") {
  BuilderFixture fx;
  DatasetConfig cfg;
  CHECK_THROWS_AS(
      build_classifier_dataset({"no placeholder here"}, fx.corpus, *fx.bias_set, *fx.lm, cfg),
      FormatError);
}
