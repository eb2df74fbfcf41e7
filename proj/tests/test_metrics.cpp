#include <cmath>
#include <vector>

#include "doctest.h"

#include "fairdec/errors.hpp"
#include "fairdec/metrics.hpp"
#include "test_helpers.hpp"

using namespace fairdec;

namespace {

// Straight-line reimplementations used as oracles.
double kl_oracle(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) total += p[i] * std::log(p[i] / std::max(q[i], 1e-12));
  }
  return total;
}

double h2_oracle(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double d = std::sqrt(p[i]) - std::sqrt(q[i]);
    total += d * d;
  }
  return 0.5 * total;
}

Eigen::VectorXd dist2(double a, double b) {
  Eigen::VectorXd p(2);
  p << a, b;
  return p;
}

}

TEST_CASE("kl of a point mass against a fair coin is ln two") {
  const double kl = kl_divergence(dist2(1.0, 0.0), dist2(0.5, 0.5));
  CHECK(std::abs(kl - std::log(2.0)) <= 1e-12);
  CHECK(kl == doctest::Approx(0.693147).epsilon(1e-5));
}

TEST_CASE("kl of a distribution with itself is exactly zero") {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const Eigen::VectorXd p = testing::random_distribution(rng, 6);
    CHECK(kl_divergence(p, p) == 0.0);
  }
}

TEST_CASE("kl stays finite when the support leaves q thanks to the floor") {
  const double kl = kl_divergence(dist2(1.0, 0.0), dist2(0.0, 1.0));
  CHECK(std::isfinite(kl));
  CHECK(std::abs(kl - std::log(1e12)) <= 1e-9);
}

TEST_CASE("kl is non-negative over random pairs") {
  Rng rng(2);
  for (int t = 0; t < 300; ++t) {
    const Eigen::VectorXd p = testing::random_distribution(rng, 8);
    const Eigen::VectorXd q = testing::random_distribution(rng, 8);
    CHECK(kl_divergence(p, q) >= 0.0);
  }
}

TEST_CASE("squared hellinger matches the analytic point-mass case") {
  const double h2 = hellinger_sq(dist2(1.0, 0.0), dist2(0.5, 0.5));
  CHECK(std::abs(h2 - (1.0 - std::sqrt(0.5))) <= 1e-12);
  CHECK(h2 == doctest::Approx(0.292893).epsilon(1e-5));
}

TEST_CASE("squared hellinger is one for disjoint supports") {
  CHECK(hellinger_sq(dist2(1.0, 0.0), dist2(0.0, 1.0)) == 1.0);
}

TEST_CASE("squared hellinger is symmetric bounded and zero on equality") {
  Rng rng(3);
  for (int t = 0; t < 300; ++t) {
    const Eigen::VectorXd p = testing::sparse_distribution(rng, 7);
    const Eigen::VectorXd q = testing::sparse_distribution(rng, 7);
    const double h = hellinger_sq(p, q);
    CHECK(h == hellinger_sq(q, p));
    CHECK(h >= 0.0);
    CHECK(h <= 1.0 + 1e-12);
  }
  const Eigen::VectorXd p = testing::random_distribution(rng, 5);
  CHECK(hellinger_sq(p, p) == 0.0);
}

TEST_CASE("hellinger distance obeys the triangle inequality") {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const Eigen::VectorXd a = testing::random_distribution(rng, 6);
    const Eigen::VectorXd b = testing::random_distribution(rng, 6);
    const Eigen::VectorXd c = testing::random_distribution(rng, 6);
    const double ab = std::sqrt(hellinger_sq(a, b));
    const double bc = std::sqrt(hellinger_sq(b, c));
    const double ac = std::sqrt(hellinger_sq(a, c));
    CHECK(ac <= ab + bc + 1e-9);
  }
}

TEST_CASE("divergences match straight-line oracles on random pairs") {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    const Eigen::VectorXd p = testing::sparse_distribution(rng, 9);
    const Eigen::VectorXd q = testing::sparse_distribution(rng, 9);
    CHECK(std::abs(kl_divergence(p, q) - kl_oracle(p, q)) <= 1e-12);
    CHECK(std::abs(hellinger_sq(p, q) - h2_oracle(p, q)) <= 1e-12);
  }
}

TEST_CASE("divergences validate their inputs") {
  CHECK_THROWS_AS(kl_divergence(dist2(1.0, 0.0), Eigen::VectorXd::Ones(3) / 3.0),
                  DimensionMismatchError);
  CHECK_THROWS_AS(kl_divergence(dist2(0.7, 0.7), dist2(0.5, 0.5)), NotNormalizedError);
  CHECK_THROWS_AS(hellinger_sq(dist2(-0.5, 1.5), dist2(0.5, 0.5)), NotNormalizedError);
}

TEST_CASE("cyclic swap map exchanges a two-class pair") {
  const SwapMap map({{"she", "he"}, {"her", "his"}}, 2);
  CHECK(*map.replacement("she") == "he");
  CHECK(*map.replacement("he") == "she");
  CHECK(*map.replacement("his") == "her");
  CHECK_FALSE(map.replacement("cat").has_value());
  CHECK(map.size() == 4);
}

TEST_CASE("three-class swap map shifts cyclically") {
  const std::vector<std::vector<std::string>> tuples = {{"torah", "bible", "quran"}};
  const SwapMap shift1(tuples, 3, 1);
  CHECK(*shift1.replacement("torah") == "bible");
  CHECK(*shift1.replacement("quran") == "torah");
  const SwapMap shift2(tuples, 3, 2);
  CHECK(*shift2.replacement("torah") == "quran");
  CHECK_THROWS_AS(SwapMap(tuples, 3, 3), ConfigError);
}

TEST_CASE("swap map rejects conflicting replacements") {
  CHECK_THROWS_AS(SwapMap({{"she", "he"}, {"she", "him"}}, 2), DuplicateTokenError);
  CHECK_THROWS_AS(SwapMap::from_directed({}), EmptyResultError);
}

TEST_CASE("directed entries cover asymmetric pronoun grammar") {
  const SwapMap map = SwapMap::from_directed(
      {{"his", "her"}, {"him", "her"}, {"mother", "father"}, {"told", "told"}});
  const ContextPair pair =
      counterfactual_swap({"his", "mother", "told", "him"}, map);
  CHECK(pair.swapped == std::vector<std::string>{"her", "father", "told", "her"});
  CHECK(pair.swapped_terms == std::vector<std::string>{"his", "mother", "told", "him"});
}

TEST_CASE("swapping a simple context flips only identity terms") {
  const SwapMap map({{"she", "he"}}, 2);
  const ContextPair pair = counterfactual_swap({"he", "worked", "as", "a"}, map);
  CHECK(pair.original == std::vector<std::string>{"he", "worked", "as", "a"});
  CHECK(pair.swapped == std::vector<std::string>{"she", "worked", "as", "a"});
  CHECK(pair.swapped_terms == std::vector<std::string>{"he"});
}

TEST_CASE("swapping preserves the original casing") {
  const SwapMap map({{"she", "he"}, {"mary", "john"}}, 2);
  const ContextPair pair = counterfactual_swap({"She", "met", "MARY"}, map);
  CHECK(pair.swapped == std::vector<std::string>{"He", "met", "JOHN"});
}

TEST_CASE("a context without identity terms cannot be swapped") {
  const SwapMap map({{"she", "he"}}, 2);
  CHECK_THROWS_AS(counterfactual_swap({"the", "cat", "sat"}, map), NoSwappableTokenError);
  CHECK_THROWS_AS(counterfactual_swap({}, map), EmptyContextError);
}

TEST_CASE("variants enumerate every cyclic substitution with the original first") {
  const std::vector<std::vector<std::string>> tuples = {{"rabbi", "priest", "imam"}};
  const auto variants = counterfactual_variants({"the", "rabbi", "spoke"}, tuples, 3);
  REQUIRE(variants.size() == 3);
  CHECK(variants[0] == std::vector<std::string>{"the", "rabbi", "spoke"});
  CHECK(variants[1] == std::vector<std::string>{"the", "priest", "spoke"});
  CHECK(variants[2] == std::vector<std::string>{"the", "imam", "spoke"});
}

TEST_CASE("local bias reports both directed divergences") {
  const auto model = [](const std::vector<std::string>& ctx) {
    return ctx[0] == "he" ? dist2(0.8, 0.2) : dist2(0.3, 0.7);
  };
  const LocalBias bias = local_bias(model, {"he", "ran"}, {"she", "ran"});
  CHECK(std::abs(bias.kl - kl_oracle(dist2(0.8, 0.2), dist2(0.3, 0.7))) <= 1e-12);
  CHECK(std::abs(bias.kl_reverse - kl_oracle(dist2(0.3, 0.7), dist2(0.8, 0.2))) <= 1e-12);
  CHECK(std::abs(bias.hellinger - h2_oracle(dist2(0.8, 0.2), dist2(0.3, 0.7))) <= 1e-12);

  const SwapMap map({{"he", "she"}}, 2);
  const LocalBias same = local_bias(model, counterfactual_swap({"he", "ran"}, map));
  CHECK(same.kl == bias.kl);
}

TEST_CASE("identical variants produce zero local bias") {
  const auto model = [](const std::vector<std::string>&) { return dist2(0.6, 0.4); };
  const LocalBias bias = local_bias(model, {"a"}, {"b"});
  CHECK(bias.kl == 0.0);
  CHECK(bias.kl_reverse == 0.0);
  CHECK(bias.hellinger == 0.0);
}

TEST_CASE("worst-pair local bias dominates every ordered pair") {
  const auto model = [](const std::vector<std::string>& ctx) {
    if (ctx[0] == "a") return dist2(0.9, 0.1);
    if (ctx[0] == "b") return dist2(0.5, 0.5);
    return dist2(0.2, 0.8);
  };
  const std::vector<std::vector<std::string>> variants = {{"a"}, {"b"}, {"c"}};
  const LocalBias worst = local_bias_max(model, variants);
  double expect_kl = 0.0, expect_h2 = 0.0;
  const std::vector<Eigen::VectorXd> ps = {dist2(0.9, 0.1), dist2(0.5, 0.5), dist2(0.2, 0.8)};
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (i == j) continue;
      expect_kl = std::max(expect_kl, kl_oracle(ps[i], ps[j]));
      expect_h2 = std::max(expect_h2, h2_oracle(ps[i], ps[j]));
    }
  }
  CHECK(std::abs(worst.kl - expect_kl) <= 1e-12);
  CHECK(std::abs(worst.hellinger - expect_h2) <= 1e-12);
  CHECK_THROWS_AS(local_bias_max(model, {{"a"}}), DimensionMismatchError);
}

TEST_CASE("worst-pair aggregation is invariant to variant order") {
  const auto model = [](const std::vector<std::string>& ctx) {
    if (ctx[0] == "a") return dist2(0.9, 0.1);
    if (ctx[0] == "b") return dist2(0.45, 0.55);
    return dist2(0.15, 0.85);
  };
  const LocalBias fwd = local_bias_max(model, {{"a"}, {"b"}, {"c"}});
  const LocalBias rev = local_bias_max(model, {{"c"}, {"a"}, {"b"}});
  CHECK(fwd.kl == rev.kl);
  CHECK(fwd.hellinger == rev.hellinger);
}

TEST_CASE("lexicon scorer maps mean polarity into the unit interval") {
  const LexiconScorer scorer({{"good", 0.8}, {"bad", -0.6}});
  CHECK(scorer.score({}) == 0.5);
  CHECK(scorer.score({"unknown", "words"}) == 0.5);
  CHECK(scorer.score({"good"}) == doctest::Approx((0.8 + 1.0) / 2.0).epsilon(1e-12));
  CHECK(scorer.score({"good", "bad"}) == doctest::Approx((0.1 + 1.0) / 2.0).epsilon(1e-12));
  CHECK(scorer.score({"GOOD"}) == scorer.score({"good"}));
  CHECK(scorer.name() == "lexicon");
}

TEST_CASE("lexicon files parse token polarity lines") {
  testing::TempDir dir;
  write_text_file(dir.file("lex.txt"), "# comment\ngood 0.8\nbad -0.6\n\n");
  const LexiconScorer scorer = LexiconScorer::from_file(dir.file("lex.txt"));
  CHECK(scorer.score({"good"}) == doctest::Approx(0.9).epsilon(1e-12));
  write_text_file(dir.file("bad.txt"), "good 0.8 extra\n");
  CHECK_THROWS_AS(LexiconScorer::from_file(dir.file("bad.txt")), FormatError);
  write_text_file(dir.file("dup.txt"), "good 0.8\ngood 0.9\n");
  CHECK_THROWS_AS(LexiconScorer::from_file(dir.file("dup.txt")), DuplicateTokenError);
}

TEST_CASE("global bias pairs seeds across variants") {
  std::vector<std::vector<std::uint64_t>> seen(2);
  const GenerateFn fn = [&](const std::vector<std::string>& prompt, std::uint64_t seed) {
    seen[prompt[0] == "he" ? 0 : 1].push_back(seed);
    return std::vector<std::string>{prompt[0] == "he" ? "good" : "bad"};
  };
  const LexiconScorer scorer({{"good", 0.8}, {"bad", -0.6}});
  const double gap = global_bias(fn, scorer, {"he"}, {"she"}, 4, 123);
  REQUIRE(seen[0].size() == 4);
  CHECK(seen[0] == seen[1]);
  CHECK(gap == doctest::Approx(std::abs(0.9 - 0.2)).epsilon(1e-12));
}

TEST_CASE("worst-pair global bias takes the largest score gap per draw") {
  const GenerateFn fn = [](const std::vector<std::string>& prompt, std::uint64_t) {
    return std::vector<std::string>{prompt[0]};
  };
  const LexiconScorer scorer({{"a", 1.0}, {"b", 0.0}, {"c", -1.0}});
  const double gap = global_bias_max(fn, scorer, {{"a"}, {"b"}, {"c"}}, 2, 0);
  CHECK(gap == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(global_bias_max(fn, scorer, {{"a"}}, 2, 0), DimensionMismatchError);
  CHECK_THROWS_AS(global_bias_max(fn, scorer, {{"a"}, {"b"}}, 0, 0), ConfigError);
}

TEST_CASE("performance reports gold probabilities and drift") {
  Vocabulary vocab({"x", "y", "z"});
  const auto eval_model = [](const std::vector<std::string>&) {
    Eigen::VectorXd p(3);
    p << 0.2, 0.5, 0.3;
    return p;
  };
  const auto original = [](const std::vector<std::string>&) {
    Eigen::VectorXd p(3);
    p << 0.1, 0.7, 0.2;
    return p;
  };
  const Performance perf = performance(eval_model, original, {"x"}, "y", vocab);
  CHECK(perf.p_gold_eval == 0.5);
  CHECK(perf.p_gold_original == 0.7);
  Eigen::VectorXd pe(3), po(3);
  pe << 0.2, 0.5, 0.3;
  po << 0.1, 0.7, 0.2;
  CHECK(std::abs(perf.kl_drift - kl_oracle(pe, po)) <= 1e-12);
  CHECK(std::abs(perf.hellinger_drift - h2_oracle(pe, po)) <= 1e-12);
  CHECK_THROWS_AS(performance(eval_model, original, {"x"}, "missing", vocab),
                  OutOfVocabularyError);
}
