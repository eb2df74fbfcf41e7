#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fairdec/embeddings.hpp"
#include "fairdec/util.hpp"

namespace fairdec::testing {

// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  TempDir() {
    const auto base = std::filesystem::temp_directory_path();
    for (int i = 0; i < 10000; ++i) {
      auto candidate = base / ("fairdec_test_" + std::to_string(counter_++));
      std::error_code ec;
      if (std::filesystem::create_directory(candidate, ec)) {
        path_ = std::move(candidate);
        return;
      }
    }
    throw std::runtime_error("could not create a scratch directory");
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path file(const std::string& name) const { return path_ / name; }

 private:
  static inline int counter_ = 0;
  std::filesystem::path path_;
};

inline EmbeddingTable make_table(const std::vector<std::string>& tokens,
                                 const Eigen::MatrixXd& rows) {
  return EmbeddingTable(Vocabulary(tokens), rows);
}

inline Eigen::VectorXd random_distribution(Rng& rng, Eigen::Index n) {
  Eigen::VectorXd p(n);
  for (Eigen::Index i = 0; i < n; ++i) p[i] = rng.uniform() + 1e-6;
  return p / p.sum();
}

// Distribution with some exact zeros, for support-edge cases.
inline Eigen::VectorXd sparse_distribution(Rng& rng, Eigen::Index n) {
  Eigen::VectorXd p = Eigen::VectorXd::Zero(n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (rng.uniform() < 0.5) {
      p[i] = rng.uniform() + 1e-6;
      total += p[i];
    }
  }
  if (total == 0.0) {
    p[0] = 1.0;
    return p;
  }
  return p / total;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}
