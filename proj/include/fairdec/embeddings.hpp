#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace fairdec {

// Token <-> index map. Indices follow insertion order.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t add(const std::string& token);
  std::optional<std::size_t> find(std::string_view token) const;
  std::size_t index_of(std::string_view token) const;  // throws OutOfVocabularyError
  const std::string& token(std::size_t index) const;
  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const { return find(token).has_value(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Dense row-per-token embedding matrix tied to a Vocabulary.
class EmbeddingTable {
 public:
  EmbeddingTable(Vocabulary vocab, Eigen::MatrixXd rows);

  const Vocabulary& vocab() const { return vocab_; }
  Eigen::Index dim() const { return rows_.cols(); }
  std::size_t size() const { return vocab_.size(); }
  const Eigen::MatrixXd& matrix() const { return rows_; }

  Eigen::VectorXd lookup(std::string_view token) const;  // throws OutOfVocabularyError
  Eigen::VectorXd row(std::size_t index) const;

 private:
  Vocabulary vocab_;
  Eigen::MatrixXd rows_;
};

// Reads whitespace-separated text embeddings, one token per line.
EmbeddingTable parse_embedding_file(const std::filesystem::path& path);

// Writes the same format; values survive a write/parse round trip bit for bit.
void write_embedding_file(const EmbeddingTable& table, const std::filesystem::path& path);

double cosine(const Eigen::VectorXd& u, const Eigen::VectorXd& v);

}
