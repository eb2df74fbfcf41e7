#include "fairdec/embeddings.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fairdec/errors.hpp"
#include "fairdec/util.hpp"

namespace fairdec {

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  for (auto& t : tokens) add(t);
}

std::size_t Vocabulary::add(const std::string& token) {
  if (token.empty()) throw FormatError("empty token in vocabulary");
  auto [it, inserted] = index_.emplace(token, tokens_.size());
  if (!inserted) throw DuplicateTokenError("duplicate token: " + token);
  tokens_.push_back(token);
  return it->second;
}

std::optional<std::size_t> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Vocabulary::index_of(std::string_view token) const {
  auto idx = find(token);
  if (!idx) throw OutOfVocabularyError("token not in vocabulary: " + std::string(token));
  return *idx;
}

const std::string& Vocabulary::token(std::size_t index) const {
  if (index >= tokens_.size()) throw OutOfVocabularyError("vocabulary index out of range");
  return tokens_[index];
}

EmbeddingTable::EmbeddingTable(Vocabulary vocab, Eigen::MatrixXd rows)
    : vocab_(std::move(vocab)), rows_(std::move(rows)) {
  if (static_cast<Eigen::Index>(vocab_.size()) != rows_.rows()) {
    throw DimensionMismatchError("vocabulary size does not match embedding row count");
  }
  if (rows_.cols() == 0) throw DimensionMismatchError("embedding dimension is zero");
  if (!rows_.allFinite()) throw NonFiniteValueError("embedding matrix contains non-finite values");
}

Eigen::VectorXd EmbeddingTable::lookup(std::string_view token) const {
  return rows_.row(static_cast<Eigen::Index>(vocab_.index_of(token))).transpose();
}

Eigen::VectorXd EmbeddingTable::row(std::size_t index) const {
  if (index >= size()) throw OutOfVocabularyError("embedding index out of range");
  return rows_.row(static_cast<Eigen::Index>(index)).transpose();
}

namespace {

double parse_value(const std::string& field, std::size_t line_no) {
  double v = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) {
    throw FormatError("line " + std::to_string(line_no) + ": cannot parse value '" + field + "'");
  }
  if (!std::isfinite(v)) {
    throw NonFiniteValueError("line " + std::to_string(line_no) + ": non-finite value '" + field + "'");
  }
  return v;
}

}

EmbeddingTable parse_embedding_file(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  Vocabulary vocab;
  std::vector<Eigen::VectorXd> rows;
  Eigen::Index dim = -1;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto fields = split_ws(lines[i]);
    if (fields.empty()) continue;
    const std::size_t line_no = i + 1;
    const Eigen::Index d = static_cast<Eigen::Index>(fields.size()) - 1;
    if (d == 0) {
      throw DimensionMismatchError("line " + std::to_string(line_no) + ": token '" + fields[0] +
                                   "' has no values");
    }
    if (dim < 0) {
      dim = d;
    } else if (d != dim) {
      throw DimensionMismatchError("line " + std::to_string(line_no) + ": expected " +
                                   std::to_string(dim) + " values, got " + std::to_string(d));
    }
    try {
      vocab.add(fields[0]);
    } catch (const DuplicateTokenError&) {
      throw DuplicateTokenError("line " + std::to_string(line_no) + ": duplicate token '" +
                                fields[0] + "'");
    }
    Eigen::VectorXd row(dim);
    for (Eigen::Index j = 0; j < dim; ++j) {
      row[j] = parse_value(fields[static_cast<std::size_t>(j) + 1], line_no);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw EmptyFileError("no embeddings in file: " + path.string());
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t r = 0; r < rows.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = rows[r];
  return EmbeddingTable(std::move(vocab), std::move(m));
}

void write_embedding_file(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ostringstream out;
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << table.vocab().token(i);
    for (Eigen::Index j = 0; j < table.dim(); ++j) {
      out << ' ' << format_double(table.matrix()(static_cast<Eigen::Index>(i), j));
    }
    out << '\n';
  }
  write_text_file(path, out.str());
}

double cosine(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  if (u.size() != v.size()) throw DimensionMismatchError("cosine of vectors with different sizes");
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 || nv == 0.0) throw ZeroNormError("cosine of zero-norm vector");
  return u.dot(v) / (nu * nv);
}

}
