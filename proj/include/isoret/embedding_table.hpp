#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "isoret/embed.hpp"
#include "isoret/vocabulary.hpp"

namespace isoret {

/// Base token embeddings keyed by token string. Rows are stored as float32
/// (the interchange precision) and handed out as double for the transform.
///
/// Binary layout (little-endian): magic "EMB1", u32 dimension, u64 row
/// count, then per row a u16 token length, the token bytes, and dimension
/// float32 components.
class EmbeddingTable {
 public:
  explicit EmbeddingTable(Eigen::Index dim);

  void add(std::string token, const Eigen::VectorXf& vector);

  bool contains(std::string_view token) const;
  std::optional<std::uint32_t> row_of(std::string_view token) const;
  /// Base vector by row, widened to double.
  BaseVector vector(std::uint32_t row) const;
  std::optional<BaseVector> find(std::string_view token) const;
  const std::string& token(std::uint32_t row) const { return tokens_.at(row); }

  Eigen::Index dim() const { return dim_; }
  std::size_t size() const { return tokens_.size(); }

  void save(const std::filesystem::path& path) const;
  static EmbeddingTable load(const std::filesystem::path& path);

  /// Deterministic fallback vector for a token with no trained embedding:
  /// a unit vector of standard gaussians drawn from a SplitMix64 stream
  /// seeded with FNV-1a64 of the token bytes.
  static BaseVector hashed_vector(std::string_view token, Eigen::Index dim);

 private:
  Eigen::Index dim_;
  std::vector<std::string> tokens_;
  Eigen::MatrixXf data_;  // dim_ x size, column per token
  struct StringHash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const {
      return std::hash<std::string_view>{}(s);
    }
  };
  std::unordered_map<std::string, std::uint32_t, StringHash, std::equal_to<>>
      index_;
};

/// The embedding table narrowed to one vocabulary: dense lookup by token id.
/// Ids whose token has no table row are simply absent.
class TokenEmbeddings {
 public:
  /// Throws EmbeddingTableEmptyIntersection when no vocabulary token has a
  /// base embedding.
  static TokenEmbeddings resolve(const EmbeddingTable& table,
                                 const Vocabulary& vocab);

  bool contains(std::uint32_t id) const {
    return id < present_.size() && present_[id];
  }
  BaseVector vector(std::uint32_t id) const;
  Eigen::Index dim() const { return dim_; }
  std::uint32_t vocab_size() const {
    return static_cast<std::uint32_t>(present_.size());
  }
  std::size_t covered() const { return covered_; }

 private:
  Eigen::Index dim_ = 0;
  std::vector<bool> present_;
  std::vector<std::uint32_t> row_;  // id -> column in data_
  Eigen::MatrixXf data_;
  std::size_t covered_ = 0;
};

}  // namespace isoret
