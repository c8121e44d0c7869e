#include "isoret/embedding_table.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "isoret/hashing.hpp"
#include "isoret/io_util.hpp"

namespace isoret {

namespace {
constexpr char kMagic[4] = {'E', 'M', 'B', '1'};
constexpr std::size_t kGrowth = 1024;
}  // namespace

EmbeddingTable::EmbeddingTable(Eigen::Index dim) : dim_(dim) {
  if (dim <= 0) throw InvalidDimension("embedding dimension must be positive");
  data_.resize(dim_, 0);
}

void EmbeddingTable::add(std::string token, const Eigen::VectorXf& vector) {
  if (token.empty()) throw std::invalid_argument("empty token");
  if (token.size() > std::numeric_limits<std::uint16_t>::max())
    throw std::invalid_argument("token longer than 65535 bytes");
  if (vector.rows() != dim_) throw DimensionMismatch(dim_, vector.rows());
  if (index_.contains(token))
    throw std::invalid_argument("duplicate table token " + token);
  const auto col = static_cast<Eigen::Index>(tokens_.size());
  if (col >= data_.cols())
    data_.conservativeResize(Eigen::NoChange, data_.cols() + kGrowth);
  data_.col(col) = vector;
  index_.emplace(token, static_cast<std::uint32_t>(col));
  tokens_.push_back(std::move(token));
}

bool EmbeddingTable::contains(std::string_view token) const {
  return index_.find(token) != index_.end();
}

std::optional<std::uint32_t> EmbeddingTable::row_of(
    std::string_view token) const {
  const auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

BaseVector EmbeddingTable::vector(std::uint32_t row) const {
  if (row >= tokens_.size())
    throw std::out_of_range("table row " + std::to_string(row));
  return data_.col(row).cast<double>();
}

std::optional<BaseVector> EmbeddingTable::find(std::string_view token) const {
  const auto row = row_of(token);
  if (!row) return std::nullopt;
  return vector(*row);
}

void EmbeddingTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot write embedding table " + path.string());
  out.write(kMagic, 4);
  io::put_u32(out, static_cast<std::uint32_t>(dim_));
  io::put_u64(out, tokens_.size());
  for (std::uint32_t row = 0; row < tokens_.size(); ++row) {
    const std::string& token = tokens_[row];
    io::put_u16(out, static_cast<std::uint16_t>(token.size()));
    out.write(token.data(), static_cast<std::streamsize>(token.size()));
    for (Eigen::Index i = 0; i < dim_; ++i) io::put_f32(out, data_(i, row));
  }
  out.flush();
  if (!out) throw IoFailure("short write to " + path.string());
}

EmbeddingTable EmbeddingTable::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open embedding table " + path.string());

  unsigned char head[16];
  io::read_exact(in, head, sizeof head, "embedding table header");
  if (std::memcmp(head, kMagic, 4) != 0)
    throw IoFailure("bad embedding table magic in " + path.string());
  const std::uint32_t dim = io::get_u32(head + 4);
  const std::uint64_t rows = io::get_u64(head + 8);
  if (dim == 0) throw InvalidDimension("embedding table dimension is zero");

  EmbeddingTable table(static_cast<Eigen::Index>(dim));
  table.tokens_.reserve(rows);
  table.data_.resize(dim, static_cast<Eigen::Index>(rows));
  std::vector<unsigned char> buf;
  for (std::uint64_t r = 0; r < rows; ++r) {
    unsigned char len_bytes[2];
    io::read_exact(in, len_bytes, 2, "token length");
    const std::uint16_t len = io::get_u16(len_bytes);
    if (len == 0) throw IoFailure("zero-length token in " + path.string());
    std::string token(len, '\0');
    io::read_exact(in, token.data(), len, "token bytes");
    buf.resize(4u * dim);
    io::read_exact(in, buf.data(), buf.size(), "embedding row");
    const auto col = static_cast<Eigen::Index>(r);
    for (std::uint32_t i = 0; i < dim; ++i)
      table.data_(static_cast<Eigen::Index>(i), col) =
          io::get_f32(buf.data() + 4u * i);
    if (!table.index_.emplace(token, static_cast<std::uint32_t>(r)).second)
      throw IoFailure("duplicate token in " + path.string());
    table.tokens_.push_back(std::move(token));
  }
  return table;
}

BaseVector EmbeddingTable::hashed_vector(std::string_view token,
                                         Eigen::Index dim) {
  if (dim <= 0) throw InvalidDimension("embedding dimension must be positive");
  SplitMix64 rng(fnv1a64(token));
  BaseVector v(dim);
  // Box-Muller on the stream; the pair's second value fills the next slot.
  Eigen::Index i = 0;
  while (i < dim) {
    const double u1 = rng.next_unit();
    const double u2 = rng.next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    v[i++] = r * std::cos(2.0 * M_PI * u2);
    if (i < dim) v[i++] = r * std::sin(2.0 * M_PI * u2);
  }
  const double n = v.norm();
  if (n < kZeroNormTol) {
    v.setZero();
    v[0] = 1.0;
    return v;
  }
  return v / n;
}

TokenEmbeddings TokenEmbeddings::resolve(const EmbeddingTable& table,
                                         const Vocabulary& vocab) {
  TokenEmbeddings out;
  out.dim_ = table.dim();
  out.present_.assign(vocab.size(), false);
  out.row_.assign(vocab.size(), 0);

  std::vector<std::uint32_t> table_rows;
  for (std::uint32_t id = 0; id < vocab.size(); ++id) {
    const auto row = table.row_of(vocab.token(id));
    if (!row) continue;
    out.present_[id] = true;
    out.row_[id] = static_cast<std::uint32_t>(table_rows.size());
    table_rows.push_back(*row);
  }
  if (table_rows.empty())
    throw EmbeddingTableEmptyIntersection(
        "no vocabulary token has a base embedding");

  out.covered_ = table_rows.size();
  out.data_.resize(table.dim(), static_cast<Eigen::Index>(table_rows.size()));
  for (std::size_t c = 0; c < table_rows.size(); ++c)
    out.data_.col(static_cast<Eigen::Index>(c)) =
        table.vector(table_rows[c]).cast<float>();
  return out;
}

BaseVector TokenEmbeddings::vector(std::uint32_t id) const {
  if (!contains(id))
    throw UnknownTokenId(id);
  return data_.col(row_[id]).cast<double>();
}

}  // namespace isoret
