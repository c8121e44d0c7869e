#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "isoret/embed.hpp"
#include "isoret/embedding_table.hpp"
#include "isoret/sidecar.hpp"
#include "isoret/vocabulary.hpp"

// On-disk index bundle. A directory with five files:
//   index.meta        44-byte little-endian header (see IndexHeader)
//   doc_offsets.bin   doc_count x 24 bytes: doc_id, byte_offset, byte_length
//   doc_vectors.i8    doc_count x 256 int8 rows, ordered as the sidecar
//   token_vectors.i8  token_count x 256 int8 rows, ordered by token id
//   vocab.tsv         one "<token>\t<corpus_count>" line per token id
// plus build_report.json with build statistics.
//
// Documents or tokens that cannot be embedded get an all-zero row; zero
// rows never match anything and are skipped by search.

namespace isoret {

inline constexpr char kMetaFile[] = "index.meta";
inline constexpr char kDocOffsetsFile[] = "doc_offsets.bin";
inline constexpr char kDocVectorsFile[] = "doc_vectors.i8";
inline constexpr char kTokenVectorsFile[] = "token_vectors.i8";
inline constexpr char kVocabFile[] = "vocab.tsv";
inline constexpr char kReportFile[] = "build_report.json";

inline constexpr std::size_t kHeaderBytes = 44;
inline constexpr std::size_t kOffsetRecordBytes = 24;
inline constexpr std::uint32_t kIndexVersion = 1;

struct IndexHeader {
  std::uint32_t version = kIndexVersion;
  std::uint32_t base_dim = 0;
  std::uint64_t jl_seed = 0;
  std::uint64_t doc_count = 0;
  std::uint64_t token_count = 0;
  std::uint64_t min_count = 0;
};

struct DocLocator {
  std::uint64_t doc_id = 0;
  std::uint64_t byte_offset = 0;
  std::uint64_t byte_length = 0;
};

struct BuildOptions {
  std::uint64_t jl_seed = 1;
  std::uint64_t min_count = 5;
  unsigned workers = 1;
  std::size_t batch_size = 2048;
};

struct BuildReport {
  std::uint64_t doc_count = 0;
  std::uint64_t token_count = 0;
  std::uint32_t base_dim = 0;
  std::uint64_t jl_seed = 0;
  std::uint64_t min_count = 0;
  // Documents that produced an all-zero row, by cause.
  std::uint64_t docs_all_weights_zero = 0;
  std::uint64_t docs_no_known_token = 0;
  std::uint64_t docs_projection_collapsed = 0;
  std::vector<std::uint64_t> flagged_doc_ids;  // capped sample
  std::uint64_t zero_token_rows = 0;
  double wall_seconds = 0.0;
  double docs_per_second = 0.0;
  std::map<std::string, std::uint64_t> file_bytes;
  std::map<std::string, std::string> file_fnv1a64;  // hex digests
  bool byte_identical_rebuild = false;

  std::string to_json() const;
};

/// Read-only memory-mapped file. Zero-length files map to a null range.
class MappedFile {
 public:
  MappedFile() = default;
  MappedFile(MappedFile&& other) noexcept;
  MappedFile& operator=(MappedFile&& other) noexcept;
  MappedFile(const MappedFile&) = delete;
  MappedFile& operator=(const MappedFile&) = delete;
  ~MappedFile();

  static MappedFile open(const std::filesystem::path& path);

  const unsigned char* data() const {
    return static_cast<const unsigned char*>(ptr_);
  }
  std::size_t size() const { return size_; }

 private:
  void* ptr_ = nullptr;
  std::size_t size_ = 0;
};

/// Open index: header plus zero-copy row access into the mapped files.
class IndexBundle {
 public:
  static IndexBundle open(const std::filesystem::path& dir);

  const IndexHeader& header() const { return header_; }
  const std::filesystem::path& dir() const { return dir_; }
  std::uint64_t doc_count() const { return header_.doc_count; }
  std::uint64_t token_count() const { return header_.token_count; }
  const Vocabulary& vocabulary() const { return vocab_; }

  /// Raw pointer to a document row (256 int8 values).
  const std::int8_t* doc_row(std::uint64_t row) const;
  const std::int8_t* token_row(std::uint32_t token_id) const;
  Eigen::Map<const QuantizedVector> doc_vector(std::uint64_t row) const;
  Eigen::Map<const QuantizedVector> token_vector(std::uint32_t token_id) const;
  bool doc_row_is_zero(std::uint64_t row) const;
  bool token_row_is_zero(std::uint32_t token_id) const;

  DocLocator locator(std::uint64_t row) const;
  std::uint64_t doc_id(std::uint64_t row) const;
  std::optional<std::uint64_t> row_of(std::uint64_t doc_id) const;

  /// Rows whose vector is not all-zero, ascending. Built once on demand.
  const std::vector<std::uint64_t>& nonzero_doc_rows() const;

 private:
  IndexBundle() = default;

  std::filesystem::path dir_;
  IndexHeader header_;
  MappedFile offsets_;
  MappedFile doc_vectors_;
  MappedFile token_vectors_;
  Vocabulary vocab_;

  struct Lazy {
    std::once_flag id_once;
    std::unordered_map<std::uint64_t, std::uint64_t> row_by_id;
    std::once_flag nonzero_once;
    std::vector<std::uint64_t> nonzero_rows;
  };
  std::unique_ptr<Lazy> lazy_ = std::make_unique<Lazy>();
};

/// Builds the bundle under `out_dir` (created if missing). When
/// `prebuilt_vocab` is given the counting pass is skipped and the given
/// vocabulary is used as-is; it must come from the same sidecar and
/// min_count or document rows will not match the vocabulary.
BuildReport build_index(const std::filesystem::path& sidecar,
                        const EmbeddingTable& table,
                        const ProjectorXd& projector, const BuildOptions& opt,
                        const std::filesystem::path& out_dir,
                        const Vocabulary* prebuilt_vocab = nullptr);

IndexBundle open_index(const std::filesystem::path& dir);

/// Re-reads one document's tokens from the sidecar via the stored locator
/// and maps them to vocabulary ids. Tokens below min_count (absent from the
/// vocabulary) are dropped.
std::vector<std::pair<std::uint32_t, std::uint64_t>> fetch_doc_tokens(
    const IndexBundle& bundle, std::istream& sidecar, std::uint64_t doc_id);
std::vector<std::pair<std::uint32_t, std::uint64_t>> fetch_doc_tokens(
    const IndexBundle& bundle, const std::filesystem::path& sidecar,
    std::uint64_t doc_id);

}  // namespace isoret
