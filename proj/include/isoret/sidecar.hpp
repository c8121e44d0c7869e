#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "isoret/errors.hpp"

// Token-count sidecar: one document per line,
//   <doc_id>\t<token>:<count>( <token>:<count>)*\n
// doc_id is a decimal u64, counts are decimal u64 >= 1, tokens are non-empty
// and contain no space, tab, colon, or newline.

namespace isoret {

struct SidecarRecord {
  std::uint64_t doc_id = 0;
  std::vector<std::pair<std::string, std::uint64_t>> tokens;
  // Position of the line inside the sidecar file (length excludes the
  // trailing newline). Lets the index fetch a document without a scan.
  std::uint64_t byte_offset = 0;
  std::uint64_t byte_length = 0;
};

/// Parses one sidecar line (no trailing newline). `line_no` is 1-based and
/// only used for error messages.
SidecarRecord parse_sidecar_record(std::string_view line,
                                   std::uint64_t line_no);

/// Streaming reader with constant memory per record. Rejects duplicate
/// doc ids across the whole stream unless told not to.
class SidecarReader {
 public:
  explicit SidecarReader(std::istream& in, bool check_duplicates = true);
  explicit SidecarReader(const std::filesystem::path& path,
                         bool check_duplicates = true);

  /// Next record, or nullopt at end of input. Throws MalformedRecord on
  /// grammar violations and DuplicateDocId on a repeated id.
  std::optional<SidecarRecord> next();

  std::uint64_t line_number() const { return line_; }

 private:
  std::unique_ptr<std::ifstream> owned_;
  std::istream* in_;
  bool check_duplicates_;
  std::uint64_t offset_ = 0;
  std::uint64_t line_ = 0;
  std::unordered_set<std::uint64_t> seen_;
};

/// Reads a whole stream into memory. Convenience for small inputs.
std::vector<SidecarRecord> parse_sidecar(std::istream& in,
                                         bool check_duplicates = true);

}  // namespace isoret
