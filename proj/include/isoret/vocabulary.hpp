#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "isoret/sidecar.hpp"

namespace isoret {

struct VocabEntry {
  std::string token;
  std::uint64_t corpus_count = 0;
};

/// Corpus vocabulary. Token ids are dense [0, size) and assigned by
/// lexicographic (byte-wise) token order, so the same corpus always yields
/// the same ids regardless of document order.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<VocabEntry> entries);

  std::optional<std::uint32_t> id_of(std::string_view token) const;
  const std::string& token(std::uint32_t id) const;
  std::uint64_t corpus_count(std::uint32_t id) const;
  std::uint32_t size() const { return static_cast<std::uint32_t>(entries_.size()); }
  const std::vector<VocabEntry>& entries() const { return entries_; }

  /// One `<token>\t<count>\n` line per id, in id order.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<VocabEntry> entries_;
  struct StringHash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const {
      return std::hash<std::string_view>{}(s);
    }
  };
  std::unordered_map<std::string, std::uint32_t, StringHash, std::equal_to<>>
      index_;
};

/// Accumulates token counts over a record stream and keeps tokens whose
/// total count is >= min_count.
Vocabulary build_vocabulary(SidecarReader& records, std::uint64_t min_count);
Vocabulary build_vocabulary(const std::vector<SidecarRecord>& records,
                            std::uint64_t min_count);

}  // namespace isoret
