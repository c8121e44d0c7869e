#include "isoret/vocabulary.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>

namespace isoret {

Vocabulary::Vocabulary(std::vector<VocabEntry> entries)
    : entries_(std::move(entries)) {
  std::sort(entries_.begin(), entries_.end(),
            [](const VocabEntry& a, const VocabEntry& b) {
              return a.token < b.token;
            });
  index_.reserve(entries_.size());
  for (std::uint32_t id = 0; id < entries_.size(); ++id) {
    if (!index_.emplace(entries_[id].token, id).second)
      throw std::invalid_argument("duplicate vocabulary token " +
                                  entries_[id].token);
  }
}

std::optional<std::uint32_t> Vocabulary::id_of(std::string_view token) const {
  const auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::token(std::uint32_t id) const {
  if (id >= entries_.size())
    throw std::out_of_range("vocabulary id " + std::to_string(id));
  return entries_[id].token;
}

std::uint64_t Vocabulary::corpus_count(std::uint32_t id) const {
  if (id >= entries_.size())
    throw std::out_of_range("vocabulary id " + std::to_string(id));
  return entries_[id].corpus_count;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot write vocabulary " + path.string());
  for (const VocabEntry& e : entries_)
    out << e.token << '\t' << e.corpus_count << '\n';
  out.flush();
  if (!out) throw IoFailure("short write to vocabulary " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open vocabulary " + path.string());
  std::vector<VocabEntry> entries;
  std::string line;
  std::uint64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw CorruptIndex("vocabulary line " + std::to_string(line_no) +
                         " has no token/count split");
    std::uint64_t count = 0;
    const char* first = line.data() + tab + 1;
    const char* last = line.data() + line.size();
    const auto [ptr, ec] = std::from_chars(first, last, count);
    if (ec != std::errc{} || ptr != last)
      throw CorruptIndex("vocabulary line " + std::to_string(line_no) +
                         " has a bad count");
    entries.push_back(VocabEntry{line.substr(0, tab), count});
  }
  if (in.bad()) throw IoFailure("read error in " + path.string());
  return Vocabulary(std::move(entries));
}

namespace {

Vocabulary from_counts(
    std::unordered_map<std::string, std::uint64_t>&& counts,
    std::uint64_t min_count) {
  std::vector<VocabEntry> entries;
  entries.reserve(counts.size());
  for (auto& [token, count] : counts)
    if (count >= min_count) entries.push_back(VocabEntry{token, count});
  return Vocabulary(std::move(entries));
}

}  // namespace

Vocabulary build_vocabulary(SidecarReader& records, std::uint64_t min_count) {
  std::unordered_map<std::string, std::uint64_t> counts;
  while (auto rec = records.next())
    for (auto& [token, count] : rec->tokens) counts[token] += count;
  return from_counts(std::move(counts), min_count);
}

Vocabulary build_vocabulary(const std::vector<SidecarRecord>& records,
                            std::uint64_t min_count) {
  std::unordered_map<std::string, std::uint64_t> counts;
  for (const SidecarRecord& rec : records)
    for (const auto& [token, count] : rec.tokens) counts[token] += count;
  return from_counts(std::move(counts), min_count);
}

}  // namespace isoret
