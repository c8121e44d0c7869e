#include "isoret/sidecar.hpp"

#include <charconv>

namespace isoret {

namespace {

std::uint64_t parse_u64(std::string_view s, std::uint64_t line_no,
                        const char* what) {
  if (s.empty() || s.front() == '+' || s.front() == '-')
    throw MalformedRecord(line_no, std::string(what) + " is not a decimal u64");
  std::uint64_t value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw MalformedRecord(line_no, std::string(what) + " is not a decimal u64");
  return value;
}

}  // namespace

SidecarRecord parse_sidecar_record(std::string_view line,
                                   std::uint64_t line_no) {
  const auto tab = line.find('\t');
  if (tab == std::string_view::npos)
    throw MalformedRecord(line_no, "missing tab after doc id");

  SidecarRecord rec;
  rec.doc_id = parse_u64(line.substr(0, tab), line_no, "doc id");

  std::string_view rest = line.substr(tab + 1);
  if (rest.empty()) throw MalformedRecord(line_no, "record has no tokens");

  while (!rest.empty()) {
    const auto space = rest.find(' ');
    const std::string_view field =
        space == std::string_view::npos ? rest : rest.substr(0, space);
    rest = space == std::string_view::npos ? std::string_view{}
                                           : rest.substr(space + 1);

    const auto colon = field.rfind(':');
    if (colon == std::string_view::npos)
      throw MalformedRecord(line_no, "token field has no colon");
    const std::string_view token = field.substr(0, colon);
    if (token.empty()) throw MalformedRecord(line_no, "empty token");
    if (token.find_first_of("\t:") != std::string_view::npos)
      throw MalformedRecord(line_no, "token contains a forbidden character");
    const std::uint64_t count =
        parse_u64(field.substr(colon + 1), line_no, "count");
    if (count == 0) throw MalformedRecord(line_no, "count must be positive");
    rec.tokens.emplace_back(std::string(token), count);
  }
  return rec;
}

SidecarReader::SidecarReader(std::istream& in, bool check_duplicates)
    : in_(&in), check_duplicates_(check_duplicates) {}

SidecarReader::SidecarReader(const std::filesystem::path& path,
                             bool check_duplicates)
    : owned_(std::make_unique<std::ifstream>(path, std::ios::binary)),
      in_(owned_.get()),
      check_duplicates_(check_duplicates) {
  if (!*owned_) throw IoFailure("cannot open sidecar " + path.string());
}

std::optional<SidecarRecord> SidecarReader::next() {
  std::string line;
  if (!std::getline(*in_, line)) {
    if (in_->bad()) throw IoFailure("read error in sidecar stream");
    return std::nullopt;
  }
  ++line_;
  SidecarRecord rec = parse_sidecar_record(line, line_);
  rec.byte_offset = offset_;
  rec.byte_length = line.size();
  offset_ += line.size() + 1;
  if (check_duplicates_ && !seen_.insert(rec.doc_id).second)
    throw DuplicateDocId("duplicate doc id " + std::to_string(rec.doc_id) +
                         " at line " + std::to_string(line_));
  return rec;
}

std::vector<SidecarRecord> parse_sidecar(std::istream& in,
                                         bool check_duplicates) {
  SidecarReader reader(in, check_duplicates);
  std::vector<SidecarRecord> out;
  while (auto rec = reader.next()) out.push_back(std::move(*rec));
  return out;
}

}  // namespace isoret
