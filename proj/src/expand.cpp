#include "isoret/expand.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <optional>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace isoret {

namespace {

void validate(const ExpansionRequest& req) {
  if (req.query_text.empty())
    throw std::invalid_argument("query text is empty");
  if (req.min_phrases < 1 || req.max_phrases < req.min_phrases)
    throw std::invalid_argument("need 1 <= min_phrases <= max_phrases");
  if (req.max_words < 1) throw std::invalid_argument("max_words must be >= 1");
}

std::vector<std::string> split_words(std::string_view phrase) {
  std::vector<std::string> words;
  std::size_t pos = 0;
  while (pos < phrase.size()) {
    const auto space = phrase.find(' ', pos);
    const auto end = space == std::string_view::npos ? phrase.size() : space;
    if (end > pos) words.emplace_back(phrase.substr(pos, end - pos));
    pos = end + 1;
  }
  return words;
}

std::string underscore_join(std::string_view phrase) {
  std::string joined(phrase);
  std::replace(joined.begin(), joined.end(), ' ', '_');
  return joined;
}

}  // namespace

std::string serialize_request(const ExpansionRequest& req) {
  nlohmann::json j;
  j["query"] = req.query_text;
  j["min"] = req.min_phrases;
  j["max"] = req.max_phrases;
  j["max_words"] = req.max_words;
  return j.dump();
}

std::vector<std::string> parse_expansion_response(const std::string& body) {
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("phrases") ||
      !j["phrases"].is_array())
    throw ExpanderUnavailable("response is not {\"phrases\": [...]}");
  std::vector<std::string> out;
  for (const auto& p : j["phrases"]) {
    if (!p.is_string())
      throw ExpanderUnavailable("phrase list contains a non-string");
    out.push_back(p.get<std::string>());
  }
  return out;
}

// --- stub ---

struct StubExpander::Data {
  std::filesystem::path fixture;
  std::unordered_map<std::string, std::vector<std::string>> by_query;
};

StubExpander::StubExpander(const std::filesystem::path& fixture)
    : data_(std::make_shared<Data>()) {
  data_->fixture = fixture;
  std::ifstream in(fixture);
  if (!in) throw IoFailure("cannot open stub fixture " + fixture.string());
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw IoFailure("stub fixture " + fixture.string() +
                    " is not a JSON object");
  for (const auto& [query, phrases] : j.items()) {
    if (!phrases.is_array())
      throw IoFailure("stub fixture entry for \"" + query +
                      "\" is not an array");
    auto& list = data_->by_query[query];
    for (const auto& p : phrases) list.push_back(p.get<std::string>());
  }
}

std::vector<std::string> StubExpander::expand_raw(
    const ExpansionRequest& req) {
  validate(req);
  const auto it = data_->by_query.find(req.query_text);
  if (it == data_->by_query.end())
    throw ExpanderUnavailable("stub fixture has no entry for query \"" +
                              req.query_text + "\"");
  return it->second;
}

std::string StubExpander::provenance() const {
  return "stub:" + data_->fixture.filename().string();
}

// --- remote ---

RemoteExpander::RemoteExpander(Options options)
    : options_(std::move(options)) {
  if (options_.url.empty()) throw std::invalid_argument("empty expander url");
  if (options_.retries < 0) throw std::invalid_argument("negative retries");
}

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // begins with '/'
};

SplitUrl split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos)
    throw std::invalid_argument("expander url needs a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return SplitUrl{url, "/"};
  return SplitUrl{url.substr(0, slash), url.substr(slash)};
}

void append_transcript(const std::filesystem::path& path,
                       const std::string& request_body,
                       const std::string& response_body) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoFailure("cannot append transcript " + path.string());
  nlohmann::json line;
  line["request"] = request_body;
  line["response"] = response_body;
  out << line.dump() << '\n';
  out.flush();
  if (!out) throw IoFailure("short write to transcript " + path.string());
}

}  // namespace

std::vector<std::string> RemoteExpander::expand_raw(
    const ExpansionRequest& req) {
  validate(req);
  const std::string body = serialize_request(req);
  const SplitUrl url = split_url(options_.url);

  std::string failure;
  for (int attempt = 0; attempt <= options_.retries; ++attempt) {
    httplib::Client client(url.origin);
    client.set_connection_timeout(0, options_.timeout_ms * 1000);
    client.set_read_timeout(0, options_.timeout_ms * 1000);
    client.set_write_timeout(0, options_.timeout_ms * 1000);
    auto res = client.Post(url.path, body, "application/json");
    if (!res) {
      failure = "transport: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      failure = "status " + std::to_string(res->status);
      continue;
    }
    if (!options_.transcript.empty())
      append_transcript(options_.transcript, body, res->body);
    return parse_expansion_response(res->body);
  }
  throw ExpanderUnavailable("expander " + options_.url +
                            " unreachable: " + failure);
}

std::string RemoteExpander::provenance() const {
  return "remote:" + options_.url;
}

// --- transcript replay ---

struct TranscriptExpander::Data {
  std::filesystem::path path;
  std::unordered_map<std::string, std::string> responses;
};

TranscriptExpander::TranscriptExpander(const std::filesystem::path& transcript)
    : data_(std::make_shared<Data>()) {
  data_->path = transcript;
  std::ifstream in(transcript, std::ios::binary);
  if (!in) throw IoFailure("cannot open transcript " + transcript.string());
  std::string line;
  std::uint64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("request") || !j.contains("response"))
      throw IoFailure("transcript " + transcript.string() + " line " +
                      std::to_string(line_no) + " is malformed");
    // Later exchanges for the same request win, mirroring a live re-ask.
    data_->responses[j["request"].get<std::string>()] =
        j["response"].get<std::string>();
  }
}

std::vector<std::string> TranscriptExpander::expand_raw(
    const ExpansionRequest& req) {
  validate(req);
  const std::string key = serialize_request(req);
  const auto it = data_->responses.find(key);
  if (it == data_->responses.end())
    throw ExpanderUnavailable("transcript has no exchange for " + key);
  return parse_expansion_response(it->second);
}

std::string TranscriptExpander::provenance() const {
  return "transcript:" + data_->path.filename().string();
}

// --- normalization and assembly ---

std::string normalize_phrase(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool in_space = true;  // leading whitespace is dropped
  for (const char ch : raw) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isspace(uc)) {
      in_space = true;
      continue;
    }
    if (in_space && !out.empty()) out.push_back(' ');
    in_space = false;
    out.push_back(static_cast<char>(std::tolower(uc)));
  }
  return out;
}

PhraseSet expand(const ExpansionRequest& req, Expander& expander) {
  validate(req);
  const std::vector<std::string> raw = expander.expand_raw(req);

  PhraseSet set;
  set.provenance = expander.provenance();
  std::unordered_set<std::string> seen;
  for (const std::string& r : raw) {
    std::string text = normalize_phrase(r);
    if (text.empty()) continue;
    const auto words =
        1 + static_cast<int>(std::count(text.begin(), text.end(), ' '));
    if (words > req.max_words) continue;
    if (!seen.insert(text).second) continue;
    set.phrases.push_back(Phrase{std::move(text), PhraseSource::kModel});
    if (set.phrases.size() == static_cast<std::size_t>(req.max_phrases)) break;
  }
  if (set.phrases.empty())
    throw EmptyExpansion("no usable phrase for query \"" + req.query_text +
                         "\"");
  set.under_expanded =
      set.phrases.size() < static_cast<std::size_t>(req.min_phrases);
  return set;
}

namespace {

/// Phrase embedding for synonym comparison: the underscore-joined token when
/// the table has it, otherwise the word-level transform. nullopt when no
/// part of the phrase is embeddable.
std::optional<ReducedVector> embed_phrase(const std::string& text,
                                          const EmbeddingTable& table,
                                          const ProjectorXd& projector,
                                          const JlMatrix<double>& jl) {
  std::vector<std::string> parts;
  const std::string joined = underscore_join(text);
  if (table.contains(joined)) {
    parts.push_back(joined);
  } else {
    for (auto& w : split_words(text))
      if (table.contains(w)) parts.push_back(std::move(w));
  }
  if (parts.empty()) return std::nullopt;

  std::vector<WeightedToken> weighted;
  weighted.reserve(parts.size());
  for (const std::string& p : parts) {
    BaseVector u = projector.project(*table.find(p));
    const double w = token_weight(u, projector.projected_mean());
    weighted.push_back(WeightedToken{0, 1, w, std::move(u)});
  }
  try {
    return jl_project(weighted_mean(weighted), jl);
  } catch (const EmptyRepresentation&) {
    return std::nullopt;
  } catch (const ZeroVector&) {
    return std::nullopt;
  }
}

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t i) {
  while (parent[i] != i) {
    parent[i] = parent[parent[i]];
    i = parent[i];
  }
  return i;
}

}  // namespace

PhraseSet merge_synonyms(const PhraseSet& phrases, const EmbeddingTable& table,
                         const ProjectorXd& projector,
                         const JlMatrix<double>& jl, double tau) {
  if (!(tau > 0.0 && tau < 1.0))
    throw std::invalid_argument("tau must be in (0, 1)");

  const std::size_t n = phrases.phrases.size();
  std::vector<std::optional<ReducedVector>> vecs(n);
  for (std::size_t i = 0; i < n; ++i)
    vecs[i] = embed_phrase(phrases.phrases[i].text, table, projector, jl);

  std::vector<std::size_t> parent(n);
  for (std::size_t i = 0; i < n; ++i) parent[i] = i;
  for (std::size_t i = 0; i < n; ++i) {
    if (!vecs[i]) continue;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!vecs[j]) continue;
      if (vecs[i]->dot(*vecs[j]) >= tau) {
        const auto ri = find_root(parent, i);
        const auto rj = find_root(parent, j);
        if (ri != rj) parent[rj] = ri;
      }
    }
  }

  // Group members; the lexicographically smallest text represents a group,
  // and a group formed of more than one phrase is marked merged.
  std::unordered_map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i)
    groups[find_root(parent, i)].push_back(i);

  PhraseSet out;
  out.provenance = phrases.provenance;
  out.under_expanded = phrases.under_expanded;
  out.phrases.reserve(groups.size());
  for (const auto& [root, members] : groups) {
    std::size_t best = members.front();
    for (const std::size_t m : members)
      if (phrases.phrases[m].text < phrases.phrases[best].text) best = m;
    Phrase merged = phrases.phrases[best];
    if (members.size() > 1) merged.source = PhraseSource::kMerged;
    out.phrases.push_back(std::move(merged));
  }
  std::sort(out.phrases.begin(), out.phrases.end(),
            [](const Phrase& a, const Phrase& b) { return a.text < b.text; });
  return out;
}

std::vector<std::uint32_t> filter_by_vocabulary(
    const PhraseSet& phrases, const Vocabulary& vocab,
    std::uint64_t min_corpus_count) {
  std::vector<std::uint32_t> ids;
  std::unordered_set<std::uint32_t> seen;
  const auto push = [&](std::uint32_t id) {
    if (seen.insert(id).second) ids.push_back(id);
  };
  const auto usable = [&](const std::string& token) -> std::optional<std::uint32_t> {
    const auto id = vocab.id_of(token);
    if (id && vocab.corpus_count(*id) >= min_corpus_count) return id;
    return std::nullopt;
  };

  for (const Phrase& phrase : phrases.phrases) {
    if (const auto id = usable(underscore_join(phrase.text))) {
      push(*id);
      continue;
    }
    for (const std::string& word : split_words(phrase.text))
      if (const auto id = usable(word)) push(*id);
  }
  if (ids.empty()) {
    std::string dropped;
    for (const Phrase& phrase : phrases.phrases) {
      if (!dropped.empty()) dropped += ", ";
      dropped += '"' + phrase.text + '"';
    }
    throw AllPhrasesFiltered("no phrase maps to a vocabulary token at count >= " +
                             std::to_string(min_corpus_count) +
                             "; dropped: " + dropped);
  }
  return ids;
}

QuantizedVector query_vector(std::span<const std::uint32_t> token_ids,
                             const TokenEmbeddings& table,
                             const ProjectorXd& projector,
                             const JlMatrix<double>& jl) {
  if (token_ids.empty()) throw EmptyRepresentation("no query tokens");
  std::vector<std::pair<std::uint32_t, std::uint64_t>> tokens;
  tokens.reserve(token_ids.size());
  std::unordered_set<std::uint32_t> seen;
  for (const std::uint32_t id : token_ids)
    if (seen.insert(id).second) tokens.emplace_back(id, 1);
  return embed_document(
      std::span<const std::pair<std::uint32_t, std::uint64_t>>(tokens), table,
      projector, jl);
}

}  // namespace isoret
