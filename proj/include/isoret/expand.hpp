#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "isoret/embed.hpp"
#include "isoret/embedding_table.hpp"
#include "isoret/vocabulary.hpp"

// Query expansion. A language model (or a stand-in) turns a free-text query
// into candidate phrases; the phrases are normalized, near-duplicates are
// merged, and the survivors are mapped to vocabulary token ids that feed
// the same document transform as indexing.
//
// Wire format (HTTP POST, JSON):
//   request   {"query": "...", "min": 20, "max": 60, "max_words": 4}
//   response  {"phrases": ["...", ...]}

namespace isoret {

struct ExpansionRequest {
  std::string query_text;
  int min_phrases = 20;
  int max_phrases = 60;
  int max_words = 4;
  // Corpus-frequency floor applied later by filter_by_vocabulary; carried
  // here so a request object fully describes one expansion run.
  std::uint64_t min_corpus_count = 50;
};

enum class PhraseSource { kModel, kMerged };

struct Phrase {
  std::string text;
  PhraseSource source = PhraseSource::kModel;

  bool operator==(const Phrase&) const = default;
};

struct PhraseSet {
  std::vector<Phrase> phrases;
  std::string provenance;
  // True when the model produced fewer than min_phrases usable phrases.
  // The set is still usable; callers decide whether to warn.
  bool under_expanded = false;
};

/// Produces raw candidate phrases for a query. Implementations signal any
/// delivery problem with ExpanderUnavailable.
class Expander {
 public:
  virtual ~Expander() = default;
  virtual std::vector<std::string> expand_raw(const ExpansionRequest& req) = 0;
  /// Short origin label recorded in PhraseSet::provenance.
  virtual std::string provenance() const = 0;
};

/// Canonical serialization of a request; also the transcript lookup key.
std::string serialize_request(const ExpansionRequest& req);

/// Parses a response body; throws ExpanderUnavailable when it is not the
/// documented shape.
std::vector<std::string> parse_expansion_response(const std::string& body);

/// Deterministic fixture-backed expander: a JSON object mapping each query
/// text to its phrase array. Unknown queries raise ExpanderUnavailable.
class StubExpander : public Expander {
 public:
  explicit StubExpander(const std::filesystem::path& fixture);
  std::vector<std::string> expand_raw(const ExpansionRequest& req) override;
  std::string provenance() const override;

 private:
  struct Data;
  std::shared_ptr<Data> data_;
};

/// Talks to a live endpoint. Retries once with the identical payload on
/// delivery failure. When a transcript path is set, every exchange is
/// appended verbatim as one JSON line {"request": ..., "response": ...}.
class RemoteExpander : public Expander {
 public:
  struct Options {
    std::string url;  // full endpoint, e.g. http://host:8080/expand
    int timeout_ms = 10000;
    int retries = 1;
    std::filesystem::path transcript;  // empty = no recording
  };

  explicit RemoteExpander(Options options);
  std::vector<std::string> expand_raw(const ExpansionRequest& req) override;
  std::string provenance() const override;

 private:
  Options options_;
};

/// Replays a recorded transcript: identical requests yield the recorded
/// responses byte for byte. Requests that were never recorded raise
/// ExpanderUnavailable.
class TranscriptExpander : public Expander {
 public:
  explicit TranscriptExpander(const std::filesystem::path& transcript);
  std::vector<std::string> expand_raw(const ExpansionRequest& req) override;
  std::string provenance() const override;

 private:
  struct Data;
  std::shared_ptr<Data> data_;
};

/// ASCII-lowercases and collapses whitespace runs to single spaces.
std::string normalize_phrase(std::string_view raw);

/// Runs the expander and normalizes its output: lowercase, whitespace
/// collapsed, phrases over max_words dropped, duplicates removed keeping
/// first occurrence, truncated to max_phrases. Throws EmptyExpansion when
/// nothing survives.
PhraseSet expand(const ExpansionRequest& req, Expander& expander);

/// Merges phrases whose embeddings reach cosine >= tau into one entry
/// (single linkage), keeping the lexicographically smallest text. Phrases
/// that cannot be embedded stay as they are. Output is sorted by text, so
/// applying the merge twice changes nothing.
PhraseSet merge_synonyms(const PhraseSet& phrases, const EmbeddingTable& table,
                         const ProjectorXd& projector,
                         const JlMatrix<double>& jl, double tau);

/// Maps phrases to vocabulary token ids: the underscore-joined form when it
/// clears min_corpus_count, otherwise each individual word that does.
/// Duplicate ids keep their first position. Throws AllPhrasesFiltered when
/// nothing maps.
std::vector<std::uint32_t> filter_by_vocabulary(const PhraseSet& phrases,
                                                const Vocabulary& vocab,
                                                std::uint64_t min_corpus_count);

/// Embeds the selected tokens as a document with count 1 per distinct id.
QuantizedVector query_vector(std::span<const std::uint32_t> token_ids,
                             const TokenEmbeddings& table,
                             const ProjectorXd& projector,
                             const JlMatrix<double>& jl);

}  // namespace isoret
