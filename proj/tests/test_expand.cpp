#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

// Eigen must be included before httplib: httplib pulls in <resolv.h>,
// whose _res macro mangles parameter names inside Eigen's product kernels.
#include "isoret/expand.hpp"
#include "test_util.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

using namespace isoret;
using testutil::TempDir;

namespace {

// Expander fed from a literal list; lets the pipeline be tested without
// fixtures or sockets.
class ListExpander : public Expander {
 public:
  explicit ListExpander(std::vector<std::string> phrases)
      : phrases_(std::move(phrases)) {}
  std::vector<std::string> expand_raw(const ExpansionRequest&) override {
    return phrases_;
  }
  std::string provenance() const override { return "list"; }

 private:
  std::vector<std::string> phrases_;
};

ExpansionRequest request(const std::string& text, int min = 1, int max = 60,
                         int max_words = 4) {
  ExpansionRequest req;
  req.query_text = text;
  req.min_phrases = min;
  req.max_phrases = max;
  req.max_words = max_words;
  return req;
}

std::vector<std::string> texts(const PhraseSet& set) {
  std::vector<std::string> out;
  for (const Phrase& p : set.phrases) out.push_back(p.text);
  return out;
}

constexpr Eigen::Index kDim = 300;

// Vector orthogonal to e0 so the mean-direction projector leaves it alone.
BaseVector flat_unit(std::mt19937_64& rng) {
  BaseVector v = testutil::random_unit(rng, kDim);
  v[0] = 0.0;
  return v.normalized();
}

BaseVector axis(Eigen::Index i) {
  BaseVector v = BaseVector::Zero(kDim);
  v[i] = 1.0;
  return v;
}

}  // namespace

TEST_CASE("request serialization is canonical") {
  const ExpansionRequest req = request("glioma stem cells", 20, 60, 4);
  const std::string body = serialize_request(req);
  CHECK(body ==
        R"({"max":60,"max_words":4,"min":20,"query":"glioma stem cells"})");
  CHECK(serialize_request(req) == body);
}

TEST_CASE("response parsing accepts the documented shape only") {
  CHECK(parse_expansion_response(R"({"phrases":["a","b"]})") ==
        std::vector<std::string>{"a", "b"});
  CHECK(parse_expansion_response(R"({"phrases":[]})").empty());

  for (const char* bad :
       {"", "not json", "[]", R"({"phrase":["a"]})", R"({"phrases":"a"})",
        R"({"phrases":[1]})", R"({"phrases":[["a"]]})"})
    CHECK_THROWS_AS(parse_expansion_response(bad), ExpanderUnavailable);
}

TEST_CASE("phrase normalization lowercases and collapses whitespace") {
  CHECK(normalize_phrase("  TOK9   Extra\tSPACES ") == "tok9 extra spaces");
  CHECK(normalize_phrase("already clean") == "already clean");
  CHECK(normalize_phrase(" \t \n ").empty());
  CHECK(normalize_phrase("M\xC3\xBCller Cells") == "m\xC3\xBCller cells");
}

TEST_CASE("expansion requests are validated") {
  ListExpander expander({"a"});
  CHECK_THROWS_AS(expand(request(""), expander), std::invalid_argument);
  CHECK_THROWS_AS(expand(request("q", 5, 4), expander), std::invalid_argument);
  CHECK_THROWS_AS(expand(request("q", 0, 4), expander), std::invalid_argument);
  CHECK_THROWS_AS(expand(request("q", 1, 60, 0), expander),
                  std::invalid_argument);
}

TEST_CASE("expansion normalizes, deduplicates, and keeps first occurrences") {
  ListExpander expander({"Glioma  Stem", "glioma stem", "VEGF", "  vegf ",
                         "new phrase"});
  const PhraseSet set = expand(request("q"), expander);
  CHECK(texts(set) ==
        std::vector<std::string>{"glioma stem", "vegf", "new phrase"});
  for (const Phrase& p : set.phrases) CHECK(p.source == PhraseSource::kModel);
  CHECK(set.provenance == "list");
}

TEST_CASE("phrases over the word bound are dropped, at the bound kept") {
  ListExpander expander({"one two three four five six", "one two three four",
                         "short"});
  const PhraseSet set = expand(request("q", 1, 60, 4), expander);
  CHECK(texts(set) ==
        std::vector<std::string>{"one two three four", "short"});
}

TEST_CASE("expansion truncates to max_phrases") {
  ListExpander expander({"a", "b", "c", "d", "e"});
  const PhraseSet set = expand(request("q", 1, 3), expander);
  CHECK(texts(set) == std::vector<std::string>{"a", "b", "c"});
  CHECK(!set.under_expanded);
}

TEST_CASE("falling short of min_phrases flags under-expansion") {
  ListExpander expander({"a", "b"});
  const PhraseSet set = expand(request("q", 5), expander);
  CHECK(set.phrases.size() == 2);
  CHECK(set.under_expanded);
}

TEST_CASE("an expansion with nothing usable is an error") {
  ListExpander expander({"   ", "one two three four five"});
  CHECK_THROWS_AS(expand(request("q", 1, 60, 4), expander), EmptyExpansion);
}

TEST_CASE("stub expander serves its fixture deterministically") {
  TempDir dir("stub");
  nlohmann::json fixture;
  fixture["glioma"] = {"Glioma Stem", "GBM", "glioma stem"};
  testutil::write_file(dir / "stub.json", fixture.dump());

  StubExpander a(dir / "stub.json");
  StubExpander b(dir / "stub.json");
  const PhraseSet first = expand(request("glioma"), a);
  const PhraseSet second = expand(request("glioma"), b);
  CHECK(texts(first) == std::vector<std::string>{"glioma stem", "gbm"});
  CHECK(texts(first) == texts(second));
  CHECK(first.provenance == "stub:stub.json");

  CHECK_THROWS_AS(expand(request("unknown"), a), ExpanderUnavailable);
  CHECK_THROWS_AS(StubExpander(dir / "missing.json"), IoFailure);
}

// --- synonym merging over an engineered geometry ---

namespace {

struct MergeFixture {
  EmbeddingTable table{kDim};
  ProjectorXd projector = build_projector(std::vector<BaseVector>{}, axis(0));
  JlMatrix<double> jl = JlMatrix<double>::generate(9, kDim);

  MergeFixture() {
    std::mt19937_64 rng(23);
    const BaseVector b = flat_unit(rng);
    BaseVector u = flat_unit(rng);
    u = (u - b * b.dot(u)).normalized();  // orthogonal companion
    // aa and ac sit 0.96 from ab but only 0.84 from each other, so only
    // single linkage through ab can join all three.
    table.add("ab", b.cast<float>());
    table.add("aa", (0.96 * b + 0.28 * u).normalized().cast<float>());
    table.add("ac", (0.96 * b - 0.28 * u).normalized().cast<float>());
    table.add("zz", flat_unit(rng).cast<float>());
    const BaseVector dup = flat_unit(rng);
    table.add("dup1", dup.cast<float>());
    table.add("dup2", dup.cast<float>());
  }

  PhraseSet set(std::vector<std::string> phrase_texts) const {
    PhraseSet s;
    for (auto& t : phrase_texts)
      s.phrases.push_back(Phrase{std::move(t), PhraseSource::kModel});
    return s;
  }

  PhraseSet merge(const PhraseSet& s, double tau) const {
    return merge_synonyms(s, table, projector, jl, tau);
  }
};

}  // namespace

TEST_CASE("single linkage joins a chain and keeps the smallest name") {
  const MergeFixture fx;
  const PhraseSet merged =
      fx.merge(fx.set({"zz", "ac", "aa", "ab", "no embed"}), 0.9);

  CHECK(texts(merged) == std::vector<std::string>{"aa", "no embed", "zz"});
  CHECK(merged.phrases[0].source == PhraseSource::kMerged);
  CHECK(merged.phrases[1].source == PhraseSource::kModel);  // unembeddable
  CHECK(merged.phrases[2].source == PhraseSource::kModel);  // solitary

  const PhraseSet again = fx.merge(merged, 0.9);
  CHECK(texts(again) == texts(merged));
  for (std::size_t i = 0; i < again.phrases.size(); ++i)
    CHECK(again.phrases[i].source == merged.phrases[i].source);
}

TEST_CASE("a strict threshold only merges identical embeddings") {
  const MergeFixture fx;
  const PhraseSet merged =
      fx.merge(fx.set({"dup2", "dup1", "aa", "ab", "ac"}), 0.999);

  CHECK(texts(merged) == std::vector<std::string>{"aa", "ab", "ac", "dup1"});
  CHECK(merged.phrases[3].source == PhraseSource::kMerged);
  CHECK(merged.phrases[0].source == PhraseSource::kModel);
}

TEST_CASE("merging embeds multi-word phrases by join or by words") {
  const MergeFixture fx;
  // "joined pair" resolves through the underscore form; a synthetic twin
  // phrase with the same words through word-level embedding should merge
  // with plain "dup1 dup2" only via word vectors.
  const PhraseSet merged = fx.merge(fx.set({"dup1 dup2", "dup2 dup1"}), 0.99);
  REQUIRE(merged.phrases.size() == 1);
  CHECK(merged.phrases[0].text == "dup1 dup2");
  CHECK(merged.phrases[0].source == PhraseSource::kMerged);
}

TEST_CASE("merge threshold must stay inside the open unit interval") {
  const MergeFixture fx;
  const PhraseSet one = fx.set({"aa"});
  CHECK_THROWS_AS(fx.merge(one, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(fx.merge(one, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(fx.merge(one, -0.2), std::invalid_argument);
}

TEST_CASE("vocabulary filtering prefers the joined form") {
  const Vocabulary vocab({{"stem", 100},
                          {"cell", 100},
                          {"stem_cell", 60},
                          {"vegf", 80},
                          {"rare", 49},
                          {"edge", 50}});
  PhraseSet set;
  for (const char* t : {"stem cell", "vegf signaling", "edge", "rare"})
    set.phrases.push_back(Phrase{t, PhraseSource::kModel});

  const auto ids = filter_by_vocabulary(set, vocab, 50);
  REQUIRE(ids.size() == 3);
  CHECK(ids[0] == *vocab.id_of("stem_cell"));  // not stem + cell
  CHECK(ids[1] == *vocab.id_of("vegf"));       // unknown word skipped
  CHECK(ids[2] == *vocab.id_of("edge"));       // count 50 meets the floor
  // "rare" at count 49 fell below it.
}

TEST_CASE("vocabulary filtering deduplicates across phrases") {
  const Vocabulary vocab({{"vegf", 80}, {"kinase", 70}});
  PhraseSet set;
  for (const char* t : {"vegf kinase", "kinase", "vegf"})
    set.phrases.push_back(Phrase{t, PhraseSource::kModel});
  const auto ids = filter_by_vocabulary(set, vocab, 1);
  CHECK(ids == std::vector<std::uint32_t>{*vocab.id_of("vegf"),
                                          *vocab.id_of("kinase")});
}

TEST_CASE("raising the corpus floor never adds tokens") {
  const Vocabulary vocab(
      {{"a", 10}, {"b", 55}, {"c", 80}, {"d", 200}, {"e", 49}});
  PhraseSet set;
  for (const char* t : {"a b", "c", "d e", "e"})
    set.phrases.push_back(Phrase{t, PhraseSource::kModel});

  std::vector<std::uint32_t> previous;
  for (const std::uint64_t floor : {1, 50, 60, 100}) {
    const auto ids = filter_by_vocabulary(set, vocab, floor);
    for (const std::uint32_t id : ids) CHECK(vocab.corpus_count(id) >= floor);
    if (!previous.empty())
      for (const std::uint32_t id : ids)
        CHECK(std::find(previous.begin(), previous.end(), id) !=
              previous.end());
    previous = ids;
  }
}

TEST_CASE("filtering away every phrase is an error naming the phrases") {
  const Vocabulary vocab({{"kept", 100}});
  PhraseSet set;
  set.phrases.push_back(Phrase{"lost cause", PhraseSource::kModel});
  set.phrases.push_back(Phrase{"gone", PhraseSource::kModel});
  try {
    filter_by_vocabulary(set, vocab, 50);
    FAIL("expected AllPhrasesFiltered");
  } catch (const AllPhrasesFiltered& e) {
    const std::string what = e.what();
    CHECK(what.find("lost cause") != std::string::npos);
    CHECK(what.find("gone") != std::string::npos);
  }
}

// --- query vectors ---

namespace {

struct QueryFixture {
  EmbeddingTable table{kDim};
  Vocabulary vocab{{{"qa", 10}, {"qb", 10}, {"qc", 10}, {"meanish", 10}}};
  ProjectorXd projector = build_projector(std::vector<BaseVector>{}, axis(0));
  JlMatrix<double> jl = JlMatrix<double>::generate(9, kDim);

  QueryFixture() {
    std::mt19937_64 rng(37);
    for (const char* name : {"qa", "qb", "qc"})
      table.add(name, testutil::random_unit(rng, kDim).cast<float>());
    table.add("meanish", axis(0).cast<float>());
  }

  TokenEmbeddings resolved() const {
    return TokenEmbeddings::resolve(table, vocab);
  }
};

}  // namespace

TEST_CASE("a single-token query stays next to the stored token vector") {
  const QueryFixture fx;
  const TokenEmbeddings resolved = fx.resolved();
  const std::uint32_t qa = *fx.vocab.id_of("qa");

  const QuantizedVector through_query =
      query_vector(std::vector{qa}, resolved, fx.projector, fx.jl);
  const QuantizedVector direct = quantize(jl_project(
      fx.projector.project(resolved.vector(qa)), fx.jl));

  const int max_gap = (through_query.cast<int>() - direct.cast<int>())
                          .cwiseAbs()
                          .maxCoeff();
  CHECK(max_gap <= 1);
  CHECK(cosine_q(through_query, direct) > 0.999);
}

TEST_CASE("query vectors ignore token order and repetition") {
  const QueryFixture fx;
  const TokenEmbeddings resolved = fx.resolved();
  const auto id = [&](const char* t) { return *fx.vocab.id_of(t); };

  const QuantizedVector plain = query_vector(
      std::vector{id("qa"), id("qb"), id("qc")}, resolved, fx.projector, fx.jl);
  const QuantizedVector shuffled = query_vector(
      std::vector{id("qc"), id("qa"), id("qb"), id("qa"), id("qa")}, resolved,
      fx.projector, fx.jl);
  CHECK((plain.array() == shuffled.array()).all());
}

TEST_CASE("query vectors reject empty or collapsed token sets") {
  const QueryFixture fx;
  const TokenEmbeddings resolved = fx.resolved();
  CHECK_THROWS_AS(query_vector(std::vector<std::uint32_t>{}, resolved,
                               fx.projector, fx.jl),
                  EmptyRepresentation);
  // "meanish" lies on the mean direction, so its projection carries no
  // weight and the query degenerates.
  CHECK_THROWS_AS(query_vector(std::vector{*fx.vocab.id_of("meanish")},
                               resolved, fx.projector, fx.jl),
                  EmptyRepresentation);
}

// --- live wire format ---

namespace {

struct WireServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::mutex mutex;
  std::vector<std::string> bodies;
  std::atomic<int> fail_first{0};  // respond 500 to this many requests

  explicit WireServer(std::vector<std::string> phrases) {
    server.Post("/expand", [this, phrases](const httplib::Request& req,
                                           httplib::Response& res) {
      {
        std::lock_guard<std::mutex> lock(mutex);
        bodies.push_back(req.body);
      }
      if (fail_first.fetch_sub(1) > 0) {
        res.status = 500;
        return;
      }
      nlohmann::json j;
      j["phrases"] = phrases;
      res.set_content(j.dump(), "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }

  ~WireServer() {
    server.stop();
    thread.join();
  }

  std::string url() const {
    return "http://127.0.0.1:" + std::to_string(port) + "/expand";
  }
};

}  // namespace

TEST_CASE("the remote expander speaks the documented wire format") {
  WireServer server({"Glioma Stem", "GBM"});

  RemoteExpander::Options options;
  options.url = server.url();
  options.timeout_ms = 5000;
  RemoteExpander remote(options);

  const ExpansionRequest req = request("glioma", 1, 60, 4);
  const PhraseSet set = expand(req, remote);
  CHECK(texts(set) == std::vector<std::string>{"glioma stem", "gbm"});
  CHECK(set.provenance == "remote:" + server.url());

  REQUIRE(server.bodies.size() == 1);
  CHECK(server.bodies[0] == serialize_request(req));
}

TEST_CASE("a failed delivery is retried once with the identical payload") {
  WireServer server({"phrase"});
  server.fail_first = 1;

  RemoteExpander::Options options;
  options.url = server.url();
  options.timeout_ms = 5000;
  options.retries = 1;
  RemoteExpander remote(options);

  const PhraseSet set = expand(request("q"), remote);
  CHECK(texts(set) == std::vector<std::string>{"phrase"});
  REQUIRE(server.bodies.size() == 2);
  CHECK(server.bodies[0] == server.bodies[1]);
}

TEST_CASE("a persistently failing endpoint raises ExpanderUnavailable") {
  WireServer server({"phrase"});
  server.fail_first = 10;

  RemoteExpander::Options options;
  options.url = server.url();
  options.timeout_ms = 5000;
  options.retries = 1;
  RemoteExpander remote(options);
  CHECK_THROWS_AS(expand(request("q"), remote), ExpanderUnavailable);
  CHECK(server.bodies.size() == 2);  // initial try plus one retry
}

TEST_CASE("an unreachable endpoint raises ExpanderUnavailable") {
  int dead_port = 0;
  {
    WireServer probe({});
    dead_port = probe.port;
  }  // server gone, port released

  RemoteExpander::Options options;
  options.url = "http://127.0.0.1:" + std::to_string(dead_port) + "/expand";
  options.timeout_ms = 1000;
  options.retries = 0;
  RemoteExpander remote(options);
  CHECK_THROWS_AS(expand(request("q"), remote), ExpanderUnavailable);
}

TEST_CASE("a recorded transcript replays the exchange byte for byte") {
  TempDir dir("transcript");
  const auto transcript = dir / "exchanges.jsonl";
  const ExpansionRequest req = request("glioma", 1, 60, 4);

  PhraseSet live;
  {
    WireServer server({"Glioma Stem", "GBM", "glioma stem"});
    RemoteExpander::Options options;
    options.url = server.url();
    options.timeout_ms = 5000;
    options.transcript = transcript;
    RemoteExpander remote(options);
    live = expand(req, remote);
  }

  const std::string recorded = testutil::read_file(transcript);
  CHECK(std::count(recorded.begin(), recorded.end(), '\n') == 1);
  const auto line = nlohmann::json::parse(recorded);
  CHECK(line.at("request").get<std::string>() == serialize_request(req));

  TranscriptExpander replay(transcript);
  const PhraseSet replayed = expand(req, replay);
  CHECK(texts(replayed) == texts(live));
  CHECK(replayed.under_expanded == live.under_expanded);
  CHECK(replay.provenance() == "transcript:exchanges.jsonl");

  CHECK_THROWS_AS(expand(request("never recorded"), replay),
                  ExpanderUnavailable);
}

TEST_CASE("later transcript entries override earlier ones") {
  TempDir dir("transcript2");
  const auto path = dir / "t.jsonl";
  const std::string key = serialize_request(request("q"));
  nlohmann::json first;
  first["request"] = key;
  first["response"] = R"({"phrases":["old"]})";
  nlohmann::json second;
  second["request"] = key;
  second["response"] = R"({"phrases":["new"]})";
  testutil::write_file(path, first.dump() + "\n" + second.dump() + "\n");

  TranscriptExpander replay(path);
  CHECK(texts(expand(request("q"), replay)) ==
        std::vector<std::string>{"new"});
}
