#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "isoret/config.hpp"
#include "isoret/embed.hpp"
#include "isoret/embedding_table.hpp"
#include "isoret/expand.hpp"
#include "isoret/index.hpp"
#include "isoret/metrics.hpp"
#include "isoret/pipeline.hpp"
#include "isoret/search.hpp"
#include "isoret/sidecar.hpp"
#include "isoret/vocabulary.hpp"

// Command-line front end. Machine-readable results go to stdout (TSV or
// JSON lines); diagnostics and progress go to stderr. Exit code 0 means
// every requested operation succeeded.

namespace {

using namespace isoret;

struct CommonFlags {
  std::string config_path;
  std::optional<std::string> table;
  std::optional<std::string> sidecar;
  std::optional<std::string> index_dir;
  std::optional<std::uint64_t> jl_seed;
  std::optional<std::uint64_t> min_count;
  std::optional<unsigned> workers;
  std::optional<std::string> nuisance_axes;
  std::optional<std::string> expander_mode;
  std::optional<std::string> expander_url;
  std::optional<std::string> expander_fixture;
  std::optional<std::string> expander_transcript;
  std::optional<std::string> expander_record;
  std::optional<int> expander_timeout_ms;
};

void add_common_flags(CLI::App& cmd, CommonFlags& f) {
  cmd.add_option("-c,--config", f.config_path, "JSON config file");
  cmd.add_option("--table", f.table, "base embedding table");
  cmd.add_option("--sidecar", f.sidecar, "token-count sidecar");
  cmd.add_option("--index-dir", f.index_dir, "index bundle directory");
  cmd.add_option("--seed", f.jl_seed, "sign-projection seed");
  cmd.add_option("--min-count", f.min_count, "vocabulary count floor");
  cmd.add_option("--workers", f.workers, "worker thread count");
  cmd.add_option("--nuisance-axes", f.nuisance_axes,
                 "extra nuisance axes, one per line");
  cmd.add_option("--expander", f.expander_mode,
                 "expander mode: stub, remote or transcript");
  cmd.add_option("--expander-url", f.expander_url, "remote expander endpoint");
  cmd.add_option("--expander-fixture", f.expander_fixture,
                 "stub fixture JSON file");
  cmd.add_option("--expander-transcript", f.expander_transcript,
                 "transcript to replay");
  cmd.add_option("--expander-record", f.expander_record,
                 "transcript capture file");
  cmd.add_option("--expander-timeout-ms", f.expander_timeout_ms,
                 "remote expander timeout");
}

Config resolve_config(const CommonFlags& f) {
  Config cfg = f.config_path.empty() ? Config::from_environment()
                                     : Config::load(f.config_path);
  if (f.table) cfg.table = *f.table;
  if (f.sidecar) cfg.sidecar = *f.sidecar;
  if (f.index_dir) cfg.index_dir = *f.index_dir;
  if (f.jl_seed) cfg.jl_seed = *f.jl_seed;
  if (f.min_count) cfg.min_count = *f.min_count;
  if (f.workers) cfg.workers = *f.workers;
  if (f.nuisance_axes) cfg.nuisance_axes = *f.nuisance_axes;
  if (f.expander_mode) cfg.expander_mode = *f.expander_mode;
  if (f.expander_url) {
    cfg.expander_url = *f.expander_url;
    if (!f.expander_mode) cfg.expander_mode = "remote";
  }
  if (f.expander_fixture) cfg.expander_fixture = *f.expander_fixture;
  if (f.expander_transcript) cfg.expander_transcript = *f.expander_transcript;
  if (f.expander_record) cfg.expander_record = *f.expander_record;
  if (f.expander_timeout_ms) cfg.expander_timeout_ms = *f.expander_timeout_ms;
  return cfg;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

/// Everything the query side needs, loaded once.
struct QueryResources {
  EmbeddingTable table;
  IndexBundle bundle;
  TokenEmbeddings resolved;
  ProjectorXd projector;
  JlMatrix<double> jl;
};

QueryResources load_query_resources(const Config& cfg) {
  if (cfg.table.empty()) throw std::invalid_argument("missing table path");
  if (cfg.index_dir.empty())
    throw std::invalid_argument("missing index_dir path");
  EmbeddingTable table = EmbeddingTable::load(cfg.table);
  IndexBundle bundle = open_index(cfg.index_dir);
  if (bundle.header().base_dim != static_cast<std::uint32_t>(table.dim()))
    throw DimensionMismatch(bundle.header().base_dim, table.dim());
  std::vector<BaseVector> axes;
  if (!cfg.nuisance_axes.empty())
    axes = load_nuisance_axes(cfg.nuisance_axes, table.dim());
  ProjectorXd projector =
      derive_projector(table, bundle.vocabulary(), axes);
  auto jl = JlMatrix<double>::generate(bundle.header().jl_seed, table.dim());
  TokenEmbeddings resolved =
      TokenEmbeddings::resolve(table, bundle.vocabulary());
  return QueryResources{std::move(table), std::move(bundle),
                        std::move(resolved), std::move(projector),
                        std::move(jl)};
}

ExpansionRequest make_request(const Config& cfg, const std::string& text) {
  ExpansionRequest req;
  req.query_text = text;
  req.min_phrases = cfg.min_phrases;
  req.max_phrases = cfg.max_phrases;
  req.max_words = cfg.max_words;
  req.min_corpus_count = cfg.min_corpus_count;
  return req;
}

/// Text to token ids through the expansion pipeline.
std::vector<std::uint32_t> expand_to_ids(const Config& cfg,
                                         const QueryResources& res,
                                         const std::string& text,
                                         PhraseSet* phrases_out = nullptr) {
  auto expander = make_expander(cfg);
  const ExpansionRequest req = make_request(cfg, text);
  PhraseSet set = expand(req, *expander);
  if (set.under_expanded)
    std::cerr << "warning: expander returned only " << set.phrases.size()
              << " phrases for \"" << text << "\"\n";
  set = merge_synonyms(set, res.table, res.projector, res.jl, cfg.merge_tau);
  auto ids =
      filter_by_vocabulary(set, res.bundle.vocabulary(), req.min_corpus_count);
  if (phrases_out) *phrases_out = std::move(set);
  return ids;
}

std::vector<std::uint32_t> tokens_to_ids(const QueryResources& res,
                                         const std::vector<std::string>& tokens) {
  std::vector<std::uint32_t> ids;
  ids.reserve(tokens.size());
  for (const std::string& t : tokens) {
    const auto id = res.bundle.vocabulary().id_of(t);
    if (!id) throw UnknownToken(t);
    ids.push_back(*id);
  }
  return ids;
}

int cmd_build(const CommonFlags& flags) {
  const Config cfg = resolve_config(flags);
  if (cfg.table.empty()) throw std::invalid_argument("missing table path");
  if (cfg.sidecar.empty()) throw std::invalid_argument("missing sidecar path");
  if (cfg.index_dir.empty())
    throw std::invalid_argument("missing index_dir path");

  const EmbeddingTable table = EmbeddingTable::load(cfg.table);
  SidecarReader counter(cfg.sidecar);
  const Vocabulary vocab = build_vocabulary(counter, cfg.min_count);
  std::vector<BaseVector> axes;
  if (!cfg.nuisance_axes.empty())
    axes = load_nuisance_axes(cfg.nuisance_axes, table.dim());
  const ProjectorXd projector = derive_projector(table, vocab, axes);

  BuildOptions opt;
  opt.jl_seed = cfg.jl_seed;
  opt.min_count = cfg.min_count;
  opt.workers = cfg.workers;
  const BuildReport report =
      build_index(cfg.sidecar, table, projector, opt, cfg.index_dir, &vocab);
  std::cout << report.to_json() << '\n';
  return 0;
}

int cmd_search(const CommonFlags& flags, const std::string& text,
               const std::vector<std::string>& tokens, std::size_t k,
               bool rerank) {
  const Config cfg = resolve_config(flags);
  const QueryResources res = load_query_resources(cfg);

  if (text.empty() == tokens.empty())
    throw std::invalid_argument("give exactly one of --text or --tokens");
  const std::vector<std::uint32_t> ids =
      text.empty() ? tokens_to_ids(res, tokens)
                   : expand_to_ids(cfg, res, text);

  const QuantizedVector query =
      query_vector(ids, res.resolved, res.projector, res.jl);
  const auto hits = knn_parallel(res.bundle, query, k, cfg.workers);

  if (!rerank) {
    for (const SearchHit& h : hits)
      std::cout << h.rank << '\t' << h.doc_id << '\t' << fmt_double(h.score)
                << '\n';
    return 0;
  }
  if (cfg.sidecar.empty())
    throw std::invalid_argument("rerank needs the sidecar path");
  const auto reranked = rerank_max_dot(hits, ids, res.bundle, cfg.sidecar);
  for (const RerankedHit& h : reranked)
    std::cout << h.rank << '\t' << h.doc_id << '\t'
              << fmt_double(h.rerank_score) << '\t'
              << fmt_double(h.base_score) << '\n';
  return 0;
}

int cmd_expand(const CommonFlags& flags, const std::string& text,
               bool show_ids) {
  const Config cfg = resolve_config(flags);
  const QueryResources res = load_query_resources(cfg);
  PhraseSet set;
  const auto ids = expand_to_ids(cfg, res, text, &set);
  if (!show_ids) {
    for (const Phrase& p : set.phrases)
      std::cout << p.text << '\t'
                << (p.source == PhraseSource::kMerged ? "merged" : "model")
                << '\n';
  } else {
    for (const std::uint32_t id : ids)
      std::cout << id << '\t' << res.bundle.vocabulary().token(id) << '\n';
  }
  return 0;
}

int cmd_eval(const CommonFlags& flags, const std::string& queries_path,
             std::optional<std::size_t> k_flag) {
  const Config cfg = resolve_config(flags);
  const QueryResources res = load_query_resources(cfg);

  std::ifstream in(queries_path);
  if (!in) throw IoFailure("cannot open queries " + queries_path);

  // <query-id>\t<form-name>\t<text>, grouped by query id in file order.
  std::vector<std::string> order;
  std::map<std::string, std::map<std::string, std::string>> grouped;
  std::string line;
  std::uint64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw MalformedRecord(line_no, "expected <id>\\t<form>\\t<text>");
    const std::string id = line.substr(0, t1);
    const std::string form = line.substr(t1 + 1, t2 - t1 - 1);
    const std::string text = line.substr(t2 + 1);
    if (id.empty() || form.empty() || text.empty())
      throw MalformedRecord(line_no, "empty field");
    if (!grouped.contains(id)) order.push_back(id);
    if (!grouped[id].emplace(form, text).second)
      throw MalformedRecord(line_no, "duplicate form \"" + form +
                                         "\" for query " + id);
  }
  if (order.empty())
    throw IoFailure("queries file " + queries_path + " has no records");

  EvaluateOptions opt;
  opt.k = k_flag.value_or(cfg.eval_k);
  opt.workers = cfg.workers;
  opt.isotropy_sample = cfg.isotropy_sample;
  opt.isotropy_seed = cfg.isotropy_seed;

  int failures = 0;
  std::vector<MetricsReport> done;
  for (const std::string& id : order) {
    nlohmann::json out;
    out["query_id"] = id;
    try {
      std::map<std::string, QuantizedVector> forms;
      for (const auto& [form, text] : grouped[id]) {
        const auto ids = expand_to_ids(cfg, res, text);
        forms.emplace(form,
                      query_vector(ids, res.resolved, res.projector, res.jl));
      }
      MetricsReport report = evaluate(forms, res.bundle, opt);
      out["report"] = nlohmann::json::parse(report.to_json());
      done.push_back(std::move(report));
    } catch (const Error& e) {
      out["error"] = e.what();
      ++failures;
    }
    std::cout << out.dump() << '\n';
  }

  // Closing line: means over the queries that produced a report.
  nlohmann::json agg;
  agg["queries"] = order.size();
  agg["failed"] = failures;
  if (!done.empty()) {
    const auto mean = [&](auto pick) {
      double sum = 0.0;
      for (const MetricsReport& r : done) sum += pick(r);
      return sum / static_cast<double>(done.size());
    };
    nlohmann::json a;
    a["head_cosine"] = mean([](const auto& r) { return r.head_cosine; });
    a["centroid_closure"] =
        mean([](const auto& r) { return r.centroid_closure; });
    a["isotropy_score"] = mean([](const auto& r) { return r.isotropy_score; });
    double csum = 0.0;
    std::size_t cn = 0;
    for (const MetricsReport& r : done)
      if (r.compactness) {
        csum += *r.compactness;
        ++cn;
      }
    a["compactness"] =
        cn ? nlohmann::json(csum / static_cast<double>(cn)) : nlohmann::json();
    double jsum = 0.0;
    std::size_t jn = 0;
    for (const MetricsReport& r : done)
      for (const auto& kv : r.jaccard) {
        jsum += kv.second;
        ++jn;
      }
    a["jaccard"] =
        jn ? nlohmann::json(jsum / static_cast<double>(jn)) : nlohmann::json();
    a["random_baseline"] = done.front().random_baseline;
    agg["aggregate"] = std::move(a);
  }
  std::cout << agg.dump() << '\n';
  return failures == 0 ? 0 : 1;
}

// Norm and the largest-magnitude coordinates of one stored int8 row.
nlohmann::json summarize_row(const std::int8_t* row) {
  double sq = 0.0;
  for (std::size_t i = 0; i < kReducedDim; ++i)
    sq += static_cast<double>(row[i]) * static_cast<double>(row[i]);
  std::vector<std::size_t> order(kReducedDim);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + 5, order.end(),
                    [&](std::size_t a, std::size_t b) {
                      const int ma = std::abs(static_cast<int>(row[a]));
                      const int mb = std::abs(static_cast<int>(row[b]));
                      return ma != mb ? ma > mb : a < b;
                    });
  nlohmann::json top = nlohmann::json::array();
  for (std::size_t i = 0; i < 5; ++i)
    top.push_back({{"coord", order[i]}, {"value", row[order[i]]}});
  return {{"norm", std::sqrt(sq)}, {"top", std::move(top)}};
}

int cmd_inspect(const CommonFlags& flags, std::optional<std::uint64_t> doc,
                const std::string& token) {
  const Config cfg = resolve_config(flags);
  const IndexBundle bundle = open_index(cfg.index_dir);
  nlohmann::json out;
  if (doc.has_value() == !token.empty())
    throw std::invalid_argument("give exactly one of --doc or --token");
  const IndexHeader& h = bundle.header();
  out["header"] = {{"version", h.version},       {"base_dim", h.base_dim},
                   {"jl_seed", h.jl_seed},       {"doc_count", h.doc_count},
                   {"token_count", h.token_count}, {"min_count", h.min_count}};
  if (doc) {
    const auto row = bundle.row_of(*doc);
    if (!row) throw UnknownDocId(*doc);
    const DocLocator loc = bundle.locator(*row);
    out["doc_id"] = *doc;
    out["row"] = *row;
    out["byte_offset"] = loc.byte_offset;
    out["byte_length"] = loc.byte_length;
    out["vector"] = summarize_row(bundle.doc_row(*row));
    if (bundle.doc_row_is_zero(*row)) out["empty_representation"] = true;
    out["zero"] = bundle.doc_row_is_zero(*row);
    if (!cfg.sidecar.empty()) {
      nlohmann::json toks = nlohmann::json::array();
      for (const auto& [id, count] : fetch_doc_tokens(bundle, cfg.sidecar, *doc))
        toks.push_back({{"id", id},
                        {"token", bundle.vocabulary().token(id)},
                        {"count", count}});
      out["tokens"] = std::move(toks);
    }
  } else {
    const auto id = bundle.vocabulary().id_of(token);
    if (!id) throw UnknownToken(token);
    out["token"] = token;
    out["id"] = *id;
    out["corpus_count"] = bundle.vocabulary().corpus_count(*id);
    out["vector"] = summarize_row(bundle.token_row(*id));
    if (bundle.token_row_is_zero(*id)) out["empty_representation"] = true;
    out["zero"] = bundle.token_row_is_zero(*id);
  }
  std::cout << out.dump() << '\n';
  return 0;
}

int cmd_synth_table(const std::string& sidecar, const std::string& out_path,
                    Eigen::Index dim, std::uint64_t min_count) {
  SidecarReader reader(sidecar);
  const Vocabulary vocab = build_vocabulary(reader, min_count);
  EmbeddingTable table(dim);
  for (std::uint32_t id = 0; id < vocab.size(); ++id)
    table.add(vocab.token(id),
              EmbeddingTable::hashed_vector(vocab.token(id), dim)
                  .cast<float>());
  table.save(out_path);
  nlohmann::json out;
  out["tokens"] = table.size();
  out["dim"] = dim;
  out["path"] = out_path;
  std::cout << out.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense retrieval over a fixed mean-free linear transform"};
  app.require_subcommand(1);

  CommonFlags build_flags;
  auto* build = app.add_subcommand("build", "build an index bundle");
  add_common_flags(*build, build_flags);

  CommonFlags search_flags;
  std::string search_text;
  std::vector<std::string> search_tokens;
  std::size_t search_k = 10;
  bool search_rerank = false;
  auto* search = app.add_subcommand("search", "query an index");
  add_common_flags(*search, search_flags);
  search->add_option("--text", search_text, "free-text query (expanded)");
  search->add_option("--tokens", search_tokens,
                     "vocabulary tokens, comma separated")
      ->delimiter(',');
  search->add_option("-k,--k", search_k, "hits to return");
  search->add_flag("--rerank", search_rerank, "rerank by token agreement");

  CommonFlags expand_flags;
  std::string expand_text;
  bool expand_ids = false;
  auto* expand_cmd = app.add_subcommand("expand", "expand a query to phrases");
  add_common_flags(*expand_cmd, expand_flags);
  expand_cmd->add_option("--text", expand_text, "free-text query")
      ->required();
  expand_cmd->add_flag("--ids", expand_ids,
                       "print vocabulary token ids instead of phrases");

  CommonFlags eval_flags;
  std::string eval_queries;
  std::optional<std::size_t> eval_k;
  auto* eval_cmd = app.add_subcommand("eval", "metrics over a query file");
  add_common_flags(*eval_cmd, eval_flags);
  eval_cmd->add_option("--queries", eval_queries,
                       "file of <id>\\t<form>\\t<text> lines")
      ->required();
  eval_cmd->add_option("-k,--k", eval_k, "hits per query form");

  CommonFlags inspect_flags;
  std::optional<std::uint64_t> inspect_doc;
  std::string inspect_token;
  auto* inspect = app.add_subcommand("inspect", "look up a doc or token");
  add_common_flags(*inspect, inspect_flags);
  inspect->add_option("--doc", inspect_doc, "document id");
  inspect->add_option("--token", inspect_token, "vocabulary token");

  std::string synth_sidecar, synth_out;
  Eigen::Index synth_dim = 300;
  std::uint64_t synth_min_count = 1;
  auto* synth = app.add_subcommand(
      "synth-table", "hashed fallback embedding table from a sidecar");
  synth->add_option("--sidecar", synth_sidecar, "token-count sidecar")
      ->required();
  synth->add_option("--out", synth_out, "output table path")->required();
  synth->add_option("--dim", synth_dim, "base dimension");
  synth->add_option("--min-count", synth_min_count, "token count floor");

  CLI11_PARSE(app, argc, argv);

  try {
    if (build->parsed()) return cmd_build(build_flags);
    if (search->parsed())
      return cmd_search(search_flags, search_text, search_tokens, search_k,
                        search_rerank);
    if (expand_cmd->parsed())
      return cmd_expand(expand_flags, expand_text, expand_ids);
    if (eval_cmd->parsed()) return cmd_eval(eval_flags, eval_queries, eval_k);
    if (inspect->parsed())
      return cmd_inspect(inspect_flags, inspect_doc, inspect_token);
    if (synth->parsed())
      return cmd_synth_table(synth_sidecar, synth_out, synth_dim,
                             synth_min_count);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
