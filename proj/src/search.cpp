#include "isoret/search.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <thread>

namespace isoret {

namespace {

struct Candidate {
  double score;
  std::uint64_t doc_id;
};

bool better(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.doc_id < b.doc_id;
}

/// Exact top-k over rows [lo, hi). The heap's top is the worst kept
/// candidate under the total order above.
std::vector<Candidate> scan_rows(const IndexBundle& bundle,
                                 const Eigen::Matrix<std::int32_t, kReducedDim, 1>& q,
                                 double query_norm2, std::size_t k,
                                 std::uint64_t lo, std::uint64_t hi) {
  std::priority_queue<Candidate, std::vector<Candidate>,
                      bool (*)(const Candidate&, const Candidate&)>
      kept(&better);
  for (std::uint64_t row = lo; row < hi; ++row) {
    const Eigen::Map<const QuantizedVector> v(bundle.doc_row(row));
    const Eigen::Matrix<std::int32_t, kReducedDim, 1> vi =
        v.cast<std::int32_t>();
    const std::int32_t norm2 = vi.squaredNorm();
    if (norm2 == 0) continue;
    const double score = static_cast<double>(vi.dot(q)) /
                         std::sqrt(static_cast<double>(norm2) * query_norm2);
    const Candidate c{score, bundle.doc_id(row)};
    if (kept.size() < k) {
      kept.push(c);
    } else if (better(c, kept.top())) {
      kept.pop();
      kept.push(c);
    }
  }
  std::vector<Candidate> out;
  out.reserve(kept.size());
  while (!kept.empty()) {
    out.push_back(kept.top());
    kept.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<SearchHit> to_hits(std::vector<Candidate> candidates,
                               std::size_t k) {
  std::sort(candidates.begin(), candidates.end(), better);
  if (candidates.size() > k) candidates.resize(k);
  std::vector<SearchHit> hits;
  hits.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i)
    hits.push_back(SearchHit{candidates[i].doc_id, candidates[i].score,
                             static_cast<std::uint32_t>(i + 1)});
  return hits;
}

Eigen::Matrix<std::int32_t, kReducedDim, 1> widen_query(
    const QuantizedVector& query) {
  const Eigen::Matrix<std::int32_t, kReducedDim, 1> q =
      query.cast<std::int32_t>();
  if (q.squaredNorm() == 0) throw ZeroQuery("query vector is all zero");
  return q;
}

}  // namespace

std::vector<SearchHit> knn(const IndexBundle& bundle,
                           const QuantizedVector& query, std::size_t k) {
  if (k == 0) throw std::invalid_argument("k must be >= 1");
  const auto q = widen_query(query);
  const double qn2 = static_cast<double>(q.squaredNorm());
  return to_hits(scan_rows(bundle, q, qn2, k, 0, bundle.doc_count()), k);
}

std::vector<SearchHit> knn_parallel(const IndexBundle& bundle,
                                    const QuantizedVector& query,
                                    std::size_t k, unsigned workers) {
  if (k == 0) throw std::invalid_argument("k must be >= 1");
  if (workers == 0) throw std::invalid_argument("workers must be >= 1");
  const auto q = widen_query(query);
  const double qn2 = static_cast<double>(q.squaredNorm());

  const std::uint64_t n = bundle.doc_count();
  const auto shards = static_cast<std::uint64_t>(workers);
  if (workers == 1 || n < 2 * shards)
    return to_hits(scan_rows(bundle, q, qn2, k, 0, n), k);

  const std::uint64_t chunk = (n + shards - 1) / shards;
  std::vector<std::vector<Candidate>> partial(shards);
  std::vector<std::thread> pool;
  pool.reserve(shards);
  for (std::uint64_t s = 0; s < shards; ++s) {
    const std::uint64_t lo = s * chunk;
    const std::uint64_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, s, lo, hi] {
      partial[s] = scan_rows(bundle, q, qn2, k, lo, hi);
    });
  }
  for (auto& t : pool) t.join();

  std::vector<Candidate> merged;
  for (auto& p : partial)
    merged.insert(merged.end(), p.begin(), p.end());
  return to_hits(std::move(merged), k);
}

std::vector<RerankedHit> rerank_max_dot(std::span<const SearchHit> hits,
                                        std::span<const std::uint32_t> query_token_ids,
                                        const IndexBundle& bundle,
                                        const std::filesystem::path& sidecar) {
  std::vector<std::uint32_t> ids(query_token_ids.begin(),
                                 query_token_ids.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.empty()) throw std::invalid_argument("no query tokens to rerank by");
  for (const std::uint32_t id : ids)
    if (id >= bundle.token_count()) throw UnknownTokenId(id);

  // Query tokens whose stored vector is all zero cannot score anything and
  // are dropped; a query with no scorable token at all cannot rerank.
  std::vector<Eigen::Map<const QuantizedVector>> query_vecs;
  query_vecs.reserve(ids.size());
  for (const std::uint32_t id : ids)
    if (!bundle.token_row_is_zero(id)) query_vecs.push_back(bundle.token_vector(id));
  if (query_vecs.empty())
    throw EmptyRepresentation("every query token has a zero vector");

  std::ifstream side(sidecar, std::ios::binary);
  if (!side) throw IoFailure("cannot open sidecar " + sidecar.string());

  std::vector<RerankedHit> out;
  out.reserve(hits.size());
  for (const SearchHit& hit : hits) {
    const auto doc_tokens = fetch_doc_tokens(bundle, side, hit.doc_id);
    std::vector<std::uint32_t> doc_ids;
    doc_ids.reserve(doc_tokens.size());
    for (const auto& [id, count] : doc_tokens)
      if (!bundle.token_row_is_zero(id)) doc_ids.push_back(id);
    std::sort(doc_ids.begin(), doc_ids.end());
    doc_ids.erase(std::unique(doc_ids.begin(), doc_ids.end()), doc_ids.end());

    double score = -1.0;
    if (!doc_ids.empty()) {
      double sum = 0.0;
      for (const auto& qv : query_vecs) {
        double best = -1.0;
        for (const std::uint32_t id : doc_ids)
          best = std::max(best, cosine_q(qv, bundle.token_vector(id)));
        sum += best;
      }
      score = sum / static_cast<double>(query_vecs.size());
    }
    out.push_back(RerankedHit{hit.doc_id, hit.score, score, 0});
  }

  std::sort(out.begin(), out.end(),
            [](const RerankedHit& a, const RerankedHit& b) {
              if (a.rerank_score != b.rerank_score)
                return a.rerank_score > b.rerank_score;
              if (a.base_score != b.base_score)
                return a.base_score > b.base_score;
              return a.doc_id < b.doc_id;
            });
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i].rank = static_cast<std::uint32_t>(i + 1);
  return out;
}

}  // namespace isoret
