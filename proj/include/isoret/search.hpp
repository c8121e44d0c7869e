#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <span>
#include <vector>

#include "isoret/embed.hpp"
#include "isoret/index.hpp"

// Exact cosine search over the quantized rows. Results are ordered by
// score descending with doc id ascending as the tie break, which makes the
// ranking a total order: any two scans of the same index return the same
// hits in the same order, whatever the worker count.

namespace isoret {

struct SearchHit {
  std::uint64_t doc_id = 0;
  double score = 0.0;
  std::uint32_t rank = 0;  // 1-based
};

struct RerankedHit {
  std::uint64_t doc_id = 0;
  double base_score = 0.0;
  double rerank_score = 0.0;
  std::uint32_t rank = 0;  // 1-based, after reranking
};

/// Exact top-k scan. Zero rows never match. Fewer than k hits are returned
/// only when the index has fewer than k nonzero rows.
std::vector<SearchHit> knn(const IndexBundle& bundle,
                           const QuantizedVector& query, std::size_t k);

/// Same result as knn, computed over `workers` shards merged exactly.
std::vector<SearchHit> knn_parallel(const IndexBundle& bundle,
                                    const QuantizedVector& query,
                                    std::size_t k, unsigned workers);

/// Orders hits by agreement between query tokens and document tokens: the
/// mean over distinct query tokens of the best cosine against any document
/// token. Documents with no scorable tokens get -1 and sink to the bottom.
/// Ties break by base score descending, then doc id ascending.
std::vector<RerankedHit> rerank_max_dot(std::span<const SearchHit> hits,
                                        std::span<const std::uint32_t> query_token_ids,
                                        const IndexBundle& bundle,
                                        const std::filesystem::path& sidecar);

}  // namespace isoret
