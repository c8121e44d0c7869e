#include "isoret/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "isoret/hashing.hpp"

namespace isoret {

namespace {

std::vector<std::uint64_t> hit_rows(const IndexBundle& bundle,
                                    std::span<const SearchHit> hits) {
  std::vector<std::uint64_t> rows;
  rows.reserve(hits.size());
  for (const SearchHit& h : hits) {
    const auto row = bundle.row_of(h.doc_id);
    if (!row) throw UnknownDocId(h.doc_id);
    rows.push_back(*row);
  }
  return rows;
}

}  // namespace

double head_cosine(std::span<const SearchHit> hits) {
  if (hits.empty()) throw EmptyHits("no hits to average");
  double sum = 0.0;
  for (const SearchHit& h : hits) sum += h.score;
  return sum / static_cast<double>(hits.size());
}

double compactness(const IndexBundle& bundle,
                   std::span<const SearchHit> hits) {
  if (hits.size() < 2) throw TooFewHits("compactness needs at least 2 hits");
  const auto rows = hit_rows(bundle, hits);
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      sum += cosine_q(bundle.doc_vector(rows[i]), bundle.doc_vector(rows[j]));
      ++pairs;
    }
  return sum / static_cast<double>(pairs);
}

double centroid_closure(const QuantizedVector& query,
                        const IndexBundle& bundle,
                        std::span<const SearchHit> hits) {
  if (hits.empty()) throw EmptyHits("no hits to form a centroid");
  const auto rows = hit_rows(bundle, hits);
  ReducedVector centroid = ReducedVector::Zero();
  for (const std::uint64_t row : rows)
    centroid += dequantize(bundle.doc_vector(row));
  centroid /= static_cast<double>(rows.size());
  if (centroid.norm() < kZeroNormTol)
    throw ZeroCentroid("hit centroid is numerically zero");
  return cosine(dequantize(query), centroid);
}

double random_baseline(std::uint64_t n, std::uint32_t dim) {
  if (dim == 0) throw InvalidDimension("dimension must be positive");
  if (n < 2) return 0.0;
  const double v = std::sqrt(2.0 * std::log(static_cast<double>(n)) /
                             static_cast<double>(dim));
  return std::clamp(v, 0.0, 1.0);
}

double isotropy_score(const IndexBundle& bundle, std::size_t sample_size,
                      std::uint64_t seed) {
  if (sample_size < 2)
    throw InsufficientRows("isotropy needs a sample of at least 2");
  const auto& nonzero = bundle.nonzero_doc_rows();
  if (nonzero.size() < sample_size)
    throw InsufficientRows("index has " + std::to_string(nonzero.size()) +
                           " nonzero rows, sample wants " +
                           std::to_string(sample_size));

  // Seeded partial Fisher-Yates over the nonzero row list.
  std::vector<std::uint64_t> pool = nonzero;
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < sample_size; ++i) {
    const std::size_t j =
        i + static_cast<std::size_t>(rng.next_below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }

  double sum = 0.0, sum2 = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < sample_size; ++i)
    for (std::size_t j = i + 1; j < sample_size; ++j) {
      const double c =
          cosine_q(bundle.doc_vector(pool[i]), bundle.doc_vector(pool[j]));
      sum += c;
      sum2 += c * c;
      ++pairs;
    }
  const double mean = sum / static_cast<double>(pairs);
  const double var = std::max(0.0, sum2 / static_cast<double>(pairs) - mean * mean);
  return std::sqrt(var) * std::sqrt(static_cast<double>(kReducedDim));
}

double jaccard_overlap(std::span<const std::uint64_t> a,
                       std::span<const std::uint64_t> b) {
  const std::set<std::uint64_t> sa(a.begin(), a.end());
  const std::set<std::uint64_t> sb(b.begin(), b.end());
  if (sa.empty() && sb.empty())
    throw BothEmpty("jaccard of two empty sets");
  std::size_t inter = 0;
  for (const std::uint64_t x : sa) inter += sb.count(x);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["doc_count"] = doc_count;
  j["dim"] = dim;
  j["k"] = k;
  j["random_baseline"] = random_baseline;
  j["isotropy_score"] = isotropy_score;
  j["head_cosine"] = head_cosine;
  j["compactness"] = compactness ? nlohmann::json(*compactness)
                                 : nlohmann::json(nullptr);
  j["centroid_closure"] = centroid_closure;
  j["jaccard"] = jaccard;
  nlohmann::json jf = nlohmann::json::object();
  for (const auto& [name, fm] : forms) {
    nlohmann::json f;
    f["head_cosine"] = fm.head_cosine;
    f["compactness"] = fm.compactness ? nlohmann::json(*fm.compactness)
                                      : nlohmann::json(nullptr);
    f["centroid_closure"] = fm.centroid_closure;
    f["hit_count"] = fm.hit_count;
    jf[name] = std::move(f);
  }
  j["forms"] = std::move(jf);
  return j.dump(2);
}

MetricsReport evaluate(const std::map<std::string, QuantizedVector>& forms,
                       const IndexBundle& bundle, const EvaluateOptions& opt) {
  if (forms.empty()) throw std::invalid_argument("no query forms");
  if (opt.k == 0) throw std::invalid_argument("k must be >= 1");

  MetricsReport report;
  report.doc_count = bundle.doc_count();
  report.dim = kReducedDim;
  report.k = opt.k;
  report.random_baseline = random_baseline(bundle.doc_count(), kReducedDim);
  report.isotropy_score =
      isotropy_score(bundle, opt.isotropy_sample, opt.isotropy_seed);

  std::map<std::string, std::vector<std::uint64_t>> hit_ids;
  double head_sum = 0.0, closure_sum = 0.0, compact_sum = 0.0;
  std::size_t compact_n = 0;
  for (const auto& [name, query] : forms) {
    const auto hits = knn_parallel(bundle, query, opt.k, opt.workers);
    FormMetrics fm;
    fm.hit_count = hits.size();
    fm.head_cosine = head_cosine(hits);
    fm.centroid_closure = centroid_closure(query, bundle, hits);
    if (hits.size() >= 2) {
      fm.compactness = compactness(bundle, hits);
      compact_sum += *fm.compactness;
      ++compact_n;
    }
    head_sum += fm.head_cosine;
    closure_sum += fm.centroid_closure;
    auto& ids = hit_ids[name];
    ids.reserve(hits.size());
    for (const SearchHit& h : hits) ids.push_back(h.doc_id);
    report.forms.emplace(name, fm);
  }

  const auto n = static_cast<double>(forms.size());
  report.head_cosine = head_sum / n;
  report.centroid_closure = closure_sum / n;
  if (compact_n > 0) report.compactness = compact_sum / static_cast<double>(compact_n);

  for (auto a = hit_ids.begin(); a != hit_ids.end(); ++a)
    for (auto b = std::next(a); b != hit_ids.end(); ++b)
      report.jaccard[a->first + "|" + b->first] =
          jaccard_overlap(a->second, b->second);
  return report;
}

}  // namespace isoret
