#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "isoret/embed.hpp"
#include "isoret/index.hpp"
#include "isoret/search.hpp"

// Geometry of a result set, reported without ground-truth labels. The
// anchor for every score is the behaviour of random unit vectors: the
// expected best cosine among n of them in dimension d is approximately
// sqrt(2 ln n / d), so anything meaningful must clear that bar.

namespace isoret {

/// Mean hit score. Errors on an empty hit list.
double head_cosine(std::span<const SearchHit> hits);

/// Mean pairwise cosine among the hit vectors; needs at least two hits.
double compactness(const IndexBundle& bundle, std::span<const SearchHit> hits);

/// Cosine between the query and the centroid of the dequantized hit
/// vectors.
double centroid_closure(const QuantizedVector& query, const IndexBundle& bundle,
                        std::span<const SearchHit> hits);

/// Expected best cosine among n random unit vectors in dimension d:
/// sqrt(2 ln n / d), clipped to [0, 1].
double random_baseline(std::uint64_t n, std::uint32_t dim);

/// Isotropy of the stored corpus: the standard deviation of pairwise
/// cosines over a seeded sample of nonzero rows, scaled by sqrt(dim).
/// Random unit vectors give about 1; collapsed geometry gives about 0.
double isotropy_score(const IndexBundle& bundle, std::size_t sample_size,
                      std::uint64_t seed);

/// Overlap of two doc id sets: |a intersect b| / |a union b|.
double jaccard_overlap(std::span<const std::uint64_t> a,
                       std::span<const std::uint64_t> b);

struct FormMetrics {
  double head_cosine = 0.0;
  std::optional<double> compactness;  // absent with fewer than two hits
  double centroid_closure = 0.0;
  std::size_t hit_count = 0;
};

struct MetricsReport {
  std::uint64_t doc_count = 0;
  std::uint32_t dim = 0;
  std::size_t k = 0;
  double random_baseline = 0.0;
  double isotropy_score = 0.0;
  // Means over forms.
  double head_cosine = 0.0;
  std::optional<double> compactness;
  double centroid_closure = 0.0;
  std::map<std::string, FormMetrics> forms;
  // Hit-set overlap for each form pair, keyed "<a>|<b>" with a < b.
  std::map<std::string, double> jaccard;

  std::string to_json() const;
};

struct EvaluateOptions {
  std::size_t k = 20;
  unsigned workers = 1;
  std::size_t isotropy_sample = 200;
  std::uint64_t isotropy_seed = 42;
};

/// Runs every query form through the index and aggregates the suite.
MetricsReport evaluate(const std::map<std::string, QuantizedVector>& forms,
                       const IndexBundle& bundle, const EvaluateOptions& opt);

}  // namespace isoret
