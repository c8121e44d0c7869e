#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include "isoret/config.hpp"
#include "isoret/embed.hpp"
#include "isoret/embedding_table.hpp"
#include "isoret/expand.hpp"
#include "isoret/vocabulary.hpp"

// Glue shared by the build and query paths. The projector must be derived
// identically on both sides or query vectors would live in a different
// space than the stored rows; centralizing the derivation here is what
// guarantees that.

namespace isoret {

/// Corpus-frequency-weighted mean of the base embeddings of all vocabulary
/// tokens that have one. This is the transform's "corpus mean".
BaseVector corpus_frequency_mean(const EmbeddingTable& table,
                                 const Vocabulary& vocab);

/// Optional extra nuisance axes: a text file with one axis per line,
/// whitespace-separated components, exactly `dim` per line.
std::vector<BaseVector> load_nuisance_axes(const std::filesystem::path& path,
                                           Eigen::Index dim);

/// The one place both indexing and querying obtain their projector.
ProjectorXd derive_projector(const EmbeddingTable& table,
                             const Vocabulary& vocab,
                             const std::vector<BaseVector>& extra_axes);

/// Instantiates the expander selected by the config.
std::unique_ptr<Expander> make_expander(const Config& cfg);

}  // namespace isoret
