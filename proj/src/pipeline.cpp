#include "isoret/pipeline.hpp"

#include <fstream>
#include <sstream>

namespace isoret {

BaseVector corpus_frequency_mean(const EmbeddingTable& table,
                                 const Vocabulary& vocab) {
  BaseVector sum = BaseVector::Zero(table.dim());
  double total = 0.0;
  for (std::uint32_t id = 0; id < vocab.size(); ++id) {
    const auto row = table.row_of(vocab.token(id));
    if (!row) continue;
    const auto weight = static_cast<double>(vocab.corpus_count(id));
    sum.noalias() += weight * table.vector(*row);
    total += weight;
  }
  if (total == 0.0)
    throw EmbeddingTableEmptyIntersection(
        "no vocabulary token has a base embedding");
  return sum / total;
}

std::vector<BaseVector> load_nuisance_axes(const std::filesystem::path& path,
                                           Eigen::Index dim) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open nuisance axes " + path.string());
  std::vector<BaseVector> axes;
  std::string line;
  std::uint64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::vector<double> values;
    double v;
    while (fields >> v) values.push_back(v);
    if (!fields.eof())
      throw IoFailure("nuisance axes line " + std::to_string(line_no) +
                      " has a non-numeric field");
    if (static_cast<Eigen::Index>(values.size()) != dim)
      throw DimensionMismatch(dim, static_cast<std::int64_t>(values.size()));
    axes.push_back(Eigen::Map<const BaseVector>(values.data(),
                                                static_cast<Eigen::Index>(
                                                    values.size())));
  }
  return axes;
}

ProjectorXd derive_projector(const EmbeddingTable& table,
                             const Vocabulary& vocab,
                             const std::vector<BaseVector>& extra_axes) {
  return build_projector(extra_axes, corpus_frequency_mean(table, vocab));
}

std::unique_ptr<Expander> make_expander(const Config& cfg) {
  if (cfg.expander_mode == "stub") {
    if (cfg.expander_fixture.empty())
      throw std::invalid_argument("stub expander needs expander.fixture");
    return std::make_unique<StubExpander>(cfg.expander_fixture);
  }
  if (cfg.expander_mode == "remote") {
    RemoteExpander::Options opt;
    opt.url = cfg.expander_url;
    opt.timeout_ms = cfg.expander_timeout_ms;
    opt.retries = cfg.expander_retries;
    opt.transcript = cfg.expander_record;
    return std::make_unique<RemoteExpander>(std::move(opt));
  }
  if (cfg.expander_mode == "transcript") {
    if (cfg.expander_transcript.empty())
      throw std::invalid_argument(
          "transcript expander needs expander.transcript");
    return std::make_unique<TranscriptExpander>(cfg.expander_transcript);
  }
  throw std::invalid_argument("unknown expander mode " + cfg.expander_mode);
}

}  // namespace isoret
