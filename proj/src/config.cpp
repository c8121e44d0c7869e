#include "isoret/config.hpp"

#include <cstdlib>
#include <fstream>

#include <nlohmann/json.hpp>

#include "isoret/errors.hpp"

namespace isoret {

namespace {

void apply_env(Config& cfg) {
  if (const char* url = std::getenv("ISORET_EXPANDER_URL")) {
    cfg.expander_url = url;
    cfg.expander_mode = "remote";
  }
  if (const char* t = std::getenv("ISORET_EXPANDER_TIMEOUT_MS")) {
    try {
      cfg.expander_timeout_ms = std::stoi(t);
    } catch (const std::exception&) {
      throw std::invalid_argument(
          "ISORET_EXPANDER_TIMEOUT_MS is not an integer");
    }
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void read_path(const nlohmann::json& j, const char* key,
               std::filesystem::path& out) {
  if (j.contains(key)) out = j.at(key).get<std::string>();
}

}  // namespace

Config Config::from_environment() {
  Config cfg;
  apply_env(cfg);
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open config " + path.string());
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw IoFailure("config " + path.string() + " is not a JSON object");

  Config cfg;
  read_path(j, "table", cfg.table);
  read_path(j, "sidecar", cfg.sidecar);
  read_path(j, "index_dir", cfg.index_dir);
  read_path(j, "nuisance_axes", cfg.nuisance_axes);
  read_path(j, "prompt_template", cfg.prompt_template);
  read(j, "jl_seed", cfg.jl_seed);
  read(j, "min_count", cfg.min_count);
  read(j, "base_dim", cfg.base_dim);
  read(j, "workers", cfg.workers);

  if (j.contains("expander")) {
    const auto& e = j.at("expander");
    read(e, "mode", cfg.expander_mode);
    read(e, "url", cfg.expander_url);
    read_path(e, "fixture", cfg.expander_fixture);
    read_path(e, "transcript", cfg.expander_transcript);
    read_path(e, "record", cfg.expander_record);
    read(e, "timeout_ms", cfg.expander_timeout_ms);
    read(e, "retries", cfg.expander_retries);
  }
  if (j.contains("expansion")) {
    const auto& e = j.at("expansion");
    read(e, "min_phrases", cfg.min_phrases);
    read(e, "max_phrases", cfg.max_phrases);
    read(e, "max_words", cfg.max_words);
    read(e, "min_corpus_count", cfg.min_corpus_count);
    read(e, "merge_tau", cfg.merge_tau);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    read(e, "k", cfg.eval_k);
    read(e, "isotropy_sample", cfg.isotropy_sample);
    read(e, "isotropy_seed", cfg.isotropy_seed);
  }

  apply_env(cfg);
  return cfg;
}

}  // namespace isoret
