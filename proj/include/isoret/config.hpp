#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace isoret {

/// Runtime configuration. Sources, weakest first: built-in defaults, the
/// JSON config file, environment variables (ISORET_EXPANDER_URL,
/// ISORET_EXPANDER_TIMEOUT_MS), command-line flags.
struct Config {
  std::filesystem::path table;      // base embedding table (binary)
  std::filesystem::path sidecar;    // token-count sidecar
  std::filesystem::path index_dir;  // index bundle directory
  std::filesystem::path nuisance_axes;  // optional text file, one axis per line
  std::filesystem::path prompt_template;  // forwarded to the remote service operator

  std::uint64_t jl_seed = 1;
  std::uint64_t min_count = 5;
  std::size_t base_dim = 0;  // 0 = take from the embedding table
  unsigned workers = 1;

  // expander
  std::string expander_mode = "stub";  // stub | remote | transcript
  std::string expander_url;
  std::filesystem::path expander_fixture;
  std::filesystem::path expander_transcript;  // replay source
  std::filesystem::path expander_record;      // capture target
  int expander_timeout_ms = 10000;
  int expander_retries = 1;

  // expansion
  int min_phrases = 20;
  int max_phrases = 60;
  int max_words = 4;
  std::uint64_t min_corpus_count = 50;
  double merge_tau = 0.9;

  // evaluation
  std::size_t eval_k = 20;
  std::size_t isotropy_sample = 200;
  std::uint64_t isotropy_seed = 42;

  /// Parses the JSON file and then applies environment overrides.
  static Config load(const std::filesystem::path& path);
  /// Environment overrides only, on top of defaults.
  static Config from_environment();
};

}  // namespace isoret
