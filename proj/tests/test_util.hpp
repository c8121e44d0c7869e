#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "isoret/embed.hpp"
#include "isoret/index.hpp"
#include "isoret/io_util.hpp"

// Shared helpers for the test binaries. Oracle randomness deliberately uses
// std::mt19937_64 + std::normal_distribution, a different generator family
// than anything inside the library.

namespace testutil {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    auto base = std::filesystem::temp_directory_path();
    for (int i = 0; i < 10000; ++i) {
      auto candidate = base / (tag + "-" + std::to_string(i));
      std::error_code ec;
      if (std::filesystem::create_directory(candidate, ec)) {
        path_ = candidate;
        return;
      }
    }
    throw std::runtime_error("cannot create temp dir for " + tag);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const {
    return path_ / name;
  }

 private:
  std::filesystem::path path_;
};

inline Eigen::VectorXd random_unit(std::mt19937_64& rng, Eigen::Index dim) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v[i] = gauss(rng);
  return v / v.norm();
}

inline isoret::ReducedVector random_reduced_unit(std::mt19937_64& rng) {
  const Eigen::VectorXd v = random_unit(rng, isoret::kReducedDim);
  return isoret::ReducedVector(v);
}

inline isoret::QuantizedVector random_quantized(std::mt19937_64& rng) {
  return isoret::quantize(random_reduced_unit(rng));
}

/// Minimal in-memory token table for exercising the transform directly.
struct TestTable {
  std::unordered_map<std::uint32_t, isoret::BaseVector> vectors;

  bool contains(std::uint32_t id) const { return vectors.count(id) > 0; }
  isoret::BaseVector vector(std::uint32_t id) const { return vectors.at(id); }
};

struct SynthDoc {
  std::uint64_t id = 0;
  isoret::QuantizedVector vec = isoret::QuantizedVector::Zero();
  std::string tokens = "stub:1";  // sidecar token field
};

struct SynthToken {
  std::string name;
  std::uint64_t count = 1;
  isoret::QuantizedVector vec = isoret::QuantizedVector::Zero();
};

/// Writes an index directory with handpicked rows, plus the matching
/// sidecar as `corpus.tsv` next to the index files. Tokens must already be
/// in ascending name order (that is the id order the files promise).
inline void write_synthetic_index(const std::filesystem::path& dir,
                                  std::span<const SynthDoc> docs,
                                  std::span<const SynthToken> tokens,
                                  std::uint64_t jl_seed = 1,
                                  std::uint64_t min_count = 1,
                                  std::uint32_t base_dim = 300) {
  namespace io = isoret::io;
  std::filesystem::create_directories(dir);

  std::ofstream side(dir / "corpus.tsv", std::ios::binary);
  std::ofstream offs(dir / isoret::kDocOffsetsFile, std::ios::binary);
  std::ofstream vecs(dir / isoret::kDocVectorsFile, std::ios::binary);
  std::uint64_t offset = 0;
  for (const SynthDoc& doc : docs) {
    const std::string line = std::to_string(doc.id) + "\t" + doc.tokens;
    side << line << '\n';
    io::put_u64(offs, doc.id);
    io::put_u64(offs, offset);
    io::put_u64(offs, line.size());
    offset += line.size() + 1;
    vecs.write(reinterpret_cast<const char*>(doc.vec.data()),
               isoret::kReducedDim);
  }

  std::ofstream tokf(dir / isoret::kTokenVectorsFile, std::ios::binary);
  std::ofstream vocab(dir / isoret::kVocabFile, std::ios::binary);
  for (const SynthToken& token : tokens) {
    vocab << token.name << '\t' << token.count << '\n';
    tokf.write(reinterpret_cast<const char*>(token.vec.data()),
               isoret::kReducedDim);
  }

  std::ofstream meta(dir / isoret::kMetaFile, std::ios::binary);
  meta.write("ISO1", 4);
  io::put_u32(meta, isoret::kIndexVersion);
  io::put_u32(meta, base_dim);
  io::put_u64(meta, jl_seed);
  io::put_u64(meta, docs.size());
  io::put_u64(meta, tokens.size());
  io::put_u64(meta, min_count);
  if (!side.flush() || !offs.flush() || !vecs.flush() || !tokf.flush() ||
      !vocab.flush() || !meta.flush())
    throw std::runtime_error("synthetic index write failed");
}

inline void write_file(const std::filesystem::path& path,
                       const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out.flush()) throw std::runtime_error("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read failed: " + path.string());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

/// Runs a shell command, captures stdout, returns the exit code.
inline int run_command(const std::string& command, std::string& output) {
  output.clear();
  FILE* pipe = ::popen(command.c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed: " + command);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) output.append(buf, n);
  const int status = ::pclose(pipe);
  if (status < 0) throw std::runtime_error("pclose failed: " + command);
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128;
}

}  // namespace testutil
