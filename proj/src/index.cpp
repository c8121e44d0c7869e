#include "isoret/index.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "isoret/hashing.hpp"
#include "isoret/io_util.hpp"

namespace isoret {

namespace {

constexpr char kMagic[4] = {'I', 'S', 'O', '1'};
constexpr std::size_t kRowBytes = static_cast<std::size_t>(kReducedDim);
constexpr std::size_t kFlaggedIdCap = 100;

std::string fnv_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t fnv1a64_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path.string());
  std::uint64_t h = 0xCBF29CE484222325ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    const auto n = static_cast<std::size_t>(in.gcount());
    for (std::size_t i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001B3ull;
    }
    if (!in) break;
  }
  return h;
}

void write_header(const std::filesystem::path& path, const IndexHeader& h) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot write " + path.string());
  out.write(kMagic, 4);
  io::put_u32(out, h.version);
  io::put_u32(out, h.base_dim);
  io::put_u64(out, h.jl_seed);
  io::put_u64(out, h.doc_count);
  io::put_u64(out, h.token_count);
  io::put_u64(out, h.min_count);
  out.flush();
  if (!out) throw IoFailure("short write to " + path.string());
}

IndexHeader read_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptIndex("missing " + path.string());
  unsigned char buf[kHeaderBytes];
  in.read(reinterpret_cast<char*>(buf), sizeof buf);
  if (static_cast<std::size_t>(in.gcount()) != kHeaderBytes)
    throw CorruptIndex("header shorter than 44 bytes");
  in.peek();
  if (!in.eof()) throw CorruptIndex("header longer than 44 bytes");
  if (std::memcmp(buf, kMagic, 4) != 0) throw CorruptIndex("bad magic");
  IndexHeader h;
  h.version = io::get_u32(buf + 4);
  if (h.version != kIndexVersion)
    throw CorruptIndex("unsupported version " + std::to_string(h.version));
  h.base_dim = io::get_u32(buf + 8);
  h.jl_seed = io::get_u64(buf + 12);
  h.doc_count = io::get_u64(buf + 20);
  h.token_count = io::get_u64(buf + 28);
  h.min_count = io::get_u64(buf + 36);
  return h;
}

void check_size(const std::filesystem::path& path, std::uint64_t expected) {
  std::error_code ec;
  const auto actual = std::filesystem::file_size(path, ec);
  if (ec) throw CorruptIndex("missing " + path.string());
  if (actual != expected)
    throw CorruptIndex(path.filename().string() + " is " +
                       std::to_string(actual) + " bytes, expected " +
                       std::to_string(expected));
}

enum class RowStatus : std::uint8_t {
  kOk,
  kAllWeightsZero,
  kNoKnownToken,
  kProjectionCollapsed,
};

struct EmbedJob {
  SidecarRecord record;
  std::vector<std::pair<std::uint32_t, std::uint64_t>> ids;
};

RowStatus embed_row(const EmbedJob& job, const TokenEmbeddings& resolved,
                    const ProjectorXd& projector, const JlMatrix<double>& jl,
                    std::int8_t* out) {
  std::memset(out, 0, kRowBytes);
  try {
    const QuantizedVector q = embed_document(
        std::span<const std::pair<std::uint32_t, std::uint64_t>>(job.ids),
        resolved, projector, jl);
    std::memcpy(out, q.data(), kRowBytes);
    return RowStatus::kOk;
  } catch (const UnknownAllTokens&) {
    return RowStatus::kNoKnownToken;
  } catch (const EmptyRepresentation&) {
    return RowStatus::kAllWeightsZero;
  } catch (const ZeroVector&) {
    return RowStatus::kProjectionCollapsed;
  }
}

}  // namespace

std::string BuildReport::to_json() const {
  nlohmann::json j;
  j["doc_count"] = doc_count;
  j["token_count"] = token_count;
  j["base_dim"] = base_dim;
  j["jl_seed"] = jl_seed;
  j["min_count"] = min_count;
  j["docs_all_weights_zero"] = docs_all_weights_zero;
  j["docs_no_known_token"] = docs_no_known_token;
  j["docs_projection_collapsed"] = docs_projection_collapsed;
  j["flagged_doc_ids"] = flagged_doc_ids;
  j["zero_token_rows"] = zero_token_rows;
  j["wall_seconds"] = wall_seconds;
  j["docs_per_second"] = docs_per_second;
  j["file_bytes"] = file_bytes;
  j["file_fnv1a64"] = file_fnv1a64;
  j["byte_identical_rebuild"] = byte_identical_rebuild;
  return j.dump(2);
}

BuildReport build_index(const std::filesystem::path& sidecar,
                        const EmbeddingTable& table,
                        const ProjectorXd& projector, const BuildOptions& opt,
                        const std::filesystem::path& out_dir,
                        const Vocabulary* prebuilt_vocab) {
  if (opt.workers == 0) throw std::invalid_argument("workers must be >= 1");
  if (projector.dim() != table.dim())
    throw DimensionMismatch(table.dim(), projector.dim());
  const auto start = std::chrono::steady_clock::now();

  std::filesystem::create_directories(out_dir);

  // Hashes from a previous build, to report byte-identical rebuilds.
  std::map<std::string, std::string> previous_hashes;
  {
    std::ifstream prev(out_dir / kReportFile);
    if (prev) {
      const auto j = nlohmann::json::parse(prev, nullptr, false);
      if (!j.is_discarded() && j.contains("file_fnv1a64"))
        for (auto& [k, v] : j["file_fnv1a64"].items())
          if (v.is_string()) previous_hashes[k] = v.get<std::string>();
    }
  }

  Vocabulary built_vocab;
  if (!prebuilt_vocab) {
    SidecarReader counter(sidecar);
    built_vocab = build_vocabulary(counter, opt.min_count);
  }
  const Vocabulary& vocab = prebuilt_vocab ? *prebuilt_vocab : built_vocab;

  const TokenEmbeddings resolved = TokenEmbeddings::resolve(table, vocab);
  const auto jl = JlMatrix<double>::generate(opt.jl_seed, table.dim());

  BuildReport report;
  report.token_count = vocab.size();
  report.base_dim = static_cast<std::uint32_t>(table.dim());
  report.jl_seed = opt.jl_seed;
  report.min_count = opt.min_count;

  vocab.save(out_dir / kVocabFile);

  {
    std::ofstream tok(out_dir / kTokenVectorsFile, std::ios::binary);
    if (!tok) throw IoFailure("cannot write token vectors");
    std::array<std::int8_t, kRowBytes> row;
    for (std::uint32_t id = 0; id < vocab.size(); ++id) {
      row.fill(0);
      if (resolved.contains(id)) {
        try {
          const BaseVector u = projector.project(resolved.vector(id));
          const QuantizedVector q = quantize(jl_project(u, jl));
          std::memcpy(row.data(), q.data(), kRowBytes);
        } catch (const ZeroVector&) {
          ++report.zero_token_rows;
        }
      } else {
        ++report.zero_token_rows;
      }
      tok.write(reinterpret_cast<const char*>(row.data()), kRowBytes);
    }
    tok.flush();
    if (!tok) throw IoFailure("short write to token vectors");
  }

  {
    std::ofstream vecs(out_dir / kDocVectorsFile, std::ios::binary);
    std::ofstream offs(out_dir / kDocOffsetsFile, std::ios::binary);
    if (!vecs || !offs) throw IoFailure("cannot write document files");

    SidecarReader reader(sidecar);
    std::vector<EmbedJob> batch;
    std::vector<std::int8_t> rows;
    std::vector<RowStatus> status;
    bool more = true;
    while (more) {
      batch.clear();
      while (batch.size() < opt.batch_size) {
        auto rec = reader.next();
        if (!rec) {
          more = false;
          break;
        }
        EmbedJob job;
        job.record = std::move(*rec);
        job.ids.reserve(job.record.tokens.size());
        for (const auto& [token, count] : job.record.tokens)
          if (const auto id = vocab.id_of(token))
            job.ids.emplace_back(*id, count);
        batch.push_back(std::move(job));
      }
      if (batch.empty()) break;

      rows.assign(batch.size() * kRowBytes, 0);
      status.assign(batch.size(), RowStatus::kOk);
      const auto run = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i)
          status[i] = embed_row(batch[i], resolved, projector, jl,
                                rows.data() + i * kRowBytes);
      };
      const unsigned workers =
          std::min<unsigned>(opt.workers,
                             static_cast<unsigned>(batch.size()));
      if (workers <= 1) {
        run(0, batch.size());
      } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (batch.size() + workers - 1) / workers;
        for (unsigned w = 0; w < workers; ++w) {
          const std::size_t lo = w * chunk;
          const std::size_t hi = std::min(batch.size(), lo + chunk);
          if (lo < hi) pool.emplace_back(run, lo, hi);
        }
        for (auto& t : pool) t.join();
      }

      for (std::size_t i = 0; i < batch.size(); ++i) {
        vecs.write(reinterpret_cast<const char*>(rows.data() + i * kRowBytes),
                   kRowBytes);
        io::put_u64(offs, batch[i].record.doc_id);
        io::put_u64(offs, batch[i].record.byte_offset);
        io::put_u64(offs, batch[i].record.byte_length);
        ++report.doc_count;
        if (status[i] != RowStatus::kOk) {
          if (status[i] == RowStatus::kAllWeightsZero)
            ++report.docs_all_weights_zero;
          else if (status[i] == RowStatus::kNoKnownToken)
            ++report.docs_no_known_token;
          else
            ++report.docs_projection_collapsed;
          if (report.flagged_doc_ids.size() < kFlaggedIdCap)
            report.flagged_doc_ids.push_back(batch[i].record.doc_id);
        }
      }
    }
    vecs.flush();
    offs.flush();
    if (!vecs || !offs) throw IoFailure("short write to document files");
  }

  IndexHeader header;
  header.base_dim = report.base_dim;
  header.jl_seed = opt.jl_seed;
  header.doc_count = report.doc_count;
  header.token_count = report.token_count;
  header.min_count = opt.min_count;
  write_header(out_dir / kMetaFile, header);

  for (const char* name :
       {kMetaFile, kDocOffsetsFile, kDocVectorsFile, kTokenVectorsFile,
        kVocabFile}) {
    const auto path = out_dir / name;
    report.file_bytes[name] = std::filesystem::file_size(path);
    report.file_fnv1a64[name] = fnv_hex(fnv1a64_file(path));
  }
  report.byte_identical_rebuild =
      !previous_hashes.empty() && previous_hashes == report.file_fnv1a64;

  const auto elapsed = std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - start)
                           .count();
  report.wall_seconds = elapsed;
  report.docs_per_second =
      elapsed > 0 ? static_cast<double>(report.doc_count) / elapsed : 0.0;

  std::ofstream rep(out_dir / kReportFile, std::ios::binary);
  if (!rep) throw IoFailure("cannot write build report");
  rep << report.to_json() << '\n';
  return report;
}

MappedFile::~MappedFile() {
  if (ptr_) ::munmap(ptr_, size_);
}

MappedFile::MappedFile(MappedFile&& other) noexcept
    : ptr_(other.ptr_), size_(other.size_) {
  other.ptr_ = nullptr;
  other.size_ = 0;
}

MappedFile& MappedFile::operator=(MappedFile&& other) noexcept {
  if (this != &other) {
    if (ptr_) ::munmap(ptr_, size_);
    ptr_ = other.ptr_;
    size_ = other.size_;
    other.ptr_ = nullptr;
    other.size_ = 0;
  }
  return *this;
}

MappedFile MappedFile::open(const std::filesystem::path& path) {
  const int fd = ::open(path.c_str(), O_RDONLY);
  if (fd < 0) throw IoFailure("cannot open " + path.string());
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    ::close(fd);
    throw IoFailure("cannot stat " + path.string());
  }
  MappedFile m;
  m.size_ = static_cast<std::size_t>(st.st_size);
  if (m.size_ > 0) {
    void* p = ::mmap(nullptr, m.size_, PROT_READ, MAP_PRIVATE, fd, 0);
    if (p == MAP_FAILED) {
      ::close(fd);
      throw IoFailure("cannot mmap " + path.string());
    }
    m.ptr_ = p;
  }
  ::close(fd);
  return m;
}

IndexBundle IndexBundle::open(const std::filesystem::path& dir) {
  IndexBundle b;
  b.dir_ = dir;
  b.header_ = read_header(dir / kMetaFile);
  if (b.header_.base_dim < kReducedDim)
    throw CorruptIndex("base dimension below 256");

  check_size(dir / kDocVectorsFile, b.header_.doc_count * kRowBytes);
  check_size(dir / kTokenVectorsFile, b.header_.token_count * kRowBytes);
  check_size(dir / kDocOffsetsFile, b.header_.doc_count * kOffsetRecordBytes);

  b.offsets_ = MappedFile::open(dir / kDocOffsetsFile);
  b.doc_vectors_ = MappedFile::open(dir / kDocVectorsFile);
  b.token_vectors_ = MappedFile::open(dir / kTokenVectorsFile);
  b.vocab_ = Vocabulary::load(dir / kVocabFile);
  if (b.vocab_.size() != b.header_.token_count)
    throw CorruptIndex("vocabulary has " + std::to_string(b.vocab_.size()) +
                       " entries, header says " +
                       std::to_string(b.header_.token_count));
  return b;
}

const std::int8_t* IndexBundle::doc_row(std::uint64_t row) const {
  if (row >= header_.doc_count)
    throw std::out_of_range("doc row " + std::to_string(row));
  return reinterpret_cast<const std::int8_t*>(doc_vectors_.data()) +
         row * kRowBytes;
}

const std::int8_t* IndexBundle::token_row(std::uint32_t token_id) const {
  if (token_id >= header_.token_count) throw UnknownTokenId(token_id);
  return reinterpret_cast<const std::int8_t*>(token_vectors_.data()) +
         static_cast<std::size_t>(token_id) * kRowBytes;
}

Eigen::Map<const QuantizedVector> IndexBundle::doc_vector(
    std::uint64_t row) const {
  return Eigen::Map<const QuantizedVector>(doc_row(row));
}

Eigen::Map<const QuantizedVector> IndexBundle::token_vector(
    std::uint32_t token_id) const {
  return Eigen::Map<const QuantizedVector>(token_row(token_id));
}

namespace {
bool all_zero(const std::int8_t* p) {
  static const std::array<std::int8_t, kRowBytes> zeros{};
  return std::memcmp(p, zeros.data(), kRowBytes) == 0;
}
}  // namespace

bool IndexBundle::doc_row_is_zero(std::uint64_t row) const {
  return all_zero(doc_row(row));
}

bool IndexBundle::token_row_is_zero(std::uint32_t token_id) const {
  return all_zero(token_row(token_id));
}

DocLocator IndexBundle::locator(std::uint64_t row) const {
  if (row >= header_.doc_count)
    throw std::out_of_range("doc row " + std::to_string(row));
  const unsigned char* p = offsets_.data() + row * kOffsetRecordBytes;
  DocLocator loc;
  loc.doc_id = io::get_u64(p);
  loc.byte_offset = io::get_u64(p + 8);
  loc.byte_length = io::get_u64(p + 16);
  return loc;
}

std::uint64_t IndexBundle::doc_id(std::uint64_t row) const {
  if (row >= header_.doc_count)
    throw std::out_of_range("doc row " + std::to_string(row));
  return io::get_u64(offsets_.data() + row * kOffsetRecordBytes);
}

std::optional<std::uint64_t> IndexBundle::row_of(std::uint64_t doc_id) const {
  std::call_once(lazy_->id_once, [this] {
    lazy_->row_by_id.reserve(header_.doc_count);
    for (std::uint64_t r = 0; r < header_.doc_count; ++r)
      lazy_->row_by_id.emplace(this->doc_id(r), r);
  });
  const auto it = lazy_->row_by_id.find(doc_id);
  if (it == lazy_->row_by_id.end()) return std::nullopt;
  return it->second;
}

const std::vector<std::uint64_t>& IndexBundle::nonzero_doc_rows() const {
  std::call_once(lazy_->nonzero_once, [this] {
    for (std::uint64_t r = 0; r < header_.doc_count; ++r)
      if (!doc_row_is_zero(r)) lazy_->nonzero_rows.push_back(r);
  });
  return lazy_->nonzero_rows;
}

IndexBundle open_index(const std::filesystem::path& dir) {
  return IndexBundle::open(dir);
}

std::vector<std::pair<std::uint32_t, std::uint64_t>> fetch_doc_tokens(
    const IndexBundle& bundle, std::istream& sidecar, std::uint64_t doc_id) {
  const auto row = bundle.row_of(doc_id);
  if (!row) throw UnknownDocId(doc_id);
  const DocLocator loc = bundle.locator(*row);

  sidecar.clear();
  sidecar.seekg(static_cast<std::streamoff>(loc.byte_offset));
  std::string line(loc.byte_length, '\0');
  sidecar.read(line.data(), static_cast<std::streamsize>(loc.byte_length));
  if (static_cast<std::uint64_t>(sidecar.gcount()) != loc.byte_length)
    throw IoFailure("sidecar shorter than stored locator for doc " +
                    std::to_string(doc_id));

  const SidecarRecord rec = parse_sidecar_record(line, 0);
  if (rec.doc_id != doc_id)
    throw CorruptIndex("locator for doc " + std::to_string(doc_id) +
                       " points at doc " + std::to_string(rec.doc_id));

  std::vector<std::pair<std::uint32_t, std::uint64_t>> out;
  out.reserve(rec.tokens.size());
  for (const auto& [token, count] : rec.tokens)
    if (const auto id = bundle.vocabulary().id_of(token))
      out.emplace_back(*id, count);
  return out;
}

std::vector<std::pair<std::uint32_t, std::uint64_t>> fetch_doc_tokens(
    const IndexBundle& bundle, const std::filesystem::path& sidecar,
    std::uint64_t doc_id) {
  std::ifstream in(sidecar, std::ios::binary);
  if (!in) throw IoFailure("cannot open sidecar " + sidecar.string());
  return fetch_doc_tokens(bundle, in, doc_id);
}

}  // namespace isoret
