#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace isoret {

/// Base class for all domain errors raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define ISORET_DEFINE_ERROR(Name)                                  \
  class Name : public Error {                                      \
   public:                                                         \
    explicit Name(const std::string& what = #Name) : Error(what) {} \
  }

// embed core
ISORET_DEFINE_ERROR(DegenerateMean);
ISORET_DEFINE_ERROR(EmptyRepresentation);
ISORET_DEFINE_ERROR(UnknownAllTokens);
ISORET_DEFINE_ERROR(InvalidDimension);
ISORET_DEFINE_ERROR(ZeroVector);

class DimensionMismatch : public Error {
 public:
  DimensionMismatch(std::int64_t expected, std::int64_t got)
      : Error("dimension mismatch: expected " + std::to_string(expected) +
              ", got " + std::to_string(got)) {}
  explicit DimensionMismatch(const std::string& what) : Error(what) {}
};

class NotNormalized : public Error {
 public:
  explicit NotNormalized(double norm)
      : Error("vector norm " + std::to_string(norm) + " is not unit") {}
};

// index store
ISORET_DEFINE_ERROR(DuplicateDocId);
ISORET_DEFINE_ERROR(IoFailure);
ISORET_DEFINE_ERROR(EmbeddingTableEmptyIntersection);

class MalformedRecord : public Error {
 public:
  MalformedRecord(std::uint64_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::uint64_t line() const { return line_; }

 private:
  std::uint64_t line_;
};

class CorruptIndex : public Error {
 public:
  explicit CorruptIndex(const std::string& reason)
      : Error("corrupt index: " + reason) {}
};

class UnknownDocId : public Error {
 public:
  explicit UnknownDocId(std::uint64_t doc_id)
      : Error("unknown doc id " + std::to_string(doc_id)) {}
};

// search
ISORET_DEFINE_ERROR(ZeroQuery);

class UnknownTokenId : public Error {
 public:
  explicit UnknownTokenId(std::uint64_t token_id)
      : Error("unknown token id " + std::to_string(token_id)) {}
};

// expansion
ISORET_DEFINE_ERROR(ExpanderUnavailable);
ISORET_DEFINE_ERROR(EmptyExpansion);
ISORET_DEFINE_ERROR(AllPhrasesFiltered);

class UnknownToken : public Error {
 public:
  explicit UnknownToken(const std::string& token)
      : Error("unknown token \"" + token + "\"") {}
};

// metrics
ISORET_DEFINE_ERROR(EmptyHits);
ISORET_DEFINE_ERROR(TooFewHits);
ISORET_DEFINE_ERROR(ZeroCentroid);
ISORET_DEFINE_ERROR(InsufficientRows);
ISORET_DEFINE_ERROR(BothEmpty);

#undef ISORET_DEFINE_ERROR

}  // namespace isoret
