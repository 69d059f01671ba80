#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace spkemb {

enum class ErrorKind {
  kDimension,
  kConfiguration,
  kEmptyUtterance,
  kInsufficientFrames,
  kDegenerateEmbedding,
  kContractViolation,
  kOutOfRange,
  kNonFinite,
  kIo,
  kParse,
  kIntegrity,
  kArchMismatch,
  kDataset,
  kMinerStarvation,
  kDivergence,
  kMissingArtifact,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so callers (and the
/// CLI) can branch on the category without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void raise(ErrorKind kind, const std::string& what);

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) raise(kind, what);
}

}  // namespace spkemb
