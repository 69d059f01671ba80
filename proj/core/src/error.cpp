#include "spkemb/error.hpp"

namespace spkemb {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension error";
    case ErrorKind::kConfiguration: return "configuration error";
    case ErrorKind::kEmptyUtterance: return "empty utterance";
    case ErrorKind::kInsufficientFrames: return "insufficient frames";
    case ErrorKind::kDegenerateEmbedding: return "degenerate embedding";
    case ErrorKind::kContractViolation: return "contract violation";
    case ErrorKind::kOutOfRange: return "out of range";
    case ErrorKind::kNonFinite: return "non-finite value";
    case ErrorKind::kIo: return "i/o error";
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kIntegrity: return "integrity error";
    case ErrorKind::kArchMismatch: return "architecture mismatch";
    case ErrorKind::kDataset: return "dataset error";
    case ErrorKind::kMinerStarvation: return "miner starvation";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kMissingArtifact: return "missing artifact";
  }
  return "error";
}

void raise(ErrorKind kind, const std::string& what) {
  throw Error(kind, std::string(to_string(kind)) + ": " + what);
}

}  // namespace spkemb
