#include "cotrate/common.hpp"

namespace cotrate {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidConfig: return "invalid-config";
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::OutOfBounds: return "out-of-bounds";
    case ErrorKind::NoOverlap: return "no-overlap";
    case ErrorKind::TooShort: return "too-short";
    case ErrorKind::DegenerateVector: return "degenerate-vector";
    case ErrorKind::DegenerateGeometry: return "degenerate-geometry";
    case ErrorKind::InvalidEdge: return "invalid-edge";
    case ErrorKind::InternalConsistency: return "internal-consistency";
    case ErrorKind::MissingArtifact: return "missing-artifact";
  }
  return "unknown";
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace cotrate
