#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace cotrate {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class ErrorKind {
  InvalidConfig,
  InvalidInput,
  OutOfBounds,
  NoOverlap,
  TooShort,
  DegenerateVector,
  DegenerateGeometry,
  InvalidEdge,
  InternalConsistency,
  MissingArtifact,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) throw Error(kind, what);
}

/// Mixes a seed with a stream tag so independent generators never share a sequence.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag);

/// Cosine similarity of two vectors; returns 0 when either norm is below `eps`.
template <typename A, typename B>
typename A::Scalar cosine_similarity(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b,
                                     typename A::Scalar eps = typename A::Scalar(1e-12)) {
  const auto na = a.norm();
  const auto nb = b.norm();
  if (na < eps || nb < eps) return typename A::Scalar(0);
  return a.dot(b) / (na * nb);
}

/// Maps a cosine in [-1, 1] onto [0, 1].
template <typename Scalar>
Scalar rescale_cosine(Scalar cosine) {
  const Scalar s = (cosine + Scalar(1)) / Scalar(2);
  return s < Scalar(0) ? Scalar(0) : (s > Scalar(1) ? Scalar(1) : s);
}

}  // namespace cotrate
