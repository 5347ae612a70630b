#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace lgm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when inputs violate a documented precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Raised by numerical routines that cannot produce a trustworthy answer.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Per-chain work counters. A "matvec" is one product with the full basis
/// U or U^T; a "factorization" is one dense eigendecomposition.
struct Counters {
  std::uint64_t matvecs = 0;
  std::uint64_t factorizations = 0;
  std::uint64_t likelihood_evals = 0;
};

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // log(2*pi)
inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

}  // namespace lgm
