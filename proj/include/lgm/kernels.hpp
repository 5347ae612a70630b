#pragma once

#include <string>

#include "lgm/core.hpp"

namespace lgm {

enum class KernelKind { SquaredExponential, CoxExponential };

/// Covariance function over a set of input locations (one per row).
///
/// Squared exponential: variance * exp(-|s_i - s_j|^2 / (2 lengthscale2)).
/// Cox exponential: variance * exp(-|s_i - s_j| / (scale_divisor * beta)),
/// where s are grid-cell indices and scale_divisor defaults to the grid side.
struct KernelSpec {
  KernelKind kind = KernelKind::SquaredExponential;
  double variance = 1.0;
  double lengthscale2 = 1.0;
  double beta = 1.0;
  double scale_divisor = 0.0;  // Cox only; <= 0 means "grid side" derived from inputs
  Matrix inputs;
};

inline std::string to_string(KernelKind kind) {
  return kind == KernelKind::SquaredExponential ? "squared-exponential" : "cox-exponential";
}

inline KernelKind kernel_kind_from_string(const std::string& s) {
  if (s == "squared-exponential" || s == "se") return KernelKind::SquaredExponential;
  if (s == "cox-exponential" || s == "cox") return KernelKind::CoxExponential;
  throw InvalidArgument("unknown kernel kind: " + s);
}

/// Row-major (i, j) cell indices of a g x g grid, 1-based.
inline Matrix grid_cells(int side) {
  require(side > 0, "grid side must be positive");
  Matrix cells(static_cast<Eigen::Index>(side) * side, 2);
  for (int i = 0; i < side; ++i)
    for (int j = 0; j < side; ++j) {
      cells(i * side + j, 0) = i + 1;
      cells(i * side + j, 1) = j + 1;
    }
  return cells;
}

/// Symmetric kernel matrix: upper triangle computed, then mirrored.
inline Matrix build_kernel(const KernelSpec& spec) {
  require(spec.variance > 0.0, "kernel variance must be positive");
  require(spec.inputs.rows() > 0, "kernel needs at least one input");
  require(spec.inputs.allFinite(), "kernel inputs must be finite");
  const auto n = spec.inputs.rows();
  Matrix c(n, n);
  if (spec.kind == KernelKind::SquaredExponential) {
    require(spec.lengthscale2 > 0.0, "lengthscale must be positive");
    for (Eigen::Index i = 0; i < n; ++i) {
      c(i, i) = spec.variance;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double d2 = (spec.inputs.row(i) - spec.inputs.row(j)).squaredNorm();
        c(i, j) = c(j, i) = spec.variance * std::exp(-0.5 * d2 / spec.lengthscale2);
      }
    }
  } else {
    require(spec.beta > 0.0, "Cox kernel beta must be positive");
    double divisor = spec.scale_divisor;
    if (divisor <= 0.0) divisor = std::round(std::sqrt(static_cast<double>(n)));
    const double scale = divisor * spec.beta;
    for (Eigen::Index i = 0; i < n; ++i) {
      c(i, i) = spec.variance;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double d = (spec.inputs.row(i) - spec.inputs.row(j)).norm();
        c(i, j) = c(j, i) = spec.variance * std::exp(-d / scale);
      }
    }
  }
  return c;
}

}  // namespace lgm
