#pragma once

#include <algorithm>
#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "lgm/core.hpp"

namespace lgm {

/// Options for the prior covariance eigendecomposition.
struct DecompositionOptions {
  /// Added to the diagonal before decomposing. Zero by default; duplicated
  /// inputs make some kernels exactly singular.
  double jitter = 0.0;
  double symmetry_tolerance = 1e-8;
  /// Eigenvalues below -negative_tolerance * max(eigenvalue) are rejected.
  double negative_tolerance = 1e-6;
};

/// Eigenbasis U and eigenvalues of a prior covariance C = U diag(gamma) U^T.
///
/// The prior may be block diagonal (one block per class for multiclass
/// models); each block keeps its own basis and the spectral transforms act
/// block by block. Eigenvalues within each block are sorted descending and
/// are never negative.
///
/// Immutable once built, so a single instance is shared by every chain that
/// samples under the same covariance.
class SpectralPrior {
 public:
  struct Block {
    Matrix basis;
    Vector eigenvalues;
    Eigen::Index offset = 0;
  };

  SpectralPrior() = default;

  static SpectralPrior from_blocks(std::vector<Block> blocks) {
    SpectralPrior prior;
    Eigen::Index offset = 0;
    for (auto& b : blocks) {
      require(b.basis.rows() == b.basis.cols() && b.basis.rows() == b.eigenvalues.size(),
              "spectral block has inconsistent shape");
      b.offset = offset;
      offset += b.eigenvalues.size();
    }
    prior.blocks_ = std::move(blocks);
    prior.dimension_ = offset;
    prior.eigenvalues_.resize(offset);
    for (const auto& b : prior.blocks_) prior.eigenvalues_.segment(b.offset, b.eigenvalues.size()) = b.eigenvalues;
    prior.sqrt_eigenvalues_ = prior.eigenvalues_.cwiseSqrt();
    prior.max_eigenvalue_ = offset > 0 ? prior.eigenvalues_.maxCoeff() : 0.0;
    return prior;
  }

  /// Stacks independent priors into one block-diagonal prior.
  static SpectralPrior block_diagonal(const std::vector<SpectralPrior>& parts) {
    std::vector<Block> blocks;
    for (const auto& p : parts)
      for (const auto& b : p.blocks_) blocks.push_back(b);
    return from_blocks(std::move(blocks));
  }

  [[nodiscard]] Eigen::Index dimension() const { return dimension_; }
  [[nodiscard]] const Vector& eigenvalues() const { return eigenvalues_; }
  [[nodiscard]] const Vector& sqrt_eigenvalues() const { return sqrt_eigenvalues_; }
  [[nodiscard]] double max_eigenvalue() const { return max_eigenvalue_; }
  [[nodiscard]] const std::vector<Block>& blocks() const { return blocks_; }
  [[nodiscard]] double reconstruction_residual() const { return reconstruction_residual_; }

  /// out = U^T v. Counts one matvec.
  void to_spectral(const Eigen::Ref<const Vector>& v, Eigen::Ref<Vector> out, Counters& counters) const {
    check_size(v.size());
    for (const auto& b : blocks_) {
      const auto k = b.eigenvalues.size();
      out.segment(b.offset, k).noalias() = b.basis.transpose() * v.segment(b.offset, k);
    }
    ++counters.matvecs;
  }

  /// out = U w. Counts one matvec.
  void from_spectral(const Eigen::Ref<const Vector>& w, Eigen::Ref<Vector> out, Counters& counters) const {
    check_size(w.size());
    for (const auto& b : blocks_) {
      const auto k = b.eigenvalues.size();
      out.segment(b.offset, k).noalias() = b.basis * w.segment(b.offset, k);
    }
    ++counters.matvecs;
  }

  [[nodiscard]] Vector to_spectral(const Eigen::Ref<const Vector>& v, Counters& counters) const {
    Vector out(dimension_);
    to_spectral(v, out, counters);
    return out;
  }

  [[nodiscard]] Vector from_spectral(const Eigen::Ref<const Vector>& w, Counters& counters) const {
    Vector out(dimension_);
    from_spectral(w, out, counters);
    return out;
  }

  /// Dense U diag(gamma) U^T. For tests and oracles only.
  [[nodiscard]] Matrix covariance() const {
    Matrix c = Matrix::Zero(dimension_, dimension_);
    for (const auto& b : blocks_) {
      const auto k = b.eigenvalues.size();
      c.block(b.offset, b.offset, k, k) = b.basis * b.eigenvalues.asDiagonal() * b.basis.transpose();
    }
    return c;
  }

  /// Dense basis U (block diagonal when there are several blocks).
  [[nodiscard]] Matrix basis() const {
    Matrix u = Matrix::Zero(dimension_, dimension_);
    for (const auto& b : blocks_) {
      const auto k = b.eigenvalues.size();
      u.block(b.offset, b.offset, k, k) = b.basis;
    }
    return u;
  }

 private:
  friend SpectralPrior eigendecompose_covariance(const Matrix&, const DecompositionOptions&, Counters*);

  void check_size(Eigen::Index n) const {
    if (n != dimension_)
      throw InvalidArgument("dimension mismatch: expected " + std::to_string(dimension_) + ", got " +
                            std::to_string(n));
  }

  std::vector<Block> blocks_;
  Vector eigenvalues_;
  Vector sqrt_eigenvalues_;
  double max_eigenvalue_ = 0.0;
  double reconstruction_residual_ = 0.0;
  Eigen::Index dimension_ = 0;
};

using SpectralPriorPtr = std::shared_ptr<const SpectralPrior>;

/// Dense symmetric eigendecomposition of a prior covariance.
///
/// Slightly negative eigenvalues from round-off are clamped to zero; anything
/// below -negative_tolerance * max eigenvalue means C is not a covariance.
/// The relative Frobenius reconstruction residual is stored on the result.
inline SpectralPrior eigendecompose_covariance(const Matrix& c, const DecompositionOptions& options = {},
                                               Counters* counters = nullptr) {
  require(c.rows() == c.cols(), "covariance must be square");
  require(c.rows() > 0, "covariance must be non-empty");
  if (!c.allFinite()) throw InvalidArgument("covariance has non-finite entries");

  const double scale = std::max(c.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  const double asymmetry = (c - c.transpose()).cwiseAbs().maxCoeff() / scale;
  if (asymmetry > options.symmetry_tolerance)
    throw InvalidArgument("covariance is not symmetric (relative asymmetry " + std::to_string(asymmetry) + ")");

  Matrix sym = 0.5 * (c + c.transpose());
  if (options.jitter != 0.0) sym.diagonal().array() += options.jitter;

  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
  if (solver.info() != Eigen::Success) throw NumericalError("symmetric eigensolver failed to converge");
  if (counters) ++counters->factorizations;

  const auto n = sym.rows();
  // Eigen returns ascending order.
  Vector gamma = solver.eigenvalues().reverse();
  Matrix basis = solver.eigenvectors().rowwise().reverse();

  const double gamma_max = std::max(gamma(0), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (gamma(i) < 0.0) {
      if (gamma(i) < -options.negative_tolerance * gamma_max && gamma(i) < -1e-10)
        throw NumericalError("covariance is not positive semidefinite (eigenvalue " + std::to_string(gamma(i)) +
                             ")");
      gamma(i) = 0.0;
    }
  }

  SpectralPrior prior = SpectralPrior::from_blocks({SpectralPrior::Block{std::move(basis), std::move(gamma), 0}});
  const Matrix rebuilt = prior.covariance();
  const double norm = sym.norm();
  prior.reconstruction_residual_ = norm > 0.0 ? (rebuilt - sym).norm() / norm : (rebuilt - sym).norm();
  return prior;
}

/// Step-size dependent diagonals in the eigenbasis of C:
///   lambda1 realises A = (C^-1 + (2/delta) I)^-1 = (delta/2)(C + (delta/2) I)^-1 C,
///   lambda2 realises (2/delta) A^2 + A,
///   lambda3 realises ((2/delta) A + I)^-1.
/// The second form of A is used throughout, so zero eigenvalues are fine.
struct DeltaOperators {
  double delta = 0.0;
  Vector lambda1;
  Vector lambda2;
  Vector lambda3;
  Vector sqrt_lambda1;
  Vector sqrt_lambda2;
};

inline DeltaOperators build_delta_operators(const SpectralPrior& prior, double delta) {
  if (!(delta > 0.0) || !std::isfinite(delta)) throw InvalidArgument("invalid step size: delta must be positive");
  const auto& gamma = prior.eigenvalues();
  DeltaOperators ops;
  ops.delta = delta;
  const Eigen::ArrayXd g = gamma.array();
  const Eigen::ArrayXd d2g = delta + 2.0 * g;
  const Eigen::ArrayXd d4g = delta + 4.0 * g;
  ops.lambda1 = (g * delta / d2g).matrix();
  ops.lambda2 = (ops.lambda1.array() * d4g / d2g).matrix();
  ops.lambda3 = (d2g / d4g).matrix();
  ops.sqrt_lambda1 = ops.lambda1.cwiseSqrt();
  ops.sqrt_lambda2 = ops.lambda2.cwiseSqrt();
  return ops;
}

/// Eigenvalue maps of C under the pCNL proposal covariance (p), the marginal
/// proposal covariance (m) and the exact Gaussian-noise posterior (t).
struct ShrinkageMaps {
  double p = 0.0;
  double m = 0.0;
  double t = 0.0;
};

inline ShrinkageMaps shrinkage_maps(double gamma, double delta, double sigma2) {
  require(gamma >= 0.0, "gamma must be non-negative");
  require(delta > 0.0, "delta must be positive");
  require(sigma2 > 0.0, "sigma2 must be positive");
  ShrinkageMaps out;
  out.p = (1.0 - 4.0 / ((delta + 2.0) * (delta + 2.0))) * gamma;
  const double d2g = delta + 2.0 * gamma;
  out.m = delta * (delta + 4.0 * gamma) * gamma / (d2g * d2g);
  out.t = gamma * sigma2 / (gamma + sigma2);
  return out;
}

}  // namespace lgm
