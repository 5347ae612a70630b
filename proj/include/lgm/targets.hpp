#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lgm/core.hpp"

namespace lgm {

/// Log-likelihood contract f(x) of a latent Gaussian model
///   pi(x) ∝ exp{f(x)} N(x | 0, C).
/// Implementations are immutable; evaluate is pure and reentrant.
class TargetModel {
 public:
  virtual ~TargetModel() = default;

  [[nodiscard]] virtual Eigen::Index dimension() const = 0;

  /// Returns f(x) and writes grad f(x) into grad.
  virtual double evaluate(const Eigen::Ref<const Vector>& x, Eigen::Ref<Vector> grad) const = 0;

  /// f(x) alone; gradient-free samplers call this.
  [[nodiscard]] virtual double value(const Eigen::Ref<const Vector>& x) const {
    Vector g(dimension());
    return evaluate(x, g);
  }

  [[nodiscard]] virtual std::string name() const = 0;

 protected:
  void check_dimension(Eigen::Index n) const {
    if (n != dimension()) throw InvalidArgument("target dimension mismatch");
  }
};

using TargetPtr = std::shared_ptr<const TargetModel>;

/// f(x) = -(n/2) log(2 pi sigma2) - (1/(2 sigma2)) sum (y_i - x_i)^2
class RegressionTarget final : public TargetModel {
 public:
  RegressionTarget(Vector y, double sigma2) : y_(std::move(y)), sigma2_(sigma2) {
    require(sigma2 > 0.0, "regression noise variance must be positive");
    require(y_.allFinite(), "regression observations must be finite");
    constant_ = -0.5 * static_cast<double>(y_.size()) * (kLog2Pi + std::log(sigma2_));
  }

  [[nodiscard]] Eigen::Index dimension() const override { return y_.size(); }

  double evaluate(const Eigen::Ref<const Vector>& x, Eigen::Ref<Vector> grad) const override {
    check_dimension(x.size());
    grad = (y_ - x) / sigma2_;
    return constant_ - 0.5 * (y_ - x).squaredNorm() / sigma2_;
  }

  [[nodiscard]] double value(const Eigen::Ref<const Vector>& x) const override {
    check_dimension(x.size());
    return constant_ - 0.5 * (y_ - x).squaredNorm() / sigma2_;
  }

  [[nodiscard]] std::string name() const override { return "regression"; }
  [[nodiscard]] double noise_variance() const { return sigma2_; }
  [[nodiscard]] const Vector& observations() const { return y_; }

 private:
  Vector y_;
  double sigma2_;
  double constant_ = 0.0;
};

namespace detail {

/// log(sigmoid(x)) without overflow for large |x|.
inline double log_sigmoid(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

/// Bernoulli likelihood with logistic link, labels in {0, 1}.
class LogisticTarget final : public TargetModel {
 public:
  explicit LogisticTarget(Vector labels) : y_(std::move(labels)) {
    for (Eigen::Index i = 0; i < y_.size(); ++i)
      require(y_(i) == 0.0 || y_(i) == 1.0, "logistic labels must be 0 or 1");
  }

  [[nodiscard]] Eigen::Index dimension() const override { return y_.size(); }

  double evaluate(const Eigen::Ref<const Vector>& x, Eigen::Ref<Vector> grad) const override {
    check_dimension(x.size());
    double f = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      f += y_(i) * detail::log_sigmoid(x(i)) + (1.0 - y_(i)) * detail::log_sigmoid(-x(i));
      grad(i) = y_(i) - detail::sigmoid(x(i));
    }
    return f;
  }

  [[nodiscard]] std::string name() const override { return "logistic"; }
  [[nodiscard]] const Vector& labels() const { return y_; }

 private:
  Vector y_;
};

/// Log-Gaussian Cox process on a g x g grid; x is flattened row-major.
///   f(x) = sum( y_ij (x_ij + v) - m exp(x_ij + v) )
class CoxTarget final : public TargetModel {
 public:
  CoxTarget(Vector counts, double cell_area, double offset)
      : y_(std::move(counts)), area_(cell_area), offset_(offset) {
    require(cell_area > 0.0, "cell area must be positive");
    for (Eigen::Index i = 0; i < y_.size(); ++i) {
      require(y_(i) >= 0.0, "Cox counts must be non-negative");
      require(y_(i) == std::floor(y_(i)), "Cox counts must be integers");
    }
  }

  [[nodiscard]] Eigen::Index dimension() const override { return y_.size(); }

  double evaluate(const Eigen::Ref<const Vector>& x, Eigen::Ref<Vector> grad) const override {
    check_dimension(x.size());
    double f = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double eta = x(i) + offset_;
      const double intensity = area_ * std::exp(eta);
      f += y_(i) * eta - intensity;
      grad(i) = y_(i) - intensity;
    }
    return f;
  }

  [[nodiscard]] std::string name() const override { return "cox"; }
  [[nodiscard]] double cell_area() const { return area_; }
  [[nodiscard]] double offset() const { return offset_; }
  [[nodiscard]] const Vector& counts() const { return y_; }

 private:
  Vector y_;
  double area_;
  double offset_;
};

/// Multinomial-logistic likelihood over K stacked latent fields.
/// Layout is class-major: x[k * n + i] is the latent of example i, class k,
/// so the prior is block diagonal with one covariance per class.
/// Labels are 1..K.
class SoftmaxTarget final : public TargetModel {
 public:
  SoftmaxTarget(std::vector<int> labels, int classes) : labels_(std::move(labels)), classes_(classes) {
    require(classes >= 2, "softmax needs at least two classes");
    for (int label : labels_)
      if (label < 1 || label > classes) throw InvalidArgument("softmax label out of range: " + std::to_string(label));
  }

  [[nodiscard]] Eigen::Index dimension() const override {
    return static_cast<Eigen::Index>(labels_.size()) * classes_;
  }
  [[nodiscard]] Eigen::Index examples() const { return static_cast<Eigen::Index>(labels_.size()); }
  [[nodiscard]] int classes() const { return classes_; }
  [[nodiscard]] const std::vector<int>& labels() const { return labels_; }

  double evaluate(const Eigen::Ref<const Vector>& x, Eigen::Ref<Vector> grad) const override {
    check_dimension(x.size());
    const Eigen::Index n = examples();
    double f = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double top = x(i);
      for (int k = 1; k < classes_; ++k) top = std::max(top, x(k * n + i));
      double total = 0.0;
      for (int k = 0; k < classes_; ++k) total += std::exp(x(k * n + i) - top);
      const double lse = top + std::log(total);
      const int yi = labels_[static_cast<std::size_t>(i)] - 1;
      f += x(yi * n + i) - lse;
      for (int k = 0; k < classes_; ++k)
        grad(k * n + i) = (k == yi ? 1.0 : 0.0) - std::exp(x(k * n + i) - lse);
    }
    return f;
  }

  [[nodiscard]] std::string name() const override { return "softmax"; }

 private:
  std::vector<int> labels_;
  int classes_;
};

/// f(x) = const. Samplers reduce to prior-reversible autoregressions.
class ConstantTarget final : public TargetModel {
 public:
  explicit ConstantTarget(Eigen::Index n, double level = 0.0) : n_(n), level_(level) {}
  [[nodiscard]] Eigen::Index dimension() const override { return n_; }
  double evaluate(const Eigen::Ref<const Vector>& x, Eigen::Ref<Vector> grad) const override {
    check_dimension(x.size());
    grad.setZero();
    return level_;
  }
  [[nodiscard]] double value(const Eigen::Ref<const Vector>&) const override { return level_; }
  [[nodiscard]] std::string name() const override { return "constant"; }

 private:
  Eigen::Index n_;
  double level_;
};

/// Wraps user callables; used by the validation oracles for 1-D targets.
class FunctionTarget final : public TargetModel {
 public:
  using Fn = std::function<double(const Eigen::Ref<const Vector>&, Eigen::Ref<Vector>)>;
  FunctionTarget(Eigen::Index n, Fn fn, std::string label = "function")
      : n_(n), fn_(std::move(fn)), label_(std::move(label)) {}
  [[nodiscard]] Eigen::Index dimension() const override { return n_; }
  double evaluate(const Eigen::Ref<const Vector>& x, Eigen::Ref<Vector> grad) const override {
    check_dimension(x.size());
    return fn_(x, grad);
  }
  [[nodiscard]] std::string name() const override { return label_; }

 private:
  Eigen::Index n_;
  Fn fn_;
  std::string label_;
};

}  // namespace lgm
