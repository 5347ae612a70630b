#pragma once

#include <algorithm>
#include <cctype>
#include <iostream>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "lgm/core.hpp"
#include "lgm/rng.hpp"
#include "lgm/spectral.hpp"
#include "lgm/targets.hpp"

namespace lgm {

enum class SamplerKind { AGradZ, AGradU, MGrad, PCN, PCNL, PMALA, Ellipt };

inline constexpr SamplerKind kAllSamplers[] = {SamplerKind::AGradZ, SamplerKind::AGradU, SamplerKind::MGrad,
                                               SamplerKind::PMALA,  SamplerKind::Ellipt, SamplerKind::PCN,
                                               SamplerKind::PCNL};

inline std::string to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::AGradZ: return "aGrad-z";
    case SamplerKind::AGradU: return "aGrad-u";
    case SamplerKind::MGrad: return "mGrad";
    case SamplerKind::PCN: return "pCN";
    case SamplerKind::PCNL: return "pCNL";
    case SamplerKind::PMALA: return "pMALA";
    case SamplerKind::Ellipt: return "Ellipt";
  }
  return "unknown";
}

inline SamplerKind sampler_kind_from_string(std::string s) {
  std::string key;
  for (char c : s)
    if (std::isalnum(static_cast<unsigned char>(c))) key += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (key == "agradz") return SamplerKind::AGradZ;
  if (key == "agradu") return SamplerKind::AGradU;
  if (key == "mgrad") return SamplerKind::MGrad;
  if (key == "pcn") return SamplerKind::PCN;
  if (key == "pcnl") return SamplerKind::PCNL;
  if (key == "pmala") return SamplerKind::PMALA;
  if (key == "ellipt" || key == "elliptical" || key == "ess") return SamplerKind::Ellipt;
  throw InvalidArgument("unknown sampler: " + s);
}

/// Basis matvecs spent per iteration (initialisation excluded).
inline int matvecs_per_iteration(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::AGradZ: return 2;
    case SamplerKind::AGradU: return 3;
    case SamplerKind::MGrad: return 3;
    case SamplerKind::PCN: return 1;
    case SamplerKind::PCNL: return 2;
    case SamplerKind::PMALA: return 2;
    case SamplerKind::Ellipt: return 1;
  }
  return 0;
}

inline bool has_step_size(SamplerKind kind) { return kind != SamplerKind::Ellipt; }

inline bool uses_gradient(SamplerKind kind) {
  return kind != SamplerKind::PCN && kind != SamplerKind::Ellipt;
}

/// Markov chain state with the caches each kernel reuses between iterations.
///
/// Which caches are live depends on the sampler: ux is kept by mGrad and
/// pMALA, ugrad_x by aGrad-u, mGrad, pCNL and pMALA, and the two tmp vectors
/// by mGrad only. The y-prefixed members are proposal scratch space that is
/// swapped into place on acceptance.
struct ChainState {
  Vector x;
  double f_x = 0.0;
  Vector grad_x;
  Vector ux;
  Vector ugrad_x;
  Vector tmp_sample;
  Vector tmp_mh;

  std::uint64_t accept_count = 0;
  std::uint64_t step_count = 0;
  std::uint64_t aborted_steps = 0;
  Counters counters;

  Vector y, grad_y, uy, ugrad_y, tmp_sample_y, tmp_mh_y;
  Vector aux, aux_spectral, noise, work;
  double f_y = 0.0;

  [[nodiscard]] double acceptance_rate() const {
    return step_count == 0 ? 0.0 : static_cast<double>(accept_count) / static_cast<double>(step_count);
  }

  void resize(Eigen::Index n) {
    for (Vector* v : {&grad_x, &ux, &ugrad_x, &tmp_sample, &tmp_mh, &y, &grad_y, &uy, &ugrad_y, &tmp_sample_y,
                      &tmp_mh_y, &aux, &aux_spectral, &noise, &work})
      v->setZero(n);
  }
};

/// Metropolis-Hastings decision in log space: accept iff log U < log_ratio.
/// NaN and +inf ratios come from broken likelihood evaluations and are
/// rejected.
inline bool mh_accept(double log_ratio, Rng& rng) {
  const double u = rng.uniform();
  if (std::isnan(log_ratio) || log_ratio == kInf) {
    std::cerr << "lgm: rejecting proposal with invalid log ratio " << log_ratio << "\n";
    return false;
  }
  return log_ratio >= 0.0 || std::log(u) < log_ratio;
}

// -- acceptance-ratio terms -------------------------------------------------
//
// Templated on Eigen expressions so the validation oracle can evaluate them
// on fixed-size 1-vectors without heap traffic.

/// g(z, y) = (z - y - (delta/4) grad f(y))^T grad f(y)
template <class Z, class Y, class G>
double agrad_z_term(const Eigen::MatrixBase<Z>& z, const Eigen::MatrixBase<Y>& y, const Eigen::MatrixBase<G>& grad_y,
                    double delta) {
  return (z - y - 0.25 * delta * grad_y).dot(grad_y);
}

/// j(x, y, u) = x^T grad f(y) - (L1 (U^T(2u/delta) + U^T grad f(y) / 2))^T U^T grad f(y)
template <class X, class G, class W, class UG, class L>
double agrad_u_term(const Eigen::MatrixBase<X>& x, const Eigen::MatrixBase<G>& grad_y,
                    const Eigen::MatrixBase<W>& scaled_u_spectral, const Eigen::MatrixBase<UG>& ugrad_y,
                    const Eigen::MatrixBase<L>& lambda1) {
  return x.dot(grad_y) -
         (lambda1.array() * (scaled_u_spectral.array() + 0.5 * ugrad_y.array())).matrix().dot(ugrad_y);
}

/// h(x, y) = (U^T x - tmpMH(y))^T (L3 U^T grad f(y))
template <class UX, class T, class UG, class L>
double mgrad_term(const Eigen::MatrixBase<UX>& ux, const Eigen::MatrixBase<T>& tmp_mh_y,
                  const Eigen::MatrixBase<UG>& ugrad_y, const Eigen::MatrixBase<L>& lambda3) {
  return (ux - tmp_mh_y).dot((lambda3.array() * ugrad_y.array()).matrix());
}

/// k(x, y) = (2+delta)/(4+delta) x^T grad f(y) - 2/(4+delta) y^T grad f(y)
///           - delta/(2(delta+4)) grad f(y)^T C grad f(y)
template <class X, class Y, class G, class UG, class Gm>
double pcnl_term(const Eigen::MatrixBase<X>& x, const Eigen::MatrixBase<Y>& y, const Eigen::MatrixBase<G>& grad_y,
                 const Eigen::MatrixBase<UG>& ugrad_y, const Eigen::MatrixBase<Gm>& gamma, double delta) {
  const double quad = (gamma.array() * ugrad_y.array().square()).sum();
  return (2.0 + delta) / (4.0 + delta) * x.dot(grad_y) - 2.0 / (4.0 + delta) * y.dot(grad_y) -
         delta / (2.0 * (delta + 4.0)) * quad;
}

/// tmpSample = L1 ((2/delta) ux + ugrad), tmpMH = L1 ((2/delta) ux + ugrad / 2)
template <class UX, class UG, class L, class Out1, class Out2>
void mgrad_tmp_vectors(const Eigen::MatrixBase<UX>& ux, const Eigen::MatrixBase<UG>& ugrad,
                       const Eigen::MatrixBase<L>& lambda1, double delta, Eigen::MatrixBase<Out1>& tmp_sample,
                       Eigen::MatrixBase<Out2>& tmp_mh) {
  const double s = 2.0 / delta;
  tmp_sample.derived() = (lambda1.array() * (s * ux.array() + ugrad.array())).matrix();
  tmp_mh.derived() = (lambda1.array() * (s * ux.array() + 0.5 * ugrad.array())).matrix();
}

/// Settings shared by the kernels.
struct SamplerSettings {
  /// Eigenvalues at or below this fraction of the largest are treated as
  /// exact zeros by pMALA's prior term (pseudo-inverse convention).
  double pmala_threshold = 1e-10;
  /// Elliptical slice shrinkage steps before the iteration is abandoned.
  int ellipt_max_shrinks = 100;
};

namespace detail {

inline bool evaluate_proposal(const TargetModel& target, ChainState& s) {
  s.f_y = target.evaluate(s.y, s.grad_y);
  ++s.counters.likelihood_evals;
  return std::isfinite(s.f_y) && s.grad_y.allFinite();
}

inline void finish(ChainState& s, bool accepted) {
  ++s.step_count;
  if (accepted) ++s.accept_count;
}

inline void accept_basic(ChainState& s) {
  s.x.swap(s.y);
  s.grad_x.swap(s.grad_y);
  s.f_x = s.f_y;
}

}  // namespace detail

// -- transition kernels -------------------------------------------------------

/// aGrad-z proposal: draws z ~ N(x + (delta/2) grad f(x), (delta/2) I) into
/// state.aux, stores U^T (2/delta) z in state.aux_spectral and draws
/// y ~ N((2/delta) A z, A) into state.y. Two basis matvecs.
inline void propose_agrad_z(ChainState& s, const SpectralPrior& prior, const DeltaOperators& ops, Rng& rng) {
  const double delta = ops.delta;
  rng.fill_normal(s.noise);
  s.aux = s.x + 0.5 * delta * s.grad_x + std::sqrt(0.5 * delta) * s.noise;
  s.work = (2.0 / delta) * s.aux;
  prior.to_spectral(s.work, s.aux_spectral, s.counters);
  rng.fill_normal(s.noise);
  s.work = ops.sqrt_lambda1.cwiseProduct(ops.sqrt_lambda1.cwiseProduct(s.aux_spectral) + s.noise);
  prior.from_spectral(s.work, s.y, s.counters);
}

/// f(y) - f(x) + g(z, y) - g(z, x) for the proposal held in the state; -inf
/// when the likelihood at y is not finite. O(n).
inline double agrad_z_log_ratio(ChainState& s, const TargetModel& target, double delta) {
  if (!detail::evaluate_proposal(target, s)) return -kInf;
  return s.f_y - s.f_x + agrad_z_term(s.aux, s.y, s.grad_y, delta) - agrad_z_term(s.aux, s.x, s.grad_x, delta);
}

/// Auxiliary sampler on z = u + (delta/2) grad f(x). Two basis matvecs.
inline bool step_agrad_z(ChainState& s, const SpectralPrior& prior, const DeltaOperators& ops,
                         const TargetModel& target, Rng& rng) {
  propose_agrad_z(s, prior, ops, rng);
  const bool accepted = mh_accept(agrad_z_log_ratio(s, target, ops.delta), rng);
  if (accepted) detail::accept_basic(s);
  detail::finish(s, accepted);
  return accepted;
}

/// Auxiliary sampler on u ~ N(x, (delta/2) I). Three basis matvecs.
inline bool step_agrad_u(ChainState& s, const SpectralPrior& prior, const DeltaOperators& ops,
                         const TargetModel& target, Rng& rng) {
  const double delta = ops.delta;
  rng.fill_normal(s.noise);
  s.aux = s.x + std::sqrt(0.5 * delta) * s.noise;
  s.work = (2.0 / delta) * s.aux;
  prior.to_spectral(s.work, s.aux_spectral, s.counters);
  rng.fill_normal(s.noise);
  s.work = ops.lambda1.cwiseProduct(s.aux_spectral + s.ugrad_x) + ops.sqrt_lambda1.cwiseProduct(s.noise);
  prior.from_spectral(s.work, s.y, s.counters);

  double log_ratio = -kInf;
  if (detail::evaluate_proposal(target, s)) {
    prior.to_spectral(s.grad_y, s.ugrad_y, s.counters);
    log_ratio = s.f_y - s.f_x + agrad_u_term(s.x, s.grad_y, s.aux_spectral, s.ugrad_y, ops.lambda1) -
                agrad_u_term(s.y, s.grad_x, s.aux_spectral, s.ugrad_x, ops.lambda1);
  }
  const bool accepted = mh_accept(log_ratio, rng);
  if (accepted) {
    detail::accept_basic(s);
    s.ugrad_x.swap(s.ugrad_y);
  }
  detail::finish(s, accepted);
  return accepted;
}

/// Marginal sampler. Three basis matvecs.
inline bool step_mgrad(ChainState& s, const SpectralPrior& prior, const DeltaOperators& ops,
                       const TargetModel& target, Rng& rng) {
  const double delta = ops.delta;
  rng.fill_normal(s.noise);
  s.work = s.tmp_sample + ops.sqrt_lambda2.cwiseProduct(s.noise);
  prior.from_spectral(s.work, s.y, s.counters);

  double log_ratio = -kInf;
  if (detail::evaluate_proposal(target, s)) {
    prior.to_spectral(s.y, s.uy, s.counters);
    prior.to_spectral(s.grad_y, s.ugrad_y, s.counters);
    mgrad_tmp_vectors(s.uy, s.ugrad_y, ops.lambda1, delta, s.tmp_sample_y, s.tmp_mh_y);
    log_ratio = s.f_y - s.f_x + mgrad_term(s.ux, s.tmp_mh_y, s.ugrad_y, ops.lambda3) -
                mgrad_term(s.uy, s.tmp_mh, s.ugrad_x, ops.lambda3);
  }
  const bool accepted = mh_accept(log_ratio, rng);
  if (accepted) {
    detail::accept_basic(s);
    s.ux.swap(s.uy);
    s.ugrad_x.swap(s.ugrad_y);
    s.tmp_sample.swap(s.tmp_sample_y);
    s.tmp_mh.swap(s.tmp_mh_y);
  }
  detail::finish(s, accepted);
  return accepted;
}

/// Preconditioned Crank-Nicolson. One basis matvec; prior cancels in the ratio.
inline bool step_pcn(ChainState& s, const SpectralPrior& prior, const DeltaOperators& ops,
                     const TargetModel& target, Rng& rng) {
  const double delta = ops.delta;
  const double rho = 2.0 / (2.0 + delta);
  const double scale = std::sqrt(delta * (delta + 4.0)) / (2.0 + delta);
  rng.fill_normal(s.noise);
  s.work = prior.sqrt_eigenvalues().cwiseProduct(s.noise);
  prior.from_spectral(s.work, s.y, s.counters);
  s.y = rho * s.x + scale * s.y;

  s.f_y = target.value(s.y);
  ++s.counters.likelihood_evals;
  const double log_ratio = std::isfinite(s.f_y) ? s.f_y - s.f_x : -kInf;
  const bool accepted = mh_accept(log_ratio, rng);
  if (accepted) {
    s.x.swap(s.y);
    s.f_x = s.f_y;
  }
  detail::finish(s, accepted);
  return accepted;
}

/// Preconditioned Crank-Nicolson Langevin. Two basis matvecs.
inline bool step_pcnl(ChainState& s, const SpectralPrior& prior, const DeltaOperators& ops,
                      const TargetModel& target, Rng& rng) {
  const double delta = ops.delta;
  const auto& gamma = prior.eigenvalues();
  const double rho = 2.0 / (2.0 + delta);
  const double drift = delta / (2.0 + delta);
  const double scale = std::sqrt(delta * (delta + 4.0)) / (2.0 + delta);
  rng.fill_normal(s.noise);
  s.work = drift * gamma.cwiseProduct(s.ugrad_x) + scale * prior.sqrt_eigenvalues().cwiseProduct(s.noise);
  prior.from_spectral(s.work, s.y, s.counters);
  s.y += rho * s.x;

  double log_ratio = -kInf;
  if (detail::evaluate_proposal(target, s)) {
    prior.to_spectral(s.grad_y, s.ugrad_y, s.counters);
    log_ratio = s.f_y - s.f_x + pcnl_term(s.x, s.y, s.grad_y, s.ugrad_y, gamma, delta) -
                pcnl_term(s.y, s.x, s.grad_x, s.ugrad_x, gamma, delta);
  }
  const bool accepted = mh_accept(log_ratio, rng);
  if (accepted) {
    detail::accept_basic(s);
    s.ugrad_x.swap(s.ugrad_y);
  }
  detail::finish(s, accepted);
  return accepted;
}

namespace detail {

/// Mask of eigen-directions pMALA treats as part of the prior's support.
inline Eigen::ArrayXd pmala_support(const SpectralPrior& prior, double threshold) {
  const double cut = threshold * prior.max_eigenvalue();
  return (prior.eigenvalues().array() > cut).cast<double>();
}

/// Spectral mean of the pMALA proposal: (1 - delta/2) ux + (delta/2) Gamma ugrad.
inline Vector pmala_mean(const Vector& ux, const Vector& ugrad, const Vector& gamma, const Eigen::ArrayXd& support,
                         double delta) {
  return ((1.0 - 0.5 * delta) * ux.array() + 0.5 * delta * gamma.array() * ugrad.array()).cwiseProduct(support).matrix();
}

/// sum over supported directions of w_i^2 / gamma_i.
inline double pmala_quadratic(const Vector& w, const Vector& gamma, const Eigen::ArrayXd& support) {
  double q = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (support(i) > 0.0) q += w(i) * w(i) / gamma(i);
  return q;
}

}  // namespace detail

/// Preconditioned MALA with S = C. Two basis matvecs. The Gaussian prior
/// does not cancel, so the ratio carries prior and proposal densities, all
/// evaluated in the eigenbasis.
inline bool step_pmala(ChainState& s, const SpectralPrior& prior, const DeltaOperators& ops,
                       const TargetModel& target, Rng& rng, const SamplerSettings& settings = {}) {
  const double delta = ops.delta;
  const auto& gamma = prior.eigenvalues();
  const Eigen::ArrayXd support = detail::pmala_support(prior, settings.pmala_threshold);
  rng.fill_normal(s.noise);
  const Vector mean_x = detail::pmala_mean(s.ux, s.ugrad_x, gamma, support, delta);
  s.uy = mean_x + (std::sqrt(delta) * prior.sqrt_eigenvalues().array() * s.noise.array() * support).matrix();
  prior.from_spectral(s.uy, s.y, s.counters);

  double log_ratio = -kInf;
  if (detail::evaluate_proposal(target, s)) {
    prior.to_spectral(s.grad_y, s.ugrad_y, s.counters);
    const Vector mean_y = detail::pmala_mean(s.uy, s.ugrad_y, gamma, support, delta);
    const double log_prior = -0.5 * (detail::pmala_quadratic(s.uy, gamma, support) -
                                     detail::pmala_quadratic(s.ux, gamma, support));
    const double log_q_forward = -0.5 / delta * detail::pmala_quadratic(s.uy - mean_x, gamma, support);
    const double log_q_backward = -0.5 / delta * detail::pmala_quadratic(s.ux - mean_y, gamma, support);
    log_ratio = s.f_y - s.f_x + log_prior + log_q_backward - log_q_forward;
  }
  const bool accepted = mh_accept(log_ratio, rng);
  if (accepted) {
    detail::accept_basic(s);
    s.ux.swap(s.uy);
    s.ugrad_x.swap(s.ugrad_y);
  }
  detail::finish(s, accepted);
  return accepted;
}

/// Elliptical slice sampling. One basis matvec to draw nu ~ N(0, C), then
/// as many likelihood evaluations as the bracket shrinkage needs. Never
/// rejects; a step that exhausts the shrink budget keeps x and is counted
/// in aborted_steps.
inline bool step_ellipt(ChainState& s, const SpectralPrior& prior, const TargetModel& target, Rng& rng,
                        const SamplerSettings& settings = {}) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  rng.fill_normal(s.noise);
  s.work = prior.sqrt_eigenvalues().cwiseProduct(s.noise);
  prior.from_spectral(s.work, s.aux, s.counters);  // nu
  const double log_height = s.f_x + std::log(rng.uniform());
  double angle = two_pi * rng.uniform();
  double lo = angle - two_pi;
  double hi = angle;
  for (int shrink = 0; shrink <= settings.ellipt_max_shrinks; ++shrink) {
    s.y = std::cos(angle) * s.x + std::sin(angle) * s.aux;
    s.f_y = target.value(s.y);
    ++s.counters.likelihood_evals;
    if (std::isfinite(s.f_y) && s.f_y > log_height) {
      s.x.swap(s.y);
      s.f_x = s.f_y;
      detail::finish(s, true);
      return true;
    }
    if (angle < 0.0) lo = angle; else hi = angle;
    angle = lo + (hi - lo) * rng.uniform();
  }
  std::cerr << "lgm: elliptical slice exceeded " << settings.ellipt_max_shrinks << " shrink steps; keeping state\n";
  ++s.aborted_steps;
  detail::finish(s, false);
  return false;
}

/// Default starting step sizes: gradient samplers start at 1, the
/// small-step baselines at 0.01.
inline double default_initial_delta(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::AGradZ:
    case SamplerKind::AGradU:
    case SamplerKind::MGrad: return 1.0;
    default: return 0.01;
  }
}

/// A transition kernel bound to its prior, target and current step size.
class Sampler {
 public:
  Sampler(SamplerKind kind, SpectralPriorPtr prior, TargetPtr target, double delta, SamplerSettings settings = {})
      : kind_(kind), prior_(std::move(prior)), target_(std::move(target)), settings_(settings) {
    require(prior_ != nullptr && target_ != nullptr, "sampler needs a prior and a target");
    require(prior_->dimension() == target_->dimension(), "prior and target dimensions differ");
    ops_ = build_delta_operators(*prior_, delta);
  }

  Sampler(SamplerKind kind, SpectralPriorPtr prior, TargetPtr target)
      : Sampler(kind, prior, target, default_initial_delta(kind)) {}

  [[nodiscard]] SamplerKind kind() const { return kind_; }
  [[nodiscard]] double delta() const { return ops_.delta; }
  [[nodiscard]] const DeltaOperators& operators() const { return ops_; }
  [[nodiscard]] const SpectralPrior& prior() const { return *prior_; }
  [[nodiscard]] const SpectralPriorPtr& prior_ptr() const { return prior_; }
  [[nodiscard]] const TargetModel& target() const { return *target_; }
  [[nodiscard]] const SamplerSettings& settings() const { return settings_; }

  /// Builds a coherent state at x0, spending the kernel's initialisation matvecs.
  [[nodiscard]] ChainState initialize(const Vector& x0) const {
    const auto n = prior_->dimension();
    require(x0.size() == n, "initial state has wrong dimension");
    ChainState s;
    s.resize(n);
    s.x = x0;
    s.f_x = target_->evaluate(s.x, s.grad_x);
    ++s.counters.likelihood_evals;
    if (!std::isfinite(s.f_x)) throw InvalidArgument("log-likelihood is not finite at the initial state");
    rebuild_spectral_caches(s);
    return s;
  }

  /// Swaps in a new prior (hyperparameter move) and recomputes the caches
  /// that live in its eigenbasis.
  void set_prior(SpectralPriorPtr prior, ChainState& s) {
    require(prior != nullptr && prior->dimension() == prior_->dimension(), "replacement prior has wrong dimension");
    prior_ = std::move(prior);
    ops_ = build_delta_operators(*prior_, ops_.delta);
    rebuild_spectral_caches(s);
  }

  /// Recomputes ux / ugrad_x (as far as this kernel keeps them) and the
  /// delta-dependent tmp vectors.
  void rebuild_spectral_caches(ChainState& s) const {
    const auto n = prior_->dimension();
    switch (kind_) {
      case SamplerKind::AGradU:
      case SamplerKind::PCNL:
        prior_->to_spectral(s.grad_x, s.ugrad_x, s.counters);
        break;
      case SamplerKind::MGrad:
        prior_->to_spectral(s.x, s.ux, s.counters);
        prior_->to_spectral(s.grad_x, s.ugrad_x, s.counters);
        refresh(s);
        break;
      case SamplerKind::PMALA: {
        prior_->to_spectral(s.x, s.ux, s.counters);
        prior_->to_spectral(s.grad_x, s.ugrad_x, s.counters);
        const Eigen::ArrayXd support = detail::pmala_support(*prior_, settings_.pmala_threshold);
        const double tol = 1e-8 * std::max(1.0, s.x.norm());
        for (Eigen::Index i = 0; i < n; ++i)
          if (support(i) == 0.0) {
            if (std::abs(s.ux(i)) > tol)
              throw InvalidArgument("prior-singular state: x has mass outside the prior's support");
            s.ux(i) = 0.0;
          }
        break;
      }
      default: break;
    }
  }

  /// Changes delta; O(n). The eigenbasis is untouched.
  void set_delta(double delta, ChainState& s) {
    ops_ = build_delta_operators(*prior_, delta);
    refresh(s);
  }

  /// Recomputes the delta-dependent caches of a state (mGrad tmp vectors).
  void refresh(ChainState& s) const {
    if (kind_ == SamplerKind::MGrad) mgrad_tmp_vectors(s.ux, s.ugrad_x, ops_.lambda1, ops_.delta, s.tmp_sample, s.tmp_mh);
  }

  bool step(ChainState& s, Rng& rng) const {
    switch (kind_) {
      case SamplerKind::AGradZ: return step_agrad_z(s, *prior_, ops_, *target_, rng);
      case SamplerKind::AGradU: return step_agrad_u(s, *prior_, ops_, *target_, rng);
      case SamplerKind::MGrad: return step_mgrad(s, *prior_, ops_, *target_, rng);
      case SamplerKind::PCN: return step_pcn(s, *prior_, ops_, *target_, rng);
      case SamplerKind::PCNL: return step_pcnl(s, *prior_, ops_, *target_, rng);
      case SamplerKind::PMALA: return step_pmala(s, *prior_, ops_, *target_, rng, settings_);
      case SamplerKind::Ellipt: return step_ellipt(s, *prior_, *target_, rng, settings_);
    }
    return false;
  }

  /// Largest deviation of the live caches from recomputed values.
  [[nodiscard]] double coherence_error(const ChainState& s) const {
    Counters scratch;
    Vector g(prior_->dimension());
    const double f = target_->evaluate(s.x, g);
    double err = std::abs(f - s.f_x) / std::max(1.0, std::abs(f));
    if (uses_gradient(kind_)) err = std::max(err, (g - s.grad_x).cwiseAbs().maxCoeff());
    const bool keeps_ux = kind_ == SamplerKind::MGrad || kind_ == SamplerKind::PMALA;
    const bool keeps_ugrad = kind_ == SamplerKind::AGradU || kind_ == SamplerKind::MGrad || kind_ == SamplerKind::PCNL ||
                             kind_ == SamplerKind::PMALA;
    if (keeps_ux) err = std::max(err, (prior_->to_spectral(s.x, scratch) - s.ux).cwiseAbs().maxCoeff());
    if (keeps_ugrad) err = std::max(err, (prior_->to_spectral(s.grad_x, scratch) - s.ugrad_x).cwiseAbs().maxCoeff());
    if (kind_ == SamplerKind::MGrad) {
      Vector ts(s.ux.size()), tm(s.ux.size());
      mgrad_tmp_vectors(s.ux, s.ugrad_x, ops_.lambda1, ops_.delta, ts, tm);
      err = std::max(err, (ts - s.tmp_sample).cwiseAbs().maxCoeff());
      err = std::max(err, (tm - s.tmp_mh).cwiseAbs().maxCoeff());
    }
    return err;
  }

 private:
  SamplerKind kind_;
  SpectralPriorPtr prior_;
  TargetPtr target_;
  SamplerSettings settings_;
  DeltaOperators ops_;
};

/// Dense mean and covariance of a kernel's marginal proposal q(y | x).
/// aGrad-z, aGrad-u and mGrad share the same marginal proposal. Test and
/// oracle use only; O(n^3).
struct ProposalMoments {
  Vector mean;
  Matrix covariance;
};

inline ProposalMoments proposal_moments(SamplerKind kind, const SpectralPrior& prior, const DeltaOperators& ops,
                                        const Vector& x, const Vector& grad) {
  require(kind != SamplerKind::Ellipt, "elliptical slice sampling has no proposal density");
  const Matrix u = prior.basis();
  const Vector& gamma = prior.eigenvalues();
  const double delta = ops.delta;
  Counters scratch;
  const Vector ux = prior.to_spectral(x, scratch);
  const Vector ug = prior.to_spectral(grad, scratch);
  ProposalMoments out;
  Vector mean_w;
  Vector cov_w;
  switch (kind) {
    case SamplerKind::AGradZ:
    case SamplerKind::AGradU:
    case SamplerKind::MGrad:
      mean_w = ops.lambda1.cwiseProduct((2.0 / delta) * ux + ug);
      cov_w = ops.lambda2;
      break;
    case SamplerKind::PCN:
      mean_w = (2.0 / (2.0 + delta)) * ux;
      cov_w = delta * (delta + 4.0) / ((2.0 + delta) * (2.0 + delta)) * gamma;
      break;
    case SamplerKind::PCNL:
      mean_w = (2.0 / (2.0 + delta)) * ux + (delta / (2.0 + delta)) * gamma.cwiseProduct(ug);
      cov_w = delta * (delta + 4.0) / ((2.0 + delta) * (2.0 + delta)) * gamma;
      break;
    case SamplerKind::PMALA:
      mean_w = (1.0 - 0.5 * delta) * ux + 0.5 * delta * gamma.cwiseProduct(ug);
      cov_w = delta * gamma;
      break;
    default: break;
  }
  out.mean = u * mean_w;
  out.covariance = u * cov_w.asDiagonal() * u.transpose();
  return out;
}

}  // namespace lgm
