#pragma once

#include <chrono>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lgm/adaptation.hpp"
#include "lgm/kernels.hpp"
#include "lgm/samplers.hpp"
#include "lgm/spectral.hpp"

namespace lgm {

/// Maps log-scale hyperparameters theta to the covariance blocks of C_theta.
struct HyperModel {
  Eigen::Index theta_dimension = 0;
  std::function<std::vector<Matrix>(const Vector& theta)> covariance_blocks;
  DecompositionOptions decomposition;
};

/// Squared-exponential prior with theta = (log sigma_x, log l) per class;
/// `classes` independent blocks share the inputs.
inline HyperModel squared_exponential_hyper_model(Matrix inputs, int classes = 1, double jitter = 0.0) {
  require(classes >= 1, "need at least one class");
  HyperModel model;
  model.theta_dimension = 2 * classes;
  model.decomposition.jitter = jitter;
  model.covariance_blocks = [inputs = std::move(inputs), classes](const Vector& theta) {
    std::vector<Matrix> blocks;
    for (int k = 0; k < classes; ++k) {
      KernelSpec spec;
      spec.kind = KernelKind::SquaredExponential;
      spec.variance = std::exp(2.0 * theta(2 * k));
      spec.lengthscale2 = std::exp(2.0 * theta(2 * k + 1));
      spec.inputs = inputs;
      blocks.push_back(build_kernel(spec));
    }
    return blocks;
  };
  return model;
}

/// Eigendecomposes every block of C_theta. One factorization per block.
inline SpectralPriorPtr decompose_hyper(const HyperModel& model, const Vector& theta, Counters& counters) {
  const auto blocks = model.covariance_blocks(theta);
  std::vector<SpectralPrior> parts;
  parts.reserve(blocks.size());
  for (const auto& c : blocks) parts.push_back(eigendecompose_covariance(c, model.decomposition, &counters));
  return std::make_shared<const SpectralPrior>(SpectralPrior::block_diagonal(parts));
}

/// Hyperparameter chain state. `prior` always corresponds to C_theta at the
/// stored theta: a decomposition is adopted only together with its theta.
struct HyperState {
  Vector theta;
  Vector prior_mean;
  Vector prior_variance;  // diagonal Gaussian prior on theta
  SpectralPriorPtr prior;
  double kappa = 0.1;     // proposal variance: theta' ~ N(theta, kappa I)
  std::uint64_t proposals = 0;
  std::uint64_t accepts = 0;
  std::uint64_t failed_decompositions = 0;
};

inline HyperState make_hyper_state(const HyperModel& model, Vector theta, double prior_variance, double kappa,
                                   Counters& counters) {
  require(theta.size() == model.theta_dimension, "theta has wrong dimension");
  require(prior_variance > 0.0 && kappa >= 0.0, "invalid hyperparameter settings");
  HyperState h;
  h.prior_mean = Vector::Zero(theta.size());
  h.prior_variance = Vector::Constant(theta.size(), prior_variance);
  h.theta = std::move(theta);
  h.kappa = kappa;
  h.prior = decompose_hyper(model, h.theta, counters);
  return h;
}

inline double log_theta_prior(const HyperState& h, const Vector& theta) {
  return -0.5 * ((theta - h.prior_mean).array().square() / h.prior_variance.array()).sum();
}

/// log N(z | 0, C + (delta/2) I) from the spectral coordinates uz = U^T z.
inline double log_evidence_spectral(const SpectralPrior& prior, const Eigen::Ref<const Vector>& uz, double delta) {
  require(delta > 0.0, "delta must be positive");
  const Eigen::ArrayXd var = prior.eigenvalues().array() + 0.5 * delta;
  return -0.5 * ((kLog2Pi + var.log()) + uz.array().square() / var).sum();
}

/// log Z(z, theta) = log N(z | 0, C_theta + (delta/2) I). One basis matvec.
inline double log_evidence(const Eigen::Ref<const Vector>& z, const SpectralPrior& prior, double delta,
                           Counters& counters) {
  return log_evidence_spectral(prior, prior.to_spectral(z, counters), delta);
}

/// log N(x | 0, C) with eigenvalues at or below threshold * max treated as
/// zero (pseudo-inverse and pseudo-determinant). One basis matvec.
inline double log_prior_density(const Eigen::Ref<const Vector>& x, const SpectralPrior& prior, Counters& counters,
                                double threshold = 1e-10) {
  const Vector ux = prior.to_spectral(x, counters);
  const double cut = threshold * prior.max_eigenvalue();
  double out = 0.0;
  for (Eigen::Index i = 0; i < ux.size(); ++i) {
    const double g = prior.eigenvalues()(i);
    if (g > cut) out += -0.5 * (kLog2Pi + std::log(g) + ux(i) * ux(i) / g);
  }
  return out;
}

/// Factors of the joint-move log ratio, kept apart so the product form can
/// be checked.
struct JointMoveTerms {
  double latent = -kInf;  // f(y) - f(x) + g(z,y) - g(z,x)
  double hyper = -kInf;   // log Z(z,theta') - log Z(z,theta) + log p(theta') - log p(theta)
  [[nodiscard]] double total() const { return latent + hyper; }
};

/// Joint (x, theta) -> (y, theta') move conditional on the aGrad-z auxiliary
/// z. The chain stream draws z, y and the accept uniform in the same order
/// as step_agrad_z; theta' comes from its own stream, so with kappa = 0 the
/// decisions coincide bitwise with aGrad-z at fixed theta.
inline bool step_joint_x_theta(ChainState& s, HyperState& h, const HyperModel& model, const TargetModel& target,
                               double delta, Rng& chain_rng, Rng& theta_rng, JointMoveTerms* terms_out = nullptr) {
  Vector theta_new = h.theta;
  for (Eigen::Index i = 0; i < theta_new.size(); ++i) theta_new(i) += std::sqrt(h.kappa) * theta_rng.normal();
  ++h.proposals;

  SpectralPriorPtr proposed;
  try {
    proposed = decompose_hyper(model, theta_new, s.counters);
  } catch (const Error& e) {
    std::cerr << "lgm: rejecting hyperparameter proposal, decomposition failed: " << e.what() << "\n";
    ++h.failed_decompositions;
    // keep the chain stream aligned with an ordinary aGrad-z step
    chain_rng.fill_normal(s.noise);
    chain_rng.fill_normal(s.noise);
    chain_rng.uniform();
    detail::finish(s, false);
    if (terms_out) *terms_out = JointMoveTerms{};
    return false;
  }
  const DeltaOperators ops = build_delta_operators(*proposed, delta);
  propose_agrad_z(s, *proposed, ops, chain_rng);

  JointMoveTerms terms;
  terms.latent = agrad_z_log_ratio(s, target, delta);
  // Both evidences from U^T (2/delta) z so that identical priors give identical values.
  const double log_z_new = log_evidence_spectral(*proposed, 0.5 * delta * s.aux_spectral, delta);
  s.work = (2.0 / delta) * s.aux;
  const Vector old_spectral = h.prior->to_spectral(s.work, s.counters);
  const double log_z_old = log_evidence_spectral(*h.prior, 0.5 * delta * old_spectral, delta);
  terms.hyper = log_z_new - log_z_old + log_theta_prior(h, theta_new) - log_theta_prior(h, h.theta);
  if (terms_out) *terms_out = terms;

  const bool accepted = mh_accept(terms.total(), chain_rng);
  if (accepted) {
    detail::accept_basic(s);
    h.theta = std::move(theta_new);
    h.prior = std::move(proposed);
    ++h.accepts;
  }
  detail::finish(s, accepted);
  return accepted;
}

/// Metropolis update of theta given x, targeting N(x | 0, C_theta) p(theta).
/// One decomposition per call.
inline bool step_gibbs_theta(const ChainState& s, HyperState& h, const HyperModel& model, Rng& theta_rng,
                             Counters& counters) {
  Vector theta_new = h.theta;
  for (Eigen::Index i = 0; i < theta_new.size(); ++i) theta_new(i) += std::sqrt(h.kappa) * theta_rng.normal();
  ++h.proposals;
  SpectralPriorPtr proposed;
  try {
    proposed = decompose_hyper(model, theta_new, counters);
  } catch (const Error& e) {
    std::cerr << "lgm: rejecting hyperparameter proposal, decomposition failed: " << e.what() << "\n";
    ++h.failed_decompositions;
    theta_rng.uniform();
    return false;
  }
  const double log_ratio = log_prior_density(s.x, *proposed, counters) - log_prior_density(s.x, *h.prior, counters) +
                           log_theta_prior(h, theta_new) - log_theta_prior(h, h.theta);
  const bool accepted = mh_accept(log_ratio, theta_rng);
  if (accepted) {
    h.theta = std::move(theta_new);
    h.prior = std::move(proposed);
    ++h.accepts;
  }
  return accepted;
}

enum class HyperMode { Fixed, Gibbs, Joint };

inline std::string to_string(HyperMode mode) {
  switch (mode) {
    case HyperMode::Fixed: return "fixed";
    case HyperMode::Gibbs: return "gibbs";
    case HyperMode::Joint: return "joint";
  }
  return "unknown";
}

inline HyperMode hyper_mode_from_string(const std::string& s) {
  if (s == "fixed") return HyperMode::Fixed;
  if (s == "gibbs") return HyperMode::Gibbs;
  if (s == "joint") return HyperMode::Joint;
  throw InvalidArgument("unknown hyper mode: " + s);
}

struct HyperChainConfig {
  HyperMode mode = HyperMode::Joint;
  SamplerKind latent_sampler = SamplerKind::AGradZ;  // joint mode requires aGrad-z
  std::uint64_t latent_per_theta = 10;               // R; 0 freezes theta
  std::uint64_t burn_in = 1000;
  std::uint64_t collect = 1000;
  double initial_delta = 1.0;
  double initial_kappa = 0.1;
  double theta_prior_variance = 100.0;
  double theta_target_rate = kRandomWalkTargetRate;
  std::uint64_t seed = 1;
};

struct HyperChainResult {
  Matrix theta_trace;      // one row per theta move in the collection phase
  Vector log_likelihood;   // per iteration, collection phase
  Matrix latent_trace;     // per iteration, collection phase
  double delta = 0.0;
  double kappa = 0.0;
  double latent_acceptance = 0.0;
  double theta_acceptance = 0.0;
  Counters counters;
  double seconds = 0.0;
  double burn_in_seconds = 0.0;
};

/// Interleaves R latent steps with one theta move. In joint mode each theta
/// move is the joint (x, theta) update; the latent-only steps tune delta and
/// the joint steps tune kappa during burn-in.
inline HyperChainResult run_hyper_chain(const HyperModel& model, TargetPtr target, const Vector& theta0,
                                        const Vector& x0, const HyperChainConfig& config) {
  require(config.mode != HyperMode::Joint || config.latent_sampler == SamplerKind::AGradZ,
          "the joint move is defined for the aGrad-z latent sampler");
  const auto start = std::chrono::steady_clock::now();
  Rng chain_rng(config.seed, 0);
  Rng theta_rng(config.seed, 1);
  Counters hyper_counters;
  HyperState h = make_hyper_state(model, theta0, config.theta_prior_variance, config.initial_kappa, hyper_counters);

  Sampler latent(config.latent_sampler, h.prior, target,
                 has_step_size(config.latent_sampler) ? config.initial_delta : 1.0);
  ChainState s = latent.initialize(x0);
  s.counters.factorizations += hyper_counters.factorizations;

  AdaptState delta_adapt = make_adapt_state(latent.delta(), default_target_rate(config.latent_sampler));
  AdaptState kappa_adapt = make_adapt_state(std::max(config.initial_kappa, 1e-12), config.theta_target_rate);
  delta_adapt.average_from = config.burn_in / 2;
  const bool theta_moves = config.mode != HyperMode::Fixed && config.latent_per_theta > 0;

  HyperChainResult out;
  const auto total = config.burn_in + config.collect;
  std::vector<Vector> thetas;
  out.log_likelihood.resize(static_cast<Eigen::Index>(config.collect));
  out.latent_trace.resize(static_cast<Eigen::Index>(config.collect), x0.size());
  std::uint64_t latent_steps = 0, latent_accepts = 0, theta_steps = 0, theta_accepts = 0;

  for (std::uint64_t it = 0; it < total; ++it) {
    const bool burning = it < config.burn_in;
    if (it == config.burn_in)
      out.burn_in_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool accepted = latent.step(s, chain_rng);
    if (!burning) {
      ++latent_steps;
      latent_accepts += accepted ? 1 : 0;
    }
    if (burning && has_step_size(config.latent_sampler)) {
      adapt_step(delta_adapt, accepted);
      latent.set_delta(delta_adapt.delta(), s);
    }
    if (theta_moves && (it + 1) % config.latent_per_theta == 0) {
      bool theta_accepted = false;
      if (config.mode == HyperMode::Joint) {
        theta_accepted = step_joint_x_theta(s, h, model, *target, latent.delta(), chain_rng, theta_rng);
      } else {
        theta_accepted = step_gibbs_theta(s, h, model, theta_rng, s.counters);
      }
      if (theta_accepted) latent.set_prior(h.prior, s);
      if (burning) {
        adapt_step(kappa_adapt, theta_accepted);
        h.kappa = kappa_adapt.delta();
      } else {
        ++theta_steps;
        theta_accepts += theta_accepted ? 1 : 0;
        thetas.push_back(h.theta);
      }
    }
    if (it + 1 == config.burn_in && has_step_size(config.latent_sampler))
      latent.set_delta(freeze(delta_adapt), s);
    if (!burning) {
      const auto row = static_cast<Eigen::Index>(it - config.burn_in);
      out.log_likelihood(row) = s.f_x;
      out.latent_trace.row(row) = s.x.transpose();
    }
  }
  out.theta_trace.resize(static_cast<Eigen::Index>(thetas.size()), theta0.size());
  for (std::size_t i = 0; i < thetas.size(); ++i) out.theta_trace.row(static_cast<Eigen::Index>(i)) = thetas[i].transpose();
  out.delta = latent.delta();
  out.kappa = h.kappa;
  out.latent_acceptance = latent_steps ? static_cast<double>(latent_accepts) / static_cast<double>(latent_steps) : 0.0;
  out.theta_acceptance = theta_steps ? static_cast<double>(theta_accepts) / static_cast<double>(theta_steps) : 0.0;
  out.counters = s.counters;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (config.collect == 0) out.burn_in_seconds = out.seconds;
  return out;
}

}  // namespace lgm
