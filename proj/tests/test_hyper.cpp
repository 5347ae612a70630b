#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "lgm/hyper.hpp"

using namespace lgm;

namespace {

Matrix line_inputs(Eigen::Index n) { return Vector::LinSpaced(n, 0.0, 1.0); }

Vector theta_of(double log_sigma, double log_l) {
  Vector t(2);
  t << log_sigma, log_l;
  return t;
}

double dense_log_normal(const Vector& x, const Matrix& cov) {
  Eigen::LLT<Matrix> llt(cov);
  const Vector w = llt.matrixL().solve(x);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + logdet + w.squaredNorm());
}

TargetPtr regression(Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed, 0);
  return std::make_shared<const RegressionTarget>(rng.normal_vector(n), 0.2);
}

}  // namespace

TEST(HyperModes, Names) {
  for (HyperMode m : {HyperMode::Fixed, HyperMode::Gibbs, HyperMode::Joint})
    EXPECT_EQ(hyper_mode_from_string(to_string(m)), m);
  EXPECT_THROW(hyper_mode_from_string("em"), InvalidArgument);
}

TEST(HyperModel, SquaredExponentialParameterization) {
  const auto model = squared_exponential_hyper_model(line_inputs(4));
  const auto blocks = model.covariance_blocks(theta_of(std::log(2.0), std::log(0.5)));
  ASSERT_EQ(blocks.size(), 1u);
  EXPECT_NEAR(blocks[0](0, 0), 4.0, 1e-14);
  const double d2 = 1.0 / 9.0;
  EXPECT_NEAR(blocks[0](0, 1), 4.0 * std::exp(-0.5 * d2 / 0.25), 1e-14);
}

TEST(HyperModel, OneBlockPerClass) {
  const auto model = squared_exponential_hyper_model(line_inputs(3), 2);
  EXPECT_EQ(model.theta_dimension, 4);
  Vector theta(4);
  theta << 0.0, 0.0, std::log(3.0), 0.0;
  Counters counters;
  const auto prior = decompose_hyper(model, theta, counters);
  EXPECT_EQ(counters.factorizations, 2u);
  EXPECT_EQ(prior->dimension(), 6);
  EXPECT_NEAR(prior->covariance()(3, 3), 9.0, 1e-12);
  EXPECT_NEAR(prior->covariance()(0, 3), 0.0, 1e-14);
  EXPECT_THROW(squared_exponential_hyper_model(line_inputs(3), 0), InvalidArgument);
}

TEST(Densities, EvidenceMatchesDenseGaussian) {
  const auto model = squared_exponential_hyper_model(line_inputs(6));
  Counters counters;
  const auto prior = decompose_hyper(model, theta_of(0.2, -1.0), counters);
  Rng rng(1, 0);
  const Vector z = rng.normal_vector(6);
  const double delta = 0.3;
  const Matrix cov = prior->covariance() + 0.5 * delta * Matrix::Identity(6, 6);
  EXPECT_NEAR(log_evidence(z, *prior, delta, counters), dense_log_normal(z, cov), 1e-9);
  EXPECT_THROW(log_evidence_spectral(*prior, z, 0.0), InvalidArgument);
}

TEST(Densities, PriorDensityMatchesDenseGaussian) {
  const auto model = squared_exponential_hyper_model(line_inputs(5));
  Counters counters;
  const auto prior = decompose_hyper(model, theta_of(0.0, -2.0), counters);
  Rng rng(2, 0);
  const Vector x = rng.normal_vector(5);
  const Counters before = counters;
  EXPECT_NEAR(log_prior_density(x, *prior, counters), dense_log_normal(x, prior->covariance()), 1e-8);
  EXPECT_EQ(counters.matvecs - before.matvecs, 1u);
}

TEST(Densities, ThetaPrior) {
  const auto model = squared_exponential_hyper_model(line_inputs(3));
  Counters counters;
  const HyperState h = make_hyper_state(model, theta_of(0.0, 0.0), 100.0, 0.1, counters);
  EXPECT_NEAR(log_theta_prior(h, theta_of(10.0, -10.0)), -1.0, 1e-15);
  EXPECT_THROW(make_hyper_state(model, Vector::Zero(3), 100.0, 0.1, counters), InvalidArgument);
  EXPECT_THROW(make_hyper_state(model, theta_of(0, 0), 0.0, 0.1, counters), InvalidArgument);
}

TEST(JointMove, ZeroKappaReplaysAgradZ) {
  const Eigen::Index n = 8;
  const auto model = squared_exponential_hyper_model(line_inputs(n));
  auto target = regression(n, 3);
  Counters counters;
  HyperState h = make_hyper_state(model, theta_of(0.0, -1.5), 100.0, 0.0, counters);
  const double delta = 0.4;
  Sampler reference(SamplerKind::AGradZ, h.prior, target, delta);
  ChainState a = reference.initialize(Vector::Zero(n));
  ChainState b = a;
  Rng rng_a(7, 0), rng_b(7, 0), theta_rng(7, 1);
  for (int i = 0; i < 300; ++i) {
    JointMoveTerms terms;
    const bool ja = step_joint_x_theta(a, h, model, *target, delta, rng_a, theta_rng, &terms);
    const bool jb = reference.step(b, rng_b);
    ASSERT_EQ(ja, jb) << "step " << i;
    ASSERT_EQ(a.x, b.x) << "step " << i;
    EXPECT_EQ(terms.hyper, 0.0);
  }
  EXPECT_EQ(a.accept_count, b.accept_count);
}

TEST(JointMove, FailedDecompositionKeepsStreamAligned) {
  const Eigen::Index n = 4;
  HyperModel broken = squared_exponential_hyper_model(line_inputs(n));
  const auto good = broken.covariance_blocks;
  broken.covariance_blocks = [good](const Vector& theta) {
    if (theta(0) > 0.5) throw NumericalError("refusing large variance");
    return good(theta);
  };
  auto target = regression(n, 4);
  Counters counters;
  HyperState h = make_hyper_state(broken, theta_of(0.0, -1.0), 100.0, 0.0, counters);
  h.theta(0) = 1.0;  // every proposal now fails
  Sampler sampler(SamplerKind::AGradZ, h.prior, target, 0.5);
  ChainState s = sampler.initialize(Vector::Zero(n));
  Rng chain(1, 0), mirror(1, 0), theta_rng(1, 1);
  JointMoveTerms terms;
  EXPECT_FALSE(step_joint_x_theta(s, h, broken, *target, 0.5, chain, theta_rng, &terms));
  EXPECT_EQ(h.failed_decompositions, 1u);
  EXPECT_EQ(terms.total(), -kInf);
  Vector scratch(n);
  mirror.fill_normal(scratch);
  mirror.fill_normal(scratch);
  mirror.uniform();
  EXPECT_EQ(chain.uniform(), mirror.uniform());
}

TEST(GibbsMove, AcceptsIdenticalThetaWhenKappaIsZero) {
  const auto model = squared_exponential_hyper_model(line_inputs(5));
  Counters counters;
  HyperState h = make_hyper_state(model, theta_of(0.1, -1.0), 100.0, 0.0, counters);
  ChainState s;
  s.x = Vector::Constant(5, 0.3);
  Rng rng(3, 1);
  for (int i = 0; i < 20; ++i) EXPECT_TRUE(step_gibbs_theta(s, h, model, rng, counters));
  EXPECT_EQ(h.accepts, 20u);
}

TEST(HyperChain, JointRequiresAgradZ) {
  HyperChainConfig config;
  config.latent_sampler = SamplerKind::MGrad;
  const auto model = squared_exponential_hyper_model(line_inputs(3));
  EXPECT_THROW(run_hyper_chain(model, regression(3, 5), theta_of(0, 0), Vector::Zero(3), config), InvalidArgument);
  config.mode = HyperMode::Gibbs;
  config.burn_in = config.collect = 20;
  EXPECT_NO_THROW(run_hyper_chain(model, regression(3, 5), theta_of(0, 0), Vector::Zero(3), config));
}

TEST(HyperChain, ShapesAndCounters) {
  const Eigen::Index n = 6;
  const auto model = squared_exponential_hyper_model(line_inputs(n));
  HyperChainConfig config;
  config.burn_in = 200;
  config.collect = 300;
  config.latent_per_theta = 10;
  const auto r = run_hyper_chain(model, regression(n, 6), theta_of(0.0, -1.0), Vector::Zero(n), config);
  EXPECT_EQ(r.latent_trace.rows(), 300);
  EXPECT_EQ(r.log_likelihood.size(), 300);
  EXPECT_EQ(r.theta_trace.rows(), 30);
  EXPECT_EQ(r.counters.factorizations, 1u + 50u);
  EXPECT_GT(r.delta, 0.0);
  EXPECT_GE(r.burn_in_seconds, 0.0);
  EXPECT_LE(r.burn_in_seconds, r.seconds);
}

TEST(HyperChain, FixedModeAndZeroRateFreezeTheta) {
  const Eigen::Index n = 5;
  const auto model = squared_exponential_hyper_model(line_inputs(n));
  HyperChainConfig config;
  config.burn_in = 100;
  config.collect = 100;
  for (auto [mode, r] : {std::pair{HyperMode::Fixed, std::uint64_t{10}}, std::pair{HyperMode::Gibbs, std::uint64_t{0}}}) {
    config.mode = mode;
    config.latent_per_theta = r;
    const auto out = run_hyper_chain(model, regression(n, 7), theta_of(0.0, -1.0), Vector::Zero(n), config);
    EXPECT_EQ(out.theta_trace.rows(), 0);
    EXPECT_EQ(out.counters.factorizations, 1u);
  }
}

TEST(HyperChain, DeterministicForFixedSeed) {
  const Eigen::Index n = 5;
  const auto model = squared_exponential_hyper_model(line_inputs(n));
  HyperChainConfig config;
  config.burn_in = 100;
  config.collect = 200;
  config.seed = 12;
  const auto a = run_hyper_chain(model, regression(n, 8), theta_of(0.0, -1.0), Vector::Zero(n), config);
  const auto b = run_hyper_chain(model, regression(n, 8), theta_of(0.0, -1.0), Vector::Zero(n), config);
  EXPECT_EQ(a.latent_trace, b.latent_trace);
  EXPECT_EQ(a.theta_trace, b.theta_trace);
  EXPECT_EQ(a.kappa, b.kappa);
}
