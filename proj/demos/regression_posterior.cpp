// Samples a Gaussian-process regression posterior with every sampler and
// compares the sample mean to the closed-form posterior mean.
#include <cstdio>
#include <memory>

#include "lgm/harness/dataset.hpp"
#include "lgm.hpp"
#include "lgm/oracle.hpp"

using namespace lgm;

int main() {
  harness::SimulateSpec spec;
  spec.model = harness::ModelKind::Regression;
  spec.n = 100;
  spec.sigma2 = 0.1;
  spec.kernel = harness::default_kernel(spec.model);
  const harness::Dataset data = harness::simulate_dataset(spec, 7);

  auto prior = std::make_shared<const SpectralPrior>(harness::prior_for(data, spec.kernel));
  const TargetPtr target = harness::target_for(data);
  const oracle::ExactPosterior exact = oracle::exact_gaussian_posterior(*prior, data.sigma2, data.y);

  std::printf("%-8s %10s %8s %9s %15s\n", "sampler", "delta", "accept", "min ESS", "max |mean err|");
  for (SamplerKind kind : kAllSamplers) {
    Sampler sampler(kind, prior, target);
    ChainState state = sampler.initialize(Vector::Zero(data.y.size()));
    Rng rng(1, static_cast<std::uint64_t>(kind));
    const TuneResult tuned = tune_and_freeze(sampler, state, rng, 2000);
    const ChainTrace trace = collect(sampler, state, rng, 5000);
    const Vector mean = trace.samples.colwise().mean().transpose();
    const double err = (mean - exact.mean).cwiseAbs().maxCoeff();
    char delta[32] = "-";
    if (tuned.delta) std::snprintf(delta, sizeof delta, "%.4g", *tuned.delta);
    std::printf("%-8s %10s %8.3f %9.1f %15.4f\n", to_string(kind).c_str(), delta, trace.acceptance_rate(),
                ess_per_coordinate(trace.samples).minCoeff(), err);
  }
  return 0;
}
