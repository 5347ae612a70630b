// Simulates a log-Gaussian Cox process on a 32 x 32 grid, merges it to
// 16 x 16, and compares tuned step sizes and cost on the two resolutions.
#include <chrono>
#include <cstdio>
#include <memory>

#include "lgm/harness/dataset.hpp"
#include "lgm.hpp"

using namespace lgm;

namespace {

void run(const harness::Dataset& data, const harness::KernelSettings& kernel) {
  auto prior = std::make_shared<const SpectralPrior>(harness::prior_for(data, kernel));
  const TargetPtr target = harness::target_for(data);
  std::printf("grid %dx%d, %g events, cell area %g\n", data.grid_side, data.grid_side, data.y.sum(), data.cell_area);
  for (SamplerKind kind : {SamplerKind::AGradZ, SamplerKind::MGrad, SamplerKind::PMALA, SamplerKind::Ellipt}) {
    Sampler sampler(kind, prior, target);
    ChainState state = sampler.initialize(Vector::Zero(data.y.size()));
    Rng rng(3, static_cast<std::uint64_t>(kind));
    const TuneResult tuned = tune_and_freeze(sampler, state, rng, 2000);
    const ChainTrace trace = collect(sampler, state, rng, 3000);
    const double ess = ess_per_coordinate(trace.samples).minCoeff();
    char delta[32] = "-";
    if (tuned.delta) std::snprintf(delta, sizeof delta, "%.3g", *tuned.delta);
    std::printf("  %-7s delta %-7s accept %.3f  min ESS/s %.1f\n", to_string(kind).c_str(), delta,
                trace.acceptance_rate(), ess / trace.seconds);
  }
}

}  // namespace

int main() {
  harness::SimulateSpec spec;
  spec.model = harness::ModelKind::Cox;
  spec.grid = 32;
  spec.kernel = harness::default_kernel(spec.model);
  const harness::Dataset fine = harness::simulate_dataset(spec, 11);
  run(fine, spec.kernel);
  run(harness::down_sample_cox(fine), spec.kernel);
  return 0;
}
