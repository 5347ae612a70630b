// Learns the variance and lengthscale of a squared-exponential prior
// together with the latent field, once with the joint (x, theta) move and
// once with Metropolis-within-Gibbs updates of theta.
#include <cmath>
#include <cstdio>
#include <memory>

#include "lgm/harness/dataset.hpp"
#include "lgm.hpp"

using namespace lgm;

int main() {
  harness::SimulateSpec spec;
  spec.model = harness::ModelKind::Regression;
  spec.n = 60;
  spec.sigma2 = 0.05;
  spec.kernel = harness::default_kernel(spec.model);
  spec.kernel.variance = 2.0;
  spec.kernel.lengthscale2 = 0.02;
  const harness::Dataset data = harness::simulate_dataset(spec, 5);
  const HyperModel model = squared_exponential_hyper_model(data.inputs, 1, 1e-8);

  Vector theta0(2);
  theta0 << 0.0, 0.5 * std::log(0.1);
  std::printf("generating theta: log sigma %.3f, log l %.3f\n", 0.5 * std::log(2.0), 0.5 * std::log(0.02));
  for (HyperMode mode : {HyperMode::Joint, HyperMode::Gibbs}) {
    HyperChainConfig config;
    config.mode = mode;
    config.burn_in = 3000;
    config.collect = 6000;
    config.latent_per_theta = 10;
    const HyperChainResult r = run_hyper_chain(model, harness::target_for(data), theta0, Vector::Zero(spec.n), config);
    const Vector mean = r.theta_trace.colwise().mean().transpose();
    std::printf("%-6s theta mean (%.3f, %.3f)  theta accept %.2f  latent accept %.2f  %.2fs\n",
                to_string(mode).c_str(), mean(0), mean(1), r.theta_acceptance, r.latent_acceptance, r.seconds);
  }
  return 0;
}
