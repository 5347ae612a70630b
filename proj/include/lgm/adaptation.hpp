#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "lgm/samplers.hpp"

namespace lgm {

inline constexpr double kGradientTargetRate = 0.55;
inline constexpr double kRandomWalkTargetRate = 0.25;

inline double default_target_rate(SamplerKind kind) {
  return kind == SamplerKind::PCN ? kRandomWalkTargetRate : kGradientTargetRate;
}

/// Robbins-Monro controller on log(step size):
///   log_delta <- log_delta + c * t^-exponent * (accepted - target_rate)
/// The gain decays, so adaptation diminishes; once frozen nothing changes.
struct AdaptState {
  double log_delta = 0.0;
  double target_rate = kGradientTargetRate;
  double gain = 1.0;
  double exponent = 0.6;
  std::uint64_t iteration = 0;
  bool frozen = false;
  std::uint64_t average_from = std::numeric_limits<std::uint64_t>::max();  // first averaged iteration
  double log_delta_sum = 0.0;
  std::uint64_t averaged = 0;

  [[nodiscard]] double delta() const { return std::exp(log_delta); }
  /// Value adopted on freezing: the mean of log delta over the averaging
  /// window, or the current value if the window is empty.
  [[nodiscard]] double averaged_log_delta() const {
    return averaged == 0 ? log_delta : log_delta_sum / static_cast<double>(averaged);
  }
  [[nodiscard]] double next_gain() const { return gain * std::pow(static_cast<double>(iteration + 1), -exponent); }
};

inline AdaptState make_adapt_state(double initial_step, double target_rate) {
  require(initial_step > 0.0, "initial step must be positive");
  require(target_rate > 0.0 && target_rate < 1.0, "target acceptance rate must lie in (0, 1)");
  AdaptState a;
  a.log_delta = std::log(initial_step);
  a.target_rate = target_rate;
  return a;
}

inline void adapt_step(AdaptState& a, bool accepted) {
  if (a.frozen) throw InvalidArgument("adapt_step called on a frozen controller");
  const double step = a.next_gain();
  ++a.iteration;
  a.log_delta += step * ((accepted ? 1.0 : 0.0) - a.target_rate);
  if (a.iteration > a.average_from) {
    a.log_delta_sum += a.log_delta;
    ++a.averaged;
  }
}

/// Ends adaptation at the window average.
inline double freeze(AdaptState& a) {
  a.log_delta = a.averaged_log_delta();
  a.frozen = true;
  return a.delta();
}

struct TuneResult {
  std::optional<double> delta;  // empty for Ellipt
  std::vector<std::uint8_t> acceptance;
  std::vector<double> delta_trace;
  bool untunable = false;
  double seconds = 0.0;
};

/// Runs burn_in adapted steps, then freezes delta on the sampler. The basis
/// is never recomputed; only the O(n) diagonals are rebuilt after each update.
inline TuneResult tune_and_freeze(Sampler& sampler, ChainState& state, Rng& rng, std::uint64_t burn_in,
                                  std::optional<double> target_rate = std::nullopt) {
  TuneResult result;
  const auto start = std::chrono::steady_clock::now();
  result.acceptance.reserve(burn_in);
  const bool adaptive = has_step_size(sampler.kind());
  AdaptState adapt = make_adapt_state(sampler.delta(), target_rate.value_or(default_target_rate(sampler.kind())));
  adapt.average_from = burn_in / 2;
  if (adaptive) result.delta_trace.reserve(burn_in);
  for (std::uint64_t i = 0; i < burn_in; ++i) {
    const bool accepted = sampler.step(state, rng);
    result.acceptance.push_back(accepted ? 1 : 0);
    if (adaptive) {
      adapt_step(adapt, accepted);
      sampler.set_delta(adapt.delta(), state);
      result.delta_trace.push_back(adapt.delta());
    }
  }
  const double frozen = freeze(adapt);
  if (adaptive) {
    if (burn_in > 0) sampler.set_delta(frozen, state);
    result.delta = sampler.delta();
    if (burn_in >= 2) {
      std::uint64_t accepted_late = 0;
      for (std::uint64_t i = burn_in / 2; i < burn_in; ++i) accepted_late += result.acceptance[i];
      const std::uint64_t late = burn_in - burn_in / 2;
      result.untunable = accepted_late == 0 || accepted_late == late;
    }
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

/// Collected output of a frozen chain.
struct ChainTrace {
  Matrix samples;  // rows are retained iterations
  Vector log_likelihood;
  std::uint64_t accepted = 0;
  std::uint64_t iterations = 0;
  double seconds = 0.0;

  [[nodiscard]] double acceptance_rate() const {
    return iterations == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(iterations);
  }
};

/// Runs `iterations` frozen steps, keeping every `thin`-th state.
inline ChainTrace collect(const Sampler& sampler, ChainState& state, Rng& rng, std::uint64_t iterations,
                          std::uint64_t thin = 1) {
  require(thin >= 1, "thin must be at least 1");
  ChainTrace trace;
  const auto kept = static_cast<Eigen::Index>(iterations / thin);
  trace.samples.resize(kept, state.x.size());
  trace.log_likelihood.resize(kept);
  const auto start = std::chrono::steady_clock::now();
  Eigen::Index row = 0;
  for (std::uint64_t i = 1; i <= iterations; ++i) {
    if (sampler.step(state, rng)) ++trace.accepted;
    if (i % thin == 0 && row < kept) {
      trace.samples.row(row) = state.x.transpose();
      trace.log_likelihood(row) = state.f_x;
      ++row;
    }
  }
  trace.iterations = iterations;
  trace.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return trace;
}

}  // namespace lgm
