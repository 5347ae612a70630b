#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "lgm/core.hpp"

namespace lgm {

inline constexpr Eigen::Index kMaxAutocovarianceLag = 10000;

struct Autocovariance {
  Vector values;  // lag 0..max_lag, 1/T normalised
  bool zero_variance = false;
};

/// Biased empirical autocovariance up to min(T - 1, max_lag).
inline Autocovariance autocovariance(const Eigen::Ref<const Vector>& series,
                                     Eigen::Index max_lag = kMaxAutocovarianceLag) {
  const Eigen::Index t = series.size();
  require(t >= 10, "autocovariance needs at least 10 observations");
  const Eigen::Index lags = std::min(t - 1, max_lag);
  Autocovariance out;
  out.values = Vector::Zero(lags + 1);
  const Vector centred = series.array() - series.mean();
  const double scale = std::max(series.cwiseAbs().maxCoeff(), 1e-300);
  if (centred.cwiseAbs().maxCoeff() <= 1e-14 * scale) {
    out.zero_variance = true;
    return out;
  }
  const double inv_t = 1.0 / static_cast<double>(t);
  if (t * (lags + 1) <= 4'000'000) {
    for (Eigen::Index k = 0; k <= lags; ++k)
      out.values(k) = centred.head(t - k).dot(centred.tail(t - k)) * inv_t;
    return out;
  }
  // Wiener-Khinchin with zero padding to avoid circular wrap-around.
  Eigen::Index size = 1;
  while (size < 2 * t) size <<= 1;
  std::vector<double> padded(static_cast<std::size_t>(size), 0.0);
  for (Eigen::Index i = 0; i < t; ++i) padded[static_cast<std::size_t>(i)] = centred(i);
  thread_local Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> spectrum;
  fft.fwd(spectrum, padded);
  for (auto& c : spectrum) c = std::complex<double>(std::norm(c), 0.0);
  std::vector<double> acf;
  fft.inv(acf, spectrum);
  for (Eigen::Index k = 0; k <= lags; ++k) out.values(k) = acf[static_cast<std::size_t>(k)] * inv_t;
  return out;
}

struct EssResult {
  double ess = 0.0;
  bool degenerate = false;
};

/// Effective sample size with Geyer's initial monotone positive sequence:
/// pair autocorrelations Gamma_m = rho(2m) + rho(2m+1), stop at the first
/// non-positive pair, force the retained pairs to be non-increasing, and use
/// tau = -1 + 2 sum Gamma_m. The result is clipped to [1, T]. A constant
/// series is reported as ESS = T with the degenerate flag set.
inline EssResult ess_geyer(const Eigen::Ref<const Vector>& series) {
  const Eigen::Index t = series.size();
  require(t >= 100, "ESS needs at least 100 observations");
  const Autocovariance acov = autocovariance(series);
  EssResult out;
  if (acov.zero_variance) {
    out.ess = static_cast<double>(t);
    out.degenerate = true;
    return out;
  }
  const Vector& g = acov.values;
  const double g0 = g(0);
  const Eigen::Index pairs = g.size() / 2;
  double tau = 0.0;
  double previous = kInf;
  for (Eigen::Index m = 0; m < pairs; ++m) {
    double pair = (g(2 * m) + g(2 * m + 1)) / g0;
    if (pair <= 0.0) break;
    pair = std::min(pair, previous);
    previous = pair;
    tau += pair;
  }
  tau = -1.0 + 2.0 * tau;
  const double n = static_cast<double>(t);
  out.ess = tau > 0.0 ? std::clamp(n / tau, 1.0, n) : n;
  return out;
}

/// Per-coordinate ESS of a T x n sample matrix.
inline Vector ess_per_coordinate(const Matrix& samples) {
  Vector ess(samples.cols());
  for (Eigen::Index j = 0; j < samples.cols(); ++j) ess(j) = ess_geyer(samples.col(j)).ess;
  return ess;
}

inline double median(Vector v) {
  require(v.size() > 0, "median of an empty vector");
  std::sort(v.data(), v.data() + v.size());
  const Eigen::Index n = v.size();
  return n % 2 == 1 ? v(n / 2) : 0.5 * (v(n / 2 - 1) + v(n / 2));
}

/// One benchmark record: a sampler run on one seed.
struct RunReport {
  std::string method;
  std::uint64_t seed = 0;
  double wall_time_seconds = 0.0;  // collection phase
  double burn_in_seconds = 0.0;
  std::optional<double> delta;
  std::optional<double> kappa;
  double ess_min = 0.0;
  double ess_median = 0.0;
  double ess_max = 0.0;
  double min_ess_per_second = 0.0;        // collection time only (headline)
  double min_ess_per_second_total = 0.0;  // burn-in + collection
  double acceptance_rate = 0.0;
  std::uint64_t iterations = 0;
  Counters counters;
  bool untunable = false;
  std::string error;
};

struct RunTiming {
  double collection_seconds = 0.0;
  double burn_in_seconds = 0.0;
};

inline RunReport summarize_run(const Matrix& samples, const RunTiming& timing, const Counters& counters) {
  require(samples.cols() > 0, "no coordinates to summarise");
  RunReport r;
  const Vector ess = ess_per_coordinate(samples);
  r.ess_min = ess.minCoeff();
  r.ess_max = ess.maxCoeff();
  r.ess_median = median(ess);
  r.wall_time_seconds = timing.collection_seconds;
  r.burn_in_seconds = timing.burn_in_seconds;
  r.min_ess_per_second = timing.collection_seconds > 0.0 ? r.ess_min / timing.collection_seconds : 0.0;
  const double total = timing.collection_seconds + timing.burn_in_seconds;
  r.min_ess_per_second_total = total > 0.0 ? r.ess_min / total : 0.0;
  r.counters = counters;
  r.iterations = static_cast<std::uint64_t>(samples.rows());
  return r;
}

/// Across-seed summary of one method, laid out like a results table row.
struct TableRow {
  std::string method;
  std::size_t repeats = 0;
  double time_seconds = 0.0;
  std::optional<double> delta;
  double ess_min = 0.0;
  double ess_median = 0.0;
  double ess_max = 0.0;
  double min_ess_per_second = 0.0;
  double min_ess_per_second_sd = 0.0;
};

inline TableRow aggregate_reports(const std::vector<RunReport>& runs) {
  require(!runs.empty(), "nothing to aggregate");
  TableRow row;
  row.method = runs.front().method;
  std::vector<double> eps;
  double delta_sum = 0.0;
  std::size_t delta_count = 0;
  for (const auto& r : runs) {
    if (!r.error.empty()) continue;
    ++row.repeats;
    row.time_seconds += r.wall_time_seconds;
    row.ess_min += r.ess_min;
    row.ess_median += r.ess_median;
    row.ess_max += r.ess_max;
    eps.push_back(r.min_ess_per_second);
    if (r.delta) {
      delta_sum += *r.delta;
      ++delta_count;
    }
  }
  if (row.repeats == 0) return row;
  const double k = static_cast<double>(row.repeats);
  row.time_seconds /= k;
  row.ess_min /= k;
  row.ess_median /= k;
  row.ess_max /= k;
  if (delta_count > 0) row.delta = delta_sum / static_cast<double>(delta_count);
  double mean = 0.0;
  for (double v : eps) mean += v;
  mean /= k;
  double var = 0.0;
  for (double v : eps) var += (v - mean) * (v - mean);
  row.min_ess_per_second = mean;
  row.min_ess_per_second_sd = eps.size() > 1 ? std::sqrt(var / (k - 1.0)) : 0.0;
  return row;
}

}  // namespace lgm
