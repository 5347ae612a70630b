#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lgm/adaptation.hpp"
#include "lgm/diagnostics.hpp"
#include "lgm/harness/config.hpp"
#include "lgm/harness/dataset.hpp"
#include "lgm/hyper.hpp"
#include "lgm/samplers.hpp"

namespace lgm::harness {

inline constexpr int kReportSchemaVersion = 1;

/// Worker count: explicit value, then LGM_THREADS, then the hardware.
inline unsigned resolve_threads(std::optional<unsigned> requested) {
  if (requested && *requested > 0) return *requested;
  if (const char* env = std::getenv("LGM_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
    throw InvalidArgument(std::string("LGM_THREADS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, jobs) on up to `threads` workers. Each index is
/// handled exactly once; results are written by index so output order never
/// depends on scheduling.
template <class Fn>
void parallel_for(std::size_t jobs, unsigned threads, Fn&& fn) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), jobs));
  if (workers <= 1) {
    for (std::size_t i = 0; i < jobs; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < jobs; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

/// RNG stream of a sampler; distinct per kind so two samplers sharing a seed
/// never share draws.
inline std::uint64_t sampler_stream(SamplerKind kind) {
  std::uint64_t i = 0;
  for (SamplerKind k : kAllSamplers) {
    ++i;
    if (k == kind) return i;
  }
  return 0;
}

struct RunOptions {
  bool keep_trace = false;
  std::optional<unsigned> threads;
};

struct RunOutput {
  RunReport report;
  Matrix trace;       // retained latent states (empty unless requested)
  Vector log_likelihood;
  Matrix theta_trace; // hyper runs only
  std::vector<double> delta_trace;
};

/// Shared, read-only inputs of a benchmark.
struct Problem {
  Dataset data;
  KernelSettings kernel;
  SpectralPriorPtr prior;  // null for hyper-learning runs
  TargetPtr target;
  Counters setup;          // cost of building the prior
};

inline Problem make_problem(const ExperimentConfig& c, Dataset d) {
  Problem p;
  p.data = std::move(d);
  p.kernel = c.kernel;
  p.target = target_for(p.data);
  if (c.hyper.mode == HyperMode::Fixed)
    p.prior = std::make_shared<const SpectralPrior>(prior_for(p.data, p.kernel, &p.setup));
  return p;
}

inline Vector initial_theta(const Problem& p) {
  const int classes = p.data.model == ModelKind::Multiclass ? p.data.classes : 1;
  Vector theta(2 * classes);
  for (int k = 0; k < classes; ++k) {
    theta(2 * k) = 0.5 * std::log(p.kernel.variance);
    theta(2 * k + 1) = 0.5 * std::log(p.kernel.lengthscale2);
  }
  return theta;
}

namespace detail {

inline Matrix thin_rows(const Matrix& m, std::uint64_t thin) {
  if (thin <= 1) return m;
  const auto kept = m.rows() / static_cast<Eigen::Index>(thin);
  Matrix out(kept, m.cols());
  for (Eigen::Index i = 0; i < kept; ++i) out.row(i) = m.row((i + 1) * static_cast<Eigen::Index>(thin) - 1);
  return out;
}

inline RunOutput run_fixed(const ExperimentConfig& c, const Problem& p, SamplerKind kind, std::uint64_t seed,
                           const RunOptions& options) {
  Sampler sampler(kind, p.prior, p.target);
  Rng rng(seed, sampler_stream(kind));
  ChainState state = sampler.initialize(Vector::Zero(p.prior->dimension()));
  state.counters.factorizations += p.setup.factorizations;
  state.counters.matvecs += p.setup.matvecs;
  const TuneResult tune = tune_and_freeze(sampler, state, rng, c.burn_in);
  const ChainTrace trace = collect(sampler, state, rng, c.collect, c.thin);
  RunOutput out;
  out.report = summarize_run(trace.samples, {trace.seconds, tune.seconds}, state.counters);
  out.report.delta = tune.delta;
  out.report.acceptance_rate = trace.acceptance_rate();
  out.report.iterations = c.collect;
  out.report.untunable = tune.untunable;
  out.delta_trace = tune.delta_trace;
  if (options.keep_trace) {
    out.trace = trace.samples;
    out.log_likelihood = trace.log_likelihood;
  }
  return out;
}

inline RunOutput run_hyper(const ExperimentConfig& c, const Problem& p, SamplerKind kind, std::uint64_t seed,
                           const RunOptions& options) {
  const int classes = p.data.model == ModelKind::Multiclass ? p.data.classes : 1;
  const HyperModel model = squared_exponential_hyper_model(p.data.inputs, classes, p.kernel.jitter);
  HyperChainConfig hc;
  hc.mode = c.hyper.mode;
  hc.latent_sampler = kind;
  hc.latent_per_theta = c.hyper.latent_per_theta;
  hc.burn_in = c.burn_in;
  hc.collect = c.collect;
  hc.initial_delta = default_initial_delta(kind);
  hc.initial_kappa = c.hyper.kappa;
  hc.theta_prior_variance = c.hyper.theta_prior_variance;
  hc.seed = seed;
  const Vector x0 = Vector::Zero(p.target->dimension());
  const HyperChainResult r = run_hyper_chain(model, p.target, initial_theta(p), x0, hc);
  const double collection = r.seconds - r.burn_in_seconds;
  const Matrix samples = thin_rows(r.latent_trace, c.thin);
  RunOutput out;
  out.report = summarize_run(samples, {collection, r.burn_in_seconds}, r.counters);
  if (has_step_size(kind)) out.report.delta = r.delta;
  out.report.kappa = r.kappa;
  out.report.acceptance_rate = r.latent_acceptance;
  out.report.iterations = c.collect;
  out.theta_trace = r.theta_trace;
  if (options.keep_trace) {
    out.trace = samples;
    out.log_likelihood = r.log_likelihood;
  }
  return out;
}

}  // namespace detail

/// One (sampler, seed) run. Failures are captured in report.error rather
/// than thrown.
inline RunOutput run_single(const ExperimentConfig& c, const Problem& p, SamplerKind kind, std::uint64_t seed,
                            const RunOptions& options = {}) {
  RunOutput out;
  try {
    out = c.hyper.mode == HyperMode::Fixed ? detail::run_fixed(c, p, kind, seed, options)
                                           : detail::run_hyper(c, p, kind, seed, options);
  } catch (const std::exception& e) {
    out = RunOutput{};
    out.report.error = e.what();
    if (out.report.error.empty()) out.report.error = "unknown failure";
  }
  out.report.method = to_string(kind);
  out.report.seed = seed;
  return out;
}

struct BenchmarkResult {
  std::vector<RunOutput> runs;  // sampler-major, then seed, in config order
  std::vector<TableRow> table;  // one row per sampler
};

inline BenchmarkResult run_benchmark(const ExperimentConfig& c, const Problem& p, const RunOptions& options = {}) {
  BenchmarkResult result;
  const std::size_t seeds = c.seeds.size();
  result.runs.resize(c.samplers.size() * seeds);
  parallel_for(result.runs.size(), resolve_threads(options.threads), [&](std::size_t i) {
    result.runs[i] = run_single(c, p, c.samplers[i / seeds], c.seeds[i % seeds], options);
  });
  for (std::size_t s = 0; s < c.samplers.size(); ++s) {
    std::vector<RunReport> reports;
    for (std::size_t k = 0; k < seeds; ++k) reports.push_back(result.runs[s * seeds + k].report);
    TableRow row = aggregate_reports(reports);
    row.method = to_string(c.samplers[s]);
    result.table.push_back(row);
  }
  return result;
}

// -- tuning only ----------------------------------------------------------------

struct TuneRow {
  std::string method;
  std::uint64_t seed = 0;
  std::optional<double> delta;
  double late_acceptance = 0.0;  // acceptance over the second half of burn-in
  bool untunable = false;
  double seconds = 0.0;
  std::string error;
};

inline TuneRow tune_single(const ExperimentConfig& c, const Problem& p, SamplerKind kind, std::uint64_t seed) {
  TuneRow row;
  row.method = to_string(kind);
  row.seed = seed;
  try {
    require(p.prior != nullptr, "tuning needs fixed hyperparameters");
    Sampler sampler(kind, p.prior, p.target);
    Rng rng(seed, sampler_stream(kind));
    ChainState state = sampler.initialize(Vector::Zero(p.prior->dimension()));
    const TuneResult t = tune_and_freeze(sampler, state, rng, c.burn_in);
    row.delta = t.delta;
    row.untunable = t.untunable;
    row.seconds = t.seconds;
    std::uint64_t late = 0;
    for (std::size_t i = t.acceptance.size() / 2; i < t.acceptance.size(); ++i) late += t.acceptance[i];
    const std::size_t count = t.acceptance.size() - t.acceptance.size() / 2;
    row.late_acceptance = count ? static_cast<double>(late) / static_cast<double>(count) : 0.0;
  } catch (const std::exception& e) {
    row.error = e.what();
  }
  return row;
}

inline std::vector<TuneRow> run_tuning(const ExperimentConfig& c, const Problem& p, std::optional<unsigned> threads) {
  const std::size_t seeds = c.seeds.size();
  std::vector<TuneRow> rows(c.samplers.size() * seeds);
  parallel_for(rows.size(), resolve_threads(threads),
               [&](std::size_t i) { rows[i] = tune_single(c, p, c.samplers[i / seeds], c.seeds[i % seeds]); });
  return rows;
}

// -- reports ----------------------------------------------------------------------

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch == '\n' || ch == '\r' ? ' ' : ch;
  }
  return out + "\"";
}

inline std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

inline std::string significant(double v, int digits) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

inline std::string optional_double(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

}  // namespace detail

inline constexpr const char* kRunsHeader =
    "method,seed,delta,kappa,ess_min,ess_median,ess_max,acceptance_rate,iterations,matvecs,factorizations,"
    "likelihood_evals,untunable,error,wall_time_seconds,burn_in_seconds,min_ess_per_second,min_ess_per_second_total";

/// Number of leading runs.csv columns covered by the determinism hash.
inline constexpr int kDeterministicColumns = 14;

/// Returns {deterministic part, timing part} of a runs.csv row.
inline std::pair<std::string, std::string> runs_csv_row(const RunReport& r) {
  using detail::optional_double;
  std::ostringstream det;
  det << detail::csv_field(r.method) << ',' << r.seed << ',' << optional_double(r.delta) << ','
      << optional_double(r.kappa) << ',' << format_double(r.ess_min) << ',' << format_double(r.ess_median) << ','
      << format_double(r.ess_max) << ',' << format_double(r.acceptance_rate) << ',' << r.iterations << ','
      << r.counters.matvecs << ',' << r.counters.factorizations << ',' << r.counters.likelihood_evals << ','
      << (r.untunable ? 1 : 0) << ',' << detail::csv_field(r.error);
  std::ostringstream timing;
  timing << format_double(r.wall_time_seconds) << ',' << format_double(r.burn_in_seconds) << ','
         << format_double(r.min_ess_per_second) << ',' << format_double(r.min_ess_per_second_total);
  return {det.str(), timing.str()};
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& data, std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (unsigned char ch : data) {
    hash ^= ch;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/// Hash of the timing-free columns of every run, in order.
inline std::uint64_t determinism_hash(const std::vector<RunOutput>& runs) {
  std::uint64_t h = fnv1a(std::string(kRunsHeader).substr(0, std::string(kRunsHeader).find(",wall_time_seconds")) + "\n");
  for (const auto& run : runs) h = fnv1a(runs_csv_row(run.report).first + "\n", h);
  return h;
}

inline void write_runs_csv(const std::filesystem::path& path, const std::vector<RunOutput>& runs) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << kRunsHeader << '\n';
  for (const auto& run : runs) {
    const auto [det, timing] = runs_csv_row(run.report);
    out << det << ',' << timing << '\n';
  }
}

inline constexpr const char* kTableHeader = "Method,Time(s),Step \xce\xb4,\"ESS (Min, Med, Max)\",Min ESS/s (s.d.)";

inline std::string table_csv_row(const TableRow& r) {
  using detail::fixed;
  if (r.repeats == 0) return detail::csv_field(r.method) + ",failed,,,";
  std::ostringstream os;
  os << detail::csv_field(r.method) << ',' << fixed(r.time_seconds, 3) << ','
     << (r.delta ? detail::significant(*r.delta, 3) : std::string("-")) << ",\"(" << fixed(r.ess_min, 1) << ", "
     << fixed(r.ess_median, 1) << ", " << fixed(r.ess_max, 1) << ")\"," << fixed(r.min_ess_per_second, 3) << " ("
     << fixed(r.min_ess_per_second_sd, 3) << ')';
  return os.str();
}

inline void write_table_csv(const std::filesystem::path& path, const std::vector<TableRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << kTableHeader << '\n';
  for (const auto& r : rows) out << table_csv_row(r) << '\n';
}

inline nlohmann::json report_to_json(const RunReport& r) {
  nlohmann::json j = {{"method", r.method},
                      {"seed", r.seed},
                      {"ess_min", r.ess_min},
                      {"ess_median", r.ess_median},
                      {"ess_max", r.ess_max},
                      {"acceptance_rate", r.acceptance_rate},
                      {"iterations", r.iterations},
                      {"matvecs", r.counters.matvecs},
                      {"factorizations", r.counters.factorizations},
                      {"likelihood_evals", r.counters.likelihood_evals},
                      {"untunable", r.untunable},
                      {"wall_time_seconds", r.wall_time_seconds},
                      {"burn_in_seconds", r.burn_in_seconds},
                      {"min_ess_per_second", r.min_ess_per_second},
                      {"min_ess_per_second_total", r.min_ess_per_second_total}};
  j["delta"] = r.delta ? nlohmann::json(*r.delta) : nlohmann::json(nullptr);
  j["kappa"] = r.kappa ? nlohmann::json(*r.kappa) : nlohmann::json(nullptr);
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

inline nlohmann::json summary_json(const ExperimentConfig& c, const Problem& p, const BenchmarkResult& result) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t s = 0; s < result.table.size(); ++s) {
    const TableRow& r = result.table[s];
    std::size_t failures = 0;
    for (std::size_t k = 0; k < c.seeds.size(); ++k)
      if (!result.runs[s * c.seeds.size() + k].report.error.empty()) ++failures;
    rows.push_back({{"method", r.method},
                    {"repeats", r.repeats},
                    {"failures", failures},
                    {"time_seconds", r.time_seconds},
                    {"delta", r.delta ? nlohmann::json(*r.delta) : nlohmann::json(nullptr)},
                    {"ess_min", r.ess_min},
                    {"ess_median", r.ess_median},
                    {"ess_max", r.ess_max},
                    {"min_ess_per_second", r.min_ess_per_second},
                    {"min_ess_per_second_sd", r.min_ess_per_second_sd}});
  }
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : result.runs) runs.push_back(report_to_json(run.report));
  return {{"schema_version", kReportSchemaVersion},
          {"model", to_string(c.model)},
          {"sites", p.data.sites()},
          {"dimension", p.target->dimension()},
          {"kernel", kernel_to_json(p.kernel)},
          {"hyper_mode", to_string(c.hyper.mode)},
          {"burn_in", c.burn_in},
          {"collect", c.collect},
          {"thin", c.thin},
          {"seeds", c.seeds},
          {"rows", rows},
          {"runs", runs},
          {"determinism_hash", hex64(determinism_hash(result.runs))}};
}

/// Raw trace: iteration, log-likelihood, then one column per latent coordinate.
inline void write_trace_csv(const std::filesystem::path& path, const RunOutput& run, std::uint64_t thin) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "iteration,log_likelihood";
  for (Eigen::Index j = 0; j < run.trace.cols(); ++j) out << ",x" << j;
  out << '\n';
  for (Eigen::Index i = 0; i < run.trace.rows(); ++i) {
    out << (i + 1) * static_cast<Eigen::Index>(thin) << ','
        << (i < run.log_likelihood.size() ? format_double(run.log_likelihood(i)) : std::string());
    for (Eigen::Index j = 0; j < run.trace.cols(); ++j) out << ',' << format_double(run.trace(i, j));
    out << '\n';
  }
}

inline void write_theta_csv(const std::filesystem::path& path, const Matrix& theta) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "move";
  for (Eigen::Index j = 0; j < theta.cols(); ++j) out << ",theta" << j;
  out << '\n';
  for (Eigen::Index i = 0; i < theta.rows(); ++i) {
    out << i + 1;
    for (Eigen::Index j = 0; j < theta.cols(); ++j) out << ',' << format_double(theta(i, j));
    out << '\n';
  }
}

/// Writes runs.csv, table.csv, summary.json and, when traces were kept,
/// traces/<method>_seed<k>.csv. Returns the written paths.
inline std::vector<std::filesystem::path> write_benchmark(const std::filesystem::path& dir, const ExperimentConfig& c,
                                                          const Problem& p, const BenchmarkResult& result) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written = {dir / "runs.csv", dir / "table.csv", dir / "summary.json"};
  write_runs_csv(written[0], result.runs);
  write_table_csv(written[1], result.table);
  write_json(written[2], summary_json(c, p, result));
  for (const auto& run : result.runs) {
    const std::string stem = run.report.method + "_seed" + std::to_string(run.report.seed);
    if (run.trace.size() > 0) {
      std::filesystem::create_directories(dir / "traces");
      written.push_back(dir / "traces" / (stem + ".csv"));
      write_trace_csv(written.back(), run, c.thin);
    }
    if (run.theta_trace.size() > 0) {
      std::filesystem::create_directories(dir / "traces");
      written.push_back(dir / "traces" / (stem + "_theta.csv"));
      write_theta_csv(written.back(), run.theta_trace);
    }
  }
  return written;
}

inline constexpr const char* kTuneHeader = "method,seed,delta,late_acceptance,untunable,error,seconds";

inline void write_tune_csv(const std::filesystem::path& path, const std::vector<TuneRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << kTuneHeader << '\n';
  for (const auto& r : rows)
    out << detail::csv_field(r.method) << ',' << r.seed << ',' << detail::optional_double(r.delta) << ','
        << format_double(r.late_acceptance) << ',' << (r.untunable ? 1 : 0) << ',' << detail::csv_field(r.error) << ','
        << format_double(r.seconds) << '\n';
}

}  // namespace lgm::harness
