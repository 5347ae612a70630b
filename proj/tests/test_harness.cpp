#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "lgm/harness/benchmark.hpp"
#include "lgm/harness/config.hpp"

using namespace lgm;
using namespace lgm::harness;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json regression_config() {
  return json::parse(R"({
    "model": "regression",
    "simulate": {"n": 30, "sigma2": 0.1, "seed": 4},
    "samplers": ["aGrad-z", "pCN"],
    "seeds": [1, 2],
    "burn_in": 300,
    "collect": 400
  })");
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("lgm-test-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string error_of(const json& j) {
  try {
    (void)parse_config_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsPerModel) {
  json j = regression_config();
  j.erase("burn_in");
  j.erase("collect");
  const ExperimentConfig c = parse_config_json(j);
  EXPECT_EQ(c.burn_in, 2000u);
  EXPECT_EQ(c.collect, 2000u);
  EXPECT_EQ(c.thin, 1u);
  EXPECT_EQ(c.hyper.mode, HyperMode::Fixed);
  EXPECT_EQ(c.output, fs::path("lgm-out"));
  EXPECT_EQ(c.simulate_seed, 4u);
  EXPECT_EQ(c.kernel.lengthscale2, 0.01);

  const json cox = json::parse(R"({"model": "cox", "simulate": {"grid": 8}, "samplers": ["mGrad"], "seeds": [1]})");
  const ExperimentConfig cc = parse_config_json(cox);
  EXPECT_EQ(cc.burn_in, 2000u);
  EXPECT_EQ(cc.collect, 5000u);
  EXPECT_EQ(cc.kernel.kind, KernelKind::CoxExponential);
  EXPECT_EQ(cc.kernel.variance, 1.91);

  EXPECT_EQ(default_run_lengths(ModelKind::Binary), (std::pair<std::uint64_t, std::uint64_t>{5000, 5000}));
}

TEST(Config, UnknownKeyNamesThePath) {
  json j = regression_config();
  j["stepsize"] = 0.1;
  EXPECT_EQ(error_of(j), "config.stepsize: unknown key 'stepsize'");
  json k = regression_config();
  k["simulate"]["noise"] = 1;
  EXPECT_EQ(error_of(k), "config.simulate.noise: unknown key 'noise'");
}

TEST(Config, ValidationErrors) {
  json j = regression_config();
  j["collect"] = 50;
  EXPECT_NE(error_of(j).find("config.collect"), std::string::npos);
  j = regression_config();
  j["thin"] = 10;
  EXPECT_NE(error_of(j).find("config.thin"), std::string::npos);
  j = regression_config();
  j["samplers"] = json::array({"hmc"});
  EXPECT_NE(error_of(j).find("config.samplers[0]"), std::string::npos);
  j = regression_config();
  j["data"] = "x.csv";
  EXPECT_NE(error_of(j).find("exactly one"), std::string::npos);
  j = regression_config();
  j["hyper"] = {{"mode", "joint"}};
  EXPECT_NE(error_of(j).find("aGrad-z only"), std::string::npos);
  j = regression_config();
  j["seeds"] = json::array({-1});
  EXPECT_NE(error_of(j).find("config.seeds[0]"), std::string::npos);
  j = regression_config();
  j.erase("model");
  EXPECT_EQ(error_of(j), "config.model: required");
}

TEST(Config, FileDataNeedsKernelForFixedRuns) {
  const json j = json::parse(R"({"model": "binary", "data": "d.csv", "samplers": ["pCN"], "seeds": [1]})");
  EXPECT_NE(error_of(j).find("config.kernel"), std::string::npos);
  json ok = j;
  ok["kernel"] = {{"variance", 2.0}, {"lengthscale2", 0.5}};
  const ExperimentConfig c = parse_config_json(ok, "/data/run");
  EXPECT_EQ(*c.data_path, fs::path("/data/run/d.csv"));
  EXPECT_EQ(c.kernel.variance, 2.0);
}

TEST(Config, SimulateSpecFile) {
  const auto [spec, seed] = parse_simulate_spec(json::parse(R"({"model": "cox", "grid": 6, "seed": 9})"));
  EXPECT_EQ(spec.grid, 6);
  EXPECT_EQ(seed, 9u);
  EXPECT_THROW(parse_simulate_spec(json::parse(R"({"grid": 6})")), ConfigError);
}

TEST(Dataset, SimulationIsDeterministic) {
  SimulateSpec spec;
  spec.model = ModelKind::Regression;
  spec.n = 25;
  spec.kernel = default_kernel(ModelKind::Regression);
  const Dataset a = simulate_dataset(spec, 3);
  const Dataset b = simulate_dataset(spec, 3);
  const Dataset c = simulate_dataset(spec, 4);
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_NE(a.y, c.y);
  for (Eigen::Index i = 1; i < a.inputs.rows(); ++i) EXPECT_LE(a.inputs(i - 1, 0), a.inputs(i, 0));
}

TEST(Dataset, CoxMeanCount) {
  SimulateSpec spec;
  spec.model = ModelKind::Cox;
  spec.grid = 16;
  spec.kernel = default_kernel(ModelKind::Cox);
  double total = 0.0;
  const int reps = 40;
  for (int s = 0; s < reps; ++s) total += simulate_dataset(spec, 100 + s).y.sum();
  // E[count total] = 126 * E[exp(x - var/2)] * total area = 126.
  EXPECT_NEAR(total / reps, 126.0, 20.0);
  const Dataset d = simulate_dataset(spec, 1);
  EXPECT_DOUBLE_EQ(d.cell_area, 1.0 / 256.0);
  EXPECT_NEAR(d.offset, std::log(126.0) - 0.5 * 1.91, 1e-15);
}

TEST(Dataset, ClassificationLabels) {
  SimulateSpec spec;
  spec.model = ModelKind::Multiclass;
  spec.n = 40;
  spec.classes = 3;
  spec.kernel = default_kernel(ModelKind::Multiclass);
  const Dataset d = simulate_dataset(spec, 2);
  EXPECT_EQ(d.latent.size(), 120);
  for (Eigen::Index i = 0; i < d.y.size(); ++i) {
    EXPECT_GE(d.y(i), 1.0);
    EXPECT_LE(d.y(i), 3.0);
  }
  for (Eigen::Index j = 0; j < d.inputs.cols(); ++j) EXPECT_NEAR(d.inputs.col(j).mean(), 0.0, 1e-12);
}

TEST(DownSample, AllOnesBecomeAllFours) {
  const Vector coarse = down_sample_counts(Vector::Ones(16), 4);
  EXPECT_EQ(coarse, Vector::Constant(4, 4.0));
  EXPECT_THROW(down_sample_counts(Vector::Ones(9), 3), InvalidArgument);
  EXPECT_THROW(down_sample_counts(Vector::Ones(10), 4), InvalidArgument);
}

TEST(DownSample, BlockSumsAndArea) {
  Dataset d;
  d.model = ModelKind::Cox;
  d.grid_side = 64;
  d.y = Vector::LinSpaced(4096, 0.0, 4095.0);
  d.cell_area = 1.0 / 4096.0;
  d.offset = 0.7;
  const Dataset c = down_sample_cox(d);
  EXPECT_EQ(c.grid_side, 32);
  EXPECT_DOUBLE_EQ(c.cell_area, 1.0 / 1024.0);
  EXPECT_EQ(c.offset, 0.7);
  EXPECT_EQ(c.y.sum(), d.y.sum());
  EXPECT_EQ(c.y(0), 0.0 + 1.0 + 64.0 + 65.0);
}

TEST(Files, CountsRoundTrip) {
  const fs::path dir = scratch_dir("counts");
  Vector counts(9);
  counts << 0, 1, 2, 3, 4, 5, 6, 7, 8;
  write_counts_csv(dir / "counts.csv", counts, 3);
  int side = 0;
  EXPECT_EQ(read_counts_csv(dir / "counts.csv", &side), counts);
  EXPECT_EQ(side, 3);
}

TEST(Files, SimulatedDatasetLoadsThroughConfig) {
  const fs::path dir = scratch_dir("load");
  SimulateSpec spec;
  spec.model = ModelKind::Regression;
  spec.n = 12;
  spec.sigma2 = 0.25;
  spec.kernel = default_kernel(spec.model);
  const Dataset d = simulate_dataset(spec, 8);
  write_dataset_files(d, dir);
  write_json(dir / "manifest.json", dataset_manifest(d, 8, spec.kernel));
  json j = json::parse(R"({"model": "regression", "data": "data.csv", "samplers": ["pCN"], "seeds": [1],
                           "kernel": {"variance": 1.0, "lengthscale2": 0.01}})");
  const ExperimentConfig c = parse_config_json(j, dir);
  const Dataset loaded = load_dataset(c);
  EXPECT_EQ(loaded.sigma2, 0.25);
  EXPECT_LT((loaded.y - d.y).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Threads, ResolutionOrder) {
  EXPECT_EQ(resolve_threads(3u), 3u);
  ::setenv("LGM_THREADS", "2", 1);
  EXPECT_EQ(resolve_threads(std::nullopt), 2u);
  ::setenv("LGM_THREADS", "two", 1);
  EXPECT_THROW(resolve_threads(std::nullopt), InvalidArgument);
  ::unsetenv("LGM_THREADS");
  EXPECT_GE(resolve_threads(std::nullopt), 1u);
}

TEST(Threads, ParallelForVisitsEachIndexOnce) {
  std::vector<int> hits(57, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) EXPECT_EQ(h, 1);
}

TEST(Benchmark, SingleRunGivesOneRow) {
  json j = regression_config();
  j["samplers"] = json::array({"mGrad"});
  j["seeds"] = json::array({5});
  const ExperimentConfig c = parse_config_json(j);
  const Problem p = make_problem(c, load_dataset(c));
  RunOptions options;
  options.threads = 1;
  options.keep_trace = true;
  const BenchmarkResult r = run_benchmark(c, p, options);
  ASSERT_EQ(r.runs.size(), 1u);
  ASSERT_EQ(r.table.size(), 1u);
  const RunReport& rep = r.runs[0].report;
  EXPECT_TRUE(rep.error.empty()) << rep.error;
  EXPECT_EQ(rep.method, "mGrad");
  EXPECT_EQ(rep.iterations, 400u);
  EXPECT_EQ(rep.counters.factorizations, 1u);
  EXPECT_EQ(r.runs[0].trace.rows(), 400);
  EXPECT_EQ(r.table[0].repeats, 1u);
  EXPECT_EQ(r.table[0].min_ess_per_second_sd, 0.0);
}

TEST(Benchmark, DeterminismHashIgnoresThreadCount) {
  const ExperimentConfig c = parse_config_json(regression_config());
  const Problem p = make_problem(c, load_dataset(c));
  RunOptions one, two;
  one.threads = 1;
  two.threads = 2;
  const BenchmarkResult a = run_benchmark(c, p, one);
  const BenchmarkResult b = run_benchmark(c, p, two);
  ASSERT_EQ(a.runs.size(), 4u);
  EXPECT_EQ(a.runs[1].report.method, "aGrad-z");
  EXPECT_EQ(a.runs[2].report.method, "pCN");
  EXPECT_EQ(determinism_hash(a.runs), determinism_hash(b.runs));
  EXPECT_EQ(hex64(determinism_hash(a.runs)).size(), 16u);
}

TEST(Benchmark, WritesReports) {
  const fs::path dir = scratch_dir("bench");
  const ExperimentConfig c = parse_config_json(regression_config());
  const Problem p = make_problem(c, load_dataset(c));
  RunOptions options;
  options.keep_trace = true;
  const BenchmarkResult r = run_benchmark(c, p, options);
  const auto written = write_benchmark(dir, c, p, r);
  EXPECT_EQ(written.size(), 3u + 4u);
  std::ifstream runs(dir / "runs.csv");
  std::string header;
  std::getline(runs, header);
  EXPECT_EQ(header, kRunsHeader);
  const json summary = read_json_file(dir / "summary.json");
  EXPECT_EQ(summary["schema_version"], kReportSchemaVersion);
  EXPECT_EQ(summary["rows"].size(), 2u);
  EXPECT_EQ(summary["determinism_hash"], hex64(determinism_hash(r.runs)));
  EXPECT_TRUE(fs::exists(dir / "traces" / "pCN_seed2.csv"));
}

TEST(Benchmark, TableRowFormatting) {
  TableRow row;
  row.method = "aGrad-z";
  row.repeats = 10;
  row.time_seconds = 0.0521;
  row.delta = 0.058;
  row.ess_min = 105.44;
  row.ess_median = 207.06;
  row.ess_max = 270.2;
  row.min_ess_per_second = 2029.8244;
  row.min_ess_per_second_sd = 208.9913;
  EXPECT_EQ(table_csv_row(row), "aGrad-z,0.052,0.058,\"(105.4, 207.1, 270.2)\",2029.824 (208.991)");
  row.method = "Ellipt";
  row.delta.reset();
  EXPECT_NE(table_csv_row(row).find("Ellipt,0.052,-,"), std::string::npos);
  row.repeats = 0;
  EXPECT_EQ(table_csv_row(row), "Ellipt,failed,,,");
}

TEST(Benchmark, HyperRunReportsKappaAndTheta) {
  json j = regression_config();
  j["samplers"] = json::array({"aGrad-z"});
  j["seeds"] = json::array({1});
  j["hyper"] = {{"mode", "joint"}, {"R", 5}};
  j["burn_in"] = 200;
  j["collect"] = 200;
  const ExperimentConfig c = parse_config_json(j);
  const Problem p = make_problem(c, load_dataset(c));
  EXPECT_EQ(p.prior, nullptr);
  const BenchmarkResult r = run_benchmark(c, p, {});
  const RunOutput& run = r.runs[0];
  EXPECT_TRUE(run.report.error.empty()) << run.report.error;
  ASSERT_TRUE(run.report.kappa.has_value());
  EXPECT_EQ(run.theta_trace.rows(), 40);
  EXPECT_EQ(run.theta_trace.cols(), 2);
}
