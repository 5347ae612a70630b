#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lgm/harness/benchmark.hpp"
#include "lgm/harness/config.hpp"
#include "lgm/harness/dataset.hpp"
#include "lgm/oracle.hpp"

namespace fs = std::filesystem;
using namespace lgm;
using namespace lgm::harness;

namespace {

struct GlobalFlags {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> threads;
  bool trace = false;
};

ExperimentConfig load_config(const std::string& path, const GlobalFlags& flags) {
  ExperimentConfig c = parse_config(path);
  if (flags.seed) c.seeds = {*flags.seed};
  if (flags.out) c.output = *flags.out;
  return c;
}

void print_table(const std::vector<TableRow>& rows) {
  std::cout << kTableHeader << '\n';
  for (const auto& r : rows) std::cout << table_csv_row(r) << '\n';
}

int cmd_run(const std::string& config_path, const GlobalFlags& flags) {
  const ExperimentConfig c = load_config(config_path, flags);
  const Problem p = make_problem(c, load_dataset(c));
  RunOptions options;
  options.keep_trace = flags.trace;
  options.threads = flags.threads;
  const BenchmarkResult result = run_benchmark(c, p, options);
  write_benchmark(c.output, c, p, result);
  print_table(result.table);
  std::size_t failed = 0;
  for (const auto& run : result.runs) {
    if (run.report.error.empty()) continue;
    ++failed;
    std::cerr << "lgm: " << run.report.method << " seed " << run.report.seed << " failed: " << run.report.error << '\n';
  }
  for (const auto& run : result.runs)
    if (run.report.untunable)
      std::cerr << "lgm: " << run.report.method << " seed " << run.report.seed
                << " could not be tuned (acceptance stuck at 0 or 1)\n";
  std::cerr << "lgm: wrote " << c.output.string() << " (determinism hash " << hex64(determinism_hash(result.runs))
            << ")\n";
  return failed == result.runs.size() ? 3 : 0;
}

int cmd_tune(const std::string& config_path, const GlobalFlags& flags) {
  const ExperimentConfig c = load_config(config_path, flags);
  if (c.hyper.mode != HyperMode::Fixed) throw ConfigError("config.hyper.mode: tune works with fixed hyperparameters");
  const Problem p = make_problem(c, load_dataset(c));
  const auto rows = run_tuning(c, p, flags.threads);
  fs::create_directories(c.output);
  write_tune_csv(c.output / "tune.csv", rows);
  std::cout << kTuneHeader << '\n';
  bool any_ok = false;
  for (const auto& r : rows) {
    std::cout << r.method << ',' << r.seed << ',' << (r.delta ? format_double(*r.delta) : "") << ','
              << format_double(r.late_acceptance) << ',' << (r.untunable ? 1 : 0) << ',' << r.error << ','
              << format_double(r.seconds) << '\n';
    any_ok = any_ok || r.error.empty();
  }
  return any_ok ? 0 : 3;
}

int cmd_simulate(const std::string& spec_path, const GlobalFlags& flags) {
  auto [spec, seed] = parse_simulate_spec(read_json_file(spec_path));
  if (flags.seed) seed = *flags.seed;
  const Dataset d = simulate_dataset(spec, seed);
  const fs::path dir = flags.out.value_or("lgm-data");
  const auto files = write_dataset_files(d, dir);
  write_json(dir / "manifest.json", dataset_manifest(d, seed, spec.kernel));
  for (const auto& f : files) std::cout << f.string() << '\n';
  std::cout << (dir / "manifest.json").string() << '\n';
  return 0;
}

int cmd_downsample(const std::string& counts_path, const GlobalFlags& flags) {
  int side = 0;
  Dataset d;
  d.model = ModelKind::Cox;
  d.y = read_counts_csv(counts_path, &side);
  d.grid_side = side;
  d.inputs = grid_cells(side);
  d.cell_area = 1.0 / (static_cast<double>(side) * side);
  KernelSettings kernel = default_kernel(ModelKind::Cox);
  d.offset = std::log(126.0) - 0.5 * kernel.variance;
  const fs::path manifest_in = fs::path(counts_path).parent_path() / "manifest.json";
  if (fs::exists(manifest_in)) {
    const auto m = read_json_file(manifest_in);
    if (m.contains("cell_area") && m["cell_area"].is_number()) d.cell_area = m["cell_area"].get<double>();
    if (m.contains("offset") && m["offset"].is_number()) d.offset = m["offset"].get<double>();
    if (m.contains("kernel") && m["kernel"].is_object()) {
      const auto& k = m["kernel"];
      if (k.contains("variance") && k["variance"].is_number()) kernel.variance = k["variance"].get<double>();
      if (k.contains("beta") && k["beta"].is_number()) kernel.beta = k["beta"].get<double>();
    }
  }
  const Dataset coarse = down_sample_cox(d);
  const fs::path dir = flags.out.value_or("lgm-downsampled");
  fs::create_directories(dir);
  write_counts_csv(dir / "counts.csv", coarse.y, coarse.grid_side);
  write_json(dir / "manifest.json", dataset_manifest(coarse, std::nullopt, kernel));
  std::cout << (dir / "counts.csv").string() << '\n' << (dir / "manifest.json").string() << '\n';
  std::cerr << "lgm: " << side << "x" << side << " -> " << coarse.grid_side << "x" << coarse.grid_side
            << ", cell area " << format_double(coarse.cell_area) << '\n';
  return 0;
}

int cmd_validate(const GlobalFlags& flags) {
  oracle::ValidationOptions options;
  if (flags.seed) options.seed = *flags.seed;
  const auto rows = oracle::run_validation_suite(options);
  std::string csv = "check,instance,measured,tolerance,passed\n";
  std::size_t failures = 0;
  for (const auto& r : rows) {
    csv += r.check + ',' + r.instance + ',' + format_double(r.measured) + ',' + format_double(r.tolerance) + ',' +
           (r.passed ? "1" : "0") + '\n';
    if (!r.passed) ++failures;
  }
  std::cout << csv;
  if (flags.out) {
    fs::create_directories(*flags.out);
    std::ofstream(fs::path(*flags.out) / "validation.csv") << csv;
  }
  std::cerr << "lgm: " << rows.size() - failures << "/" << rows.size() << " validation checks passed\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent Gaussian model samplers: benchmarks, data tools and validation"};
  app.require_subcommand(1);
  GlobalFlags flags;
  app.add_option("--seed", flags.seed, "Override the seed (run/tune: replaces the seed list)");
  app.add_option("--out", flags.out, "Output directory");
  app.add_option("--threads", flags.threads, "Worker threads (default: LGM_THREADS, then all cores)")
      ->check(CLI::PositiveNumber);
  app.add_flag("--trace", flags.trace, "Persist raw thinned traces as CSV");

  std::string path;
  auto* run = app.add_subcommand("run", "Tune, collect and report every (sampler, seed) of a config");
  run->add_option("config", path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  auto* tune = app.add_subcommand("tune", "Only tune step sizes and report them");
  tune->add_option("config", path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  auto* simulate = app.add_subcommand("simulate", "Simulate a dataset from a spec");
  simulate->add_option("spec", path, "Simulation spec (JSON)")->required()->check(CLI::ExistingFile);
  auto* downsample = app.add_subcommand("downsample", "Merge 2x2 blocks of a Cox count grid");
  downsample->add_option("counts", path, "Counts CSV (g rows of g integers)")->required()->check(CLI::ExistingFile);
  auto* validate = app.add_subcommand("validate", "Run the discretized-kernel oracle suite");
  for (auto* sub : {run, tune, simulate, downsample, validate}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(path, flags);
    if (*tune) return cmd_tune(path, flags);
    if (*simulate) return cmd_simulate(path, flags);
    if (*downsample) return cmd_downsample(path, flags);
    if (*validate) return cmd_validate(flags);
  } catch (const ConfigError& e) {
    std::cerr << "lgm: configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "lgm: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
