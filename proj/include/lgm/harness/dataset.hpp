#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lgm/kernels.hpp"
#include "lgm/rng.hpp"
#include "lgm/spectral.hpp"
#include "lgm/targets.hpp"

namespace lgm::harness {

enum class ModelKind { Regression, Cox, Binary, Multiclass };

inline std::string to_string(ModelKind m) {
  switch (m) {
    case ModelKind::Regression: return "regression";
    case ModelKind::Cox: return "cox";
    case ModelKind::Binary: return "binary";
    case ModelKind::Multiclass: return "multiclass";
  }
  return "unknown";
}

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "regression") return ModelKind::Regression;
  if (s == "cox") return ModelKind::Cox;
  if (s == "binary") return ModelKind::Binary;
  if (s == "multiclass") return ModelKind::Multiclass;
  throw InvalidArgument("unknown model '" + s + "' (expected regression, cox, binary or multiclass)");
}

/// Covariance hyperparameters as they appear in configs and manifests.
struct KernelSettings {
  KernelKind kind = KernelKind::SquaredExponential;
  double variance = 1.0;
  double lengthscale2 = 0.01;
  double beta = 1.0 / 33.0;
  double scale_divisor = 0.0;  // Cox: <= 0 means the grid side
  double jitter = 0.0;
};

inline KernelSettings default_kernel(ModelKind model) {
  KernelSettings k;
  switch (model) {
    case ModelKind::Regression: k.variance = 1.0; k.lengthscale2 = 0.01; break;
    case ModelKind::Cox: k.kind = KernelKind::CoxExponential; k.variance = 1.91; k.beta = 1.0 / 33.0; break;
    case ModelKind::Binary:
    case ModelKind::Multiclass: k.variance = 4.0; k.lengthscale2 = 1.0; break;
  }
  return k;
}

/// Observations plus everything the likelihood needs.
struct Dataset {
  ModelKind model = ModelKind::Regression;
  Matrix inputs;     // one row per latent site (cells for Cox)
  Vector y;          // observations, labels or row-major counts
  int classes = 0;   // multiclass only
  int grid_side = 0; // Cox only
  double sigma2 = 1.0;
  double cell_area = 0.0;
  double offset = 0.0;
  Vector latent;     // generating field when simulated (stacked for multiclass)

  [[nodiscard]] Eigen::Index sites() const { return inputs.rows(); }
};

struct SimulateSpec {
  ModelKind model = ModelKind::Regression;
  int n = 200;
  double sigma2 = 1.0;
  int grid = 16;
  std::optional<double> cell_area;  // default 1 / grid^2
  std::optional<double> offset;     // default log(126) - variance / 2
  int features = 2;
  int classes = 3;
  std::string inputs = "uniform";   // regression: uniform or grid on [0, 1]
  KernelSettings kernel;
};

// -- covariance ----------------------------------------------------------------

inline Matrix covariance_for(const Dataset& d, const KernelSettings& k) {
  KernelSpec spec;
  spec.kind = k.kind;
  spec.variance = k.variance;
  spec.lengthscale2 = k.lengthscale2;
  spec.beta = k.beta;
  spec.scale_divisor = k.scale_divisor > 0.0 ? k.scale_divisor : static_cast<double>(d.grid_side);
  spec.inputs = d.inputs;
  return build_kernel(spec);
}

/// Spectral prior of the model; block diagonal with one block per class for
/// multiclass data.
inline SpectralPrior prior_for(const Dataset& d, const KernelSettings& k, Counters* counters = nullptr) {
  DecompositionOptions options;
  options.jitter = k.jitter;
  const SpectralPrior block = eigendecompose_covariance(covariance_for(d, k), options, counters);
  if (d.model != ModelKind::Multiclass) return block;
  return SpectralPrior::block_diagonal(std::vector<SpectralPrior>(static_cast<std::size_t>(d.classes), block));
}

inline TargetPtr target_for(const Dataset& d) {
  switch (d.model) {
    case ModelKind::Regression: return std::make_shared<RegressionTarget>(d.y, d.sigma2);
    case ModelKind::Cox: return std::make_shared<CoxTarget>(d.y, d.cell_area, d.offset);
    case ModelKind::Binary: return std::make_shared<LogisticTarget>(d.y);
    case ModelKind::Multiclass: {
      std::vector<int> labels(static_cast<std::size_t>(d.y.size()));
      for (Eigen::Index i = 0; i < d.y.size(); ++i) labels[static_cast<std::size_t>(i)] = static_cast<int>(d.y(i));
      return std::make_shared<SoftmaxTarget>(std::move(labels), d.classes);
    }
  }
  throw InvalidArgument("unknown model");
}

/// Shortest round-trip-safe decimal form.
inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// -- simulation ----------------------------------------------------------------

/// Draw from N(0, C) through the eigendecomposition.
inline Vector draw_prior(const SpectralPrior& prior, Rng& rng) {
  Counters scratch;
  const Vector w = prior.sqrt_eigenvalues().cwiseProduct(rng.normal_vector(prior.dimension()));
  return prior.from_spectral(w, scratch);
}

/// Zero mean, unit variance per column; constant columns are centred only.
inline void standardize_columns(Matrix& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double mean = m.col(j).mean();
    m.col(j).array() -= mean;
    const double sd = std::sqrt(m.col(j).squaredNorm() / static_cast<double>(std::max<Eigen::Index>(m.rows(), 1)));
    if (sd > 0.0) m.col(j) /= sd;
  }
}

inline Dataset simulate_dataset(const SimulateSpec& spec, std::uint64_t seed) {
  Rng rng(seed, 0x5eed);
  Dataset d;
  d.model = spec.model;
  const KernelSettings& k = spec.kernel;
  switch (spec.model) {
    case ModelKind::Regression: {
      require(spec.n >= 1, "simulate.n must be positive");
      require(spec.sigma2 > 0.0, "simulate.sigma2 must be positive");
      d.inputs.resize(spec.n, 1);
      if (spec.inputs == "grid") {
        for (int i = 0; i < spec.n; ++i) d.inputs(i, 0) = (i + 0.5) / spec.n;
      } else if (spec.inputs == "uniform") {
        std::vector<double> s(static_cast<std::size_t>(spec.n));
        for (auto& v : s) v = rng.uniform();
        std::sort(s.begin(), s.end());
        for (int i = 0; i < spec.n; ++i) d.inputs(i, 0) = s[static_cast<std::size_t>(i)];
      } else {
        throw InvalidArgument("simulate.inputs must be 'uniform' or 'grid'");
      }
      d.sigma2 = spec.sigma2;
      d.latent = draw_prior(prior_for(d, k), rng);
      d.y = d.latent + std::sqrt(spec.sigma2) * rng.normal_vector(spec.n);
      break;
    }
    case ModelKind::Cox: {
      require(spec.grid >= 1, "simulate.grid must be positive");
      d.grid_side = spec.grid;
      d.inputs = grid_cells(spec.grid);
      d.cell_area = spec.cell_area.value_or(1.0 / (static_cast<double>(spec.grid) * spec.grid));
      d.offset = spec.offset.value_or(std::log(126.0) - 0.5 * k.variance);
      require(d.cell_area > 0.0, "simulate.cell_area must be positive");
      d.latent = draw_prior(prior_for(d, k), rng);
      d.y.resize(d.latent.size());
      for (Eigen::Index i = 0; i < d.latent.size(); ++i) {
        std::poisson_distribution<long long> poisson(d.cell_area * std::exp(d.latent(i) + d.offset));
        d.y(i) = static_cast<double>(poisson(rng.engine()));
      }
      break;
    }
    case ModelKind::Binary:
    case ModelKind::Multiclass: {
      require(spec.n >= 1 && spec.features >= 1, "simulate.n and simulate.features must be positive");
      d.inputs.resize(spec.n, spec.features);
      for (Eigen::Index i = 0; i < d.inputs.size(); ++i) d.inputs.data()[i] = rng.normal();
      standardize_columns(d.inputs);
      const SpectralPrior block = eigendecompose_covariance(covariance_for(d, k), DecompositionOptions{k.jitter});
      if (spec.model == ModelKind::Binary) {
        d.latent = draw_prior(block, rng);
        d.y.resize(spec.n);
        for (int i = 0; i < spec.n; ++i) d.y(i) = rng.uniform() < detail::sigmoid(d.latent(i)) ? 1.0 : 0.0;
      } else {
        require(spec.classes >= 2, "simulate.classes must be at least 2");
        d.classes = spec.classes;
        d.latent.resize(static_cast<Eigen::Index>(spec.classes) * spec.n);
        for (int c = 0; c < spec.classes; ++c) d.latent.segment(static_cast<Eigen::Index>(c) * spec.n, spec.n) = draw_prior(block, rng);
        d.y.resize(spec.n);
        for (int i = 0; i < spec.n; ++i) {
          Vector p(spec.classes);
          for (int c = 0; c < spec.classes; ++c) p(c) = d.latent(static_cast<Eigen::Index>(c) * spec.n + i);
          p = (p.array() - p.maxCoeff()).exp().matrix();
          p /= p.sum();
          double u = rng.uniform();
          int label = spec.classes;
          for (int c = 0; c < spec.classes; ++c) {
            if (u < p(c)) { label = c + 1; break; }
            u -= p(c);
          }
          d.y(i) = label;
        }
      }
      break;
    }
  }
  return d;
}

// -- Cox down-sampling -----------------------------------------------------------

/// Sums 2 x 2 blocks of a g x g row-major count field.
inline Vector down_sample_counts(const Vector& counts, int side) {
  require(side > 0 && counts.size() == static_cast<Eigen::Index>(side) * side, "counts are not a square grid");
  if (side % 2 != 0) throw InvalidArgument("down-sampling needs an even grid side, got " + std::to_string(side));
  const int half = side / 2;
  Vector out = Vector::Zero(static_cast<Eigen::Index>(half) * half);
  for (int i = 0; i < side; ++i)
    for (int j = 0; j < side; ++j) out((i / 2) * half + j / 2) += counts(static_cast<Eigen::Index>(i) * side + j);
  return out;
}

/// Coarsened Cox dataset: counts summed, cell area quadrupled, same offset.
inline Dataset down_sample_cox(const Dataset& d) {
  require(d.model == ModelKind::Cox, "down-sampling applies to Cox data");
  Dataset out;
  out.model = ModelKind::Cox;
  out.grid_side = d.grid_side / 2;
  out.y = down_sample_counts(d.y, d.grid_side);
  out.inputs = grid_cells(out.grid_side);
  out.cell_area = 4.0 * d.cell_area;
  out.offset = d.offset;
  return out;
}

// -- CSV -------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') quoted = !quoted;
    else if (c == ',' && !quoted) { out.push_back(cell); cell.clear(); }
    else if (c != '\r') cell += c;
  }
  out.push_back(cell);
  return out;
}

inline double parse_number(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() && s.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidArgument(where + ": not a number: '" + s + "'");
  }
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
  return lines;
}


}  // namespace detail

/// Headerless g x g integer grid.
inline Vector read_counts_csv(const std::filesystem::path& path, int* side_out = nullptr) {
  const auto lines = detail::read_lines(path);
  const int side = static_cast<int>(lines.size());
  require(side > 0, path.string() + ": empty counts file");
  Vector counts(static_cast<Eigen::Index>(side) * side);
  for (int i = 0; i < side; ++i) {
    const auto cells = detail::split_csv_line(lines[static_cast<std::size_t>(i)]);
    if (static_cast<int>(cells.size()) != side)
      throw InvalidArgument(path.string() + ": row " + std::to_string(i + 1) + " has " + std::to_string(cells.size()) +
                            " cells, expected " + std::to_string(side));
    for (int j = 0; j < side; ++j) {
      const double v = detail::parse_number(cells[static_cast<std::size_t>(j)], path.string());
      if (v < 0.0 || v != std::floor(v)) throw InvalidArgument(path.string() + ": counts must be non-negative integers");
      counts(static_cast<Eigen::Index>(i) * side + j) = v;
    }
  }
  if (side_out) *side_out = side;
  return counts;
}

inline void write_counts_csv(const std::filesystem::path& path, const Vector& counts, int side) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  for (int i = 0; i < side; ++i) {
    for (int j = 0; j < side; ++j) {
      if (j) out << ',';
      out << static_cast<long long>(counts(static_cast<Eigen::Index>(i) * side + j));
    }
    out << '\n';
  }
}

/// Table with a header; columns named "y" hold the response, columns whose
/// name starts with "s" (regression) or every other column (classification)
/// hold inputs.
inline Dataset read_table_csv(const std::filesystem::path& path, ModelKind model) {
  const auto lines = detail::read_lines(path);
  require(lines.size() >= 2, path.string() + ": needs a header and at least one row");
  const auto header = detail::split_csv_line(lines[0]);
  int y_col = -1;
  std::vector<int> input_cols;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    const std::string& name = header[static_cast<std::size_t>(c)];
    if (name == "y") y_col = c;
    else if (model != ModelKind::Regression || (!name.empty() && name[0] == 's')) input_cols.push_back(c);
  }
  require(y_col >= 0, path.string() + ": no column named 'y'");
  require(!input_cols.empty(), path.string() + ": no input columns");
  const auto rows = static_cast<Eigen::Index>(lines.size() - 1);
  Dataset d;
  d.model = model;
  d.inputs.resize(rows, static_cast<Eigen::Index>(input_cols.size()));
  d.y.resize(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto cells = detail::split_csv_line(lines[static_cast<std::size_t>(r + 1)]);
    require(cells.size() == header.size(), path.string() + ": row " + std::to_string(r + 2) + " has the wrong width");
    d.y(r) = detail::parse_number(cells[static_cast<std::size_t>(y_col)], path.string());
    for (std::size_t c = 0; c < input_cols.size(); ++c)
      d.inputs(r, static_cast<Eigen::Index>(c)) =
          detail::parse_number(cells[static_cast<std::size_t>(input_cols[c])], path.string());
  }
  if (model == ModelKind::Binary || model == ModelKind::Multiclass) standardize_columns(d.inputs);
  if (model == ModelKind::Multiclass) d.classes = static_cast<int>(d.y.maxCoeff());
  return d;
}

/// Writes data.csv (or counts.csv for Cox) and, when simulated, latent.csv.
inline std::vector<std::filesystem::path> write_dataset_files(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  if (d.model == ModelKind::Cox) {
    written.push_back(dir / "counts.csv");
    write_counts_csv(written.back(), d.y, d.grid_side);
  } else {
    written.push_back(dir / "data.csv");
    std::ofstream out(written.back());
    const bool regression = d.model == ModelKind::Regression;
    for (Eigen::Index c = 0; c < d.inputs.cols(); ++c)
      out << (regression ? (d.inputs.cols() == 1 ? std::string("s") : "s" + std::to_string(c + 1))
                         : "f" + std::to_string(c + 1))
          << ',';
    out << "y\n";
    for (Eigen::Index r = 0; r < d.inputs.rows(); ++r) {
      for (Eigen::Index c = 0; c < d.inputs.cols(); ++c) out << format_double(d.inputs(r, c)) << ',';
      if (regression) out << format_double(d.y(r)) << '\n';
      else out << static_cast<long long>(d.y(r)) << '\n';
    }
  }
  if (d.latent.size() > 0) {
    written.push_back(dir / "latent.csv");
    std::ofstream out(written.back());
    out << "x\n";
    for (Eigen::Index i = 0; i < d.latent.size(); ++i) out << format_double(d.latent(i)) << '\n';
  }
  return written;
}

inline nlohmann::json kernel_to_json(const KernelSettings& k) {
  nlohmann::json j;
  j["kind"] = to_string(k.kind);
  j["variance"] = k.variance;
  if (k.kind == KernelKind::SquaredExponential) j["lengthscale2"] = k.lengthscale2;
  else {
    j["beta"] = k.beta;
    if (k.scale_divisor > 0.0) j["scale_divisor"] = k.scale_divisor;
  }
  if (k.jitter != 0.0) j["jitter"] = k.jitter;
  return j;
}

inline constexpr int kManifestSchemaVersion = 1;

inline nlohmann::json dataset_manifest(const Dataset& d, std::optional<std::uint64_t> seed,
                                       const std::optional<KernelSettings>& kernel) {
  nlohmann::json m;
  m["schema_version"] = kManifestSchemaVersion;
  m["model"] = to_string(d.model);
  if (seed) m["seed"] = *seed;
  m["sites"] = d.sites();
  switch (d.model) {
    case ModelKind::Regression: m["sigma2"] = d.sigma2; m["file"] = "data.csv"; break;
    case ModelKind::Cox:
      m["grid"] = d.grid_side;
      m["cell_area"] = d.cell_area;
      m["offset"] = d.offset;
      m["file"] = "counts.csv";
      m["total_count"] = d.y.sum();
      break;
    case ModelKind::Binary: m["file"] = "data.csv"; break;
    case ModelKind::Multiclass: m["classes"] = d.classes; m["file"] = "data.csv"; break;
  }
  if (kernel) m["kernel"] = kernel_to_json(*kernel);
  return m;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace lgm::harness
