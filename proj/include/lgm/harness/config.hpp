#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lgm/harness/dataset.hpp"
#include "lgm/hyper.hpp"
#include "lgm/samplers.hpp"

namespace lgm::harness {

/// Raised for schema violations; the message starts with the field path.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct HyperSettings {
  HyperMode mode = HyperMode::Fixed;
  std::uint64_t latent_per_theta = 10;
  double kappa = 0.1;
  double theta_prior_variance = 100.0;
};

struct ExperimentConfig {
  ModelKind model = ModelKind::Regression;
  std::optional<std::filesystem::path> data_path;
  std::optional<SimulateSpec> simulate;
  std::uint64_t simulate_seed = 1;
  KernelSettings kernel;
  bool kernel_given = false;
  std::optional<double> sigma2;
  std::optional<double> cell_area;
  std::optional<double> offset;
  std::vector<SamplerKind> samplers;
  std::vector<std::uint64_t> seeds;
  std::uint64_t burn_in = 0;
  std::uint64_t collect = 0;
  std::uint64_t thin = 1;
  HyperSettings hyper;
  std::filesystem::path output = "lgm-out";
};

/// Burn-in and collection lengths per model: regression 2000 / 2000, Cox
/// 2000 / 5000, classification 5000 / 5000.
inline std::pair<std::uint64_t, std::uint64_t> default_run_lengths(ModelKind model) {
  switch (model) {
    case ModelKind::Regression: return {2000, 2000};
    case ModelKind::Cox: return {2000, 5000};
    case ModelKind::Binary:
    case ModelKind::Multiclass: return {5000, 5000};
  }
  return {2000, 2000};
}

namespace detail {

using nlohmann::json;

/// Object reader that rejects unknown keys.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  [[nodiscard]] std::string at(const std::string& key) const { return path_ + "." + key; }

  const json* get(const std::string& key) {
    known_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  double number(const std::string& key, double fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_number()) throw ConfigError(at(key) + ": expected a number");
    const double d = v->get<double>();
    if (!std::isfinite(d)) throw ConfigError(at(key) + ": must be finite");
    return d;
  }

  std::optional<double> optional_number(const std::string& key) {
    if (!j_.contains(key)) {
      known_.insert(key);
      return std::nullopt;
    }
    return number(key, 0.0);
  }

  double positive(const std::string& key, double fallback) {
    const double d = number(key, fallback);
    if (!(d > 0.0)) throw ConfigError(at(key) + ": must be positive");
    return d;
  }

  std::uint64_t count(const std::string& key, std::uint64_t fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_number_integer() || v->get<long long>() < 0)
      throw ConfigError(at(key) + ": expected a non-negative integer");
    return v->get<std::uint64_t>();
  }

  std::string text(const std::string& key, const std::string& fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_string()) throw ConfigError(at(key) + ": expected a string");
    return v->get<std::string>();
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!known_.count(key)) throw ConfigError(at(key) + ": unknown key '" + key + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> known_;
};

template <class Fn>
auto wrap(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline KernelSettings parse_kernel(const json& j, const std::string& path, KernelSettings k) {
  Fields f(j, path);
  const std::string kind = f.text("kind", to_string(k.kind));
  k.kind = wrap(f.at("kind"), [&] { return kernel_kind_from_string(kind); });
  k.variance = f.positive("variance", k.variance);
  k.lengthscale2 = f.positive("lengthscale2", k.lengthscale2);
  k.beta = f.positive("beta", k.beta);
  k.scale_divisor = f.number("scale_divisor", k.scale_divisor);
  k.jitter = f.number("jitter", k.jitter);
  if (k.jitter < 0.0) throw ConfigError(f.at("jitter") + ": must be non-negative");
  f.finish();
  return k;
}

inline SimulateSpec parse_simulate(const json& j, const std::string& path, ModelKind model) {
  Fields f(j, path);
  SimulateSpec s;
  s.model = model;
  s.kernel = default_kernel(model);
  const auto positive_int = [&](const std::string& key, int fallback) {
    const std::uint64_t v = f.count(key, static_cast<std::uint64_t>(fallback));
    if (v == 0 || v > 1'000'000) throw ConfigError(f.at(key) + ": must be a positive integer");
    return static_cast<int>(v);
  };
  s.n = positive_int("n", s.n);
  s.sigma2 = f.positive("sigma2", s.sigma2);
  s.grid = positive_int("grid", s.grid);
  s.cell_area = f.optional_number("cell_area");
  if (s.cell_area && !(*s.cell_area > 0.0)) throw ConfigError(f.at("cell_area") + ": must be positive");
  s.offset = f.optional_number("offset");
  s.features = positive_int("features", s.features);
  s.classes = positive_int("classes", s.classes);
  if (model == ModelKind::Multiclass && s.classes < 2) throw ConfigError(f.at("classes") + ": must be at least 2");
  s.inputs = f.text("inputs", s.inputs);
  if (s.inputs != "uniform" && s.inputs != "grid") throw ConfigError(f.at("inputs") + ": must be 'uniform' or 'grid'");
  if (const json* k = f.get("kernel")) s.kernel = parse_kernel(*k, f.at("kernel"), s.kernel);
  f.get("seed");  // read by the caller
  f.finish();
  return s;
}

}  // namespace detail

/// Parses and validates an experiment config. `base` resolves relative data
/// paths.
inline ExperimentConfig parse_config_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  using detail::Fields;
  Fields f(j, "config");
  ExperimentConfig c;
  const std::string model = f.text("model", "");
  if (model.empty()) throw ConfigError("config.model: required");
  c.model = detail::wrap("config.model", [&] { return model_kind_from_string(model); });
  c.kernel = default_kernel(c.model);

  const nlohmann::json* data = f.get("data");
  const nlohmann::json* simulate = f.get("simulate");
  if ((data == nullptr) == (simulate == nullptr)) throw ConfigError("config: exactly one of 'data' or 'simulate' is required");
  if (data) {
    if (!data->is_string()) throw ConfigError("config.data: expected a path string");
    std::filesystem::path p = data->get<std::string>();
    if (p.is_relative() && !base.empty()) p = base / p;
    c.data_path = p;
  } else {
    c.simulate = detail::parse_simulate(*simulate, "config.simulate", c.model);
    if (simulate->contains("seed")) {
      const auto& s = (*simulate)["seed"];
      if (!s.is_number_integer() || s.get<long long>() < 0) throw ConfigError("config.simulate.seed: expected a non-negative integer");
      c.simulate_seed = s.get<std::uint64_t>();
    }
    c.kernel = c.simulate->kernel;
  }
  if (const auto* k = f.get("kernel")) {
    c.kernel = detail::parse_kernel(*k, "config.kernel", c.kernel);
    c.kernel_given = true;
  }
  c.sigma2 = f.optional_number("sigma2");
  if (c.sigma2 && !(*c.sigma2 > 0.0)) throw ConfigError("config.sigma2: must be positive");
  c.cell_area = f.optional_number("cell_area");
  if (c.cell_area && !(*c.cell_area > 0.0)) throw ConfigError("config.cell_area: must be positive");
  c.offset = f.optional_number("offset");

  const nlohmann::json* samplers = f.get("samplers");
  if (!samplers || !samplers->is_array() || samplers->empty())
    throw ConfigError("config.samplers: expected a non-empty array of sampler names");
  for (std::size_t i = 0; i < samplers->size(); ++i) {
    const auto& s = (*samplers)[i];
    const std::string path = "config.samplers[" + std::to_string(i) + "]";
    if (!s.is_string()) throw ConfigError(path + ": expected a string");
    c.samplers.push_back(detail::wrap(path, [&] { return sampler_kind_from_string(s.get<std::string>()); }));
  }

  const nlohmann::json* seeds = f.get("seeds");
  if (!seeds || !seeds->is_array() || seeds->empty()) throw ConfigError("config.seeds: expected a non-empty array");
  for (std::size_t i = 0; i < seeds->size(); ++i) {
    const auto& s = (*seeds)[i];
    if (!s.is_number_integer() || s.get<long long>() < 0)
      throw ConfigError("config.seeds[" + std::to_string(i) + "]: expected a non-negative integer");
    c.seeds.push_back(s.get<std::uint64_t>());
  }

  const auto [burn, collect] = default_run_lengths(c.model);
  c.burn_in = f.count("burn_in", burn);
  c.collect = f.count("collect", collect);
  c.thin = f.count("thin", 1);
  if (c.collect < 100) throw ConfigError("config.collect: must be at least 100");
  if (c.thin < 1) throw ConfigError("config.thin: must be at least 1");
  if (c.collect / c.thin < 100) throw ConfigError("config.thin: fewer than 100 retained samples");

  if (const auto* h = f.get("hyper")) {
    Fields hf(*h, "config.hyper");
    const std::string mode = hf.text("mode", "fixed");
    c.hyper.mode = detail::wrap("config.hyper.mode", [&] { return hyper_mode_from_string(mode); });
    c.hyper.latent_per_theta = hf.count("R", c.hyper.latent_per_theta);
    if (c.hyper.latent_per_theta < 1) throw ConfigError("config.hyper.R: must be at least 1");
    c.hyper.kappa = hf.positive("kappa", c.hyper.kappa);
    c.hyper.theta_prior_variance = hf.positive("theta_prior_variance", c.hyper.theta_prior_variance);
    hf.finish();
  }
  if (c.hyper.mode != HyperMode::Fixed) {
    if (c.kernel.kind != KernelKind::SquaredExponential)
      throw ConfigError("config.hyper.mode: hyperparameter learning needs the squared-exponential kernel");
    if (c.hyper.mode == HyperMode::Joint)
      for (SamplerKind s : c.samplers)
        if (s != SamplerKind::AGradZ)
          throw ConfigError("config.samplers: the joint hyper move is defined for aGrad-z only, got " + to_string(s));
  } else if (c.data_path && !c.kernel_given) {
    throw ConfigError("config.kernel: fixed-hyperparameter runs on file data need kernel hyperparameters");
  }

  c.output = f.text("output", c.output.string());
  f.finish();
  return c;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
}

inline ExperimentConfig parse_config(const std::filesystem::path& path) {
  return parse_config_json(read_json_file(path), path.parent_path());
}

/// Simulation spec file for `lgm simulate`: {"model": ..., "seed": ..., ...}.
inline std::pair<SimulateSpec, std::uint64_t> parse_simulate_spec(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("spec: expected an object");
  nlohmann::json body = j;
  if (!body.contains("model") || !body["model"].is_string()) throw ConfigError("spec.model: required");
  const ModelKind model = detail::wrap("spec.model", [&] { return model_kind_from_string(body["model"].get<std::string>()); });
  body.erase("model");
  std::uint64_t seed = 1;
  if (body.contains("seed")) {
    if (!body["seed"].is_number_integer() || body["seed"].get<long long>() < 0)
      throw ConfigError("spec.seed: expected a non-negative integer");
    seed = body["seed"].get<std::uint64_t>();
  }
  return {detail::parse_simulate(body, "spec", model), seed};
}

/// Loads or simulates the dataset a config refers to. File data picks up
/// likelihood constants from a manifest.json next to it when present;
/// explicit config values win.
inline Dataset load_dataset(const ExperimentConfig& c) {
  if (c.simulate) {
    Dataset d = simulate_dataset(*c.simulate, c.simulate_seed);
    if (c.sigma2) d.sigma2 = *c.sigma2;
    if (c.cell_area) d.cell_area = *c.cell_area;
    if (c.offset) d.offset = *c.offset;
    return d;
  }
  const auto& path = *c.data_path;
  nlohmann::json manifest;
  const auto manifest_path = path.parent_path() / "manifest.json";
  if (std::filesystem::exists(manifest_path)) manifest = read_json_file(manifest_path);
  const auto from_manifest = [&](const char* key) -> std::optional<double> {
    if (manifest.is_object() && manifest.contains(key) && manifest[key].is_number()) return manifest[key].get<double>();
    return std::nullopt;
  };
  Dataset d;
  if (c.model == ModelKind::Cox) {
    int side = 0;
    d.model = ModelKind::Cox;
    d.y = read_counts_csv(path, &side);
    d.grid_side = side;
    d.inputs = grid_cells(side);
    d.cell_area = c.cell_area.value_or(from_manifest("cell_area").value_or(1.0 / (static_cast<double>(side) * side)));
    d.offset = c.offset.value_or(from_manifest("offset").value_or(std::log(126.0) - 0.5 * c.kernel.variance));
  } else {
    d = read_table_csv(path, c.model);
    if (c.model == ModelKind::Regression) {
      const auto s2 = c.sigma2 ? c.sigma2 : from_manifest("sigma2");
      if (!s2) throw ConfigError("config.sigma2: required for regression data without a manifest");
      d.sigma2 = *s2;
    }
    if (c.model == ModelKind::Multiclass && from_manifest("classes")) d.classes = static_cast<int>(*from_manifest("classes"));
  }
  return d;
}

}  // namespace lgm::harness
