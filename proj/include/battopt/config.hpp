#pragma once

// JSON experiment configuration. Every section is optional and defaults to the
// single 15 kW / 60 kWh battery over a 24 h horizon at 1 h steps. Unknown keys
// are rejected.
//
// {
//   "battery":   {"p_max": 15, "e_max": 60, "eta_c": 0.95, "eta_d": 0.95, "e0": 30},
//   "fleet":     [ {battery}, ... ],          explicit fleet for `dispatch`
//   "fleet_size": 1,                          copies of "battery" otherwise
//   "grid":      {"steps": 24, "dt": 1.0},
//   "scenario":  {"kind": "sinusoid", "seed": 1, "amplitude": 15, "file": "ref.csv"},
//   "eta":       "symmetric" | 1.0,
//   "regularization_eps": 1e-7,
//   "solver":    {"eps_abs", "eps_rel", "max_iter", "rho", "adaptive_rho",
//                 "alpha", "sigma", "polish"},
//   "bnb":       {"node_limit", "gap_tol", "time_limit_s", "tol_comp"},
//   "benchmark": {"fleet_sizes": [1, 2, 4], "methods": ["rbd", "mip_bnb", "oracle"]}
// }

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "battopt/battery.hpp"
#include "battopt/dispatch.hpp"
#include "battopt/errors.hpp"
#include "battopt/harness.hpp"

namespace battopt {

struct ExperimentConfig {
  BenchmarkConfig bench;
  std::vector<BatterySpec> fleet;  // empty: fleet_size copies of bench.battery
  std::size_t fleet_size = 1;

  /// Problem for the `dispatch` command; `seed` overrides the scenario seed.
  DispatchProblem dispatch_problem(std::optional<std::uint64_t> seed = std::nullopt) const {
    ScenarioSpec gen = bench.scenario;
    if (seed) gen.seed = *seed;
    if (fleet.empty()) {
      return make_scenario(bench.battery, fleet_size, bench.grid, gen, bench.regularization_eps,
                           bench.eta)
          .problem;
    }
    Scenario sc = make_scenario(fleet.front(), fleet.size(), bench.grid, gen,
                                bench.regularization_eps, bench.eta);
    sc.problem.batteries = fleet;
    sc.problem.validate();
    return sc.problem;
  }
};

namespace detail {

using Json = nlohmann::json;

inline void require_keys(const Json& obj, std::string_view where,
                         std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) throw ConfigError("unknown key '" + key + "' in " + std::string(where));
  }
}

template <typename T>
void read_opt(const Json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("key '") + key + "': " + e.what());
  }
}

inline BatterySpec parse_battery(const Json& j, const BatterySpec& defaults) {
  require_keys(j, "battery", {"p_max", "e_max", "eta_c", "eta_d", "e0"});
  BatterySpec b = defaults;
  read_opt(j, "p_max", b.p_max);
  read_opt(j, "e_max", b.e_max);
  read_opt(j, "eta_c", b.eta_c);
  read_opt(j, "eta_d", b.eta_d);
  read_opt(j, "e0", b.e0);
  try {
    b.validate();
  } catch (const InvalidSpec& e) {
    throw ConfigError(e.what());
  }
  return b;
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::read_opt;
  detail::require_keys(j, "config",
                       {"battery", "fleet", "fleet_size", "grid", "scenario", "eta",
                        "regularization_eps", "solver", "bnb", "benchmark"});
  ExperimentConfig cfg;
  auto& b = cfg.bench;
  if (j.contains("battery")) b.battery = detail::parse_battery(j.at("battery"), b.battery);
  if (j.contains("fleet")) {
    if (!j.at("fleet").is_array() || j.at("fleet").empty()) {
      throw ConfigError("fleet must be a non-empty array");
    }
    for (const auto& item : j.at("fleet")) cfg.fleet.push_back(detail::parse_battery(item, b.battery));
  }
  read_opt(j, "fleet_size", cfg.fleet_size);
  if (cfg.fleet_size < 1) throw ConfigError("fleet_size must be at least 1");

  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    detail::require_keys(g, "grid", {"steps", "dt"});
    read_opt(g, "steps", b.grid.steps);
    read_opt(g, "dt", b.grid.dt);
  }
  try {
    b.grid.validate();
  } catch (const InvalidSpec& e) {
    throw ConfigError(e.what());
  }

  if (j.contains("scenario")) {
    const auto& s = j.at("scenario");
    detail::require_keys(s, "scenario", {"kind", "seed", "amplitude", "file"});
    read_opt(s, "kind", b.scenario.kind);
    read_opt(s, "seed", b.scenario.seed);
    read_opt(s, "amplitude", b.scenario.amplitude);
    std::string file;
    read_opt(s, "file", file);
    b.scenario.file = file;
  }

  if (j.contains("eta")) {
    const auto& e = j.at("eta");
    if (e.is_string()) {
      if (e.get<std::string>() != "symmetric") throw ConfigError("eta must be \"symmetric\" or a number");
    } else if (e.is_number()) {
      b.eta = e.get<double>();
    } else {
      throw ConfigError("eta must be \"symmetric\" or a number");
    }
  }
  read_opt(j, "regularization_eps", b.regularization_eps);

  if (j.contains("solver")) {
    const auto& s = j.at("solver");
    detail::require_keys(s, "solver", {"eps_abs", "eps_rel", "max_iter", "rho", "adaptive_rho",
                                       "alpha", "sigma", "polish"});
    auto& q = b.solver;
    read_opt(s, "eps_abs", q.eps_abs);
    read_opt(s, "eps_rel", q.eps_rel);
    read_opt(s, "max_iter", q.max_iter);
    read_opt(s, "rho", q.rho);
    read_opt(s, "adaptive_rho", q.adaptive_rho);
    read_opt(s, "alpha", q.alpha);
    read_opt(s, "sigma", q.sigma);
    read_opt(s, "polish", q.polish);
    try {
      q.validate();
    } catch (const InvalidProblem& e) {
      throw ConfigError(e.what());
    }
  }
  b.bnb.qp = b.solver;
  if (j.contains("bnb")) {
    const auto& s = j.at("bnb");
    detail::require_keys(s, "bnb", {"node_limit", "gap_tol", "time_limit_s", "tol_comp"});
    read_opt(s, "node_limit", b.bnb.node_limit);
    read_opt(s, "gap_tol", b.bnb.gap_tol);
    read_opt(s, "time_limit_s", b.bnb.time_limit_s);
    read_opt(s, "tol_comp", b.bnb.tol_comp);
    try {
      b.bnb.validate();
    } catch (const InvalidProblem& e) {
      throw ConfigError(e.what());
    }
  }
  if (j.contains("benchmark")) {
    const auto& s = j.at("benchmark");
    detail::require_keys(s, "benchmark", {"fleet_sizes", "methods"});
    read_opt(s, "fleet_sizes", b.fleet_sizes);
    read_opt(s, "methods", b.methods);
    for (const auto& m : b.methods) {
      if (m != "rbd" && m != "mip_bnb" && m != "oracle") throw ConfigError("unknown method '" + m + "'");
    }
    for (auto n : b.fleet_sizes) {
      if (n < 1) throw ConfigError("fleet sizes must be positive");
    }
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  ExperimentConfig cfg = parse_config(j);
  if (cfg.bench.scenario.kind == "file" && cfg.bench.scenario.file.is_relative()) {
    cfg.bench.scenario.file = path.parent_path() / cfg.bench.scenario.file;
  }
  return cfg;
}

}  // namespace battopt
