#pragma once

// Run configuration: an INI file with sections [problem] [holder] [grid] [noise]
// [ensemble] [cascade] [verify] [run]. Every key is listed in one table that
// drives parsing, environment overrides and the echoed effective config.
//
// Grammar: `key = value` lines under `[section]` headers; `;` or `#` starts a
// comment line. Unknown sections or keys are rejected. An environment variable
// SPDELAB_<SECTION>__<KEY> (upper case) overrides the file value.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cerrno>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "spdelab/cascade.hpp"
#include "spdelab/errors.hpp"
#include "spdelab/families.hpp"
#include "spdelab/verify.hpp"

namespace spdelab {

struct GridSettings {
  std::size_t points = 128;
  double c_stab = 0.5;
  std::size_t n_steps = 0;  // 0: smallest certified count
  std::size_t save_every = 0;  // 0: first and last level only
  double blowup_threshold = 1e12;
};

struct EnsembleSettings {
  std::size_t samples = 32;
  std::size_t sample = 0;  // realization written by `solve`
  std::size_t pair_budget = kDefaultPairBudget;
  std::uint64_t pair_seed = 0x9A1C0DEull;
  std::size_t time_levels = 32;  // saved time levels for `ensemble` and `norms`
};

struct CascadeSettings {
  double rho = 0.5;
  std::size_t levels = 5;
  double center_x = 0.0;
  double center_t = 1.0;
  double radius = 1.0;
  std::size_t samples = 16;
  std::size_t points = 256;
  std::size_t max_points = 2048;
  std::size_t probe_time_levels = 64;
  std::size_t data_time_levels = 16;
};

/// Thresholds and sizes of the verification experiments.
struct VerifySettings {
  double spread = 10.0;
  double se_multiplier = 3.0;
  double slope_tolerance = 0.3;
  double oracle_tolerance = 0.05;
  double oracle_min_ratio = 1.5;
  std::size_t oracle_samples = 2000;
  std::size_t oracle_points = 128;
  double linearity_tolerance = 1e-9;
  double scaling_tolerance = 1e-9;
  std::size_t energy_samples = 64;
  std::size_t energy_points = 256;
  double closed_form_tolerance = 0.2;
  std::size_t lemma_pairs = 100;
  std::size_t lemma_samples = 64;
  std::size_t lemma_points = 256;
  double lemma_pair_radius = 0.25;
  double schauder_tau = 0.25;
  std::size_t schauder_points = 128;
  std::size_t schauder_samples = 32;
  double claim3_spread = 3.0;
  double claim3_gap_factor = 2.0;
  double dini_tolerance = 0.01;
  std::size_t triangle_triples = 10000;
};

struct RunSettings {
  std::uint64_t seed = 1;
  std::string out = "out";
  std::string format = "csv";
  unsigned workers = 0;  // 0: logical cores
};

struct RunConfig {
  FamilyParams problem;
  GridSettings grid;
  EnsembleSettings ensemble;
  CascadeSettings cascade;
  VerifySettings verify;
  RunSettings run;

  ProblemSpec spec() const { return build_family(problem); }

  CascadeConfig cascade_config() const {
    CascadeConfig c;
    c.rho = cascade.rho;
    c.levels = cascade.levels;
    c.base = Cylinder{std::vector<double>(problem.dim, cascade.center_x), cascade.center_t, cascade.radius};
    c.samples = cascade.samples;
    c.points = cascade.points;
    c.max_points = cascade.max_points;
    c.c_stab = grid.c_stab;
    c.probe_time_levels = cascade.probe_time_levels;
    c.data_time_levels = cascade.data_time_levels;
    c.threshold = verify.spread;
    c.seed = run.seed;
    c.workers = run.workers;
    return c;
  }
};

namespace detail {

struct ConfigKey {
  std::string section;
  std::string key;
  bool required = false;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_number(const std::string& text, const std::string& where) {
  std::string s = text;
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t start = 0;
  while (start < s.size() && std::isspace(static_cast<unsigned char>(s[start]))) ++start;
  s = s.substr(start);
  if (s.empty()) throw ConfigError(where + ": empty value");
  if constexpr (std::is_floating_point_v<T>) {
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || errno == ERANGE) throw ConfigError(where + ": not a number: '" + text + "'");
    return v;
  } else {
    if (s[0] == '-') throw ConfigError(where + ": must be nonnegative: '" + text + "'");
    int base = 10;
    const char* first = s.c_str();
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
      base = 16;
      first += 2;
    }
    T v{};
    const auto [ptr, ec] = std::from_chars(first, s.c_str() + s.size(), v, base);
    if (ec != std::errc() || ptr != s.c_str() + s.size()) throw ConfigError(where + ": not an integer: '" + text + "'");
    return v;
  }
}

template <class T, class Access>
ConfigKey make_key(std::string section, std::string key, Access access, bool required = false) {
  ConfigKey k;
  k.section = std::move(section);
  k.key = std::move(key);
  k.required = required;
  const std::string where = k.section + "." + k.key;
  k.set = [access, where](RunConfig& c, const std::string& text) {
    if constexpr (std::is_same_v<T, std::string>) {
      std::string s = text;
      while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
      while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
      access(c) = s;
    } else {
      access(c) = parse_number<T>(text, where);
    }
  };
  k.get = [access](const RunConfig& c) {
    const T& v = access(const_cast<RunConfig&>(c));
    if constexpr (std::is_same_v<T, std::string>) {
      return v;
    } else if constexpr (std::is_floating_point_v<T>) {
      return format_value(v);
    } else {
      return std::to_string(v);
    }
  };
  return k;
}

#define SPDELAB_KEY(T, section, name, member, ...) \
  make_key<T>(section, name, [](RunConfig& c) -> T& { return c.member; } __VA_OPT__(, ) __VA_ARGS__)

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      SPDELAB_KEY(std::string, "problem", "family", problem.family, true),
      SPDELAB_KEY(std::size_t, "problem", "dim", problem.dim),
      SPDELAB_KEY(double, "problem", "horizon", problem.horizon, true),
      SPDELAB_KEY(double, "problem", "domain_length", problem.domain_length),
      SPDELAB_KEY(double, "problem", "a0", problem.a0),
      SPDELAB_KEY(double, "problem", "a_amp", problem.a_amp),
      SPDELAB_KEY(double, "problem", "b0", problem.b0),
      SPDELAB_KEY(double, "problem", "c0", problem.c0),
      SPDELAB_KEY(double, "problem", "sigma0", problem.sigma0),
      SPDELAB_KEY(double, "problem", "nu0", problem.nu0),
      SPDELAB_KEY(double, "problem", "nu_amp", problem.nu_amp),
      SPDELAB_KEY(double, "problem", "f0", problem.f0),
      SPDELAB_KEY(double, "problem", "f_amp", problem.f_amp),
      SPDELAB_KEY(double, "problem", "f_k", problem.f_k),
      SPDELAB_KEY(double, "problem", "g0", problem.g0),
      SPDELAB_KEY(double, "problem", "g_amp", problem.g_amp),
      SPDELAB_KEY(double, "problem", "g_k", problem.g_k),
      SPDELAB_KEY(double, "problem", "lambda", problem.bounds.lambda),
      SPDELAB_KEY(double, "problem", "K", problem.bounds.K),
      SPDELAB_KEY(double, "holder", "alpha", problem.holder.alpha),
      SPDELAB_KEY(double, "holder", "p", problem.holder.p),
      SPDELAB_KEY(int, "holder", "m", problem.holder.m),
      SPDELAB_KEY(std::size_t, "grid", "points", grid.points, true),
      SPDELAB_KEY(double, "grid", "c_stab", grid.c_stab),
      SPDELAB_KEY(std::size_t, "grid", "n_steps", grid.n_steps),
      SPDELAB_KEY(std::size_t, "grid", "save_every", grid.save_every),
      SPDELAB_KEY(double, "grid", "blowup_threshold", grid.blowup_threshold),
      SPDELAB_KEY(std::size_t, "noise", "modes", problem.modes),
      SPDELAB_KEY(double, "noise", "ou_theta", problem.ou_theta),
      SPDELAB_KEY(std::size_t, "ensemble", "samples", ensemble.samples),
      SPDELAB_KEY(std::size_t, "ensemble", "sample", ensemble.sample),
      SPDELAB_KEY(std::size_t, "ensemble", "pair_budget", ensemble.pair_budget),
      SPDELAB_KEY(std::uint64_t, "ensemble", "pair_seed", ensemble.pair_seed),
      SPDELAB_KEY(std::size_t, "ensemble", "time_levels", ensemble.time_levels),
      SPDELAB_KEY(double, "cascade", "rho", cascade.rho),
      SPDELAB_KEY(std::size_t, "cascade", "levels", cascade.levels),
      SPDELAB_KEY(double, "cascade", "center_x", cascade.center_x),
      SPDELAB_KEY(double, "cascade", "center_t", cascade.center_t),
      SPDELAB_KEY(double, "cascade", "radius", cascade.radius),
      SPDELAB_KEY(std::size_t, "cascade", "samples", cascade.samples),
      SPDELAB_KEY(std::size_t, "cascade", "points", cascade.points),
      SPDELAB_KEY(std::size_t, "cascade", "max_points", cascade.max_points),
      SPDELAB_KEY(std::size_t, "cascade", "probe_time_levels", cascade.probe_time_levels),
      SPDELAB_KEY(std::size_t, "cascade", "data_time_levels", cascade.data_time_levels),
      SPDELAB_KEY(double, "verify", "spread", verify.spread),
      SPDELAB_KEY(double, "verify", "se_multiplier", verify.se_multiplier),
      SPDELAB_KEY(double, "verify", "slope_tolerance", verify.slope_tolerance),
      SPDELAB_KEY(double, "verify", "oracle_tolerance", verify.oracle_tolerance),
      SPDELAB_KEY(double, "verify", "oracle_min_ratio", verify.oracle_min_ratio),
      SPDELAB_KEY(std::size_t, "verify", "oracle_samples", verify.oracle_samples),
      SPDELAB_KEY(std::size_t, "verify", "oracle_points", verify.oracle_points),
      SPDELAB_KEY(double, "verify", "linearity_tolerance", verify.linearity_tolerance),
      SPDELAB_KEY(double, "verify", "scaling_tolerance", verify.scaling_tolerance),
      SPDELAB_KEY(std::size_t, "verify", "energy_samples", verify.energy_samples),
      SPDELAB_KEY(std::size_t, "verify", "energy_points", verify.energy_points),
      SPDELAB_KEY(double, "verify", "closed_form_tolerance", verify.closed_form_tolerance),
      SPDELAB_KEY(std::size_t, "verify", "lemma_pairs", verify.lemma_pairs),
      SPDELAB_KEY(std::size_t, "verify", "lemma_samples", verify.lemma_samples),
      SPDELAB_KEY(std::size_t, "verify", "lemma_points", verify.lemma_points),
      SPDELAB_KEY(double, "verify", "lemma_pair_radius", verify.lemma_pair_radius),
      SPDELAB_KEY(double, "verify", "schauder_tau", verify.schauder_tau),
      SPDELAB_KEY(std::size_t, "verify", "schauder_points", verify.schauder_points),
      SPDELAB_KEY(std::size_t, "verify", "schauder_samples", verify.schauder_samples),
      SPDELAB_KEY(double, "verify", "claim3_spread", verify.claim3_spread),
      SPDELAB_KEY(double, "verify", "claim3_gap_factor", verify.claim3_gap_factor),
      SPDELAB_KEY(double, "verify", "dini_tolerance", verify.dini_tolerance),
      SPDELAB_KEY(std::size_t, "verify", "triangle_triples", verify.triangle_triples),
      SPDELAB_KEY(std::uint64_t, "run", "seed", run.seed),
      SPDELAB_KEY(std::string, "run", "out", run.out),
      SPDELAB_KEY(std::string, "run", "format", run.format),
      SPDELAB_KEY(unsigned, "run", "workers", run.workers),
  };
  return keys;
}

#undef SPDELAB_KEY

inline std::string env_name(const ConfigKey& k) {
  std::string name = "SPDELAB_" + k.section + "__" + k.key;
  for (char& c : name) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return name;
}

}  // namespace detail

/// Checks that do not need any computation: shapes, ranges and format names.
inline void validate_settings(const RunConfig& c) {
  if (c.run.format != "csv" && c.run.format != "bin" && c.run.format != "json")
    throw ConfigError("run.format: expected csv, bin or json, got '" + c.run.format + "'");
  if (c.problem.dim == 0 || c.problem.dim > kMaxDim) throw ConfigError("problem.dim: must lie in 1..4");
  if (c.problem.modes == 0) throw ConfigError("noise.modes: must be positive");
  if (!(c.problem.horizon > 0.0)) throw ConfigError("problem.horizon: must be positive");
  if (!(c.problem.domain_length > 0.0)) throw ConfigError("problem.domain_length: must be positive");
  if (c.grid.points < 4) throw ConfigError("grid.points: need at least 4");
  if (!(c.grid.c_stab > 0.0 && c.grid.c_stab <= 1.0)) throw ConfigError("grid.c_stab: must lie in (0, 1]");
  if (c.ensemble.samples < 2) throw ConfigError("ensemble.samples: need at least 2");
  if (c.ensemble.time_levels < 2) throw ConfigError("ensemble.time_levels: need at least 2");
  try {
    c.problem.bounds.validate();
    c.problem.holder.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
}

/// Parses INI text. `source` names the file in error messages; `env` enables overrides.
inline RunConfig parse_config(std::istream& in, const std::string& source = "config", bool env = true) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(source + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  const auto& keys = detail::config_keys();
  std::set<std::string> sections;
  for (const auto& k : keys) sections.insert(k.section);
  for (const auto& [section, body] : tree) {
    if (!sections.count(section)) {
      if (body.empty()) throw ConfigError(source + ": key '" + section + "' outside any section");
      throw ConfigError(source + ": unknown section [" + section + "]");
    }
    for (const auto& [key, value] : body) {
      bool known = false;
      for (const auto& k : keys) known = known || (k.section == section && k.key == key);
      if (!known) throw ConfigError(source + ": unknown key '" + key + "' in [" + section + "]");
    }
  }
  RunConfig cfg;
  for (const auto& k : keys) {
    std::optional<std::string> text;
    if (auto v = tree.get_optional<std::string>(pt::ptree::path_type(k.section + "/" + k.key, '/'))) text = *v;
    if (env) {
      if (const char* e = std::getenv(detail::env_name(k).c_str())) text = std::string(e);
    }
    if (!text) {
      if (k.required) throw ConfigError(source + ": missing required key '" + k.key + "' in [" + k.section + "]");
      continue;
    }
    k.set(cfg, *text);
  }
  validate_settings(cfg);
  return cfg;
}

inline RunConfig load_config(const std::string& path, bool env = true) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in, path, env);
}

/// Effective config with every key, in table order; parses back to the same values.
inline void write_config(const RunConfig& cfg, std::ostream& out) {
  std::string section;
  for (const auto& k : detail::config_keys()) {
    if (k.section != section) {
      if (!section.empty()) out << '\n';
      section = k.section;
      out << '[' << section << "]\n";
    }
    out << k.key << " = " << k.get(cfg) << '\n';
  }
}

/// Digest of every key that can change results: run.out and run.workers are left out.
inline std::string config_digest(const RunConfig& cfg) {
  std::string text;
  for (const auto& k : detail::config_keys()) {
    if (k.section == "run" && (k.key == "out" || k.key == "workers")) continue;
    text += k.section + "." + k.key + "=" + k.get(cfg) + "\n";
  }
  return digest(text);
}

/// Applies one `section.key=value` override (used by the command line).
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError("override '" + assignment + "': expected section.key=value");
  const std::string section = assignment.substr(0, dot);
  const std::string key = assignment.substr(dot + 1, eq - dot - 1);
  for (const auto& k : detail::config_keys()) {
    if (k.section == section && k.key == key) {
      k.set(cfg, assignment.substr(eq + 1));
      validate_settings(cfg);
      return;
    }
  }
  throw ConfigError("override '" + assignment + "': unknown key");
}

}  // namespace spdelab
