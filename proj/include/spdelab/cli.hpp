#pragma once

// Command-line driver: validate | solve | ensemble | norms | cascade | verify.
// Exit codes: 0 pass, 1 verification failure, 2 usage or configuration error,
// 3 numerical failure.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "spdelab/acceptance.hpp"
#include "spdelab/cascade.hpp"
#include "spdelab/config.hpp"
#include "spdelab/errors.hpp"
#include "spdelab/norms.hpp"
#include "spdelab/solver.hpp"
#include "spdelab/verify.hpp"

namespace spdelab::cli {

enum ExitCode : int { kPass = 0, kFail = 1, kUsage = 2, kNumerical = 3 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> workers;
  std::optional<std::string> format;
  std::vector<std::string> overrides;
  std::optional<std::size_t> sample;
  std::string suite = "acceptance";
};

namespace detail {

namespace fs = std::filesystem;

inline RunConfig effective_config(const Options& o) {
  RunConfig cfg = load_config(o.config);
  for (const std::string& s : o.overrides) apply_override(cfg, s);
  if (o.seed) cfg.run.seed = *o.seed;
  if (o.out) cfg.run.out = *o.out;
  if (o.workers) cfg.run.workers = *o.workers;
  if (o.format) cfg.run.format = *o.format;
  if (o.sample) cfg.ensemble.sample = *o.sample;
  validate_settings(cfg);
  return cfg;
}

inline fs::path prepare_out(const RunConfig& cfg) {
  const fs::path dir(cfg.run.out);
  fs::create_directories(dir);
  std::ofstream echo(dir / "effective_config.ini");
  write_config(cfg, echo);
  return dir;
}

inline std::ofstream open(const fs::path& p, bool binary = false) {
  std::ofstream f(p, binary ? std::ios::binary : std::ios::out);
  if (!f) throw ConfigError("cannot write " + p.string());
  return f;
}

inline void write_json(const fs::path& p, const nlohmann::json& j) {
  auto f = open(p);
  f << j.dump(2) << '\n';
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline SpaceTimeGrid grid_for(const ProblemSpec& spec, const RunConfig& cfg) {
  return make_certified_grid(spec, cfg.grid.points, cfg.grid.c_stab, cfg.grid.n_steps);
}

inline SolveOptions solve_options(const RunConfig& cfg, const SpaceTimeGrid& grid, std::size_t time_levels) {
  SolveOptions opt;
  opt.blowup_threshold = cfg.grid.blowup_threshold;
  opt.save_every = cfg.grid.save_every;
  if (opt.save_every == 0 && time_levels > 0)
    opt.save_every = std::max<std::size_t>(1, (grid.n_steps() + time_levels - 2) / (time_levels - 1));
  return opt;
}

inline std::vector<double> check_times(const ProblemSpec& spec) {
  return {0.0, 0.25 * spec.horizon, 0.5 * spec.horizon, spec.horizon};
}

// Commands -----------------------------------------------------------------------

inline int cmd_validate(const RunConfig& cfg, std::ostream& out) {
  const ProblemSpec spec = cfg.spec();
  spec.validate();
  const SpaceTimeGrid grid = make_certified_grid(spec, cfg.grid.points, cfg.grid.c_stab);
  bool stable_ok = true;
  if (cfg.grid.n_steps > 0) {
    const SpaceTimeGrid configured(spec.dim, cfg.grid.points, spec.domain_length, spec.horizon, cfg.grid.n_steps);
    stable_ok = stability_check(spec, configured, cfg.grid.c_stab).certified;
  }
  const std::vector<WienerPath> paths = sample_paths(spec, grid, cfg.run.seed, 2, cfg.run.workers);
  const std::vector<double> times = check_times(spec);
  const MarginReport margin = validate_parabolicity(spec, sample_sites(spec, 16, times, paths));
  const BoundsReport bounds = check_coefficient_bounds(spec, 16, times, paths);
  out << "parabolicity margin " << num(margin.margin) << (margin.pass ? " ok" : " VIOLATED") << '\n';
  if (!margin.pass) out << "  worst point " << spdelab::detail::describe(margin.worst) << '\n';
  out << "coefficient bound " << num(bounds.max_norm) << " (K = " << num(spec.bounds.K) << ", worst "
      << bounds.worst_field << ")" << (bounds.pass ? " ok" : " EXCEEDED") << '\n';
  out << "stability dt_max " << num(grid.certificate()->dt_max) << ", smallest stable n_steps " << grid.n_steps()
      << (stable_ok ? " ok" : "; configured n_steps is NOT stable") << '\n';
  return margin.pass && bounds.pass && stable_ok ? kPass : kUsage;
}

inline int cmd_solve(const RunConfig& cfg, std::ostream& out) {
  const Stopwatch clock;
  const ProblemSpec spec = cfg.spec();
  const SpaceTimeGrid grid = grid_for(spec, cfg);
  const fs::path dir = prepare_out(cfg);
  const WienerPath path = sample_path(spec.noise_config(grid.n_steps()), cfg.run.seed, cfg.ensemble.sample);
  SolveOptions opt;
  opt.blowup_threshold = cfg.grid.blowup_threshold;
  opt.save_every = cfg.grid.save_every;
  const GridSolution sol = solve_realization(spec, path, grid, opt);
  if (cfg.run.format == "bin") {
    auto f = open(dir / "solution.bin", true);
    write_snapshot_bin(sol, f);
  } else if (cfg.run.format == "json") {
    nlohmann::json levels = nlohmann::json::array();
    for (std::size_t l = 0; l < sol.levels(); ++l) {
      const auto s = sol.slice(l);
      levels.push_back({{"t", sol.time(l)}, {"step", sol.steps[l]}, {"u", std::vector<double>(s.begin(), s.end())}});
    }
    write_json(dir / "solution.json", {{"points", grid.points()}, {"dim", grid.dim()}, {"h", grid.h()},
                                       {"dt", grid.dt()}, {"sample", cfg.ensemble.sample}, {"levels", levels}});
  } else {
    auto f = open(dir / "solution.csv");
    write_snapshot_csv(sol, f);
  }
  {
    auto f = open(dir / "path.csv");
    write_path_csv(path, f);
  }
  double sup = 0.0;
  for (double v : sol.values) sup = std::max(sup, std::abs(v));
  out << "max|u| " << num(sup) << '\n';
  out << "runtime " << clock.seconds() << " s\n";
  return kPass;
}

/// Pointwise L^p moments of u over the ensemble at every saved level and node.
inline int cmd_ensemble(const RunConfig& cfg, std::ostream& out) {
  const ProblemSpec spec = cfg.spec();
  const SpaceTimeGrid grid = grid_for(spec, cfg);
  const fs::path dir = prepare_out(cfg);
  const Ensemble ens = solve_ensemble(spec, grid, cfg.run.seed, cfg.ensemble.samples,
                                      solve_options(cfg, grid, cfg.ensemble.time_levels), cfg.run.workers);
  const GridSolution& layout = ens.front();
  const MultiIndex zero(grid.dim(), 0);
  const double p = spec.holder.p;
  std::vector<double> mean(layout.levels() * grid.nodes()), moment(mean.size()), se(mean.size());
  for (std::size_t l = 0; l < layout.levels(); ++l)
    for (std::size_t node = 0; node < grid.nodes(); ++node) {
      std::vector<double> v;
      for (const GridSolution& m : ens.members) v.push_back(m.at(l, node));
      const std::size_t q = l * grid.nodes() + node;
      mean[q] = pairwise_mean(v);
      const MomentEstimate e = lp_norm_point(ens, zero, l, node, p);
      moment[q] = e.value;
      se[q] = e.std_error;
    }
  if (cfg.run.format == "json") {
    write_json(dir / "ensemble.json", {{"samples", ens.size()}, {"p", p}, {"points", grid.points()},
                                       {"steps", layout.steps}, {"mean", mean}, {"lp_moment", moment},
                                       {"std_error", se}});
  } else if (cfg.run.format == "bin") {
    auto f = open(dir / "ensemble.bin", true);
    auto put = [&f](const std::vector<double>& v) {
      f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    };
    const std::uint64_t head[3] = {layout.levels(), grid.nodes(), 3};
    f.write(reinterpret_cast<const char*>(head), sizeof head);
    put(mean);
    put(moment);
    put(se);
  } else {
    auto f = open(dir / "ensemble.csv");
    f << "t";
    for (std::size_t i = 0; i < grid.dim(); ++i) f << ",x" << i + 1;
    f << ",mean,lp_moment,std_error\n";
    for (std::size_t l = 0; l < layout.levels(); ++l)
      for (std::size_t node = 0; node < grid.nodes(); ++node) {
        const std::size_t q = l * grid.nodes() + node;
        f << num(layout.time(l));
        for (double x : grid.coordinates(node)) f << ',' << num(x);
        f << ',' << num(mean[q]) << ',' << num(moment[q]) << ',' << num(se[q]) << '\n';
      }
  }
  out << "ensemble of " << ens.size() << " members, " << layout.levels() << " saved levels\n";
  return kPass;
}

inline int cmd_norms(const RunConfig& cfg, std::ostream& out) {
  const ProblemSpec spec = cfg.spec();
  const SpaceTimeGrid grid = grid_for(spec, cfg);
  const fs::path dir = prepare_out(cfg);
  const Ensemble ens = solve_ensemble(spec, grid, cfg.run.seed, cfg.ensemble.samples,
                                      solve_options(cfg, grid, cfg.ensemble.time_levels), cfg.run.workers);
  PairScanOptions scan;
  scan.budget = cfg.ensemble.pair_budget;
  scan.seed = cfg.ensemble.pair_seed;
  scan.workers = cfg.run.workers;
  const HolderParams& hp = spec.holder;
  const int m = std::min(hp.m, 2);
  const HolderReport hx = holder_norm_x(ens, m, hp.alpha, hp.p, Region::full(), scan);
  const HolderReport hpar = parabolic_holder_norm(ens, m, hp.alpha, hp.p, Region::full(), scan);
  const std::vector<std::size_t> steps = step_lattice(0, grid.n_steps(), cfg.ensemble.time_levels);
  const DataEnsembles data = sample_data(spec, grid, cfg.run.seed, cfg.ensemble.samples, steps, cfg.run.workers);
  const DiniModulus omega = dini_modulus(data.f, data.g, grid_radii(grid, std::min(1.0, 0.5 * spec.domain_length)),
                                         hp.p, cfg.run.workers);
  nlohmann::json dini = nlohmann::json::array();
  for (double delta : {0.5, 0.25, 0.125, 0.0625}) {
    const DiniIntegrals d = dini_integrals(omega, delta);
    dini.push_back({{"delta", delta}, {"small", d.small}, {"large", d.large}, {"tail_exponent", d.tail_exponent},
                    {"tail_clamped", d.tail_clamped}});
  }
  write_json(dir / "norms.json", {{"m", m},
                                  {"alpha", hp.alpha},
                                  {"p", hp.p},
                                  {"samples", ens.size()},
                                  {"holder_x", to_json(hx, ens.front())},
                                  {"holder_parabolic", to_json(hpar, ens.front())},
                                  {"dini_integrals", dini}});
  {
    auto f = open(dir / "omega.csv");
    write_csv(omega, f);
  }
  out << "|u|_x " << num(hx.norm_x()) << " (seminorm " << num(hx.seminorm_x) << ")\n";
  out << "|u|_parabolic " << num(hpar.norm_parabolic()) << " (seminorm " << num(hpar.seminorm_parabolic) << ")\n";
  return kPass;
}

inline nlohmann::json to_json(const Claim2Result& c) {
  return {{"levels", c.levels},       {"ratio_m1", c.ratio_m1},   {"ratio_m2", c.ratio_m2},
          {"spread_m1", c.spread_m1}, {"spread_m2", c.spread_m2}, {"j_slope", c.j_slope},
          {"alpha_eff", c.alpha_eff}, {"bounded", c.bounded}, {"slope_pass", c.slope_pass}, {"trivial", c.trivial}, {"pass", c.pass}};
}

inline nlohmann::json to_json(const Claim3Result& c) {
  return {{"levels", c.levels},
          {"tails", c.tails},
          {"dini", c.dini},
          {"constants", c.constants},
          {"remainder", c.remainder},
          {"constant_spread", c.constant_spread},
          {"gap_deepest", c.gap_deepest},
          {"tail_bound", c.tail_bound},
          {"diverging", c.diverging},
          {"trivial", c.trivial},
          {"pass", c.pass}};
}

inline int cmd_cascade(const RunConfig& cfg, std::ostream& out) {
  const ProblemSpec spec = cfg.spec();
  const fs::path dir = prepare_out(cfg);
  const CascadeReport report = run_cascade(spec, cfg.cascade_config());
  const Claim2Result c2 = check_claim2_decay(report, 1, report.deepest() - 1, cfg.verify.spread, nullptr, 1e-9,
                                             cfg.verify.slope_tolerance);
  const Claim3Result c3 = check_convergence_uxx(report, 1, cfg.verify.claim3_spread, cfg.verify.claim3_gap_factor);
  nlohmann::json j = spdelab::to_json(report);
  j["claim2"] = to_json(c2);
  j["claim3"] = to_json(c3);
  write_json(dir / "cascade.json", j);
  {
    auto f = open(dir / "cascade.csv");
    write_csv(report, f);
  }
  {
    auto f = open(dir / "omega.csv");
    write_csv(report.omega, f);
  }
  out << "levels 0.." << report.deepest() << " on " << report.grid.points() << " points"
      << (report.truncated ? " (truncated: " + report.note + ")" : "") << '\n';
  out << "decay ratios max/median " << num(c2.spread_m2) << (c2.pass ? " ok" : " FAIL") << ", J slope "
      << num(c2.j_slope) << '\n';
  out << "u_xx convergence constant spread " << num(c3.constant_spread) << (c3.pass ? " ok" : " FAIL") << '\n';
  return c2.pass && c3.pass ? kPass : kFail;
}

// Suites -------------------------------------------------------------------------

}  // namespace detail

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

namespace detail {

/// Runs a small pipeline twice with different worker counts and compares every output byte.
inline CriterionOutcome criterion_determinism(std::uint64_t seed) {
  Stopwatch clock;
  CriterionOutcome o{9, "determinism", false, "", 0.0, 120.0, {}};
  const fs::path root = fs::temp_directory_path() / ("spdelab-determinism-" + std::to_string(seed));
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path ini = root / "run.ini";
  {
    std::ofstream f(ini);
    f << "[problem]\nfamily = trig\nhorizon = 1\nsigma0 = 0.5\nf_amp = 1\nf_k = 2\ng_amp = 0.5\n"
         "[noise]\nmodes = 2\n[grid]\npoints = 64\n[ensemble]\nsamples = 6\ntime_levels = 8\npair_budget = 4000\n"
         "[cascade]\nlevels = 3\nsamples = 3\npoints = 256\nmax_points = 256\nprobe_time_levels = 8\n"
         "data_time_levels = 4\n";
  }
  const std::vector<std::vector<std::string>> commands{{"solve"}, {"ensemble"}, {"norms"}, {"cascade"},
                                                       {"verify", "--suite", "norms"}};
  const std::vector<std::string> workers{"1", "3"};
  std::ostringstream sink;
  for (std::size_t w = 0; w < workers.size(); ++w) {
    for (const auto& cmd : commands) {
      const fs::path dir = root / ("w" + workers[w]) / cmd.front();
      std::vector<std::string> args{"spdelab", cmd.front(), "--config", ini.string(), "--out", dir.string(),
                                    "--workers", workers[w], "--seed", std::to_string(seed)};
      args.insert(args.end(), cmd.begin() + 1, cmd.end());
      const int rc = run(args, sink, sink);
      if (rc == kUsage || rc == kNumerical) {
        o.detail = "command '" + cmd.front() + "' exited with " + std::to_string(rc) + ": " + sink.str();
        o.runtime_seconds = clock.seconds();
        return o;
      }
    }
  }
  std::size_t compared = 0, differing = 0;
  std::string first_diff;
  const fs::path a = root / "w1", b = root / "w3";
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file() && e.path().filename() != "timings.jsonl" && e.path().filename() != "effective_config.ini")
      files.push_back(fs::relative(e.path(), a));
  std::sort(files.begin(), files.end());
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  for (const fs::path& rel : files) {
    ++compared;
    if (!fs::exists(b / rel) || slurp(a / rel) != slurp(b / rel)) {
      ++differing;
      if (first_diff.empty()) first_diff = rel.string();
    }
  }
  o.pass = compared > 0 && differing == 0;
  o.detail = std::to_string(compared) + " result files compared across --workers 1 and 3, " + std::to_string(differing) +
             " differ" + (first_diff.empty() ? "" : " (first: " + first_diff + ")");
  o.result.add("files_compared", static_cast<double>(compared));
  o.result.add("files_differing", static_cast<double>(differing));
  fs::remove_all(root);
  return acceptance::finish(o, clock, seed);
}

inline const std::vector<std::string>& criterion_names() {
  static const std::vector<std::string> names{"oracle", "linearity", "energy", "claim2", "claim3",
                                              "lemma",  "schauder",  "norms",  "determinism"};
  return names;
}

/// Runs the named criteria (or all for "acceptance") and reports one line each.
inline std::vector<CriterionOutcome> run_suite(const std::string& suite, const RunConfig& cfg,
                                               const std::function<void(const CriterionOutcome&)>& report = {}) {
  std::vector<std::string> wanted;
  if (suite == "acceptance") {
    wanted = criterion_names();
  } else {
    std::stringstream s(suite);
    for (std::string item; std::getline(s, item, ',');) {
      if (std::find(criterion_names().begin(), criterion_names().end(), item) == criterion_names().end())
        throw ConfigError("unknown suite '" + item + "'");
      wanted.push_back(item);
    }
  }
  const VerifySettings& v = cfg.verify;
  const std::uint64_t seed = cfg.run.seed;
  const unsigned w = cfg.run.workers;
  std::optional<CascadeRun> cascade;
  auto shared_cascade = [&]() -> const CascadeRun& {
    if (!cascade) cascade = run_acceptance_cascade(v, seed, w);
    return *cascade;
  };
  std::vector<CriterionOutcome> outcomes;
  for (const std::string& name : wanted) {
    CriterionOutcome o;
    if (name == "oracle") o = criterion_oracle(v, seed, w);
    else if (name == "linearity") o = criterion_linearity(v, seed, w);
    else if (name == "energy") o = criterion_energy(v, seed, w);
    else if (name == "claim2") o = criterion_claim2(v, shared_cascade(), seed);
    else if (name == "claim3") {
      const bool reuse = cascade.has_value();
      o = criterion_claim3(v, shared_cascade(), seed);
      if (reuse) o.detail += "; cascade shared with claim2";
    } else if (name == "lemma") o = criterion_lemma(v, seed, w);
    else if (name == "schauder") o = criterion_schauder(v, seed, w);
    else if (name == "norms") o = criterion_norms(v, seed, w);
    else o = criterion_determinism(seed);
    if (report) report(o);
    outcomes.push_back(std::move(o));
  }
  return outcomes;
}

inline std::string outcome_line(const CriterionOutcome& o) {
  char buf[64];
  std::snprintf(buf, sizeof buf, " [%.1f s]", o.runtime_seconds);
  return "criterion " + std::to_string(o.id) + " " + o.name + ": " + (o.pass ? "PASS" : "FAIL") + " - " + o.detail +
         buf;
}

inline int cmd_verify(const RunConfig& cfg, const std::string& suite, std::ostream& out) {
  const fs::path dir = prepare_out(cfg);
  const std::string config_digest = spdelab::config_digest(cfg);
  std::vector<CriterionOutcome> outcomes = run_suite(suite, cfg, [&](const CriterionOutcome& o) {
    out << outcome_line(o) << std::endl;
  });
  auto csv = open(dir / "verify.csv");
  csv << "id,name,verdict\n";
  bool all = true;
  for (CriterionOutcome& o : outcomes) {
    o.result.config_digest = config_digest;
    append_run_log(dir.string(), o.result);
    csv << o.id << ',' << o.name << ',' << (o.pass ? "pass" : "fail") << '\n';
    all = all && o.pass;
  }
  return all ? kPass : kFail;
}

}  // namespace detail

/// Parses `args` (args[0] is the program name) and runs the subcommand.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Numerical lab for linear Ito SPDEs on a periodic torus"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  std::uint64_t seed = 0;
  std::string out_dir, format;
  unsigned workers = 0;
  std::size_t sample = 0;
  app.add_option("--config", o.config, "INI configuration file")->required()->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "master seed (overrides run.seed)");
  auto* out_opt = app.add_option("--out", out_dir, "output directory (overrides run.out)");
  auto* workers_opt = app.add_option("--workers", workers, "worker threads, 0 = logical cores");
  auto* format_opt =
      app.add_option("--format", format, "snapshot format")->check(CLI::IsMember({"csv", "bin", "json"}));
  app.add_option("--set", o.overrides, "override a key: section.key=value (repeatable)");

  auto* validate = app.add_subcommand("validate", "check parabolicity, coefficient bounds and grid stability");
  auto* solve = app.add_subcommand("solve", "solve one realization and write the snapshot");
  auto* sample_opt = solve->add_option("--sample", sample, "sample index (overrides ensemble.sample)");
  auto* ensemble = app.add_subcommand("ensemble", "pointwise moments of an ensemble");
  auto* norms = app.add_subcommand("norms", "Holder norms of the solution and Dini modulus of the data");
  auto* cascade = app.add_subcommand("cascade", "frozen-coefficient cascade and its decay checks");
  auto* verify = app.add_subcommand("verify", "run verification criteria");
  verify->add_option("--suite", o.suite, "acceptance, or a comma list of criterion names");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kPass;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  }
  if (seed_opt->count()) o.seed = seed;
  if (out_opt->count()) o.out = out_dir;
  if (workers_opt->count()) o.workers = workers;
  if (format_opt->count()) o.format = format;
  if (sample_opt->count()) o.sample = sample;

  try {
    const RunConfig cfg = detail::effective_config(o);
    if (*validate) return detail::cmd_validate(cfg, out);
    if (*solve) return detail::cmd_solve(cfg, out);
    if (*ensemble) return detail::cmd_ensemble(cfg, out);
    if (*norms) return detail::cmd_norms(cfg, out);
    if (*cascade) return detail::cmd_cascade(cfg, out);
    if (*verify) return detail::cmd_verify(cfg, o.suite, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const ArgumentError& e) {
    err << "invalid input: " << e.what() << '\n';
    return kUsage;
  } catch (const StructuralError& e) {
    err << "model error: " << e.what() << '\n';
    return kUsage;
  } catch (const AdaptednessViolation& e) {
    err << "model error: " << e.what() << '\n';
    return kUsage;
  } catch (const BlowUpError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const Error& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "io error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}

}  // namespace spdelab::cli
