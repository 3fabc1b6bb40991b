#include "levyfilter/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <tbb/global_control.h>

#include "levyfilter/averaging.hpp"
#include "levyfilter/errors.hpp"
#include "levyfilter/experiments.hpp"
#include "levyfilter/filter.hpp"
#include "levyfilter/serialization.hpp"
#include "levyfilter/svg.hpp"

namespace levyfilter::cli {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kTagFilterRun = 0x52'554eULL;

enum class Type { integer, real, text, flag };

struct ParamSpec {
  std::string key;
  Type type;
  Json fallback;
  std::string help;
};

std::string flag_name(const std::string& key) {
  std::string f = key;
  for (auto& c : f)
    if (c == '_') c = '-';
  return "--" + f;
}

// Parameters of one subcommand: flag > config section > default.
class ParamSet {
 public:
  ParamSet(CLI::App* app, std::vector<ParamSpec> specs) : specs_(std::move(specs)) {
    for (const auto& s : specs_) {
      if (s.type == Type::flag) {
        options_[s.key] = app->add_flag(flag_name(s.key), flags_[s.key], s.help);
      } else {
        options_[s.key] = app->add_option(flag_name(s.key), raw_[s.key], s.help);
      }
    }
  }

  Json resolve(const Json& section, const std::string& context) const {
    std::vector<std::string_view> keys;
    for (const auto& s : specs_) keys.push_back(s.key);
    if (!section.is_null()) {
      if (!section.is_object()) throw ConfigError(fmt::format("'{}' must be an object", context));
      for (const auto& [k, v] : section.items()) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end())
          throw ConfigError(fmt::format("unknown key '{}.{}'", context, k));
      }
    }
    Json out = Json::object();
    for (const auto& s : specs_) {
      const auto* opt = options_.at(s.key);
      if (opt->count() > 0) {
        out[s.key] = from_flag(s);
      } else if (!section.is_null() && section.contains(s.key)) {
        out[s.key] = checked(s, section.at(s.key), fmt::format("{}.{}", context, s.key));
      } else {
        out[s.key] = s.fallback;
      }
    }
    return out;
  }

 private:
  Json from_flag(const ParamSpec& s) const {
    if (s.type == Type::flag) return flags_.at(s.key);
    const auto& text = raw_.at(s.key);
    const auto name = flag_name(s.key);
    try {
      std::size_t pos = 0;
      switch (s.type) {
        case Type::integer: {
          if (!text.empty() && text[0] == '-') throw std::invalid_argument("negative");
          const auto v = std::stoull(text, &pos);
          if (pos != text.size()) throw std::invalid_argument("trailing");
          return v;
        }
        case Type::real: {
          const auto v = std::stod(text, &pos);
          if (pos != text.size()) throw std::invalid_argument("trailing");
          return v;
        }
        default: return text;
      }
    } catch (const std::logic_error&) {
      throw ConfigError(fmt::format("invalid value '{}' for {}", text, name));
    }
  }

  static Json checked(const ParamSpec& s, const Json& v, const std::string& where) {
    bool ok = false;
    switch (s.type) {
      case Type::integer: ok = v.is_number_unsigned(); break;
      case Type::real: ok = v.is_number(); break;
      case Type::flag: ok = v.is_boolean(); break;
      case Type::text: ok = v.is_string() || v.is_array() || v.is_number(); break;
    }
    if (v.is_null() && s.fallback.is_null()) ok = true;
    if (!ok) throw ConfigError(fmt::format("invalid value {} for key '{}'", v.dump(), where));
    return v;
  }

  std::vector<ParamSpec> specs_;
  std::map<std::string, CLI::Option*> options_;
  std::map<std::string, std::string> raw_;
  std::map<std::string, bool> flags_;
};

struct Common {
  std::string config;
  std::string preset;
  std::string out = ".";
  std::uint64_t seed = 1;
  std::size_t threads = 0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* out_opt = nullptr;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON run configuration");
  app->add_option("--preset", c.preset, "model preset (example6, linear_gaussian)");
  c.out_opt = app->add_option("--out", c.out, "output directory");
  c.seed_opt = app->add_option("--seed", c.seed, "root seed");
  app->add_option("--threads", c.threads, "worker threads (default: hardware concurrency)");
}

std::vector<ParamSpec> homogenization_specs() {
  return {
      {"homogenization", Type::text, "auto", "closed_form, lattice, on_demand or auto"},
      {"lattice_lo", Type::real, -5.0, "lattice lower bound (before guard band)"},
      {"lattice_hi", Type::real, 5.0, "lattice upper bound (before guard band)"},
      {"lattice_points", Type::integer, 41, "lattice points per slow coordinate"},
      {"avg_burn_in", Type::real, 10.0, "invariant-measure burn-in"},
      {"avg_samples", Type::integer, 10000, "invariant-measure samples"},
      {"avg_stride", Type::integer, 10, "invariant-measure thinning stride"},
      {"avg_dt", Type::real, 0.01, "frozen fast step"},
  };
}

// ---------------------------------------------------------------------------

struct Loaded {
  Json file;          // parsed config or null
  std::string text;   // verbatim config
  Json model_json;    // effective model description
  ModelPreset preset;
  std::uint64_t seed = 1;
  fs::path out;
};

Loaded load(const Common& c) {
  Loaded l;
  if (!c.config.empty()) {
    std::ifstream in(c.config, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("cannot read --config file '{}'", c.config));
    std::ostringstream ss;
    ss << in.rdbuf();
    l.text = ss.str();
    try {
      l.file = Json::parse(l.text);
    } catch (const Json::parse_error& e) {
      throw ConfigError(fmt::format("--config '{}' is not valid JSON: {}", c.config, e.what()));
    }
    if (!l.file.is_object()) throw ConfigError("config must be a JSON object");
    reject_unknown_keys(l.file,
                        {"model", "observation", "seed", "command", "run", "simulate", "average",
                         "filter", "converge", "validate"},
                        "config");
  }
  if (!c.preset.empty()) {
    l.model_json = {{"model", {{"preset", c.preset}}}};
  } else if (l.file.contains("model")) {
    l.model_json["model"] = l.file.at("model");
    if (l.file.contains("observation")) l.model_json["observation"] = l.file.at("observation");
  } else {
    if (l.file.contains("observation"))
      throw ConfigError("key 'observation' given without 'model'");
    l.model_json = {{"model", {{"preset", "example6"}}}};
  }
  const Json* obs =
      l.model_json.contains("observation") ? &l.model_json.at("observation") : nullptr;
  l.preset = preset_from_json(l.model_json.at("model"), obs);

  l.seed = c.seed;
  if (c.seed_opt->count() == 0 && l.file.contains("seed")) {
    if (!l.file.at("seed").is_number_unsigned())
      throw ConfigError("invalid value for key 'seed' (expected a non-negative integer)");
    l.seed = l.file.at("seed").get<std::uint64_t>();
  }
  l.out = c.out;
  std::error_code ec;
  fs::create_directories(l.out, ec);
  if (ec) throw ConfigError(fmt::format("cannot create --out directory '{}': {}", c.out, ec.message()));
  return l;
}

// Parameters come from the section named after the subcommand or from "run".
Json section_of(const Loaded& l, const std::string& name) {
  if (l.file.contains("command")) {
    const auto& c = l.file.at("command");
    if (!c.is_string() || c.get<std::string>() != name)
      throw ConfigError(fmt::format("key 'command' is {} but the subcommand is '{}'", c.dump(), name));
  }
  if (l.file.contains(name)) {
    if (l.file.contains("run")) throw ConfigError(fmt::format("both 'run' and '{}' given", name));
    return l.file.at(name);
  }
  return l.file.contains("run") ? l.file.at("run") : Json();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(fmt::format("cannot write '{}' (check --out)", path.string()));
  out << content;
}

void write_run_config(const Loaded& l, const std::string& name, const Json& params) {
  Json cfg = l.model_json;
  cfg["seed"] = l.seed;
  cfg["command"] = name;
  cfg["run"] = params;
  write_file(l.out / "run_config.json", cfg.dump(2) + "\n");
  if (!l.text.empty()) write_file(l.out / "input_config.json", l.text);
}

std::vector<double> number_list(const Json& v, const std::string& key) {
  std::vector<double> out;
  if (v.is_array()) {
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError(fmt::format("invalid entry {} in '{}'", e.dump(), key));
      out.push_back(e.get<double>());
    }
    return out;
  }
  if (v.is_number()) return {v.get<double>()};
  const auto text = v.get<std::string>();
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(tok, &pos));
      if (pos != tok.size()) throw std::invalid_argument("trailing");
    } catch (const std::logic_error&) {
      throw ConfigError(fmt::format("invalid number '{}' in '{}'", tok, key));
    }
  }
  if (out.empty()) throw ConfigError(fmt::format("'{}' is empty", key));
  return out;
}

std::vector<std::string> psi_list(const Json& v) {
  std::vector<std::string> out;
  if (v.is_array()) {
    for (const auto& e : v) {
      if (!e.is_string()) throw ConfigError("'psi' entries must be strings");
      out.push_back(e.get<std::string>());
    }
  } else {
    for (const auto& f : TestFunction::parse_list(v.get<std::string>())) out.push_back(f.name);
  }
  for (const auto& s : out) TestFunction::parse(s);
  return out;
}

FastMode fast_mode_of(const Json& p, const SlowFastModel& model) {
  const auto text = p.at("fast_mode").get<std::string>();
  if (text == "auto") return model.ou_sigma2 ? FastMode::exact_ou : FastMode::euler;
  try {
    return parse_fast_mode(text);
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("--fast-mode: {}", e.what()));
  }
}

void apply_eps(const Json& p, ModelPreset& preset) {
  if (!p.at("eps").is_null()) {
    const auto eps = number_list(p.at("eps"), "eps");
    if (eps.size() != 1) throw ConfigError("'eps' takes a single value here");
    if (!(eps[0] > 0.0)) throw ConfigError("'eps' must be positive");
    preset.slow_fast.epsilon = eps[0];
  }
}

HomogenizedModel homogenize(const ModelPreset& preset, const Json& p, std::uint64_t seed) {
  auto kind = p.at("homogenization").get<std::string>();
  if (kind == "auto") kind = preset.closed_form ? "closed_form" : "lattice";
  AveragingParams ap;
  ap.burn_in = p.at("avg_burn_in").get<double>();
  ap.n_samples = p.at("avg_samples").get<std::size_t>();
  ap.stride = p.at("avg_stride").get<std::size_t>();
  ap.dt = p.at("avg_dt").get<double>();
  ap.root_seed = seed;
  if (kind == "closed_form") return build_homogenized(preset, ClosedFormMode{}, ap);
  if (kind == "on_demand") return build_homogenized(preset, OnDemandMode{}, ap);
  if (kind == "lattice") {
    LatticeMode lm;
    const auto axis = lattice_axis(p.at("lattice_lo").get<double>(), p.at("lattice_hi").get<double>(),
                                   p.at("lattice_points").get<std::size_t>());
    lm.axes.assign(preset.slow_fast.n, axis);
    return build_homogenized(preset, lm, ap);
  }
  throw ConfigError(fmt::format("unknown value '{}' for 'homogenization'", kind));
}

std::string num(double v) { return fmt::format("{:.17g}", v); }

// ---------------------------------------------------------------------------

int cmd_simulate(const Loaded& l, const Json& p) {
  auto preset = l.preset;
  apply_eps(p, preset);
  const auto scheme =
      make_scheme(preset.slow_fast, p.at("dt").get<double>(), fast_mode_of(p, preset.slow_fast));
  const auto T = p.at("T").get<double>();
  const auto paths = p.at("paths").get<std::size_t>();
  if (paths == 0) throw ConfigError("'paths' must be positive");
  Json summary = {{"paths", paths}, {"epsilon", preset.slow_fast.epsilon}};
  Json files = Json::array();
  for (std::size_t i = 0; i < paths; ++i) {
    const auto path = simulate_full(preset.slow_fast, preset.observation, T, scheme, l.seed,
                                    static_cast<std::uint32_t>(i));
    std::ostringstream os;
    write_path_csv(path, os);
    const auto name = fmt::format("path_{:04}.csv", i);
    write_file(l.out / name, os.str());
    Json jumps;
    auto events = [](const std::vector<JumpEvent>& v) {
      Json a = Json::array();
      for (const auto& e : v) a.push_back({{"t", e.time}, {"mark", e.mark}, {"accepted", e.accepted}});
      return a;
    };
    jumps["slow"] = events(path.jump_log.slow);
    jumps["fast"] = events(path.jump_log.fast);
    jumps["observation_small"] = events(path.jump_log.observation_small);
    jumps["observation_large"] = events(path.jump_log.observation_large);
    write_file(l.out / fmt::format("jumps_{:04}.json", i), jumps.dump(1) + "\n");
    files.push_back(name);
  }
  summary["files"] = files;
  write_file(l.out / "simulate.json", summary.dump(2) + "\n");
  std::cout << fmt::format("simulate: wrote {} path(s) to {}\n", paths, l.out.string());
  return 0;
}

int cmd_average(const Loaded& l, const Json& p) {
  const auto& preset = l.preset;
  AveragingParams ap;
  ap.burn_in = p.at("burn_in").get<double>();
  ap.n_samples = p.at("samples").get<std::size_t>();
  ap.stride = p.at("stride").get<std::size_t>();
  ap.dt = p.at("dt").get<double>();
  ap.root_seed = l.seed;
  const auto n = preset.slow_fast.n, d = preset.observation.d;
  LatticeMode lm;
  const auto lo = p.at("x_lo").get<double>(), hi = p.at("x_hi").get<double>();
  const auto points = p.at("points").get<std::size_t>();
  if (points < 2) throw ConfigError("'points' must be at least 2");
  if (!(hi > lo)) throw ConfigError("'x_hi' must exceed 'x_lo'");
  std::vector<double> axis(points);
  for (std::size_t i = 0; i < points; ++i)
    axis[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  lm.axes.assign(n, axis);
  const auto table = average_on_lattice(preset, lm, ap);

  std::ostringstream os;
  for (std::size_t i = 0; i < n; ++i) os << (i ? "," : "") << "x_" << i;
  for (std::size_t i = 0; i < n; ++i) os << ",bbar1_" << i;
  for (std::size_t i = 0; i < n; ++i) os << ",bbar1_se_" << i;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) os << ",abar_" << i << '_' << j;
  for (std::size_t i = 0; i < d; ++i) os << ",hbar_" << i;
  os << '\n';
  Json warnings = Json::array();
  for (std::size_t k = 0; k < table.x.size(); ++k) {
    const auto& v = table.values[k];
    std::string row;
    for (std::size_t i = 0; i < n; ++i) row += (i ? "," : "") + num(table.x[k][i]);
    for (double a : v.bbar1) row += "," + num(a);
    for (double a : v.bbar1_se) row += "," + num(a);
    for (double a : v.abar) row += "," + num(a);
    for (double a : v.hbar) row += "," + num(a);
    os << row << '\n';
    if (table.warnings[k]) warnings.push_back(*table.warnings[k]);
  }
  write_file(l.out / "average.csv", os.str());
  Json meta = {{"burn_in", ap.burn_in},       {"n_samples", ap.n_samples},
               {"stride", ap.stride},         {"dt", ap.dt},
               {"root_seed", ap.root_seed},   {"stream_indices", "lattice node index, row-major"},
               {"lattice_points", table.x.size()}, {"warnings", warnings}};
  write_file(l.out / "average.json", meta.dump(2) + "\n");
  std::cout << fmt::format("average: {} lattice point(s), {} warning(s)\n", table.x.size(),
                           warnings.size());
  return 0;
}

int cmd_filter(const Loaded& l, const Json& p) {
  auto preset = l.preset;
  apply_eps(p, preset);
  const auto scheme =
      make_scheme(preset.slow_fast, p.at("dt").get<double>(), fast_mode_of(p, preset.slow_fast));
  const auto T = p.at("T").get<double>();
  const auto mode = p.at("mode").get<std::string>();
  if (mode != "full" && mode != "homog") throw ConfigError("--mode must be 'full' or 'homog'");
  std::vector<TestFunction> psi;
  for (const auto& s : psi_list(p.at("psi"))) psi.push_back(TestFunction::parse(s));
  FilterParams fp;
  fp.particles = p.at("particles").get<std::size_t>();
  fp.ess_fraction = p.at("ess_frac").get<double>();
  fp.root_seed = derive_seed(l.seed, kTagFilterRun);
  if (!(fp.ess_fraction > 0.0 && fp.ess_fraction <= 1.0))
    throw ConfigError("--ess-frac must lie in (0,1]");
  if (fp.particles == 0) throw ConfigError("--particles must be positive");

  const auto path = simulate_full(preset.slow_fast, preset.observation, T, scheme, l.seed, 0);
  FilterOutput out;
  if (mode == "full") {
    out = run_filter(FullDynamics{&preset.slow_fast, scheme, &preset.observation.h},
                     preset.observation, path, psi, fp);
  } else {
    const auto hm = homogenize(preset, p, l.seed);
    out = run_filter(HomogenizedDynamics{&hm}, preset.observation, path, psi, fp);
  }
  std::ostringstream os;
  write_filter_csv(out, os);
  write_file(l.out / "filter.csv", os.str());
  std::ostringstream ps;
  write_path_csv(path, ps);
  write_file(l.out / "observations.csv", ps.str());
  Json summary = {{"mode", mode},
                  {"epsilon", preset.slow_fast.epsilon},
                  {"resample_times", out.resample_times},
                  {"max_resample_mass_error", out.diagnostics.max_resample_mass_error},
                  {"invariants_ok", out.diagnostics.ok()}};
  write_file(l.out / "filter.json", summary.dump(2) + "\n");
  std::cout << fmt::format("filter ({}): {} steps, {} resample(s)\n", mode, out.times.size() - 1,
                           out.resample_times.size());
  return 0;
}

int cmd_converge(const Loaded& l, const Json& p) {
  ConvergenceOptions o;
  o.epsilons = number_list(p.at("eps"), "eps");
  o.replications = p.at("replications").get<std::size_t>();
  o.particles = p.at("particles").get<std::size_t>();
  o.psi = psi_list(p.at("psi"));
  o.T = p.at("T").get<double>();
  o.dt_rule.dt_slow = p.at("dt").get<double>();
  o.dt_rule.fast_mode = fast_mode_of(p, l.preset.slow_fast);
  o.ess_fraction = p.at("ess_frac").get<double>();
  o.seed = l.seed;
  o.signal_paths = p.at("signal_paths").get<std::size_t>();
  o.martingale_runs = p.at("martingale_runs").get<std::size_t>();
  const auto hm = homogenize(l.preset, p, l.seed);
  const auto report = filter_convergence_study(l.preset, hm, o);

  std::ostringstream a, b;
  write_convergence_csv(report, a);
  write_replications_csv(report, b);
  write_file(l.out / "convergence.csv", a.str());
  write_file(l.out / "replications.csv", b.str());
  write_file(l.out / "convergence.json", convergence_summary(report).dump(2) + "\n");
  if (p.at("plot").get<bool>()) {
    std::vector<PlotSeries> series;
    for (std::size_t j = 0; j < report.psi_names.size(); ++j) {
      PlotSeries s{"gap " + report.psi_names[j], {}, {}};
      for (const auto& st : report.per_eps) {
        s.x.push_back(st.epsilon);
        s.y.push_back(st.mean_gap[j]);
      }
      series.push_back(std::move(s));
    }
    write_file(l.out / "gap_vs_eps.svg",
               emit_svg(series, {true, true, "mean filter gap", "epsilon", "E|pi_eps - pi_0|"}));
  }
  for (const auto& st : report.per_eps) {
    for (std::size_t j = 0; j < report.psi_names.size(); ++j)
      std::cout << fmt::format("eps={:<8g} psi={:<10} gap={:.5f} se={:.5f} ks_pi={:.4f}\n",
                               st.epsilon, report.psi_names[j], st.mean_gap[j], st.gap_se[j],
                               st.ks_pi[j]);
  }
  if (report.insufficient_replications)
    std::cout << "warning: fewer than two replications, standard errors undefined\n";
  return 0;
}

int cmd_validate(const Loaded& l, const Json& p) {
  RngStream stream(l.seed, stream_id(NoiseSource::validation, 0));
  const auto report = validate_assumptions(l.preset, p.at("samples").get<std::size_t>(), stream);
  Json j;
  j["preset"] = l.preset.name;
  j["ok"] = report.ok();
  j["warnings"] = report.warnings;
  Json checks = Json::array();
  for (const auto& c : report.checks) {
    checks.push_back({{"name", c.name},
                      {"description", c.description},
                      {"skipped", c.skipped},
                      {"evaluated", c.evaluated},
                      {"violations", c.violations},
                      {"max_violation", c.max_violation},
                      {"witness", c.witness}});
    std::cout << fmt::format("{:<26} {:>8} evaluated {:>6} violations{}\n", c.name, c.evaluated,
                             c.violations, c.skipped ? " (skipped)" : "");
  }
  j["checks"] = checks;
  for (const auto& w : report.warnings) std::cout << "warning: " << w << '\n';
  write_file(l.out / "validation.json", j.dump(2) + "\n");
  std::cout << (report.ok() ? "no violations\n" : "violations found\n");
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Slow-fast jump-diffusion simulation, averaging and particle filtering"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  struct Sub {
    CLI::App* app;
    Common common;
    std::unique_ptr<ParamSet> params;
  };
  std::map<std::string, Sub> subs;
  auto add = [&](const std::string& name, const std::string& desc, std::vector<ParamSpec> specs) {
    auto& s = subs[name];
    s.app = app.add_subcommand(name, desc);
    add_common(s.app, s.common);
    s.params = std::make_unique<ParamSet>(s.app, std::move(specs));
  };

  add("simulate", "simulate (X, Z, Y) paths",
      {{"eps", Type::text, nullptr, "scale parameter (default: the preset's)"},
       {"T", Type::real, 1.0, "horizon"},
       {"dt", Type::real, 0.01, "slow step"},
       {"fast_mode", Type::text, "auto", "euler, exact_ou or auto"},
       {"paths", Type::integer, 1, "number of paths"}});
  add("average", "average the slow coefficients on a lattice",
      {{"x_lo", Type::real, -3.0, "lattice lower bound"},
       {"x_hi", Type::real, 3.0, "lattice upper bound"},
       {"points", Type::integer, 13, "points per slow coordinate"},
       {"burn_in", Type::real, 10.0, "burn-in duration"},
       {"samples", Type::integer, 10000, "samples per lattice point"},
       {"stride", Type::integer, 100, "thinning stride"},
       {"dt", Type::real, 0.01, "frozen fast step"}});
  auto filter_specs = std::vector<ParamSpec>{
      {"mode", Type::text, "full", "full or homog"},
      {"particles", Type::integer, 1000, "particle count"},
      {"psi", Type::text, "tanh", "test functions: tanh, arctan, indicator(a,b), poly(c0,c1,c2)"},
      {"ess_frac", Type::real, 0.5, "resample when ESS < fraction * N"},
      {"eps", Type::text, nullptr, "scale parameter (default: the preset's)"},
      {"T", Type::real, 1.0, "horizon"},
      {"dt", Type::real, 0.01, "slow step"},
      {"fast_mode", Type::text, "auto", "euler, exact_ou or auto"}};
  for (auto& s : homogenization_specs()) filter_specs.push_back(s);
  add("filter", "run one particle filter on a simulated observation path", filter_specs);
  auto converge_specs = std::vector<ParamSpec>{
      {"eps", Type::text, "0.5,0.1,0.02", "strictly decreasing scale parameters"},
      {"replications", Type::integer, 50, "observation paths per epsilon"},
      {"particles", Type::integer, 500, "particles per filter"},
      {"psi", Type::text, "tanh", "test functions"},
      {"T", Type::real, 1.0, "horizon"},
      {"dt", Type::real, 0.01, "slow step"},
      {"fast_mode", Type::text, "auto", "euler, exact_ou or auto"},
      {"ess_frac", Type::real, 0.5, "resample when ESS < fraction * N"},
      {"signal_paths", Type::integer, 0, "paths per law for the signal KS column (0: off)"},
      {"martingale_runs", Type::integer, 0, "runs for the likelihood mean column (0: off)"},
      {"plot", Type::flag, false, "write gap_vs_eps.svg"}};
  for (auto& s : homogenization_specs()) converge_specs.push_back(s);
  add("converge", "filter convergence study over epsilon", converge_specs);
  add("validate", "sample the standing assumptions",
      {{"samples", Type::integer, 1000, "random points per check"}});

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  std::string name;
  for (auto& [n, s] : subs)
    if (s.app->parsed()) name = n;
  auto& sub = subs.at(name);
  std::uint64_t seed = sub.common.seed;
  try {
    std::size_t threads = sub.common.threads;
    if (const char* env = std::getenv("LEVYFILTER_THREADS"); env && *env) {
      try {
        threads = std::stoul(env);
      } catch (const std::logic_error&) {
        throw ConfigError(fmt::format("invalid LEVYFILTER_THREADS value '{}'", env));
      }
    }
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    tbb::global_control limit(tbb::global_control::max_allowed_parallelism, threads);

    const auto loaded = load(sub.common);
    seed = loaded.seed;
    const auto params = sub.params->resolve(section_of(loaded, name), name);
    write_run_config(loaded, name, params);
    if (name == "simulate") return cmd_simulate(loaded, params);
    if (name == "average") return cmd_average(loaded, params);
    if (name == "filter") return cmd_filter(loaded, params);
    if (name == "converge") return cmd_converge(loaded, params);
    return cmd_validate(loaded, params);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const StiffnessRejected& e) {
    std::cerr << "error: " << e.what() << " (reduce --dt or use --fast-mode exact_ou)\n";
    return 1;
  } catch (const UnsupportedMeasure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    std::cerr << fmt::format("numerical failure (seed {}): {}\n", seed, e.what());
    return 2;
  } catch (const Json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("levyfilter");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace levyfilter::cli
