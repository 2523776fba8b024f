// eploom: batch front end for the loop toolkit.
//
// Commands: eigen | trace | winding | map | sense | calibrate.
// A run is described by a JSON config (--config), with command-line flags
// overriding config keys.  Outputs are plot-ready CSV (or JSON) files that embed
// the fully resolved configuration as '#' comment headers, so reruns with the
// same config are byte-identical and every file is self-describing.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime/data error.
//
// The angular speed is resolved in precedence order:
//   config "omega"  >  EPLOOM_OMEGA environment variable  >  session file  >  0.05
// where the session file (default ./eploom_session.json) is written by
// `eploom calibrate` on success.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "eploom/eploom.hpp"

namespace fs = std::filesystem;
using njson = nlohmann::ordered_json;
using namespace eploom;

namespace {

// ---------------------------------------------------------------------------
// strict JSON access (unknown keys rejected, types checked)

[[noreturn]] void bad(const std::string& msg) { throw ConfigError(msg); }

void check_keys(const njson& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) bad(where + ": expected a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) bad(where + ": unknown key \"" + it.key() + "\"");
  }
}

double get_num(const njson& obj, const std::string& key, double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number()) bad(key + ": expected a number");
  return obj[key].get<double>();
}

long get_int(const njson& obj, const std::string& key, long fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number_integer()) bad(key + ": expected an integer");
  return obj[key].get<long>();
}

bool get_bool(const njson& obj, const std::string& key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_boolean()) bad(key + ": expected a boolean");
  return obj[key].get<bool>();
}

std::string get_str(const njson& obj, const std::string& key, const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_string()) bad(key + ": expected a string");
  return obj[key].get<std::string>();
}

// ---------------------------------------------------------------------------
// run configuration

struct RunConfig {
  njson raw = njson::object();  // validated config document
  std::string command;
  LoopSpec loop;                // fully resolved (omega included)
  IntegratorOpts opts;
  GridSpec grid;
  bool grid_given = false;
  PerturbationSpec pert;
  bool pert_given = false;
  std::vector<double> lambda_grid;
  long theta_count = 0;  // 0: command default
  Which initial = Which::Plus;
  std::string map_kind = "fidelity";
  std::string sense_kind = "landscape";
  std::string fidelity_file, winding_file;
  std::vector<double> candidates{0.2, 0.1, 0.05, 0.02, 0.01};
  long initial_samples = 0;  // 0: per-command default
  std::string out = ".";
  std::string format = "csv";
  int jobs = 0;
  std::string session = "eploom_session.json";
  bool omega_from_config = false;
};

Direction parse_direction(const std::string& s) {
  if (s == "ccw") return Direction::CCW;
  if (s == "cw") return Direction::CW;
  bad("direction: expected \"ccw\" or \"cw\", got \"" + s + "\"");
}

Which parse_initial(const std::string& s) {
  if (s == "plus") return Which::Plus;
  if (s == "minus") return Which::Minus;
  bad("initial: expected \"plus\" or \"minus\", got \"" + s + "\"");
}

PerturbTarget parse_target(const std::string& s) {
  if (s == "G0") return PerturbTarget::G0;
  if (s == "Gamma0") return PerturbTarget::Gamma0;
  if (s == "Delta0") return PerturbTarget::Delta0;
  bad("perturbation.target: expected \"G0\", \"Gamma0\" or \"Delta0\", got \"" + s + "\"");
}

double target_amplitude(const LoopSpec& l, PerturbTarget t) {
  switch (t) {
    case PerturbTarget::G0:
      return l.G0;
    case PerturbTarget::Gamma0:
      return l.Gamma0;
    default:
      return l.delta0;
  }
}

const char* target_name(PerturbTarget t) {
  switch (t) {
    case PerturbTarget::G0:
      return "G0";
    case PerturbTarget::Gamma0:
      return "Gamma0";
    default:
      return "Delta0";
  }
}

// omega precedence: config > EPLOOM_OMEGA > session file > default.
double resolve_omega(const njson& cfg, const std::string& session_path, bool* from_config) {
  *from_config = false;
  if (cfg.contains("omega")) {
    if (!cfg["omega"].is_number()) bad("omega: expected a number");
    *from_config = true;
    return cfg["omega"].get<double>();
  }
  if (const char* env = std::getenv("EPLOOM_OMEGA")) {
    char* end = nullptr;
    const double w = std::strtod(env, &end);
    if (end == env || *end != '\0' || !std::isfinite(w))
      bad("EPLOOM_OMEGA: invalid value \"" + std::string(env) + "\"");
    return w;
  }
  std::ifstream f(session_path);
  if (f) {
    njson s;
    try {
      s = njson::parse(f);
    } catch (const njson::exception& e) {
      bad("session file " + session_path + ": " + e.what());
    }
    check_keys(s, "session file", {"omega"});
    if (!s.contains("omega") || !s["omega"].is_number())
      bad("session file " + session_path + ": missing numeric \"omega\"");
    return s["omega"].get<double>();
  }
  return kDefaultOmega;
}

LoopSpec parse_trajectory(const njson& cfg) {
  if (!cfg.contains("trajectory")) return preset(1);
  const njson& t = cfg["trajectory"];
  if (t.is_number_integer()) {
    const long id = t.get<long>();
    if (id < 1 || id > 3) bad("trajectory: invalid preset id " + std::to_string(id));
    return preset(static_cast<int>(id));
  }
  if (!t.is_object()) bad("trajectory: expected a preset id (1..3) or an object");
  check_keys(t, "trajectory", {"delta0", "g0", "G0", "Gamma0", "g_modulated", "gamma_const"});
  LoopSpec l;
  l.delta0 = get_num(t, "delta0", 0.0);
  l.g0 = get_num(t, "g0", 0.0);
  l.G0 = get_num(t, "G0", 0.0);
  l.Gamma0 = get_num(t, "Gamma0", 0.0);
  l.g_modulated = get_bool(t, "g_modulated", true);
  if (t.contains("gamma_const") && !t["gamma_const"].is_null()) {
    if (!t["gamma_const"].is_number()) bad("trajectory.gamma_const: expected a number or null");
    l.gamma_const = t["gamma_const"].get<double>();
  }
  return l;
}

std::vector<double> parse_lambda_grid(const njson& cfg) {
  if (!cfg.contains("lambda")) {
    std::vector<double> v(201);
    for (int i = 0; i < 201; ++i) v[i] = -0.4 + 0.8 * i / 200.0;
    return v;
  }
  const njson& l = cfg["lambda"];
  std::vector<double> v;
  if (l.is_array()) {
    for (const auto& x : l) {
      if (!x.is_number()) bad("lambda: array entries must be numbers");
      v.push_back(x.get<double>());
    }
  } else {
    check_keys(l, "lambda", {"min", "max", "count"});
    const double lo = get_num(l, "min", -0.4), hi = get_num(l, "max", 0.4);
    const long n = get_int(l, "count", 201);
    if (n < 1) bad("lambda.count: must be at least 1");
    if (n > 1 && !(hi > lo)) bad("lambda: min must be below max");
    v.resize(n);
    for (long i = 0; i < n; ++i)
      v[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  if (v.empty()) bad("lambda: grid must be nonempty");
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] <= v[i - 1]) bad("lambda: grid must be strictly ascending");
  return v;
}

RunConfig load_config(const std::string& command, const std::string& config_path,
                      const std::string& flag_out, const std::string& flag_format, int flag_jobs,
                      const std::string& flag_direction, int flag_preset,
                      const std::string& flag_session) {
  RunConfig rc;
  rc.command = command;
  njson cfg = njson::object();
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) bad("config: cannot open " + config_path);
    try {
      cfg = njson::parse(f);
    } catch (const njson::exception& e) {
      bad("config: " + std::string(e.what()));
    }
  }
  check_keys(cfg, "config",
             {"trajectory", "direction", "omega", "omega_a", "cycles", "integrator", "grid",
              "perturbation", "lambda", "theta_count", "initial", "map_kind", "sense_kind",
              "fidelity_file", "winding_file", "candidates", "initial_samples", "out", "format",
              "jobs"});

  if (!flag_session.empty()) rc.session = flag_session;

  rc.loop = flag_preset != 0 ? preset(flag_preset) : parse_trajectory(cfg);
  rc.loop.omega = resolve_omega(cfg, rc.session, &rc.omega_from_config);
  if (!(rc.loop.omega > 0.0) || !std::isfinite(rc.loop.omega)) bad("omega: must be positive");
  rc.loop.omega_a = get_num(cfg, "omega_a", 0.0);
  rc.loop.cycles = static_cast<int>(get_int(cfg, "cycles", 1));
  if (rc.loop.cycles < 1) bad("cycles: must be at least 1");
  rc.loop.direction = parse_direction(
      !flag_direction.empty() ? flag_direction : get_str(cfg, "direction", "ccw"));

  if (cfg.contains("integrator")) {
    const njson& io = cfg["integrator"];
    check_keys(io, "integrator", {"rel_tol", "abs_tol", "max_step", "sample_count"});
    rc.opts.rel_tol = get_num(io, "rel_tol", rc.opts.rel_tol);
    rc.opts.abs_tol = get_num(io, "abs_tol", rc.opts.abs_tol);
    rc.opts.max_step = get_num(io, "max_step", rc.opts.max_step);
    rc.opts.sample_count = static_cast<int>(get_int(io, "sample_count", rc.opts.sample_count));
    if (!(rc.opts.rel_tol > 0.0)) bad("integrator.rel_tol: must be positive");
    if (!(rc.opts.abs_tol > 0.0)) bad("integrator.abs_tol: must be positive");
    if (rc.opts.max_step < 0.0) bad("integrator.max_step: must be nonnegative");
    if (rc.opts.sample_count < 2) bad("integrator.sample_count: must be at least 2");
  }

  if (cfg.contains("grid")) {
    rc.grid_given = true;
    const njson& go = cfg["grid"];
    check_keys(go, "grid",
               {"x_param", "y_param", "x_min", "x_max", "y_min", "y_max", "nx", "ny"});
    rc.grid.x_param = get_str(go, "x_param", rc.grid.x_param);
    rc.grid.y_param = get_str(go, "y_param", rc.grid.y_param);
    rc.grid.x_min = get_num(go, "x_min", rc.grid.x_min);
    rc.grid.x_max = get_num(go, "x_max", rc.grid.x_max);
    rc.grid.y_min = get_num(go, "y_min", rc.grid.y_min);
    rc.grid.y_max = get_num(go, "y_max", rc.grid.y_max);
    rc.grid.nx = static_cast<int>(get_int(go, "nx", rc.grid.nx));
    rc.grid.ny = static_cast<int>(get_int(go, "ny", rc.grid.ny));
    for (const std::string& p : {rc.grid.x_param, rc.grid.y_param})
      if (p != "G0" && p != "Gamma0" && p != "Delta0")
        bad("grid: unknown amplitude name \"" + p + "\"");
    if (rc.grid.nx < 1 || rc.grid.ny < 1) bad("grid: nx and ny must be at least 1");
    if (rc.grid.x_min > rc.grid.x_max || rc.grid.y_min > rc.grid.y_max)
      bad("grid: min must not exceed max");
  }

  if (cfg.contains("perturbation")) {
    rc.pert_given = true;
    const njson& po = cfg["perturbation"];
    check_keys(po, "perturbation", {"target", "x_ideal"});
    rc.pert.target = parse_target(get_str(po, "target", "G0"));
    rc.pert.x_ideal = po.contains("x_ideal") ? get_num(po, "x_ideal", 0.0)
                                             : target_amplitude(rc.loop, rc.pert.target);
  } else {
    rc.pert.x_ideal = target_amplitude(rc.loop, rc.pert.target);
  }

  rc.lambda_grid = parse_lambda_grid(cfg);
  rc.theta_count = get_int(cfg, "theta_count", 0);
  if (cfg.contains("theta_count") && rc.theta_count < 2)
    bad("theta_count: grid needs at least 2 samples");
  rc.initial = parse_initial(get_str(cfg, "initial", "plus"));
  rc.map_kind = get_str(cfg, "map_kind", rc.map_kind);
  if (rc.map_kind != "fidelity" && rc.map_kind != "winding" && rc.map_kind != "both" &&
      rc.map_kind != "correlate")
    bad("map_kind: expected fidelity|winding|both|correlate");
  rc.sense_kind = get_str(cfg, "sense_kind", rc.sense_kind);
  if (rc.sense_kind != "landscape" && rc.sense_kind != "eigenstate" && rc.sense_kind != "both")
    bad("sense_kind: expected landscape|eigenstate|both");
  rc.fidelity_file = get_str(cfg, "fidelity_file", "");
  rc.winding_file = get_str(cfg, "winding_file", "");
  if (cfg.contains("candidates")) {
    rc.candidates.clear();
    if (!cfg["candidates"].is_array()) bad("candidates: expected an array of numbers");
    for (const auto& x : cfg["candidates"]) {
      if (!x.is_number()) bad("candidates: expected an array of numbers");
      rc.candidates.push_back(x.get<double>());
    }
    if (rc.candidates.empty()) bad("candidates: must be nonempty");
    for (double w : rc.candidates)
      if (!(w > 0.0)) bad("candidates: must be positive");
  }
  rc.initial_samples = get_int(cfg, "initial_samples", 0);
  if (cfg.contains("initial_samples") && rc.initial_samples < 4)
    bad("initial_samples: must be at least 4");

  rc.out = !flag_out.empty() ? flag_out : get_str(cfg, "out", rc.out);
  rc.format = !flag_format.empty() ? flag_format : get_str(cfg, "format", rc.format);
  if (rc.format != "csv" && rc.format != "json") bad("format: expected csv|json");
  rc.jobs = flag_jobs >= 0 ? flag_jobs : static_cast<int>(get_int(cfg, "jobs", 0));
  if (rc.jobs < 0) bad("jobs: must be nonnegative");
  return rc;
}

// ---------------------------------------------------------------------------
// resolved-config provenance

njson loop_json(const LoopSpec& l) {
  njson j{{"delta0", l.delta0},
          {"g0", l.g0},
          {"G0", l.G0},
          {"Gamma0", l.Gamma0},
          {"omega", l.omega},
          {"omega_a", l.omega_a},
          {"direction", l.direction == Direction::CCW ? "ccw" : "cw"},
          {"cycles", l.cycles},
          {"g_modulated", l.g_modulated}};
  j["gamma_const"] = l.gamma_const ? njson(*l.gamma_const) : njson(nullptr);
  return j;
}

njson integrator_json(const IntegratorOpts& o) {
  return njson{{"rel_tol", o.rel_tol},
               {"abs_tol", o.abs_tol},
               {"max_step", o.max_step},
               {"sample_count", o.sample_count}};
}

njson grid_json(const GridSpec& g) {
  return njson{{"x_param", g.x_param}, {"y_param", g.y_param}, {"x_min", g.x_min},
               {"x_max", g.x_max},     {"y_min", g.y_min},     {"y_max", g.y_max},
               {"nx", g.nx},           {"ny", g.ny}};
}

std::vector<std::string> provenance(const RunConfig& rc, const njson& extra) {
  njson doc = njson::object();
  doc["loop"] = loop_json(rc.loop);
  for (auto it = extra.begin(); it != extra.end(); ++it) doc[it.key()] = it.value();
  return {"eploom " + rc.command, "config: " + doc.dump()};
}

// ---------------------------------------------------------------------------
// output plumbing

fs::path out_path(const RunConfig& rc, const std::string& stem, const char* ext) {
  fs::create_directories(rc.out);
  return fs::path(rc.out) / (stem + std::string(ext));
}

void write_json_file(const fs::path& path, const njson& doc) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open output file: " + path.string());
  f << doc.dump(2) << '\n';
  f.close();
  if (f.fail()) throw Error("write failure on output file");
}

njson table_json(const RunConfig& rc, const njson& extra, const std::vector<std::string>& cols,
                 njson rows) {
  njson doc = njson::object();
  doc["command"] = rc.command;
  doc["config"] = njson::object();
  doc["config"]["loop"] = loop_json(rc.loop);
  for (auto it = extra.begin(); it != extra.end(); ++it) doc["config"][it.key()] = it.value();
  doc["columns"] = cols;
  doc["rows"] = std::move(rows);
  return doc;
}

njson num_or_null(double v) { return std::isnan(v) ? njson(nullptr) : njson(v); }

// ---------------------------------------------------------------------------
// commands

int cmd_eigen(const RunConfig& rc) {
  const long n = rc.theta_count > 0 ? rc.theta_count : 361;
  std::vector<double> thetas(n);
  const double span = kTwoPi * rc.loop.cycles;
  for (long j = 0; j < n; ++j)
    thetas[j] = theta_sign(rc.loop) * span * static_cast<double>(j) / static_cast<double>(n - 1);
  const njson extra{{"theta_count", n}};
  if (rc.format == "csv") {
    io::write_eigen_csv(out_path(rc, "eigen", ".csv").string(), rc.loop, thetas,
                        provenance(rc, extra));
  } else {
    njson rows = njson::array();
    Complex prev{};
    bool have_prev = false;
    for (double th : thetas) {
      const ParamPoint p = param_at(rc.loop, th);
      BranchConvention branch;
      if (have_prev) {
        branch.mode = BranchMode::ContinuedFromPrevious;
        branch.previous_delta_e = prev;
      }
      const EigenSystem es = eigensystem(p, rc.loop.omega_a, branch);
      if (!es.at_ep) {
        prev = es.delta_e;
        have_prev = true;
      }
      rows.push_back({th / kPi, p.delta, p.g, p.gamma, es.e_plus.real(), es.e_plus.imag(),
                      es.e_minus.real(), es.e_minus.imag(), es.delta_e.real(),
                      es.delta_e.imag(), es.at_ep ? 1 : 0});
    }
    write_json_file(out_path(rc, "eigen", ".json"),
                    table_json(rc, extra,
                               {"theta_over_pi", "delta", "g", "gamma", "re_e_plus", "im_e_plus",
                                "re_e_minus", "im_e_minus", "re_delta_e", "im_delta_e", "is_ep"},
                               std::move(rows)));
  }
  return 0;
}

int cmd_trace(const RunConfig& rc) {
  IntegratorOpts opts = rc.opts;
  if (rc.theta_count > 0) opts.sample_count = static_cast<int>(rc.theta_count);
  const StateTrace tr = propagate(rc.loop, initial_eigenstate(rc.loop, rc.initial), opts);
  const njson extra{{"integrator", integrator_json(opts)},
                    {"initial", rc.initial == Which::Plus ? "plus" : "minus"}};
  if (rc.format == "csv") {
    io::write_trace_csv(out_path(rc, "trace", ".csv").string(), rc.loop, tr,
                        provenance(rc, extra));
  } else {
    njson rows = njson::array();
    for (std::size_t k = 0; k < tr.thetas.size(); ++k) {
      const State& st = tr.states[k];
      rows.push_back({tr.thetas[k] / kPi, st.c[0].real(), st.c[0].imag(), st.c[1].real(),
                      st.c[1].imag(), st.log_norm, num_or_null(tr.f_plus[k]),
                      num_or_null(tr.f_minus[k]), num_or_null(tr.p_plus[k])});
    }
    write_json_file(out_path(rc, "trace", ".json"),
                    table_json(rc, extra,
                               {"theta_over_pi", "re_c0", "im_c0", "re_c1", "im_c1", "log_norm",
                                "f_plus", "f_minus", "p_plus"},
                               std::move(rows)));
  }
  return 0;
}

int cmd_winding(const RunConfig& rc) {
  const int init = rc.initial_samples > 0 ? static_cast<int>(rc.initial_samples) : 1024;
  WindingResult res;
  std::string flag = "ok";
  try {
    res = winding_number(rc.loop, init);
  } catch (const LoopThroughEp&) {
    const EncircleReport rep = encircles_ep(rc.loop);
    res.nu = -0.5 * rep.f_winding + 0.0;  // +0.0 canonicalizes -0
    res.nu_quantized = res.nu;
    res.samples_used = 4096;
    res.residual = 0.0;
    flag = "ep-grazing";
  }
  const njson extra{{"initial_samples", init}};
  if (rc.format == "csv") {
    io::write_winding_csv(out_path(rc, "winding", ".csv").string(), res, flag,
                          provenance(rc, extra));
  } else {
    njson rows = njson::array();
    rows.push_back({res.nu, res.nu_quantized, res.samples_used, res.residual, flag});
    write_json_file(out_path(rc, "winding", ".json"),
                    table_json(rc, extra,
                               {"nu", "nu_quantized", "samples_used", "residual", "flag"},
                               std::move(rows)));
  }
  return 0;
}

njson map_meta_json(const MapResult& m) {
  return njson{{"kind", m.kind},
               {"grid", grid_json(m.grid)},
               {"direction", m.direction == Direction::CCW ? "ccw" : "cw"},
               {"omega", m.omega},
               {"marker", njson{{"x", m.marker_x}, {"y", m.marker_y}}}};
}

void write_map_outputs(const RunConfig& rc, const MapResult& m, const std::string& stem,
                       const njson& extra) {
  write_json_file(out_path(rc, stem + "_meta", ".json"), map_meta_json(m));
  if (rc.format == "csv") {
    io::write_map_csv(out_path(rc, stem, ".csv").string(), m, provenance(rc, extra));
    return;
  }
  njson rows = njson::array();
  for (int iy = 0; iy < m.grid.ny; ++iy)
    for (int ix = 0; ix < m.grid.nx; ++ix) {
      const std::size_t at = static_cast<std::size_t>(iy) * m.grid.nx + ix;
      rows.push_back({grid_x(m.grid, ix), grid_y(m.grid, iy), num_or_null(m.values[at]),
                      cell_flag_name(m.flags[at])});
    }
  write_json_file(out_path(rc, stem, ".json"),
                  table_json(rc, extra, {"x", "y", "value", "flag"}, std::move(rows)));
}

CellFlag parse_cell_flag(const std::string& s) {
  if (s == "ok") return CellFlag::Ok;
  if (s == "ep-grazing") return CellFlag::EpGrazing;
  if (s == "failed") return CellFlag::Failed;
  throw Error("map file: unknown cell flag \"" + s + "\"");
}

// Reads a map written by this tool: the CSV data file plus its _meta.json sidecar.
MapResult read_map_file(const std::string& csv_path) {
  if (csv_path.size() < 4 || csv_path.substr(csv_path.size() - 4) != ".csv")
    bad("correlate input must be a .csv map file: " + csv_path);
  const std::string meta_path = csv_path.substr(0, csv_path.size() - 4) + "_meta.json";
  std::ifstream mf(meta_path);
  if (!mf) throw Error("cannot open map sidecar: " + meta_path);
  njson meta;
  try {
    meta = njson::parse(mf);
  } catch (const njson::exception& e) {
    throw Error("map sidecar " + meta_path + ": " + e.what());
  }
  MapResult m;
  try {
    m.kind = meta.at("kind").get<std::string>();
    m.direction = meta.at("direction").get<std::string>() == "cw" ? Direction::CW
                                                                  : Direction::CCW;
    m.omega = meta.at("omega").get<double>();
    const njson& g = meta.at("grid");
    m.grid.x_param = g.at("x_param").get<std::string>();
    m.grid.y_param = g.at("y_param").get<std::string>();
    m.grid.x_min = g.at("x_min").get<double>();
    m.grid.x_max = g.at("x_max").get<double>();
    m.grid.y_min = g.at("y_min").get<double>();
    m.grid.y_max = g.at("y_max").get<double>();
    m.grid.nx = g.at("nx").get<int>();
    m.grid.ny = g.at("ny").get<int>();
    m.marker_x = meta.at("marker").at("x").get<double>();
    m.marker_y = meta.at("marker").at("y").get<double>();
  } catch (const njson::exception& e) {
    throw Error("map sidecar " + meta_path + ": " + e.what());
  }
  std::ifstream f(csv_path);
  if (!f) throw Error("cannot open map file: " + csv_path);
  std::string line;
  bool saw_header = false;
  for (std::string raw; std::getline(f, raw);) {
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (raw.empty() || raw[0] == '#') continue;
    if (!saw_header) {
      if (raw != "x,y,value,flag") throw Error("map file: unexpected header \"" + raw + "\"");
      saw_header = true;
      continue;
    }
    std::array<std::string, 4> fields;
    std::size_t pos = 0;
    for (int k = 0; k < 4; ++k) {
      const std::size_t comma = raw.find(',', pos);
      if (k < 3 && comma == std::string::npos) throw Error("map file: malformed row");
      fields[k] = raw.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      pos = comma + 1;
    }
    m.values.push_back(fields[2].empty() ? std::numeric_limits<double>::quiet_NaN()
                                         : std::strtod(fields[2].c_str(), nullptr));
    m.flags.push_back(parse_cell_flag(fields[3]));
  }
  const std::size_t want = static_cast<std::size_t>(m.grid.nx) * m.grid.ny;
  if (m.values.size() != want)
    throw Error("map file: expected " + std::to_string(want) + " cells, found " +
                std::to_string(m.values.size()));
  return m;
}

int cmd_map(const RunConfig& rc) {
  const int init = rc.initial_samples > 0 ? static_cast<int>(rc.initial_samples) : 512;
  const bool want_f = rc.map_kind == "fidelity" || rc.map_kind == "both" ||
                      (rc.map_kind == "correlate" && rc.fidelity_file.empty());
  const bool want_w = rc.map_kind == "winding" || rc.map_kind == "both" ||
                      (rc.map_kind == "correlate" && rc.winding_file.empty());

  std::optional<MapResult> fmap, wmap;
  if (want_f) fmap = fidelity_map(rc.loop, rc.grid, rc.loop.direction, rc.opts, rc.jobs);
  if (want_w) wmap = winding_map(rc.loop, rc.grid, rc.loop.direction, init, rc.jobs);

  std::optional<CorrelateReport> rep;
  if (rc.map_kind == "correlate") {
    const MapResult fm = fmap ? *fmap : read_map_file(rc.fidelity_file);
    const MapResult wm = wmap ? *wmap : read_map_file(rc.winding_file);
    rep = correlate(fm, wm);
  }

  if (fmap)
    write_map_outputs(rc, *fmap, "fidelity_map",
                      njson{{"grid", grid_json(rc.grid)}, {"integrator", integrator_json(rc.opts)}});
  if (wmap)
    write_map_outputs(rc, *wmap, "winding_map",
                      njson{{"grid", grid_json(rc.grid)}, {"initial_samples", init}});
  if (rep) {
    const njson extra{{"fidelity_file", rc.fidelity_file}, {"winding_file", rc.winding_file}};
    if (rc.format == "csv") {
      io::CsvWriter w(out_path(rc, "correlate", ".csv").string());
      for (const auto& c : provenance(rc, extra)) w.comment(c);
      w.header("agreement,compared,agreeing");
      w.raw_row(io::fmt17(rep->agreement) + ',' + std::to_string(rep->compared) + ',' +
                std::to_string(rep->agreeing));
      w.close();
    } else {
      njson rows = njson::array();
      rows.push_back({rep->agreement, rep->compared, rep->agreeing});
      write_json_file(out_path(rc, "correlate", ".json"),
                      table_json(rc, extra, {"agreement", "compared", "agreeing"},
                                 std::move(rows)));
    }
  }
  return 0;
}

int cmd_sense(const RunConfig& rc) {
  const long n = rc.theta_count > 0 ? rc.theta_count : 201;
  std::vector<double> theta_grid(n);
  const double span = kTwoPi * rc.loop.cycles;
  for (long j = 0; j < n; ++j)
    theta_grid[j] = span * static_cast<double>(j) / static_cast<double>(n - 1);

  const bool want_land = rc.sense_kind == "landscape" || rc.sense_kind == "both";
  const bool want_state = rc.sense_kind == "eigenstate" || rc.sense_kind == "both";
  if (want_state && rc.lambda_grid.size() < 2)
    bad("lambda: eigenstate sensing needs at least 2 grid points");

  PerturbationSpec pert = rc.pert;
  const njson extra{{"perturbation",
                     njson{{"target", target_name(pert.target)}, {"x_ideal", pert.x_ideal}}},
                    {"lambda_count", rc.lambda_grid.size()},
                    {"lambda_min", rc.lambda_grid.front()},
                    {"lambda_max", rc.lambda_grid.back()},
                    {"theta_count", n},
                    {"initial", rc.initial == Which::Plus ? "plus" : "minus"},
                    {"integrator", integrator_json(rc.opts)}};

  // Slice column: the theta grid point nearest pi (the half-cycle).
  std::size_t slice_k = 0;
  for (std::size_t k = 1; k < theta_grid.size(); ++k)
    if (std::abs(theta_grid[k] - kPi) < std::abs(theta_grid[slice_k] - kPi)) slice_k = k;

  auto emit = [&](const std::vector<SenseSample>& samples, const std::string& stem) {
    std::vector<SenseSample> slice;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (i % theta_grid.size() == slice_k) slice.push_back(samples[i]);
    if (rc.format == "csv") {
      io::write_sense_csv(out_path(rc, stem, ".csv").string(), samples, provenance(rc, extra));
      io::write_sense_csv(out_path(rc, stem + "_slice", ".csv").string(), slice,
                          provenance(rc, extra));
      return;
    }
    const bool state_kind = !samples.empty() && samples.front().kind == SenseKind::ChiState;
    auto rows_of = [&](const std::vector<SenseSample>& v) {
      njson rows = njson::array();
      for (const SenseSample& s : v) {
        njson row{s.theta / kPi, s.lambda, num_or_null(s.delta_e.real()),
                  num_or_null(s.delta_e.imag()), num_or_null(s.chi.real())};
        if (!state_kind) row.push_back(num_or_null(s.chi.imag()));
        row.push_back(s.singular ? 1 : 0);
        rows.push_back(std::move(row));
      }
      return rows;
    };
    const std::vector<std::string> cols =
        state_kind ? std::vector<std::string>{"theta_over_pi", "lambda", "re_delta_e",
                                              "im_delta_e", "chi_state", "singular_flag"}
                   : std::vector<std::string>{"theta_over_pi", "lambda", "re_delta_e",
                                              "im_delta_e", "re_chi", "im_chi", "singular_flag"};
    write_json_file(out_path(rc, stem, ".json"), table_json(rc, extra, cols, rows_of(samples)));
    write_json_file(out_path(rc, stem + "_slice", ".json"),
                    table_json(rc, extra, cols, rows_of(slice)));
  };

  if (want_land)
    emit(splitting_landscape(rc.loop, pert, rc.lambda_grid, theta_grid), "sense_landscape");
  if (want_state)
    emit(eigenstate_susceptibility(rc.loop, pert, rc.lambda_grid, theta_grid, rc.initial,
                                   rc.opts, rc.jobs),
         "sense_eigenstate");
  return 0;
}

int cmd_calibrate(const RunConfig& rc) {
  const auto rows = calibration_scan(rc.loop, rc.candidates, rc.opts);
  const CalibrationRow* winner = nullptr;
  for (const auto& r : rows)
    if (r.pass && (!winner || r.omega > winner->omega)) winner = &r;
  if (!winner) {
    // Reuse the library's diagnostic (best-achieved metrics) for the error stream.
    calibrate_omega(rc.loop, rc.candidates, rc.opts);  // throws CalibrationFailure
    throw Error("calibration failed");                 // unreachable
  }
  njson extra{{"candidates", rc.candidates},
              {"integrator", integrator_json(rc.opts)},
              {"chosen_omega", winner->omega}};
  if (rc.format == "csv") {
    io::write_calibration_csv(out_path(rc, "calibration", ".csv").string(), rows,
                              provenance(rc, extra));
  } else {
    njson jrows = njson::array();
    for (const auto& r : rows)
      jrows.push_back({r.omega, r.t1_f_ccw, r.t1_f_cw, r.t3_f_ccw, r.t3_f_cw, r.contrast,
                       r.pass ? 1 : 0});
    write_json_file(out_path(rc, "calibration", ".json"),
                    table_json(rc, extra,
                               {"omega", "t1_f_ccw", "t1_f_cw", "t3_f_ccw", "t3_f_cw",
                                "contrast", "pass"},
                               std::move(jrows)));
  }
  write_json_file(rc.session, njson{{"omega", winner->omega}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"eploom: loop-driven non-Hermitian two-level toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir, format, direction, session;
  int jobs = -1, preset_id = 0;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--out", out_dir, "output directory (default .)");
  app.add_option("--format", format, "csv | json");
  app.add_option("--jobs", jobs, "worker cap (0 = hardware parallelism)");
  app.add_option("--direction", direction, "ccw | cw");
  app.add_option("--preset", preset_id, "trajectory preset 1 | 2 | 3");
  app.add_option("--session", session, "session file (default ./eploom_session.json)");

  for (const char* name : {"eigen", "trace", "winding", "map", "sense", "calibrate"})
    app.add_subcommand(name);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (preset_id != 0 && (preset_id < 1 || preset_id > 3))
      bad("preset: invalid preset id " + std::to_string(preset_id));
    if (!format.empty() && format != "csv" && format != "json")
      bad("format: expected csv|json");
    if (!direction.empty()) parse_direction(direction);

    const std::string command = app.get_subcommands().front()->get_name();
    const RunConfig rc = load_config(command, config_path, out_dir, format, jobs, direction,
                                     preset_id, session);
    if (command == "eigen") return cmd_eigen(rc);
    if (command == "trace") return cmd_trace(rc);
    if (command == "winding") return cmd_winding(rc);
    if (command == "map") return cmd_map(rc);
    if (command == "sense") return cmd_sense(rc);
    return cmd_calibrate(rc);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "eploom: config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "eploom: error: %s\n", e.what());
    return 3;
  }
}
