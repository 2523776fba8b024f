#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "eploom/core.hpp"
#include "eploom/loops.hpp"

namespace fs = std::filesystem;
using Catch::Approx;
using namespace eploom;

namespace {

// Every scenario runs the binary inside its own scratch directory so relative
// output paths (and the default ./eploom_session.json) never collide.
struct Scratch {
  fs::path dir;
  Scratch() {
    static int counter = 0;
    dir = fs::temp_directory_path() /
          ("eploom_cli_" + std::to_string(static_cast<long>(::getpid())) + "_" +
           std::to_string(counter++));
    fs::create_directories(dir);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  fs::path operator/(const std::string& name) const { return dir / name; }
};

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Runs the CLI with `dir` as working directory.  EPLOOM_OMEGA is scrubbed from
// the inherited environment; `env` can re-inject assignments for a single run.
int run(const Scratch& s, const std::string& args, const std::string& env = "") {
  const std::string cmd = "cd '" + s.dir.string() + "' && env -u EPLOOM_OMEGA " +
                          (env.empty() ? std::string() : env + " ") + EPLOOM_CLI_PATH + " " +
                          args + " >stdout.log 2>stderr.log";
  const int st = std::system(cmd.c_str());
  if (st == -1 || !WIFEXITED(st)) return -1;
  return WEXITSTATUS(st);
}

std::string stderr_of(const Scratch& s) { return read_file(s / "stderr.log"); }

// Data rows of a CSV produced by the tool: '#' comments and the single header
// line are skipped, the rest is split on commas.
std::vector<std::vector<std::string>> csv_rows(const fs::path& p) {
  std::ifstream f(p);
  REQUIRE(f.good());
  std::vector<std::vector<std::string>> rows;
  bool saw_header = false;
  for (std::string line; std::getline(f, line);) {
    if (line.empty() || line[0] == '#') continue;
    if (!saw_header) {
      saw_header = true;
      continue;
    }
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      fields.push_back(
          line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

double num(const std::string& field) { return std::strtod(field.c_str(), nullptr); }

// The '# config: {...}' provenance comment of a CSV output.
std::string config_comment(const fs::path& p) {
  std::ifstream f(p);
  for (std::string line; std::getline(f, line);)
    if (line.rfind("# config:", 0) == 0) return line;
  return {};
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("usage and parse errors exit with the documented codes") {
  Scratch s;
  CHECK(run(s, "--help") == 0);
  CHECK(run(s, "eigen --help") == 0);
  CHECK(run(s, "") == 2);            // a subcommand is required
  CHECK(run(s, "frobnicate") == 2);  // unknown subcommand
  CHECK(run(s, "eigen --preset 4") == 2);
  CHECK(contains(stderr_of(s), "preset"));
  CHECK(run(s, "eigen --format yaml") == 2);
  CHECK(run(s, "eigen --direction widdershins") == 2);
}

TEST_CASE("configuration validation failures exit 2 and name the offending key") {
  Scratch s;
  auto with_cfg = [&](const std::string& json, const std::string& sub = "eigen") {
    write_file(s / "cfg.json", json);
    return run(s, sub + " --config cfg.json");
  };

  CHECK(with_cfg("{\"volume\": 11}") == 2);
  CHECK(contains(stderr_of(s), "config error"));
  CHECK(contains(stderr_of(s), "volume"));

  CHECK(with_cfg("{\"initial\": \"sideways\"}", "trace") == 2);
  CHECK(contains(stderr_of(s), "initial"));

  CHECK(with_cfg("{\"theta_count\": 1}") == 2);
  CHECK(contains(stderr_of(s), "theta_count"));

  CHECK(with_cfg("{\"integrator\": {\"sample_count\": 1}}", "trace") == 2);
  CHECK(contains(stderr_of(s), "sample_count"));

  CHECK(with_cfg("{\"sense_kind\": \"eigenstate\", \"lambda\": [0.0]}", "sense") == 2);
  CHECK(contains(stderr_of(s), "lambda"));

  CHECK(with_cfg("{\"trajectory\": {\"g0\": 0.2, \"bogus\": 1}}") == 2);
  CHECK(contains(stderr_of(s), "bogus"));

  CHECK(with_cfg("{\"omega\": -0.1}") == 2);
  CHECK(contains(stderr_of(s), "omega"));

  CHECK(with_cfg("{\"trajectory\": 7}") == 2);

  CHECK(run(s, "eigen", "EPLOOM_OMEGA=banana") == 2);
  CHECK(contains(stderr_of(s), "EPLOOM_OMEGA"));
}

TEST_CASE("eigen emits one row per theta sample matching the library eigensystem") {
  Scratch s;
  write_file(s / "cfg.json", "{\"theta_count\": 5}");
  REQUIRE(run(s, "eigen --preset 2 --config cfg.json") == 0);

  const auto rows = csv_rows(s / "eigen.csv");
  REQUIRE(rows.size() == 5);
  REQUIRE(rows[0].size() == 11);
  const double want_theta[5] = {0.0, 0.5, 1.0, 1.5, 2.0};
  for (int j = 0; j < 5; ++j) CHECK(num(rows[j][0]) == want_theta[j]);

  // Formatting round-trips doubles exactly, so the first row must reproduce
  // the library eigensystem bit for bit.
  const EigenSystem es = eigensystem(param_at(preset(2), 0.0), 0.0, BranchConvention{});
  CHECK(num(rows[0][8]) == es.delta_e.real());
  CHECK(num(rows[0][9]) == es.delta_e.imag());

  Scratch cw;
  write_file(cw / "cfg.json", "{\"theta_count\": 5}");
  REQUIRE(run(cw, "eigen --preset 2 --config cfg.json --direction cw") == 0);
  const auto crows = csv_rows(cw / "eigen.csv");
  REQUIRE(crows.size() == 5);
  CHECK(num(crows[1][0]) == -0.5);
  CHECK(num(crows[4][0]) == -2.0);

  Scratch js;
  REQUIRE(run(js, "eigen --preset 2 --format json") == 0);
  CHECK_FALSE(fs::exists(js / "eigen.csv"));
  const std::string doc = read_file(js / "eigen.json");
  CHECK(contains(doc, "\"command\": \"eigen\""));
  CHECK(contains(doc, "\"columns\""));
  CHECK(contains(doc, "re_delta_e"));
}

TEST_CASE("trace starts on the prepared eigenstate in both directions") {
  for (const std::string dir : {"ccw", "cw"}) {
    Scratch s;
    write_file(s / "cfg.json", "{\"omega\": 0.5, \"theta_count\": 51}");
    REQUIRE(run(s, "trace --preset 3 --config cfg.json --direction " + dir) == 0);
    const auto rows = csv_rows(s / "trace.csv");
    REQUIRE(rows.size() == 51);
    REQUIRE(rows[0].size() == 9);
    CHECK(num(rows[0][0]) == 0.0);                               // starts at theta = 0
    CHECK(std::abs(num(rows[0][5])) < 1e-12);                    // log_norm
    CHECK(num(rows[0][6]) == Approx(1.0).margin(1e-12));         // f_plus
    CHECK(num(rows[0][8]) == Approx(1.0).margin(1e-12));         // p_plus
    CHECK(num(rows.back()[0]) == (dir == "ccw" ? 2.0 : -2.0));   // full cycle
  }
}

TEST_CASE("identical invocations produce byte-identical outputs") {
  Scratch a, b;
  const std::string cfg = "{\"omega\": 0.5, \"theta_count\": 41}";
  write_file(a / "cfg.json", cfg);
  write_file(b / "cfg.json", cfg);
  REQUIRE(run(a, "trace --preset 3 --config cfg.json") == 0);
  REQUIRE(run(b, "trace --preset 3 --config cfg.json") == 0);
  const std::string ta = read_file(a / "trace.csv");
  REQUIRE_FALSE(ta.empty());
  CHECK(ta == read_file(b / "trace.csv"));
}

TEST_CASE("worker count does not change map bytes") {
  const std::string cfg =
      "{\"omega\": 0.5, \"map_kind\": \"winding\", \"grid\": {"
      "\"x_param\": \"Delta0\", \"y_param\": \"G0\", \"x_min\": -0.2, \"x_max\": 0.2,"
      "\"y_min\": -0.4, \"y_max\": 0.4, \"nx\": 5, \"ny\": 5}}";
  Scratch a, b;
  write_file(a / "cfg.json", cfg);
  write_file(b / "cfg.json", cfg);
  REQUIRE(run(a, "map --preset 3 --config cfg.json --jobs 1") == 0);
  REQUIRE(run(b, "map --preset 3 --config cfg.json --jobs 4") == 0);
  const std::string ma = read_file(a / "winding_map.csv");
  REQUIRE_FALSE(ma.empty());
  CHECK(ma == read_file(b / "winding_map.csv"));
  CHECK(read_file(a / "winding_map_meta.json") == read_file(b / "winding_map_meta.json"));
}

TEST_CASE("winding reports quantized, clockwise and grazing results") {
  Scratch s;
  REQUIRE(run(s, "winding --preset 3") == 0);
  auto rows = csv_rows(s / "winding.csv");
  REQUIRE(rows.size() == 1);
  REQUIRE(rows[0].size() == 5);
  CHECK(num(rows[0][0]) == Approx(0.5).margin(1e-9));
  CHECK(num(rows[0][1]) == 0.5);
  CHECK(rows[0][2] == "1024");
  CHECK(rows[0][4] == "ok");

  Scratch cw;
  REQUIRE(run(cw, "winding --preset 3 --direction cw") == 0);
  rows = csv_rows(cw / "winding.csv");
  REQUIRE(rows.size() == 1);
  CHECK(num(rows[0][1]) == -0.5);

  // Preset 1 rides the branch cut; the tool falls back to the crossing count.
  Scratch gz;
  REQUIRE(run(gz, "winding --preset 1") == 0);
  rows = csv_rows(gz / "winding.csv");
  REQUIRE(rows.size() == 1);
  CHECK(num(rows[0][0]) == 0.0);
  CHECK(rows[0][2] == "4096");
  CHECK(rows[0][4] == "ep-grazing");
}

TEST_CASE("map correlate computes both maps and their agreement in one run") {
  Scratch s;
  write_file(s / "cfg.json",
             "{\"omega\": 0.5, \"map_kind\": \"correlate\", \"grid\": {"
             "\"x_param\": \"Delta0\", \"y_param\": \"G0\", \"x_min\": 0.1, \"x_max\": 0.3,"
             "\"y_min\": 0.1, \"y_max\": 0.3, \"nx\": 2, \"ny\": 2}}");
  REQUIRE(run(s, "map --preset 3 --config cfg.json") == 0);
  for (const char* f : {"fidelity_map.csv", "fidelity_map_meta.json", "winding_map.csv",
                        "winding_map_meta.json", "correlate.csv"})
    CHECK(fs::exists(s / f));
  const auto rows = csv_rows(s / "correlate.csv");
  REQUIRE(rows.size() == 1);
  REQUIRE(rows[0].size() == 3);
  CHECK(rows[0][1] == "4");  // all four cells comparable
  const double agreement = num(rows[0][0]);
  CHECK(agreement >= 0.0);
  CHECK(agreement <= 1.0);
  CHECK(num(rows[0][2]) == Approx(agreement * 4).margin(1e-12));
}

TEST_CASE("correlate refuses map files on different grids") {
  Scratch fa, wb, s;
  write_file(fa / "cfg.json",
             "{\"omega\": 0.5, \"map_kind\": \"fidelity\", \"grid\": {"
             "\"x_param\": \"Delta0\", \"y_param\": \"G0\", \"x_min\": 0.1, \"x_max\": 0.3,"
             "\"y_min\": 0.1, \"y_max\": 0.3, \"nx\": 2, \"ny\": 2}}");
  REQUIRE(run(fa, "map --preset 3 --config cfg.json") == 0);
  write_file(wb / "cfg.json",
             "{\"omega\": 0.5, \"map_kind\": \"winding\", \"grid\": {"
             "\"x_param\": \"Delta0\", \"y_param\": \"G0\", \"x_min\": 0.1, \"x_max\": 0.3,"
             "\"y_min\": 0.1, \"y_max\": 0.3, \"nx\": 3, \"ny\": 3}}");
  REQUIRE(run(wb, "map --preset 3 --config cfg.json") == 0);

  write_file(s / "cfg.json", "{\"map_kind\": \"correlate\", \"fidelity_file\": \"" +
                                 (fa / "fidelity_map.csv").string() +
                                 "\", \"winding_file\": \"" + (wb / "winding_map.csv").string() +
                                 "\"}");
  CHECK(run(s, "map --preset 3 --config cfg.json") == 3);
  CHECK(contains(stderr_of(s), "eploom: error:"));
  CHECK(contains(stderr_of(s), "grid"));
}

TEST_CASE("sense landscape writes the half-cycle slice next to the full surface") {
  Scratch s;
  write_file(s / "cfg.json",
             "{\"lambda\": {\"min\": -0.1, \"max\": 0.1, \"count\": 5}, \"theta_count\": 9}");
  REQUIRE(run(s, "sense --preset 2 --config cfg.json") == 0);

  const auto surface = csv_rows(s / "sense_landscape.csv");
  CHECK(surface.size() == 45);  // 5 lambda values x 9 theta samples
  const auto slice = csv_rows(s / "sense_landscape_slice.csv");
  REQUIRE(slice.size() == 5);
  const double want_lambda[5] = {-0.1, -0.05, 0.0, 0.05, 0.1};
  for (int i = 0; i < 5; ++i) {
    CHECK(num(slice[i][0]) == 1.0);  // theta grid point nearest pi
    CHECK(num(slice[i][1]) == Approx(want_lambda[i]).margin(1e-15));
  }
}

TEST_CASE("calibration success records the chosen drive rate for later runs") {
  Scratch s;
  write_file(s / "cal.json",
             "{\"trajectory\": {\"g0\": 0.3}, \"candidates\": [0.2, 0.1, 0.05]}");
  REQUIRE(run(s, "calibrate --config cal.json") == 0);

  const auto rows = csv_rows(s / "calibration.csv");
  REQUIRE(rows.size() == 3);
  REQUIRE(rows[0].size() == 7);
  // The static reference loop returns perfectly at any drive rate; the chiral
  // contrast of the preset-3 loop decides, and it only clears 0.8 for the two
  // slower candidates.
  CHECK(rows[0][6] == "0");
  CHECK(rows[1][6] == "1");
  CHECK(rows[2][6] == "1");
  CHECK(num(rows[0][5]) == Approx(0.760110659534).margin(1e-6));
  CHECK(num(rows[1][5]) == Approx(0.952004246455).margin(1e-6));

  // The session file holds the largest passing candidate...
  const std::string session = read_file(s / "eploom_session.json");
  CHECK(contains(session, "\"omega\": 0.1"));

  // ...and later runs in the same directory pick it up.
  write_file(s / "cfg.json", "{\"theta_count\": 3}");
  REQUIRE(run(s, "eigen --preset 2 --config cfg.json") == 0);
  CHECK(contains(config_comment(s / "eigen.csv"), "\"omega\":0.1"));

  // The environment overrides the session file...
  REQUIRE(run(s, "eigen --preset 2 --config cfg.json", "EPLOOM_OMEGA=0.25") == 0);
  CHECK(contains(config_comment(s / "eigen.csv"), "\"omega\":0.25"));

  // ...and an explicit config value overrides both.
  write_file(s / "cfg.json", "{\"theta_count\": 3, \"omega\": 0.3}");
  REQUIRE(run(s, "eigen --preset 2 --config cfg.json", "EPLOOM_OMEGA=0.25") == 0);
  CHECK(contains(config_comment(s / "eigen.csv"), "\"omega\":0.3"));

  // Without any source, the conservative default drive rate applies.
  Scratch fresh;
  REQUIRE(run(fresh, "eigen --preset 2") == 0);
  CHECK(contains(config_comment(fresh / "eigen.csv"), "\"omega\":0.05"));

  // --session redirects where the result is stored.
  Scratch alt;
  write_file(alt / "cal.json",
             "{\"trajectory\": {\"g0\": 0.3}, \"candidates\": [0.2, 0.1]}");
  REQUIRE(run(alt, "calibrate --config cal.json --session tuned.json") == 0);
  CHECK(fs::exists(alt / "tuned.json"));
  CHECK_FALSE(fs::exists(alt / "eploom_session.json"));
}

TEST_CASE("calibration failure exits 3 with metrics and leaves no outputs") {
  Scratch s;
  write_file(s / "cal.json", "{\"candidates\": [0.2]}");
  CHECK(run(s, "calibrate --preset 1 --config cal.json") == 3);
  const std::string err = stderr_of(s);
  CHECK(contains(err, "eploom: error:"));
  CHECK(contains(err, "best candidate omega=0.2"));
  CHECK(contains(err, "contrast=0.760111"));
  CHECK_FALSE(fs::exists(s / "calibration.csv"));
  CHECK_FALSE(fs::exists(s / "eploom_session.json"));
}

TEST_CASE("session files are validated strictly") {
  Scratch extra;
  write_file(extra / "eploom_session.json", "{\"omega\": 0.1, \"note\": \"hi\"}");
  CHECK(run(extra, "eigen --preset 2") == 2);
  CHECK(contains(stderr_of(extra), "session"));

  Scratch corrupt;
  write_file(corrupt / "eploom_session.json", "{not json");
  CHECK(run(corrupt, "eigen --preset 2") == 2);

  Scratch wrong_type;
  write_file(wrong_type / "eploom_session.json", "{\"omega\": \"fast\"}");
  CHECK(run(wrong_type, "eigen --preset 2") == 2);
}
