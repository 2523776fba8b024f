#pragma once
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "eploom/errors.hpp"
#include "eploom/evolve.hpp"
#include "eploom/loops.hpp"
#include "eploom/sense.hpp"
#include "eploom/sweep.hpp"
#include "eploom/topo.hpp"

// Plot-ready CSV emission.  Every number is printed with "%.17g" so rewrites of the
// same data are byte-identical and round-trip exactly; NaN (used for "no value at
// this sample") becomes an empty field.  Rows end with '\n' only.  Headers carry
// optional '#' comment lines so a file records the resolved configuration that
// produced it.

namespace eploom {
namespace io {

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_field(double v) { return std::isnan(v) ? std::string() : fmt17(v); }

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw Error("cannot open output file: " + path);
  }
  void comment(const std::string& line) { out_ << "# " << line << '\n'; }
  void header(const std::string& columns) { out_ << columns << '\n'; }
  void row(const std::vector<double>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << csv_field(fields[i]);
    }
    out_ << '\n';
  }
  void raw_row(const std::string& line) { out_ << line << '\n'; }
  void close() {
    out_.close();
    if (out_.fail()) throw Error("write failure on output file");
  }

 private:
  std::ofstream out_;
};

inline void write_trace_csv(const std::string& path, const LoopSpec& loop, const StateTrace& tr,
                            const std::vector<std::string>& comments = {}) {
  CsvWriter w(path);
  for (const auto& c : comments) w.comment(c);
  w.header("theta_over_pi,re_c0,im_c0,re_c1,im_c1,log_norm,f_plus,f_minus,p_plus");
  (void)loop;
  for (std::size_t k = 0; k < tr.thetas.size(); ++k) {
    const State& st = tr.states[k];
    w.row({tr.thetas[k] / kPi, st.c[0].real(), st.c[0].imag(), st.c[1].real(), st.c[1].imag(),
           st.log_norm, tr.f_plus[k], tr.f_minus[k], tr.p_plus[k]});
  }
  w.close();
}

inline void write_map_csv(const std::string& path, const MapResult& m,
                          const std::vector<std::string>& comments = {}) {
  CsvWriter w(path);
  for (const auto& c : comments) w.comment(c);
  w.header("x,y,value,flag");
  for (int iy = 0; iy < m.grid.ny; ++iy)
    for (int ix = 0; ix < m.grid.nx; ++ix) {
      const std::size_t at = static_cast<std::size_t>(iy) * m.grid.nx + ix;
      w.raw_row(fmt17(grid_x(m.grid, ix)) + ',' + fmt17(grid_y(m.grid, iy)) + ',' +
                csv_field(m.values[at]) + ',' + cell_flag_name(m.flags[at]));
    }
  w.close();
}

inline void write_sense_csv(const std::string& path, const std::vector<SenseSample>& samples,
                            const std::vector<std::string>& comments = {}) {
  const bool state_kind = !samples.empty() && samples.front().kind == SenseKind::ChiState;
  CsvWriter w(path);
  for (const auto& c : comments) w.comment(c);
  w.header(state_kind
               ? "theta_over_pi,lambda,re_delta_e,im_delta_e,chi_state,singular_flag"
               : "theta_over_pi,lambda,re_delta_e,im_delta_e,re_chi,im_chi,singular_flag");
  for (const SenseSample& s : samples) {
    std::string line = fmt17(s.theta / kPi) + ',' + fmt17(s.lambda) + ',' +
                       csv_field(s.delta_e.real()) + ',' + csv_field(s.delta_e.imag()) + ',';
    if (state_kind)
      line += csv_field(s.chi.real());
    else
      line += csv_field(s.chi.real()) + ',' + csv_field(s.chi.imag());
    line += ',';
    line += s.singular ? '1' : '0';
    w.raw_row(line);
  }
  w.close();
}

inline void write_eigen_csv(const std::string& path, const LoopSpec& loop,
                            const std::vector<double>& thetas,
                            const std::vector<std::string>& comments = {}) {
  CsvWriter w(path);
  for (const auto& c : comments) w.comment(c);
  w.header(
      "theta_over_pi,delta,g,gamma,re_e_plus,im_e_plus,re_e_minus,im_e_minus,re_delta_e,"
      "im_delta_e,is_ep");
  Complex prev{};
  bool have_prev = false;
  for (double th : thetas) {
    const ParamPoint p = param_at(loop, th);
    BranchConvention branch;
    if (have_prev) {
      branch.mode = BranchMode::ContinuedFromPrevious;
      branch.previous_delta_e = prev;
    }
    const EigenSystem es = eigensystem(p, loop.omega_a, branch);
    if (!es.at_ep) {
      prev = es.delta_e;
      have_prev = true;
    }
    w.raw_row(fmt17(th / kPi) + ',' + fmt17(p.delta) + ',' + fmt17(p.g) + ',' + fmt17(p.gamma) +
              ',' + fmt17(es.e_plus.real()) + ',' + fmt17(es.e_plus.imag()) + ',' +
              fmt17(es.e_minus.real()) + ',' + fmt17(es.e_minus.imag()) + ',' +
              fmt17(es.delta_e.real()) + ',' + fmt17(es.delta_e.imag()) + ',' +
              (es.at_ep ? '1' : '0'));
  }
  w.close();
}

inline void write_winding_csv(const std::string& path, const WindingResult& res,
                              const std::string& flag = "ok",
                              const std::vector<std::string>& comments = {}) {
  CsvWriter w(path);
  for (const auto& c : comments) w.comment(c);
  w.header("nu,nu_quantized,samples_used,residual,flag");
  w.raw_row(fmt17(res.nu) + ',' + fmt17(res.nu_quantized) + ',' +
            std::to_string(res.samples_used) + ',' + fmt17(res.residual) + ',' + flag);
  w.close();
}

inline void write_calibration_csv(const std::string& path, const std::vector<CalibrationRow>& rows,
                                  const std::vector<std::string>& comments = {}) {
  CsvWriter w(path);
  for (const auto& c : comments) w.comment(c);
  w.header("omega,t1_f_ccw,t1_f_cw,t3_f_ccw,t3_f_cw,contrast,pass");
  for (const CalibrationRow& r : rows)
    w.raw_row(fmt17(r.omega) + ',' + fmt17(r.t1_f_ccw) + ',' + fmt17(r.t1_f_cw) + ',' +
              fmt17(r.t3_f_ccw) + ',' + fmt17(r.t3_f_cw) + ',' + fmt17(r.contrast) + ',' +
              (r.pass ? '1' : '0'));
  w.close();
}

}  // namespace io
}  // namespace eploom
