#pragma once
#include <atomic>
#include <cmath>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "eploom/errors.hpp"
#include "eploom/evolve.hpp"
#include "eploom/loops.hpp"
#include "eploom/topo.hpp"

// Parallel parameter-plane sweeps: endpoint-fidelity maps and winding maps over a
// grid of loop amplitudes, plus the fidelity/topology agreement report.  Cells are
// pure functions of their coordinates; workers own disjoint row blocks and write to
// preallocated slots, so results are bit-identical for any worker count.

namespace eploom {

struct GridSpec {
  std::string x_param = "G0";  // amplitude names: "Delta0" | "G0" | "Gamma0"
  std::string y_param = "Gamma0";
  double x_min = -0.4, x_max = 0.4;
  double y_min = -0.4, y_max = 0.4;
  int nx = 101, ny = 101;
};

inline bool same_grid(const GridSpec& a, const GridSpec& b) {
  return a.x_param == b.x_param && a.y_param == b.y_param && a.x_min == b.x_min &&
         a.x_max == b.x_max && a.y_min == b.y_min && a.y_max == b.y_max && a.nx == b.nx &&
         a.ny == b.ny;
}

inline double grid_x(const GridSpec& g, int i) {
  return g.nx == 1 ? g.x_min : g.x_min + (g.x_max - g.x_min) * i / (g.nx - 1);
}
inline double grid_y(const GridSpec& g, int j) {
  return g.ny == 1 ? g.y_min : g.y_min + (g.y_max - g.y_min) * j / (g.ny - 1);
}

inline void set_amplitude(LoopSpec& loop, const std::string& name, double value) {
  if (name == "G0")
    loop.G0 = value;
  else if (name == "Gamma0")
    loop.Gamma0 = value;
  else if (name == "Delta0")
    loop.delta0 = value;
  else
    throw ConfigError("unknown amplitude name: " + name);
}

inline double get_amplitude(const LoopSpec& loop, const std::string& name) {
  if (name == "G0") return loop.G0;
  if (name == "Gamma0") return loop.Gamma0;
  if (name == "Delta0") return loop.delta0;
  throw ConfigError("unknown amplitude name: " + name);
}

enum class CellFlag { Ok, EpGrazing, Failed };

inline const char* cell_flag_name(CellFlag f) {
  switch (f) {
    case CellFlag::Ok:
      return "ok";
    case CellFlag::EpGrazing:
      return "ep-grazing";
    default:
      return "failed";
  }
}

struct MapResult {
  GridSpec grid;
  std::string kind;  // "fidelity" | "winding"
  Direction direction = Direction::CCW;
  double omega = kDefaultOmega;
  std::vector<double> values;   // row-major: index = iy * nx + ix
  std::vector<CellFlag> flags;
  double marker_x = 0.0, marker_y = 0.0;  // the template's nominal amplitudes
};

namespace detail {

template <class CellFn>
void run_cells(const GridSpec& grid, int jobs, const std::atomic<bool>* cancel, CellFn&& fn) {
  int workers = jobs > 0 ? jobs : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min(workers, grid.ny));
  std::atomic<bool> local_cancel{false};
  const std::atomic<bool>* stop = cancel ? cancel : &local_cancel;

  auto run_rows = [&](int y_lo, int y_hi) {
    for (int iy = y_lo; iy < y_hi; ++iy) {
      for (int ix = 0; ix < grid.nx; ++ix) {
        if (stop->load(std::memory_order_relaxed)) return;
        fn(ix, iy);
      }
    }
  };
  if (workers == 1) {
    run_rows(0, grid.ny);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
      pool.emplace_back(run_rows, grid.ny * w / workers, grid.ny * (w + 1) / workers);
    for (auto& th : pool) th.join();
  }
  if (stop->load(std::memory_order_relaxed)) throw Cancelled();
}

inline MapResult make_map(const LoopSpec& tmpl, const GridSpec& grid, Direction dir,
                          const char* kind) {
  MapResult m;
  m.grid = grid;
  m.kind = kind;
  m.direction = dir;
  m.omega = tmpl.omega;
  m.values.assign(static_cast<std::size_t>(grid.nx) * grid.ny,
                  std::numeric_limits<double>::quiet_NaN());
  m.flags.assign(m.values.size(), CellFlag::Failed);
  m.marker_x = get_amplitude(tmpl, grid.x_param);
  m.marker_y = get_amplitude(tmpl, grid.y_param);
  return m;
}

}  // namespace detail

// F+(T) (fixed start-basis return fidelity from a phi_plus start) per cell.
inline MapResult fidelity_map(const LoopSpec& tmpl, const GridSpec& grid, Direction direction,
                              const IntegratorOpts& opts = {}, int jobs = 0,
                              const std::atomic<bool>* cancel = nullptr) {
  MapResult m = detail::make_map(tmpl, grid, direction, "fidelity");
  detail::run_cells(grid, jobs, cancel, [&](int ix, int iy) {
    LoopSpec loop = tmpl;
    loop.direction = direction;
    set_amplitude(loop, grid.x_param, grid_x(grid, ix));
    set_amplitude(loop, grid.y_param, grid_y(grid, iy));
    const std::size_t at = static_cast<std::size_t>(iy) * grid.nx + ix;
    try {
      m.values[at] = return_fidelity(loop, opts);
      m.flags[at] = CellFlag::Ok;
    } catch (const Error&) {
      // cell stays NaN/Failed; per-cell failures never abort the map
    }
  });
  return m;
}

// nu per cell; cells whose loop meets the coalescence set fall back to the
// radicand crossing counter (nu = -f_winding/2) and are flagged ep-grazing.
inline MapResult winding_map(const LoopSpec& tmpl, const GridSpec& grid, Direction direction,
                             int initial_samples = 512, int jobs = 0,
                             const std::atomic<bool>* cancel = nullptr) {
  MapResult m = detail::make_map(tmpl, grid, direction, "winding");
  detail::run_cells(grid, jobs, cancel, [&](int ix, int iy) {
    LoopSpec loop = tmpl;
    loop.direction = direction;
    set_amplitude(loop, grid.x_param, grid_x(grid, ix));
    set_amplitude(loop, grid.y_param, grid_y(grid, iy));
    const std::size_t at = static_cast<std::size_t>(iy) * grid.nx + ix;
    try {
      const WindingResult w = winding_number(loop, initial_samples);
      m.values[at] = w.nu_quantized;
      m.flags[at] = CellFlag::Ok;
    } catch (const LoopThroughEp&) {
      try {
        const EncircleReport rep = encircles_ep(loop);
        m.values[at] = -0.5 * rep.f_winding + 0.0;  // +0.0 canonicalizes -0
        m.flags[at] = CellFlag::EpGrazing;
      } catch (const Error&) {
      }
    } catch (const Error&) {
    }
  });
  return m;
}

struct CorrelateReport {
  double agreement = 0.0;  // fraction of ok-cells where (F+ < 0.5) <=> (|nu| = 1/2)
  long compared = 0;
  long agreeing = 0;
};

inline CorrelateReport correlate(const MapResult& f_map, const MapResult& nu_map) {
  if (!same_grid(f_map.grid, nu_map.grid)) throw GridMismatch();
  CorrelateReport rep;
  for (std::size_t i = 0; i < f_map.values.size(); ++i) {
    if (f_map.flags[i] != CellFlag::Ok || nu_map.flags[i] != CellFlag::Ok) continue;
    ++rep.compared;
    const bool transfer = f_map.values[i] < 0.5;
    const bool half = std::abs(std::abs(nu_map.values[i]) - 0.5) < 1e-3;
    if (transfer == half) ++rep.agreeing;
  }
  if (rep.compared == 0) throw NoComparableCells();
  rep.agreement = static_cast<double>(rep.agreeing) / static_cast<double>(rep.compared);
  return rep;
}

}  // namespace eploom
