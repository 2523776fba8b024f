// Minimal library demo: drive the constant-gamma preset loop both ways at the
// default angular speed and print the endpoint fidelity and winding number,
// illustrating the direction-dependent state return over an unchanged |nu|.
#include <cstdio>

#include "eploom/eploom.hpp"

int main() {
  using namespace eploom;
  LoopSpec loop = preset(3);
  for (Direction dir : {Direction::CCW, Direction::CW}) {
    loop.direction = dir;
    const double f = return_fidelity(loop);
    const WindingResult w = winding_number(loop);
    std::printf("%s  F+(T) = %.6f   nu = %+.2f (%d samples, residual %.2e)\n",
                dir == Direction::CCW ? "ccw" : "cw ", f, w.nu_quantized, w.samples_used,
                w.residual);
  }
  return 0;
}
