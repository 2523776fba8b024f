#pragma once
#include <stdexcept>
#include <string>

namespace eploom {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Eigensystem at (or numerically indistinguishable from) an exceptional point:
// left/right eigenvectors coalesce and the biorthonormal inversion is undefined.
struct CoalescentEigensystem : Error {
  CoalescentEigensystem() : Error("coalescent eigensystem") {}
};

// Branch continuation tie: both labelings of the candidate splitting are exactly
// equidistant from the previous one (an exact EP crossing between samples).
struct AmbiguousContinuation : Error {
  AmbiguousContinuation() : Error("ambiguous continuation") {}
};

// The loop hits the eigenvalue-coalescence set; the winding number is undefined.
struct LoopThroughEp : Error {
  LoopThroughEp() : Error("loop passes through EP") {}
};

struct RefinementCapExceeded : Error {
  RefinementCapExceeded() : Error("refinement cap exceeded") {}
};

// The sampled radicand evaluates to exactly zero somewhere on the loop.
struct RadicandHitsOrigin : Error {
  RadicandHitsOrigin() : Error("radicand hits origin") {}
};

struct StepSizeUnderflow : Error {
  StepSizeUnderflow() : Error("step-size underflow") {}
};

struct CalibrationFailure : Error {
  explicit CalibrationFailure(const std::string& detail)
      : Error("no candidate satisfies calibration: " + detail) {}
};

struct GridMismatch : Error {
  GridMismatch() : Error("grid mismatch") {}
};

struct NoComparableCells : Error {
  NoComparableCells() : Error("no comparable cells") {}
};

struct Cancelled : Error {
  Cancelled() : Error("cancelled") {}
};

// Invalid user-facing configuration (CLI exit status 2).
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace eploom
