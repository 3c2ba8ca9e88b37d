#pragma once

#include <optional>
#include <string>

#include "nearfield/regularity.hpp"
#include "nearfield/solver.hpp"
#include "nearfield/target.hpp"

namespace nearfield {

/// Scene file rejected: carries the 1-based position when known.
struct SceneError : std::runtime_error {
  int line = 0;
  int column = 0;
  SceneError(const std::string& what, int l = 0, int c = 0)
      : std::runtime_error(what), line(l), column(c) {}
};

struct CheckParams {
  Vec x;  // base horizontal; defaults to the Omega center
  double height = 0.0;
  double v_radius = 0.25;
  int v_count = 3;  // nodes per axis on the v grid
  double fd_step = 1e-3;
};

struct TraceParams {
  int rays = 1000;
  std::string origins = "random";  // random | grid
};

struct InclusionParams {
  double v_mag = 0.3;
  std::vector<double> lambdas = {0.25, 0.5, 0.75};
  int samples_per_lambda = 3334;
  double tol = 1e-9;
};

struct TubeParams {
  double base_separation = 0.2;
  std::vector<double> scales = {1.0, 0.5, 0.25};
  std::optional<GraphSurface> wedge;  // graph the atoms were sampled from
};

struct RefinementParams {
  std::vector<int> atom_counts = {8, 32, 128};
  double y_lo = -0.8;
  double y_hi = 0.8;
};

struct Scene {
  OpticalConfig optics;
  Cylinder cylinder;
  Target target;
  std::string target_desc;
  std::function<double(const Vec&)> source_f;
  std::string source_desc;
  SolverConfig solver;
  int seed = 0;
  std::uint64_t hash = 0;
  std::string path;

  CheckParams check;
  TraceParams trace;
  InclusionParams inclusion;
  TubeParams tube;
  RefinementParams refinement;
};

/// Parse and validate a scene JSON file; throws SceneError with line/column
/// on malformed input.
Scene load_scene(const std::string& path);

}  // namespace nearfield
