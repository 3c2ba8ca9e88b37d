#pragma once

#include <vector>

#include "nearfield/solver.hpp"

namespace nearfield {

/// Snell refraction of the vertical ray at a plane with upper unit normal N:
/// Lambda = kappa e_{n+1} + delta N with
/// delta = -kappa (e.N) + sqrt(1 + kappa^2((e.N)^2 - 1)).
/// Kept independent of refraction_direction so the two paths cross-check.
Vec snell_refract(const Vec& normal, double kappa);

/// Mirror reflection of the vertical ray: Lambda = e - 2 (e.N) N.
Vec mirror_reflect(const Vec& normal);

struct TraceResult {
  Vec origin;           // x in Omega
  SpacePoint hit;       // (x, u(x))
  Vec exit;             // unit exit direction in R^{n+1}
  double focus_distance = 0.0;  // distance of the exit line to the assigned focus
  int atom = -1;
  bool on_tie = false;
};

struct TraceSummary {
  double max_distance = 0.0;   // over non-tie rays
  double mean_distance = 0.0;
  int traced = 0;
  int skipped_ties = 0;
  std::vector<double> atom_fractions;  // fraction of non-tie rays per atom
};

struct BundleResult {
  std::vector<TraceResult> rays;
  TraceSummary summary;
};

/// Refract/reflect vertical rays at the surface using the surface normal and
/// measure how far each exit line passes from its assigned focus.
BundleResult trace_bundle(const PiecewiseSurface& surface, const std::vector<Vec>& origins,
                          double tie_eps = 1e-12);

/// Two small ellipsoids plus one large one, from the published local-but-not-
/// global supporting configuration (kappa = 2/3, foci (.03,5), (-.03,5),
/// (0,10), base point (0, 4.70456)).
struct Fig3Report {
  double c1 = 0.0, c2 = 0.0;          // focal parameters of the small pieces
  double big_through_residual = 0.0;  // phi3(0) - base height
  double local_min_gap = 0.0;         // min of phi3 - R on |x| <= 0.01
  bool local_support_ok = false;
  struct Violation {
    double x;
    double gap;  // R - phi3 > 0
  };
  std::vector<Violation> violations;  // scan results with R - phi3 > 0
  double witness_x = 0.0;             // largest-gap violation
  double witness_gap = 0.0;
  bool global_fails = false;
  /// Gap at the canonical probe x = 0.15.
  double gap_at_canonical = 0.0;
};
Fig3Report counterexample_fig3();

/// Horizontal-plane comparison of two unit-offset ellipsoids against the
/// centered one through the same base point (n = 2): first and second finite
/// differences of g - h at 0, expected (0, negative).
struct Remark71Report {
  double b0 = 0.0;
  double anchor_mismatch = 0.0;  // |phi0(0,0) - phibar(0,0)|
  double d1 = 0.0;               // (g-h)'(0)
  double d2 = 0.0;               // (g-h)''(0)
};
Remark71Report remark71_check(double kappa, double b, double fd_step = 1e-3);

}  // namespace nearfield
