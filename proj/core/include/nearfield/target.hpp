#pragma once

#include <functional>
#include <utility>
#include <variant>
#include <vector>

#include "nearfield/optics.hpp"

namespace nearfield {

/// A twice differentiable graph function psi with analytic gradient and
/// Hessian evaluators. Handles must be re-entrant.
struct GraphFunction {
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> gradient;
  std::function<Mat(const Vec&)> hessian;
};

/// psi(y) = base + coeff |y|^2.
GraphFunction quadratic_graph(double base, double coeff);
/// psi(y) = base + slope . y.
GraphFunction plane_graph(double base, Vec slope);

/// Prescribed receiver as finitely many weighted atoms.
struct DiscreteAtoms {
  std::vector<SpacePoint> points;
  std::vector<double> weights;
};

/// Prescribed receiver as the graph of psi over a domain in R^n, carrying a
/// density with respect to the horizontal coordinate.
struct GraphSurface {
  GraphFunction psi;
  std::function<double(const Vec&)> density;
  Omega domain;  // Omega*
};

struct Target {
  std::variant<DiscreteAtoms, GraphSurface> data;

  static Target atoms(DiscreteAtoms a) { return Target{std::move(a)}; }
  static Target graph(GraphSurface g) { return Target{std::move(g)}; }
  bool is_atoms() const { return std::holds_alternative<DiscreteAtoms>(data); }
  const DiscreteAtoms& as_atoms() const { return std::get<DiscreteAtoms>(data); }
  const GraphSurface& as_graph() const { return std::get<GraphSurface>(data); }
};

struct RayOptions {
  double s_max = 1e4;
  int scan_steps = 256;     // coarse sign scan before bracketing
  double tol = 1e-12;       // graph residual tolerance
  int max_iter = 100;
  double angular_tol = 1e-9;  // atom matching, radians
};

struct Hit {
  double s = 0.0;
  SpacePoint y;
  int atom_index = -1;  // discrete targets only
};

/// Intersection Y = X + s Lambda of a ray with the target. Graph targets are
/// solved by safeguarded Newton bracketed by a sign scan; a hit counts only if
/// its horizontal lands inside the target domain, and two in-domain crossings
/// raise AmbiguousHit. Discrete targets match the ray direction against the
/// atom directions within an angular tolerance.
Hit ray_target_intersection(const SpacePoint& X, const Vec& lambda, const Target& target,
                            const RayOptions& opts = {});

struct Stretch {
  double h = 0.0;  // H(v,X) = s_X(Lambda(v)) Q(v)
  double g = 0.0;  // 1/H
  double s = 0.0;
  SpacePoint y;
};

/// Refractor stretch function H(v,X) = s_X(Lambda(v)) Q(v) and its reciprocal.
Stretch stretch_H(const Vec& v, const SpacePoint& X, const Target& target, double kappa,
                  const RayOptions& opts = {});

/// Reflector analogue used by the AW condition: (1 + |v|^2)/s_X(Lambda(v)).
double reflector_ratio(const Vec& v, const SpacePoint& X, const Target& target,
                       const RayOptions& opts = {});

/// Solves x_{n+1} + H (Q+kappa)/Q = psi(x - H v) for H directly; independent
/// of the ray-intersection path. Residual of the implicit equation <= tol.
double implicit_H_solve(const Vec& v, const SpacePoint& X, const GraphFunction& psi,
                        double kappa, double tol = 1e-12, int max_iter = 100);

/// Wedge curve [Ybar, Yhat]_{X0}: directions v(lambda) interpolate the base
/// gradients of the two pieces through X0, and each sample re-intersects the
/// target.
struct WedgeCurve {
  SpacePoint base;
  Vec v_bar, v_hat;
  std::vector<double> lambdas;
  std::vector<SpacePoint> points;
  std::vector<Vec> directions;  // Lambda(v(lambda)), unit vectors in R^{n+1}
};

std::vector<double> uniform_lambda_grid(int count = 65, double lo = 0.0, double hi = 1.0);

WedgeCurve wedge_curve(const SpacePoint& X0, const SpacePoint& Y_bar, const SpacePoint& Y_hat,
                       const Target& target, double kappa, SurfaceKind mode,
                       const std::vector<double>& lambda_grid = uniform_lambda_grid(),
                       const RayOptions& opts = {});

/// Empirical extremes of |v_bar - v_hat| / |Ybar - Yhat| over sample pairs on
/// the target, all viewed from X0. Degenerate pairs are skipped.
struct BiLipschitzReport {
  double c_low = 0.0;
  double c_high = 0.0;
  int used_pairs = 0;
};
BiLipschitzReport v_Y_bilipschitz_check(const SpacePoint& X0, const Target& target, double kappa,
                                        const std::vector<std::pair<SpacePoint, SpacePoint>>& pairs);

}  // namespace nearfield
