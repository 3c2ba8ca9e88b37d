#include "nearfield/target.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace nearfield {

GraphFunction quadratic_graph(double base, double coeff) {
  GraphFunction g;
  g.value = [base, coeff](const Vec& y) { return base + coeff * y.squaredNorm(); };
  g.gradient = [coeff](const Vec& y) { return Vec(2.0 * coeff * y); };
  g.hessian = [coeff](const Vec& y) {
    return Mat(2.0 * coeff * Mat::Identity(y.size(), y.size()));
  };
  return g;
}

GraphFunction plane_graph(double base, Vec slope) {
  GraphFunction g;
  g.value = [base, slope](const Vec& y) { return base + slope.dot(y); };
  g.gradient = [slope](const Vec&) { return slope; };
  g.hessian = [slope](const Vec&) {
    return Mat(Mat::Zero(slope.size(), slope.size()));
  };
  return g;
}

namespace {

// Signed height of the ray above the graph at parameter s.
inline double graph_residual(const SpacePoint& X, const Vec& lambda, const GraphFunction& psi,
                             double s) {
  const int n = X.dim();
  const Vec y = X.horizontal + s * lambda.head(n);
  return X.height + s * lambda[n] - psi.value(y);
}

Hit intersect_graph(const SpacePoint& X, const Vec& lambda, const GraphSurface& surf,
                    const RayOptions& opts) {
  const int n = X.dim();
  struct Root {
    double s;
    Vec y;
  };
  std::vector<Root> roots;

  double prev_s = 0.0;
  double prev_r = graph_residual(X, lambda, surf.psi, 0.0);
  for (int i = 1; i <= opts.scan_steps; ++i) {
    // Quadratically spaced scan: dense near the base point where the first
    // crossing sits, coarse toward s_max.
    const double frac = double(i) / double(opts.scan_steps);
    const double s = opts.s_max * frac * frac;
    const double r = graph_residual(X, lambda, surf.psi, s);
    if ((prev_r < 0.0) != (r < 0.0)) {
      // Bisection to tolerance, then a Newton polish.
      double lo = prev_s, hi = s, rlo = prev_r;
      for (int it = 0; it < opts.max_iter; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double rm = graph_residual(X, lambda, surf.psi, mid);
        if ((rlo < 0.0) == (rm < 0.0)) {
          lo = mid;
          rlo = rm;
        } else {
          hi = mid;
        }
        if (std::abs(rm) <= opts.tol) break;
      }
      double root = 0.5 * (lo + hi);
      for (int it = 0; it < 8; ++it) {
        const Vec y = X.horizontal + root * lambda.head(n);
        const double r0 = X.height + root * lambda[n] - surf.psi.value(y);
        const double dr = lambda[n] - surf.psi.gradient(y).dot(lambda.head(n));
        if (dr == 0.0) break;
        const double next = root - r0 / dr;
        if (next <= 0.0 || next > opts.s_max) break;
        root = next;
        if (std::abs(r0) <= opts.tol) break;
      }
      Vec y = X.horizontal + root * lambda.head(n);
      if (surf.domain.contains(y)) roots.push_back({root, std::move(y)});
    }
    prev_s = s;
    prev_r = r;
  }

  if (roots.empty()) {
    std::ostringstream os;
    os << "ray_target_intersection: no graph crossing within s_max=" << opts.s_max;
    throw RayMiss(os.str());
  }
  if (roots.size() > 1) {
    throw AmbiguousHit("ray_target_intersection: multiple in-domain graph crossings "
                       "(visibility assumption violated)");
  }
  Hit hit;
  hit.s = roots.front().s;
  hit.y = SpacePoint{roots.front().y, surf.psi.value(roots.front().y)};
  return hit;
}

Hit intersect_atoms(const SpacePoint& X, const Vec& lambda, const DiscreteAtoms& atoms,
                    const RayOptions& opts) {
  const int n = X.dim();
  int best = -1;
  double best_angle = std::numeric_limits<double>::infinity();
  double best_s = 0.0;
  for (size_t i = 0; i < atoms.points.size(); ++i) {
    const SpacePoint& Y = atoms.points[i];
    Vec d(n + 1);
    d.head(n) = Y.horizontal - X.horizontal;
    d[n] = Y.height - X.height;
    const double s = d.norm();
    if (s == 0.0) continue;
    const double cosang = std::clamp(d.dot(lambda) / s, -1.0, 1.0);
    const double ang = std::acos(cosang);
    if (ang < best_angle) {
      best_angle = ang;
      best = static_cast<int>(i);
      best_s = s;
    }
  }
  if (best < 0 || best_angle > opts.angular_tol)
    throw RayMiss("ray_target_intersection: no atom within the angular tolerance");
  Hit hit;
  hit.s = best_s;
  hit.y = atoms.points[best];
  hit.atom_index = best;
  return hit;
}

}  // namespace

Hit ray_target_intersection(const SpacePoint& X, const Vec& lambda, const Target& target,
                            const RayOptions& opts) {
  if (target.is_atoms()) return intersect_atoms(X, lambda, target.as_atoms(), opts);
  return intersect_graph(X, lambda, target.as_graph(), opts);
}

Stretch stretch_H(const Vec& v, const SpacePoint& X, const Target& target, double kappa,
                  const RayOptions& opts) {
  const auto dir = refraction_direction(v, kappa);
  const Hit hit = ray_target_intersection(X, dir.lambda, target, opts);
  Stretch st;
  st.s = hit.s;
  st.h = hit.s * dir.q;
  st.g = 1.0 / st.h;
  st.y = hit.y;
  return st;
}

double reflector_ratio(const Vec& v, const SpacePoint& X, const Target& target,
                       const RayOptions& opts) {
  const Vec lambda = reflection_direction(v);
  const Hit hit = ray_target_intersection(X, lambda, target, opts);
  return (1.0 + v.squaredNorm()) / hit.s;
}

double implicit_H_solve(const Vec& v, const SpacePoint& X, const GraphFunction& psi,
                        double kappa, double tol, int max_iter) {
  const auto dir = refraction_direction(v, kappa);
  const double ratio = (dir.q + kappa) / dir.q;
  auto residual = [&](double h) {
    return X.height + h * ratio - psi.value(X.horizontal - h * v);
  };

  // The base point sits below the graph, so residual(0) < 0; expand the upper
  // bracket by doubling.
  double lo = 0.0, rlo = residual(0.0);
  if (rlo > 0.0)
    throw ConvergenceFailure("implicit_H_solve: base point not below the target graph", rlo);
  double hi = 1.0, rhi = residual(hi);
  int expand = 0;
  while (rhi < 0.0) {
    lo = hi;
    rlo = rhi;
    hi *= 2.0;
    rhi = residual(hi);
    if (++expand > 80)
      throw ConvergenceFailure("implicit_H_solve: no sign change while expanding bracket", rhi);
  }

  double h = 0.5 * (lo + hi);
  for (int it = 0; it < max_iter; ++it) {
    const double r = residual(h);
    if (std::abs(r) <= tol) return h;
    const Vec y = X.horizontal - h * v;
    const double dr = ratio + psi.gradient(y).dot(v);
    double next = dr != 0.0 ? h - r / dr : h;
    if (r < 0.0) lo = h;
    else hi = h;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);  // safeguard
    h = next;
  }
  const double r = residual(h);
  if (std::abs(r) <= tol) return h;
  throw ConvergenceFailure("implicit_H_solve: did not reach tolerance", r);
}

std::vector<double> uniform_lambda_grid(int count, double lo, double hi) {
  std::vector<double> grid(count);
  for (int i = 0; i < count; ++i)
    grid[i] = lo + (hi - lo) * double(i) / double(count - 1);
  return grid;
}

WedgeCurve wedge_curve(const SpacePoint& X0, const SpacePoint& Y_bar, const SpacePoint& Y_hat,
                       const Target& target, double kappa, SurfaceKind mode,
                       const std::vector<double>& lambda_grid, const RayOptions& opts) {
  WedgeCurve curve;
  curve.base = X0;
  if (mode == SurfaceKind::Refractor) {
    curve.v_bar = gradient_at_base(X0, Y_bar, kappa);
    curve.v_hat = gradient_at_base(X0, Y_hat, kappa);
  } else {
    curve.v_bar = paraboloid_gradient_at_base(X0, Y_bar);
    curve.v_hat = paraboloid_gradient_at_base(X0, Y_hat);
  }
  curve.lambdas = lambda_grid;
  curve.points.reserve(lambda_grid.size());
  curve.directions.reserve(lambda_grid.size());
  std::vector<double> bad;
  for (double lam : lambda_grid) {
    const Vec v = (1.0 - lam) * curve.v_bar + lam * curve.v_hat;
    const Vec lambda = mode == SurfaceKind::Refractor
                           ? refraction_direction(v, kappa).lambda
                           : reflection_direction(v);
    try {
      const Hit hit = ray_target_intersection(X0, lambda, target, opts);
      curve.points.push_back(hit.y);
      curve.directions.push_back(lambda);
    } catch (const RayMiss&) {
      bad.push_back(lam);
    }
  }
  if (!bad.empty()) {
    std::ostringstream os;
    os << "wedge_curve: " << bad.size() << " of " << lambda_grid.size() << " rays missed the target";
    throw WedgeMiss(os.str(), std::move(bad));
  }
  return curve;
}

BiLipschitzReport v_Y_bilipschitz_check(const SpacePoint& X0, const Target& target, double kappa,
                                        const std::vector<std::pair<SpacePoint, SpacePoint>>& pairs) {
  (void)target;
  BiLipschitzReport rep;
  rep.c_low = std::numeric_limits<double>::infinity();
  rep.c_high = 0.0;
  for (const auto& [ybar, yhat] : pairs) {
    const double dy = distance(ybar, yhat);
    if (dy < 1e-14) continue;  // degenerate pair, skipped
    const Vec vbar = gradient_at_base(X0, ybar, kappa);
    const Vec vhat = gradient_at_base(X0, yhat, kappa);
    const double ratio = (vbar - vhat).norm() / dy;
    rep.c_low = std::min(rep.c_low, ratio);
    rep.c_high = std::max(rep.c_high, ratio);
    ++rep.used_pairs;
  }
  if (rep.used_pairs == 0) {
    rep.c_low = 0.0;
    rep.c_high = 0.0;
  }
  return rep;
}

}  // namespace nearfield
