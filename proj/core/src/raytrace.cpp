#include "nearfield/raytrace.hpp"

#include <algorithm>
#include <cmath>

namespace nearfield {

Vec snell_refract(const Vec& normal, double kappa) {
  const int m = static_cast<int>(normal.size());
  const double en = normal[m - 1];  // e_{n+1} . N
  const double delta = -kappa * en + std::sqrt(1.0 + kappa * kappa * (en * en - 1.0));
  Vec lambda = delta * normal;
  lambda[m - 1] += kappa;
  return lambda;
}

Vec mirror_reflect(const Vec& normal) {
  const int m = static_cast<int>(normal.size());
  Vec lambda = -2.0 * normal[m - 1] * normal;
  lambda[m - 1] += 1.0;
  return lambda;
}

namespace {

// Distance of the line {P + t d} (|d| = 1) to the point Q.
double line_point_distance(const SpacePoint& P, const Vec& d, const SpacePoint& Q) {
  const int n = P.dim();
  Vec w(n + 1);
  w.head(n) = Q.horizontal - P.horizontal;
  w[n] = Q.height - P.height;
  const double t = w.dot(d);
  return (w - t * d).norm();
}

}  // namespace

BundleResult trace_bundle(const PiecewiseSurface& surface, const std::vector<Vec>& origins,
                          double tie_eps) {
  BundleResult out;
  out.rays.reserve(origins.size());
  out.summary.atom_fractions.assign(surface.piece_count(), 0.0);
  double sum = 0.0;
  for (const Vec& x : origins) {
    const EvalResult ev = evaluate(surface, x, tie_eps);
    TraceResult r;
    r.origin = x;
    r.hit = SpacePoint{x, ev.height};
    r.atom = ev.active_index;
    r.on_tie = ev.near_tie;

    const Vec grad = surface.piece_gradient(ev.active_index, x);
    const int n = static_cast<int>(x.size());
    Vec normal(n + 1);
    normal.head(n) = -grad;
    normal[n] = 1.0;
    normal /= std::sqrt(1.0 + grad.squaredNorm());
    r.exit = is_refractor(surface.mode) ? snell_refract(normal, surface.kappa)
                                        : mirror_reflect(normal);
    r.focus_distance = line_point_distance(r.hit, r.exit, surface.foci[ev.active_index]);

    if (r.on_tie) {
      ++out.summary.skipped_ties;
    } else {
      out.summary.max_distance = std::max(out.summary.max_distance, r.focus_distance);
      sum += r.focus_distance;
      ++out.summary.traced;
      out.summary.atom_fractions[r.atom] += 1.0;
    }
    out.rays.push_back(std::move(r));
  }
  if (out.summary.traced > 0) {
    out.summary.mean_distance = sum / out.summary.traced;
    for (double& f : out.summary.atom_fractions) f /= out.summary.traced;
  }
  return out;
}

Fig3Report counterexample_fig3() {
  const double kappa = 2.0 / 3.0;
  const SpacePoint P = SpacePoint::at(0.0, 4.70456);
  const SpacePoint Y1 = SpacePoint::at(0.03, 5.0);
  const SpacePoint Y2 = SpacePoint::at(-0.03, 5.0);
  const SpacePoint Y3 = SpacePoint::at(0.0, 10.0);

  Fig3Report rep;
  rep.c1 = focal_parameter(P, Y1, kappa);
  rep.c2 = focal_parameter(P, Y2, kappa);
  const EllipsoidPiece e1{Y1, rep.c1};
  const EllipsoidPiece e2{Y2, rep.c2};
  const EllipsoidPiece e3 = ellipsoid_through(P, Y3, kappa);

  auto phi = [&](const EllipsoidPiece& piece, double x, bool& ok) {
    Vec v(1);
    v << x;
    try {
      ok = true;
      return ellipsoid_height(v, piece, kappa);
    } catch (const OutOfDomain&) {
      ok = false;
      return 0.0;
    }
  };
  // R = min over the defined small pieces.
  auto R = [&](double x, bool& ok) {
    bool ok1, ok2;
    const double h1 = phi(e1, x, ok1);
    const double h2 = phi(e2, x, ok2);
    ok = ok1 || ok2;
    if (ok1 && ok2) return std::min(h1, h2);
    return ok1 ? h1 : h2;
  };

  bool ok;
  rep.big_through_residual = phi(e3, 0.0, ok) - P.height;

  // Local support of the big ellipsoid on |x| <= 0.01; the touching point
  // itself sits at machine precision.
  rep.local_min_gap = std::numeric_limits<double>::infinity();
  for (int i = -100; i <= 100; ++i) {
    const double x = 1e-4 * i;
    bool okr, ok3;
    const double r = R(x, okr);
    const double h3 = phi(e3, x, ok3);
    if (!okr || !ok3) continue;
    rep.local_min_gap = std::min(rep.local_min_gap, h3 - r);
  }
  rep.local_support_ok = rep.local_min_gap >= -1e-12;

  // Global failure scan on [-0.2, 0.2] at step 1e-3.
  for (int i = -200; i <= 200; ++i) {
    const double x = 1e-3 * i;
    bool okr, ok3;
    const double r = R(x, okr);
    const double h3 = phi(e3, x, ok3);
    if (!okr || !ok3) continue;
    const double gap = r - h3;
    if (gap > 1e-12) {
      rep.violations.push_back({x, gap});
      if (gap > rep.witness_gap) {
        rep.witness_gap = gap;
        rep.witness_x = x;
      }
    }
    if (std::abs(x - 0.15) < 0.5e-3) rep.gap_at_canonical = gap;
  }
  rep.global_fails = !rep.violations.empty();
  return rep;
}

Remark71Report remark71_check(double kappa, double b, double fd_step) {
  const double omk2 = 1.0 - kappa * kappa;
  if (!(b * b > omk2))
    throw std::domain_error("remark71_check: requires b^2 > 1 - kappa^2");

  Remark71Report rep;
  rep.b0 = (kappa * b + std::sqrt(b * b - omk2)) / (1.0 + kappa);

  Vec ybar(2), yc(2);
  ybar << 0.0, -1.0;
  yc << 0.0, 0.0;
  const EllipsoidPiece outer{SpacePoint{ybar, 0.0}, b};
  const EllipsoidPiece centered{SpacePoint{yc, 0.0}, rep.b0};

  auto g = [&](double x) {
    Vec p(2);
    p << x, 0.0;
    return ellipsoid_height(p, centered, kappa);
  };
  auto h = [&](double x) {
    Vec p(2);
    p << x, 0.0;
    return ellipsoid_height(p, outer, kappa);
  };
  rep.anchor_mismatch = std::abs(g(0.0) - h(0.0));

  const double s = fd_step;
  auto diff = [&](double x) { return g(x) - h(x); };
  rep.d1 = (diff(s) - diff(-s)) / (2.0 * s);
  rep.d2 = (diff(s) - 2.0 * diff(0.0) + diff(-s)) / (s * s);
  return rep;
}

}  // namespace nearfield
