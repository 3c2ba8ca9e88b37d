#include "nearfield/regularity.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace nearfield {

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Regular: return "regular";
    case Verdict::NotRegular: return "not_regular";
    case Verdict::Inconclusive: return "inconclusive";
  }
  return "?";
}

RegularityReport classify_graph_target(const GraphFunction& psi, double kappa,
                                       Orientation orientation, const Vec& y0) {
  const double p = psi.value(y0);
  if (!(p > 0.0))
    throw std::invalid_argument("classify_graph_target: psi(y0) must be positive in this frame");
  const Mat h = psi.hessian(y0);
  if ((h - h.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw std::invalid_argument("classify_graph_target: Hessian evaluator is not symmetric");

  Eigen::SelfAdjointEigenSolver<Mat> es(p * h);
  const double ratio = kappa / (1.0 - kappa);

  RegularityReport rep;
  rep.method = "closed_form";
  if (orientation == Orientation::Above) {
    rep.margin = es.eigenvalues().minCoeff() - ratio;
  } else {
    rep.margin = ratio - es.eigenvalues().maxCoeff();
  }
  rep.verdict = rep.margin > 0.0 ? Verdict::Regular : Verdict::NotRegular;
  if (rep.verdict == Verdict::NotRegular) {
    RegularityWitness w;
    w.x = y0;
    w.value = rep.margin;
    rep.witness = w;
  }
  return rep;
}

Mat G_hessian_closed_form(const GraphFunction& psi, double kappa, int n) {
  const Vec origin = Vec::Zero(n);
  const double p = psi.value(origin);
  const Mat h = psi.hessian(origin);
  return (1.0 - kappa) / p *
         (kappa / (1.0 - kappa) * Mat::Identity(n, n) - p * h);
}

RegularityReport aw_condition_numeric(const Target& target, const SpacePoint& X, double kappa,
                                      SurfaceKind mode, const std::vector<Vec>& v_grid,
                                      const std::vector<Vec>& xi_grid, const AwOptions& opts) {
  auto profile = [&](const Vec& v) {
    if (mode == SurfaceKind::Refractor) return stretch_H(v, X, target, kappa, opts.ray).g;
    return reflector_ratio(v, X, target, opts.ray);
  };

  RegularityReport rep;
  rep.method = "finite_difference";
  rep.margin = -std::numeric_limits<double>::infinity();
  const double h = opts.fd_step;
  for (const Vec& v : v_grid) {
    for (const Vec& xi_raw : xi_grid) {
      const Vec xi = xi_raw.normalized();
      double d2;
      try {
        // Five-point central second difference along xi.
        const double f2p = profile(v + 2.0 * h * xi);
        const double f1p = profile(v + h * xi);
        const double f0 = profile(v);
        const double f1m = profile(v - h * xi);
        const double f2m = profile(v - 2.0 * h * xi);
        d2 = (-f2p + 16.0 * f1p - 30.0 * f0 + 16.0 * f1m - f2m) / (12.0 * h * h);
      } catch (const RayMiss&) {
        rep.verdict = Verdict::Inconclusive;
        RegularityWitness w;
        w.x = v;
        rep.witness = w;
        rep.margin = std::numeric_limits<double>::quiet_NaN();
        return rep;
      }
      if (d2 > rep.margin) {
        rep.margin = d2;
        RegularityWitness w;
        w.x = v;
        w.value = d2;
        rep.witness = w;
      }
    }
  }
  rep.verdict = rep.margin < 0.0 ? Verdict::Regular : Verdict::NotRegular;
  if (rep.verdict == Verdict::Regular) rep.witness.reset();
  return rep;
}

namespace {

double support_height(SurfaceMode mode, const Vec& x, const SpacePoint& Z, const SpacePoint& Y,
                      double kappa) {
  if (is_refractor(mode)) return ellipsoid_height(x, ellipsoid_through(Z, Y, kappa), kappa);
  return paraboloid_eval(x, paraboloid_through(Z, Y)).height;
}

}  // namespace

RegularityReport min_condition_check(const Target& target, const SpacePoint& Z,
                                     const SpacePoint& Y_bar, const SpacePoint& Y_hat,
                                     double kappa, SurfaceMode mode,
                                     const std::vector<Vec>& x_samples,
                                     const MinConditionOptions& opts) {
  RegularityReport rep;
  rep.method = "sampling";
  const double dy = distance(Y_bar, Y_hat);
  if (dy < 1e-14) {
    rep.verdict = Verdict::Inconclusive;
    rep.method = "degenerate";
    rep.margin = 0.0;
    return rep;
  }

  const SurfaceKind kind = is_refractor(mode) ? SurfaceKind::Refractor : SurfaceKind::Reflector;
  const WedgeCurve curve =
      wedge_curve(Z, Y_bar, Y_hat, target, kappa, kind, opts.lambda_grid, opts.ray);

  double c1 = std::numeric_limits<double>::infinity();
  std::optional<RegularityWitness> worst;
  for (size_t k = 0; k < curve.points.size(); ++k) {
    const SpacePoint& ylam = curve.points[k];
    for (const Vec& x : x_samples) {
      const double dx = (x - Z.horizontal).norm();
      if (dx < opts.min_x_distance) continue;
      const double lhs_piece = support_height(mode, x, Z, ylam, kappa);
      const double hb = support_height(mode, x, Z, Y_bar, kappa);
      const double hh = support_height(mode, x, Z, Y_hat, kappa);
      double numerator;
      switch (mode) {
        case SurfaceMode::RefractorAbove: numerator = lhs_piece - std::min(hb, hh); break;
        case SurfaceMode::RefractorBelow: numerator = std::max(hb, hh) - lhs_piece; break;
        case SurfaceMode::ReflectorBelow: numerator = std::max(hb, hh) - lhs_piece; break;
        case SurfaceMode::ReflectorAbove: numerator = lhs_piece - std::min(hb, hh); break;
        default: numerator = 0.0;
      }
      const double q = numerator / (dy * dy * dx * dx);
      if (q < c1) {
        c1 = q;
        RegularityWitness w;
        w.x = x;
        w.y = ylam;
        w.lambda = curve.lambdas[k];
        w.value = numerator;
        worst = w;
      }
    }
  }

  rep.c1_fit = c1;
  rep.margin = c1;
  rep.verdict = c1 > 0.0 ? Verdict::Regular : Verdict::NotRegular;
  if (rep.verdict == Verdict::NotRegular) rep.witness = worst;
  return rep;
}

InclusionReport ellipsoid_union_inclusion_check(const SpacePoint& X0, const SpacePoint& Y_bar,
                                                const SpacePoint& Y_hat,
                                                const std::vector<double>& lambdas,
                                                const Target& target, double kappa,
                                                int n_samples, std::mt19937_64& rng, double tol,
                                                const std::vector<double>& midpoint_grid) {
  InclusionReport rep;
  const Vec v_bar = gradient_at_base(X0, Y_bar, kappa);
  const Vec v_hat = gradient_at_base(X0, Y_hat, kappa);
  const int n = X0.dim();

  auto stretch_at = [&](const Vec& v) { return stretch_H(v, X0, target, kappa); };

  // 1/H midpoint concavity over the lambda grid (skipping unresolvable rays
  // on discrete targets).
  const double g_bar = stretch_at(v_bar).g;
  const double g_hat = stretch_at(v_hat).g;
  rep.midpoint_margin = std::numeric_limits<double>::infinity();
  for (double lam : midpoint_grid) {
    const Vec v = (1.0 - lam) * v_bar + lam * v_hat;
    double g;
    try {
      g = stretch_at(v).g;
    } catch (const RayMiss&) {
      continue;
    }
    const double margin = g - ((1.0 - lam) * g_bar + lam * g_hat);
    rep.midpoint_margin = std::min(rep.midpoint_margin, margin);
  }
  rep.midpoint_ok = rep.midpoint_margin >= -tol;

  // Boundary sampling of E(Y_lambda) against the solid union.
  const double c_bar = focal_parameter(X0, Y_bar, kappa);
  const double c_hat = focal_parameter(X0, Y_hat, kappa);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double omk2 = 1.0 - kappa * kappa;

  rep.worst_slack = -std::numeric_limits<double>::infinity();
  for (double lam : lambdas) {
    const Vec v = (1.0 - lam) * v_bar + lam * v_hat;
    SpacePoint ylam;
    try {
      ylam = stretch_at(v).y;
    } catch (const RayMiss&) {
      continue;
    }
    const double b = focal_parameter(X0, ylam, kappa);
    const double a_v = b / omk2;
    const double a_h = b / std::sqrt(omk2);
    const double center_h = ylam.height - kappa * b / omk2;
    for (int k = 0; k < n_samples; ++k) {
      const double t = unif(rng) * M_PI;
      Vec w(n);
      do {
        for (int i = 0; i < n; ++i) w[i] = gauss(rng);
      } while (w.norm() < 1e-12);
      w.normalize();
      SpacePoint Xs{ylam.horizontal + a_h * std::sin(t) * w, center_h + a_v * std::cos(t)};
      const double slack = std::min(focal_parameter(Xs, Y_bar, kappa) - c_bar,
                                    focal_parameter(Xs, Y_hat, kappa) - c_hat);
      ++rep.samples_checked;
      if (slack > rep.worst_slack) {
        rep.worst_slack = slack;
        if (slack > tol) {
          RegularityWitness wit;
          wit.x = Xs.horizontal;
          wit.y = ylam;
          wit.lambda = lam;
          wit.value = slack;
          rep.witness = wit;
        }
      }
      if (slack > tol) ++rep.boundary_violations;
    }
  }
  return rep;
}

TubeInclusionReport tube_inclusion_experiment(const PiecewiseSurface& surface,
                                              const SourceDensity& source, const Vec& x_bar,
                                              const Vec& x_hat, const Target& wedge_target,
                                              double kappa, const TubeOptions& opts) {
  if (surface.mode != SurfaceMode::RefractorAbove)
    throw std::invalid_argument("tube_inclusion_experiment: needs a RefractorAbove surface");
  TubeInclusionReport rep;

  const EvalResult ebar = evaluate(surface, x_bar);
  const EvalResult ehat = evaluate(surface, x_hat);
  const SpacePoint Y_bar = surface.foci[ebar.active_index];
  const SpacePoint Y_hat = surface.foci[ehat.active_index];
  const double dY = distance(Y_bar, Y_hat);
  const double dx = (x_bar - x_hat).norm();
  rep.ratio = dx > 0.0 ? dY / dx : 0.0;
  if (ebar.active_index == ehat.active_index || dx == 0.0 || rep.ratio < opts.ratio_threshold)
    return rep;  // precondition unmet, inconclusive
  rep.applicable = true;

  // Crossing of the two supporting piece heights along the segment.
  const EllipsoidPiece pbar{Y_bar, surface.b[ebar.active_index]};
  const EllipsoidPiece phat{Y_hat, surface.b[ehat.active_index]};
  auto height_gap = [&](double t) {
    const Vec x = (1.0 - t) * x_bar + t * x_hat;
    return ellipsoid_height(x, pbar, kappa) - ellipsoid_height(x, phat, kappa);
  };
  double lo = 0.0, hi = 1.0;
  double glo = height_gap(0.0);
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double gm = height_gap(mid);
    if ((glo <= 0.0) == (gm <= 0.0)) {
      lo = mid;
      glo = gm;
    } else {
      hi = mid;
    }
  }
  const double t0 = 0.5 * (lo + hi);
  rep.x0 = (1.0 - t0) * x_bar + t0 * x_hat;
  const SpacePoint X0{rep.x0, evaluate(surface, rep.x0).height};

  const WedgeCurve curve =
      wedge_curve(X0, Y_bar, Y_hat, wedge_target, kappa, SurfaceKind::Refractor,
                  uniform_lambda_grid(opts.curve_samples, 0.25, 0.75), opts.ray);

  rep.mu = std::pow(dY, 1.5) * std::sqrt(dx);

  // Atoms inside the mu-tube of the wedge band, and the smallest ball around
  // x0 whose cells reach all of them.
  const auto table_winner = [&]() {
    std::vector<int> w(source.grid.cell_count());
    for (int c = 0; c < source.grid.cell_count(); ++c)
      w[c] = evaluate(surface, source.grid.centers[c]).active_index;
    return w;
  }();

  double r_needed = 0.0;
  bool all_reachable = true;
  for (int a = 0; a < surface.piece_count(); ++a) {
    double dist_to_curve = std::numeric_limits<double>::infinity();
    for (const SpacePoint& p : curve.points)
      dist_to_curve = std::min(dist_to_curve, distance(surface.foci[a], p));
    if (dist_to_curve > rep.mu) continue;
    ++rep.tube_atoms;
    double r = std::numeric_limits<double>::infinity();
    for (int c = 0; c < source.grid.cell_count(); ++c)
      if (table_winner[c] == a) r = std::min(r, (source.grid.centers[c] - rep.x0).norm());
    if (!std::isfinite(r)) {
      all_reachable = false;
      continue;
    }
    r_needed = std::max(r_needed, r);
  }
  rep.inclusion_holds = all_reachable;
  rep.m_cal = r_needed * std::sqrt(dY / dx);

  // Support-excess inequality with measured constants: the base-change gap at x0,
  // the Lipschitz-in-Y rate, and the fitted C1 from the synthetic condition.
  const double crossing_height = ellipsoid_height(rep.x0, pbar, kappa);
  const double e0 = crossing_height - X0.height;
  const double c_claim = e0 / (dY * dx);

  const double radius =
      0.5 * (source.grid.hi - source.grid.lo).norm();
  std::vector<Vec> xs;
  for (int c = 0; c < source.grid.cell_count(); c += std::max(1, source.grid.cell_count() / 64)) {
    if ((source.grid.centers[c] - rep.x0).norm() <= radius) xs.push_back(source.grid.centers[c]);
  }
  MinConditionOptions mopts;
  mopts.ray = opts.ray;
  const RegularityReport mc = min_condition_check(wedge_target, X0, Y_bar, Y_hat, kappa,
                                                  SurfaceMode::RefractorAbove, xs, mopts);
  const double c1 = std::max(mc.c1_fit, 0.0);

  double c_y = 0.0;
  const std::vector<double> lam_check = uniform_lambda_grid(9, 0.25, 0.75);
  std::vector<SpacePoint> ycheck;
  for (double lam : lam_check) {
    const Vec v = (1.0 - lam) * curve.v_bar + lam * curve.v_hat;
    ycheck.push_back(stretch_H(v, X0, wedge_target, kappa, opts.ray).y);
  }
  for (const Vec& x : xs) {
    const double dxx = (x - rep.x0).norm();
    if (dxx < 1e-9) continue;
    for (size_t k = 0; k < ycheck.size(); ++k) {
      for (int a = 0; a < surface.piece_count(); ++a) {
        const double num = std::abs(support_height(surface.mode, x, X0, ycheck[k], kappa) -
                                    support_height(surface.mode, x, X0, surface.foci[a], kappa));
        const double den = distance(ycheck[k], surface.foci[a]) * dxx;
        if (den > 1e-12) c_y = std::max(c_y, num / den);
      }
    }
  }
  const double c_struct = std::max(std::abs(c_claim), c_y);

  rep.support_excess_margin = -std::numeric_limits<double>::infinity();
  for (const Vec& x : xs) {
    const double dxx = (x - rep.x0).norm();
    const double ux = evaluate(surface, x).height;
    for (size_t k = 0; k < ycheck.size(); ++k) {
      for (int a = 0; a < surface.piece_count(); ++a) {
        const double lhs = ux - support_height(surface.mode, x, X0, surface.foci[a], kappa);
        const double rhs = c_struct * dY * dx +
                           c_struct * distance(ycheck[k], surface.foci[a]) * dxx -
                           c1 * dY * dY * dxx * dxx;
        rep.support_excess_margin = std::max(rep.support_excess_margin, lhs - rhs);
      }
    }
  }
  return rep;
}

TubeMeasureReport tube_measure_check(const GraphSurface& graph, const SpacePoint& Z,
                                     const SpacePoint& Y_bar, const SpacePoint& Y_hat,
                                     double mu_radius, double kappa, int quad_cells,
                                     int curve_samples) {
  TubeMeasureReport rep;
  const double dy = distance(Y_bar, Y_hat);
  const Target target = Target::graph(graph);
  if (dy < 1e-14) {
    // Degenerate band: report the raw tube measure, the ratio is undefined.
    rep.bound_ratio = std::numeric_limits<double>::quiet_NaN();
  }
  std::vector<SpacePoint> band;
  if (dy < 1e-14) {
    band.push_back(Y_bar);
  } else {
    const WedgeCurve curve = wedge_curve(Z, Y_bar, Y_hat, target, kappa, SurfaceKind::Refractor,
                                         uniform_lambda_grid(curve_samples, 0.25, 0.75));
    band = curve.points;
  }

  const auto grid = QuadratureGrid::tensor(graph.domain, quad_cells);
  const int n = graph.domain.dim();
  for (int c = 0; c < grid.cell_count(); ++c) {
    const Vec& y = grid.centers[c];
    const SpacePoint p{y, graph.psi.value(y)};
    double dist = std::numeric_limits<double>::infinity();
    for (const SpacePoint& q : band) dist = std::min(dist, distance(p, q));
    if (dist <= mu_radius) rep.measured += graph.density(y) * grid.volumes[c];
  }
  if (dy >= 1e-14)
    rep.bound_ratio = rep.measured / (std::pow(mu_radius, n - 1) * dy);
  return rep;
}

double holder_exponent(int n, double q) {
  if (n < 1) throw std::domain_error("holder_exponent: n must be a positive integer");
  if (!(q >= 1.0)) throw std::domain_error("holder_exponent: q must satisfy q >= 1");
  if (n > 1 && !(q < double(n) / double(n - 1)))
    throw std::domain_error("holder_exponent: q must satisfy q < n/(n-1)");
  // Single-fraction form of (n/2q - (n-1)/2) / (1 + 3(n-1)/2 + n/2q).
  return (n - q * (n - 1)) / (2.0 * q + 3.0 * q * (n - 1) + n);
}

}  // namespace nearfield
