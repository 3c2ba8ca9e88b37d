#include "doctest.h"

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "fd_oracle.hpp"
#include "nearfield/target.hpp"

using namespace nearfield;

namespace {

Vec vec1(double x) {
  Vec v(1);
  v << x;
  return v;
}

Vec vec2(double x, double y) {
  Vec v(2);
  v << x, y;
  return v;
}

Target flat_graph_target(int n, double height, double half_width = 6.0) {
  GraphSurface g;
  g.psi = quadratic_graph(height, 0.0);
  g.density = [](const Vec&) { return 1.0; };
  g.domain = Omega::box(Vec::Constant(n, -half_width), Vec::Constant(n, half_width));
  return Target::graph(std::move(g));
}

Target quadratic_target(int n, double base = 4.0, double coeff = 0.25, double half_width = 2.0) {
  GraphSurface g;
  g.psi = quadratic_graph(base, coeff);
  g.density = [](const Vec&) { return 1.0; };
  g.domain = Omega::box(Vec::Constant(n, -half_width), Vec::Constant(n, half_width));
  return Target::graph(std::move(g));
}

}  // namespace

TEST_CASE("ray-target intersection: plane, atoms, quadratic axis") {
  const SpacePoint X = SpacePoint::at(0.0, 0.0);
  Vec up(2);
  up << 0.0, 1.0;

  const Hit plane_hit = ray_target_intersection(X, up, flat_graph_target(1, 4.0));
  CHECK(plane_hit.s == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(plane_hit.y.height == doctest::Approx(4.0));

  // Atom recovered through the gradient round trip.
  const double kappa = 2.0 / 3.0;
  DiscreteAtoms atoms;
  atoms.points = {SpacePoint::at(0.03, 5.0), SpacePoint::at(-0.03, 5.0)};
  atoms.weights = {0.5, 0.5};
  const Target atom_target = Target::atoms(atoms);
  const Vec v = gradient_at_base(X, atoms.points[0], kappa);
  const auto dir = refraction_direction(v, kappa);
  const Hit atom_hit = ray_target_intersection(X, dir.lambda, atom_target);
  CHECK(atom_hit.atom_index == 0);
  CHECK(atom_hit.s == doctest::Approx(distance(X, atoms.points[0])).epsilon(1e-9));

  const Hit quad_hit = ray_target_intersection(X, up, quadratic_target(1));
  CHECK(quad_hit.s == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("ray-target intersection: miss and ambiguity") {
  const SpacePoint X = SpacePoint::at(0.0, 0.0);
  Vec down(2);
  down << 0.0, -1.0;
  CHECK_THROWS_AS(ray_target_intersection(X, down, flat_graph_target(1, 4.0)), RayMiss);

  // A slanted ray against a quadratic graph crosses twice; with an enormous
  // target domain both crossings are in-domain and the hit is ambiguous.
  const auto dir = refraction_direction(vec1(0.4), 0.5);
  CHECK_THROWS_AS(
      ray_target_intersection(X, dir.lambda, quadratic_target(1, 4.0, 0.25, 1e4)),
      AmbiguousHit);
  // With a realistic domain the far crossing is filtered out.
  const Hit h = ray_target_intersection(X, dir.lambda, quadratic_target(1));
  CHECK(h.s > 0.0);
  CHECK(std::abs(h.y.height - (4.0 + 0.25 * h.y.horizontal.squaredNorm())) <= 1e-9);

  Target far_atoms = Target::atoms({{SpacePoint::at(3.0, 5.0)}, {1.0}});
  CHECK_THROWS_AS(ray_target_intersection(X, dir.lambda, far_atoms), RayMiss);
}

TEST_CASE("stretch function H") {
  const SpacePoint X = SpacePoint::at(0.0, 0.0);
  const auto flat = flat_graph_target(1, 4.0);
  const Stretch st = stretch_H(Vec::Zero(1), X, flat, 0.5);
  CHECK(st.h == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(st.g * st.h == doctest::Approx(1.0).epsilon(1e-14));

  Target atom = Target::atoms({{SpacePoint::at(0.0, 5.0)}, {1.0}});
  const Stretch sa = stretch_H(Vec::Zero(1), X, atom, 2.0 / 3.0);
  CHECK(sa.h == doctest::Approx(5.0 / 3.0).epsilon(1e-12));

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uv(-0.5, 0.5);
  for (int it = 0; it < 50; ++it) {
    const Vec v = vec1(uv(rng));
    const Stretch s = stretch_H(v, X, quadratic_target(1), 0.5);
    CHECK(s.h > 0.0);
    CHECK(s.g == doctest::Approx(1.0 / s.h));
  }
}

TEST_CASE("implicit H equation agrees with the ray path") {
  const SpacePoint X = SpacePoint::at(0.0, 0.0);
  const GraphFunction flat = quadratic_graph(4.0, 0.0);
  CHECK(implicit_H_solve(Vec::Zero(1), X, flat, 0.5) == doctest::Approx(2.0).epsilon(1e-12));

  const GraphFunction quad = quadratic_graph(4.0, 0.25);
  CHECK(implicit_H_solve(Vec::Zero(1), X, quad, 0.5) == doctest::Approx(2.0).epsilon(1e-12));

  std::mt19937_64 rng(13);
  for (int n = 1; n <= 2; ++n) {
    // Domain wide enough that every sampled ray lands inside it.
    const Target target = quadratic_target(n, 4.0, 0.25, 4.0);
    const SpacePoint Xn{Vec::Zero(n), 0.0};
    for (int it = 0; it < 50; ++it) {
      Vec v(n);
      for (int i = 0; i < n; ++i)
        v[i] = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
      const double kappa = std::uniform_real_distribution<double>(0.3, 0.7)(rng);
      const double h_imp = implicit_H_solve(v, Xn, quad, kappa);
      const double h_ray = stretch_H(v, Xn, target, kappa).h;
      CHECK(std::abs(h_imp - h_ray) <= 1e-9 * std::abs(h_ray));

      // Residual of the implicit equation at the reported root.
      const auto dir = refraction_direction(v, kappa);
      const double resid =
          Xn.height + h_imp * (dir.q + kappa) / dir.q - quad.value(Xn.horizontal - h_imp * v);
      CHECK(std::abs(resid) <= 1e-12);
    }
  }
}

TEST_CASE("wedge curve: endpoints, symmetry, degenerate pair") {
  const double kappa = 0.5;
  const SpacePoint X0 = SpacePoint::at(0.0, 0.0);
  const Target target = quadratic_target(1);

  // Pick endpoints by shooting rays first, so they lie on the graph.
  const SpacePoint Ybar = stretch_H(vec1(-0.3), X0, target, kappa).y;
  const SpacePoint Yhat = stretch_H(vec1(0.3), X0, target, kappa).y;

  const WedgeCurve curve = wedge_curve(X0, Ybar, Yhat, target, kappa, SurfaceKind::Refractor);
  CHECK(curve.points.size() == 65);
  CHECK(distance(curve.points.front(), Ybar) <= 1e-8);
  CHECK(distance(curve.points.back(), Yhat) <= 1e-8);
  // Symmetric data: the middle sample sits on the axis.
  CHECK(std::abs(curve.points[32].horizontal[0]) <= 1e-10);
  for (const SpacePoint& p : curve.points)
    CHECK(std::abs(p.height - (4.0 + 0.25 * p.horizontal.squaredNorm())) <= 1e-9);

  const WedgeCurve constant = wedge_curve(X0, Ybar, Ybar, target, kappa, SurfaceKind::Refractor);
  for (const SpacePoint& p : constant.points) CHECK(distance(p, Ybar) <= 1e-9);

  // Atom targets only resolve the endpoint rays: the partial-curve error
  // lists the missing lambdas.
  DiscreteAtoms atoms;
  atoms.points = {Ybar, Yhat};
  atoms.weights = {0.5, 0.5};
  try {
    wedge_curve(X0, Ybar, Yhat, Target::atoms(atoms), kappa, SurfaceKind::Refractor);
    FAIL("expected WedgeMiss");
  } catch (const WedgeMiss& e) {
    CHECK(e.bad_lambdas.size() >= 60);
  }
}

TEST_CASE("implicit H solve rejects a base point above the target") {
  const GraphFunction flat = quadratic_graph(4.0, 0.0);
  const SpacePoint above = SpacePoint::at(0.0, 5.0);
  CHECK_THROWS_AS(implicit_H_solve(Vec::Zero(1), above, flat, 0.5), ConvergenceFailure);
}

TEST_CASE("wedge curve: direction tip curve is non-planar (n = 2)") {
  // Published regime: v_bar = (1,0), v_hat = (-2,1), kappa = n1/n2 = 2/3.
  const double kappa = 2.0 / 3.0;
  const SpacePoint X0{Vec::Zero(2), 0.0};
  const Target target = flat_graph_target(2, 4.0, 50.0);
  const SpacePoint Ybar = stretch_H(vec2(1.0, 0.0), X0, target, kappa).y;
  const SpacePoint Yhat = stretch_H(vec2(-2.0, 1.0), X0, target, kappa).y;

  const WedgeCurve curve = wedge_curve(X0, Ybar, Yhat, target, kappa, SurfaceKind::Refractor);
  CHECK((curve.v_bar - vec2(1.0, 0.0)).norm() <= 1e-9);
  CHECK((curve.v_hat - vec2(-2.0, 1.0)).norm() <= 1e-9);

  // Distance of the tip curve to the plane spanned by the edge directions.
  Eigen::MatrixXd basis(3, 2);
  basis.col(0) = curve.directions.front();
  basis.col(1) = curve.directions.back();
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(basis)
                                .householderQ() *
                            Eigen::MatrixXd::Identity(3, 2);
  double max_dist = 0.0;
  for (const Vec& lam : curve.directions)
    max_dist = std::max(max_dist, (lam - q * (q.transpose() * lam)).norm());
  CHECK(max_dist > 1e-3);
}

TEST_CASE("reflector wedge curve endpoints") {
  const SpacePoint X0 = SpacePoint::at(0.0, 0.5);
  GraphSurface plane;
  plane.psi = plane_graph(0.0, vec1(0.3));
  plane.density = [](const Vec&) { return 1.0; };
  plane.domain = Omega::box(vec1(-10.0), vec1(10.0));
  const Target target = Target::graph(plane);

  const Vec lam_bar = reflection_direction(vec1(0.2));
  const Hit hb = ray_target_intersection(X0, lam_bar, target);
  const Vec lam_hat = reflection_direction(vec1(0.45));
  const Hit hh = ray_target_intersection(X0, lam_hat, target);

  const WedgeCurve curve =
      wedge_curve(X0, hb.y, hh.y, target, 0.0, SurfaceKind::Reflector);
  CHECK(distance(curve.points.front(), hb.y) <= 1e-8);
  CHECK(distance(curve.points.back(), hh.y) <= 1e-8);
}

TEST_CASE("v-Y bi-Lipschitz sampling") {
  const double kappa = 0.5;
  const SpacePoint X0 = SpacePoint::at(0.0, 0.0);
  const Target target = flat_graph_target(1, 4.0);

  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> uy(-2.0, 2.0);
  std::vector<std::pair<SpacePoint, SpacePoint>> pairs;
  for (int it = 0; it < 1000; ++it)
    pairs.emplace_back(SpacePoint::at(uy(rng), 4.0), SpacePoint::at(uy(rng), 4.0));
  const auto rep = v_Y_bilipschitz_check(X0, target, kappa, pairs);
  CHECK(rep.used_pairs > 900);
  CHECK(rep.c_low > 0.0);
  CHECK(rep.c_high < std::numeric_limits<double>::infinity());
  CHECK(rep.c_low <= rep.c_high);

  const auto degenerate =
      v_Y_bilipschitz_check(X0, target, kappa, {{SpacePoint::at(1, 4), SpacePoint::at(1, 4)}});
  CHECK(degenerate.used_pairs == 0);

  // Local ratio continuity: halving the pair gap moves the ratio by < 10%.
  double gap = 0.4;
  double prev = 0.0;
  for (int level = 0; level < 3; ++level) {
    const auto r = v_Y_bilipschitz_check(
        X0, target, kappa, {{SpacePoint::at(1.0 - gap / 2, 4.0), SpacePoint::at(1.0 + gap / 2, 4.0)}});
    if (level > 0) CHECK(std::abs(r.c_low - prev) <= 0.1 * prev);
    prev = r.c_low;
    gap /= 2.0;
  }
}

TEST_CASE("base-height and focus Lipschitz estimates") {
  const double kappa = 0.5;
  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> ux(-0.5, 0.5);
  std::uniform_real_distribution<double> uy(-0.5, 0.5);
  std::uniform_real_distribution<double> uh(5.0, 7.0);

  // Measure the base-height derivative bound, then assert the
  // two-sided estimate for finite drops.
  double c_base = 0.0;
  std::vector<std::tuple<SpacePoint, SpacePoint, Vec>> samples;
  for (int it = 0; it < 200; ++it) {
    const SpacePoint X0 = SpacePoint::at(ux(rng), 0.2 + 0.6 * ux(rng) + 0.3);
    const SpacePoint Y = SpacePoint::at(uy(rng), uh(rng));
    const Vec x = vec1(ux(rng));
    const auto d = ellipsoid_derivatives(x, ellipsoid_through(X0, Y, kappa), kappa, X0);
    c_base = std::max(c_base, std::abs(d.d_base_height));
    samples.emplace_back(X0, Y, x);
  }
  for (const auto& [X0, Y, x] : samples) {
    for (double h : {1e-3, 1e-2}) {
      SpacePoint lower = X0;
      lower.height -= h;
      const double hi = ellipsoid_height(x, ellipsoid_through(X0, Y, kappa), kappa);
      const double lo = ellipsoid_height(x, ellipsoid_through(lower, Y, kappa), kappa);
      CHECK(hi - lo >= -1e-12);
      CHECK(hi - lo <= (c_base * 1.05 + 1e-9) * h);
    }
  }

  // Lipschitz in the focus: |phi(x,Y) - phi(x,Ybar)| <= C |x - x0| |Y - Ybar|
  // for ellipsoids through the same base point.
  double c_mixed = 0.0;
  for (int it = 0; it < 200; ++it) {
    const SpacePoint X0 = SpacePoint::at(ux(rng), 0.5);
    const SpacePoint Y = SpacePoint::at(uy(rng), uh(rng));
    const Vec x = vec1(X0.horizontal[0] + 0.4 * ux(rng));
    const auto d = ellipsoid_derivatives(x, ellipsoid_through(X0, Y, kappa), kappa, X0);
    c_mixed = std::max(c_mixed, d.mixed_xy.cwiseAbs().maxCoeff() * std::sqrt(2.0));
  }
  for (int it = 0; it < 200; ++it) {
    const SpacePoint X0 = SpacePoint::at(ux(rng), 0.5);
    const SpacePoint Y = SpacePoint::at(uy(rng), uh(rng));
    const SpacePoint Ybar = SpacePoint::at(uy(rng), uh(rng));
    const Vec x = vec1(X0.horizontal[0] + 0.4 * ux(rng));
    const double lhs =
        std::abs(ellipsoid_height(x, ellipsoid_through(X0, Y, kappa), kappa) -
                 ellipsoid_height(x, ellipsoid_through(X0, Ybar, kappa), kappa));
    const double bound = (c_mixed * 1.2 + 1e-9) * (x - X0.horizontal).norm() * distance(Y, Ybar);
    CHECK(lhs <= bound);
  }
}
