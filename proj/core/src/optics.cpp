#include "nearfield/optics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace nearfield {

double OpticalConfig::beta() const { return std::sqrt(1.0 - delta * delta); }

void OpticalConfig::validate() const {
  if (!(kappa > 0.0 && kappa < 1.0))
    throw std::invalid_argument("OpticalConfig: kappa must lie in (0,1)");
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("OpticalConfig: delta must lie in (0,1)");
  if (!(beta_reflector > 0.0))
    throw std::invalid_argument("OpticalConfig: beta_reflector must be positive");
}

SpacePoint SpacePoint::at(double x, double h) {
  Vec v(1);
  v << x;
  return SpacePoint(std::move(v), h);
}

double distance(const SpacePoint& a, const SpacePoint& b) {
  const double dh = a.height - b.height;
  return std::sqrt((a.horizontal - b.horizontal).squaredNorm() + dh * dh);
}

Omega Omega::box(Vec lo, Vec hi) {
  if (lo.size() != hi.size() || lo.size() == 0)
    throw std::invalid_argument("Omega::box: inconsistent bounds");
  for (int i = 0; i < lo.size(); ++i)
    if (!(lo[i] < hi[i])) throw std::invalid_argument("Omega::box: empty box");
  Omega o;
  o.kind = Kind::Box;
  o.lo = std::move(lo);
  o.hi = std::move(hi);
  return o;
}

Omega Omega::ball(Vec center, double radius) {
  if (center.size() == 0 || !(radius > 0.0))
    throw std::invalid_argument("Omega::ball: need positive radius");
  Omega o;
  o.kind = Kind::Ball;
  o.center_pt = std::move(center);
  o.radius = radius;
  return o;
}

int Omega::dim() const {
  return static_cast<int>(kind == Kind::Box ? lo.size() : center_pt.size());
}

bool Omega::contains(const Vec& x) const {
  if (kind == Kind::Box) {
    for (int i = 0; i < lo.size(); ++i)
      if (x[i] < lo[i] || x[i] > hi[i]) return false;
    return true;
  }
  return (x - center_pt).norm() <= radius;
}

Vec Omega::center() const {
  if (kind == Kind::Box) return 0.5 * (lo + hi);
  return center_pt;
}

double Omega::sup_distance(const Vec& y) const {
  if (kind == Kind::Ball) return (y - center_pt).norm() + radius;
  // For a box the supremum is attained at a corner; per axis the farther bound.
  double s2 = 0.0;
  for (int i = 0; i < lo.size(); ++i) {
    const double d = std::max(std::abs(y[i] - lo[i]), std::abs(y[i] - hi[i]));
    s2 += d * d;
  }
  return std::sqrt(s2);
}

std::vector<Vec> Omega::extreme_points() const {
  std::vector<Vec> pts;
  const int n = dim();
  if (kind == Kind::Box) {
    const int count = 1 << n;
    pts.reserve(count);
    for (int mask = 0; mask < count; ++mask) {
      Vec p(n);
      for (int i = 0; i < n; ++i) p[i] = (mask >> i) & 1 ? hi[i] : lo[i];
      pts.push_back(std::move(p));
    }
  } else {
    pts.reserve(2 * n);
    for (int i = 0; i < n; ++i) {
      Vec p = center_pt;
      p[i] += radius;
      pts.push_back(p);
      p[i] -= 2.0 * radius;
      pts.push_back(std::move(p));
    }
  }
  return pts;
}

std::vector<Vec> Omega::sample_grid(int cells_per_axis) const {
  const int n = dim();
  Vec blo(n), bhi(n);
  if (kind == Kind::Box) {
    blo = lo;
    bhi = hi;
  } else {
    blo = center_pt.array() - radius;
    bhi = center_pt.array() + radius;
  }
  std::vector<Vec> pts;
  std::vector<int> idx(n, 0);
  while (true) {
    Vec p(n);
    for (int i = 0; i < n; ++i) {
      const double t = cells_per_axis == 1 ? 0.5 : double(idx[i]) / double(cells_per_axis - 1);
      p[i] = blo[i] + t * (bhi[i] - blo[i]);
    }
    if (contains(p)) pts.push_back(std::move(p));
    int i = 0;
    for (; i < n; ++i) {
      if (++idx[i] < cells_per_axis) break;
      idx[i] = 0;
    }
    if (i == n) break;
  }
  return pts;
}

double Omega::bounding_extent(int axis_lo_hi, int axis) const {
  if (kind == Kind::Box) return axis_lo_hi == 0 ? lo[axis] : hi[axis];
  return center_pt[axis] + (axis_lo_hi == 0 ? -radius : radius);
}

RefractionDirection refraction_direction(const Vec& v, double kappa) {
  const double v2 = v.squaredNorm();
  const double q = (std::sqrt(1.0 + (1.0 - kappa * kappa) * v2) - kappa) / (1.0 + v2);
  const int n = static_cast<int>(v.size());
  Vec lambda(n + 1);
  lambda.head(n) = -q * v;
  lambda[n] = q + kappa;
  return {std::move(lambda), q};
}

Vec reflection_direction(const Vec& v) {
  const double v2 = v.squaredNorm();
  const int n = static_cast<int>(v.size());
  Vec lambda(n + 1);
  lambda.head(n) = (2.0 / (1.0 + v2)) * v;
  lambda[n] = (v2 - 1.0) / (1.0 + v2);
  return lambda;
}

double focal_parameter(const SpacePoint& X, const SpacePoint& Y, double kappa) {
  const double d = distance(X, Y);
  if (d == 0.0) throw std::invalid_argument("focal_parameter: coincident points");
  return d + kappa * (X.height - Y.height);
}

double ellipsoid_projection_radius(const EllipsoidPiece& piece, double kappa) {
  return piece.b / std::sqrt(1.0 - kappa * kappa);
}

namespace {

// Radicand of the lower-graph square root: b^2/(1-k^2)^2 - |x-y|^2/(1-k^2).
inline double graph_radicand(const Vec& x, const EllipsoidPiece& piece, double kappa) {
  const double omk2 = 1.0 - kappa * kappa;
  const double r2 = (x - piece.focus.horizontal).squaredNorm();
  return piece.b * piece.b / (omk2 * omk2) - r2 / omk2;
}

}  // namespace

double ellipsoid_height(const Vec& x, const EllipsoidPiece& piece, double kappa,
                        double domain_guard) {
  if (!(piece.b > 0.0)) throw std::invalid_argument("ellipsoid_height: b must be positive");
  const double rho = graph_radicand(x, piece, kappa);
  if (rho < domain_guard) {
    std::ostringstream os;
    os << "ellipsoid_height: point outside the projection ball (radicand " << rho << ")";
    throw OutOfDomain(os.str());
  }
  const double omk2 = 1.0 - kappa * kappa;
  return piece.focus.height - kappa * piece.b / omk2 - std::sqrt(rho);
}

EllipsoidPiece ellipsoid_through(const SpacePoint& X0, const SpacePoint& Y, double kappa) {
  return EllipsoidPiece{Y, focal_parameter(X0, Y, kappa)};
}

ParaboloidPiece paraboloid_through(const SpacePoint& X0, const SpacePoint& Y) {
  const double b = distance(X0, Y) + X0.height - Y.height;
  if (!(b > 0.0))
    throw std::invalid_argument("paraboloid_through: base point on the vertical ray below the focus");
  return ParaboloidPiece{Y, b};
}

Vec gradient_at_base(const SpacePoint& X0, const SpacePoint& Y, double kappa) {
  const double denom = Y.height - X0.height - kappa * distance(X0, Y);
  if (denom <= 0.0)
    throw OutOfDomain("gradient_at_base: X0 is not on the lower part of the ellipsoid");
  return (X0.horizontal - Y.horizontal) / denom;
}

Vec paraboloid_gradient_at_base(const SpacePoint& X0, const SpacePoint& Y) {
  const auto piece = paraboloid_through(X0, Y);
  return (Y.horizontal - X0.horizontal) / piece.b;
}

EllipsoidDerivatives ellipsoid_derivatives(const Vec& x, const EllipsoidPiece& piece,
                                           double kappa,
                                           const std::optional<SpacePoint>& base) {
  const double rho = graph_radicand(x, piece, kappa);
  if (rho < 1e-14) throw OutOfDomain("ellipsoid_derivatives: point outside the projection ball");
  const double omk2 = 1.0 - kappa * kappa;
  const double root = std::sqrt(rho);
  const int n = static_cast<int>(x.size());
  const Vec w = x - piece.focus.horizontal;

  EllipsoidDerivatives d;
  d.grad_x = w / (omk2 * root);
  d.hess_xx = Mat::Identity(n, n) / (omk2 * root) +
              w * w.transpose() / (omk2 * omk2 * rho * root);

  if (base) {
    const SpacePoint& X0 = *base;
    const SpacePoint& Y = piece.focus;
    const double c = piece.b;
    if (std::abs(focal_parameter(X0, Y, kappa) - c) > 1e-9 * std::max(1.0, std::abs(c)))
      throw std::invalid_argument("ellipsoid_derivatives: base does not lie on the piece");
    const double dist0 = distance(X0, Y);

    // dc/dY_j and dc/dx0_{n+1} from c = |X0-Y| + kappa (x0_{n+1} - y_{n+1}).
    Vec dc_dy(n + 1);
    dc_dy.head(n) = -(X0.horizontal - Y.horizontal) / dist0;
    dc_dy[n] = -(X0.height - Y.height) / dist0 - kappa;

    // d phi/dx_i = w_i/(omk2 sqrt(rho)); differentiate in Y at fixed x.
    // d rho/dY_j = 2 c (dc/dY_j)/omk2^2 (+ 2 w_j/omk2 for horizontal j).
    d.mixed_xy = Mat::Zero(n, n + 1);
    for (int j = 0; j <= n; ++j) {
      double drho = 2.0 * c * dc_dy[j] / (omk2 * omk2);
      if (j < n) drho += 2.0 * w[j] / omk2;
      for (int i = 0; i < n; ++i) {
        double val = -w[i] * drho / (2.0 * omk2 * rho * root);
        if (j == i) val += -1.0 / (omk2 * root);
        d.mixed_xy(i, j) = val;
      }
    }

    const double dc_dbase = (X0.height - Y.height) / dist0 + kappa;
    const double dphi_dc = -kappa / omk2 - c / (omk2 * omk2 * root);
    d.d_base_height = dphi_dc * dc_dbase;
  }
  return d;
}

Vec ellipsoid_gradient_from_membership(const Vec& x, const EllipsoidPiece& piece, double kappa) {
  const double h = ellipsoid_height(x, piece, kappa);
  const SpacePoint X{x, h};
  const double denom = piece.focus.height - h - kappa * distance(X, piece.focus);
  return (x - piece.focus.horizontal) / denom;
}

ParaboloidEval paraboloid_eval(const Vec& x, const ParaboloidPiece& piece) {
  if (!(piece.b > 0.0)) throw std::invalid_argument("paraboloid_eval: b must be positive");
  const int n = static_cast<int>(x.size());
  const Vec w = x - piece.focus.horizontal;
  ParaboloidEval e;
  e.height = piece.focus.height + (piece.b * piece.b - w.squaredNorm()) / (2.0 * piece.b);
  e.grad_x = -w / piece.b;
  e.hess_xx = -Mat::Identity(n, n) / piece.b;
  return e;
}

AdmissibilityReport admissible_region_check(const SpacePoint& Y, const Cylinder& cyl,
                                            const OpticalConfig& cfg, SurfaceKind mode,
                                            int grid_per_axis) {
  AdmissibilityReport rep;
  rep.margin = std::numeric_limits<double>::infinity();
  rep.beta_margin = std::numeric_limits<double>::infinity();
  rep.admissible = true;

  std::vector<Vec> horiz = cyl.omega.sample_grid(grid_per_axis);
  for (const Vec& p : cyl.omega.extreme_points()) horiz.push_back(p);
  std::vector<double> heights;
  heights.reserve(grid_per_axis + 2);
  for (int i = 0; i < grid_per_axis; ++i)
    heights.push_back(cyl.height_max * double(i) / double(grid_per_axis - 1));
  const double beta = cfg.beta();

  for (const Vec& x : horiz) {
    for (double h : heights) {
      const SpacePoint X{x, h};
      const double d = distance(X, Y);
      if (d == 0.0) {
        rep.admissible = false;
        rep.margin = -std::numeric_limits<double>::infinity();
        rep.worst_point = X;
        return rep;
      }
      double slack;
      if (mode == SurfaceKind::Reflector) {
        slack = d + X.height - Y.height - cfg.beta_reflector;
      } else {
        const double c = focal_parameter(X, Y, cfg.kappa);
        // Lower-part membership.
        const double lower = Y.height - X.height - cfg.kappa * d;
        // Omega inside the delta-shrunk projection ball of E(Y, c(X,Y)).
        const double ball = cfg.delta * c / std::sqrt(1.0 - cfg.kappa * cfg.kappa) -
                            cyl.omega.sup_distance(Y.horizontal);
        slack = std::min(lower, ball);
        const double bslack = lower - beta * c;
        if (bslack < rep.beta_margin) rep.beta_margin = bslack;
      }
      if (slack < rep.margin) {
        rep.margin = slack;
        rep.worst_point = X;
      }
    }
  }
  rep.admissible = rep.margin > 0.0;
  return rep;
}

}  // namespace nearfield
