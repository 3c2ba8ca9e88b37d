#pragma once

#include <Eigen/Core>

#include <optional>
#include <vector>

#include "nearfield/errors.hpp"

namespace nearfield {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class SurfaceKind { Refractor, Reflector };

/// Global constants of the optical geometry: refraction ratio kappa = n1/n2
/// (medium above is denser, so kappa in (0,1)), the aperture parameter delta
/// of the admissible target region, and the reflector region margin beta.
struct OpticalConfig {
  double kappa = 0.5;
  double delta = 0.9;
  double beta_reflector = 0.5;

  /// beta = sqrt(1 - delta^2), the lower bound factor in the rim estimate.
  double beta() const;
  void validate() const;  // throws std::invalid_argument
};

/// A point X = (x, x_{n+1}) of R^{n+1}: horizontal position plus height.
struct SpacePoint {
  Vec horizontal;
  double height = 0.0;

  SpacePoint() = default;
  SpacePoint(Vec x, double h) : horizontal(std::move(x)), height(h) {}
  /// Convenience for n = 1.
  static SpacePoint at(double x, double h);
  int dim() const { return static_cast<int>(horizontal.size()); }
};

double distance(const SpacePoint& a, const SpacePoint& b);

/// Horizontal footprint Omega of the source: axis-aligned box or ball.
struct Omega {
  enum class Kind { Box, Ball };
  Kind kind = Kind::Box;
  Vec lo, hi;      // box bounds
  Vec center_pt;   // ball center
  double radius = 0.0;

  static Omega box(Vec lo, Vec hi);
  static Omega ball(Vec center, double radius);

  int dim() const;
  bool contains(const Vec& x) const;
  Vec center() const;
  /// sup over x in Omega of |x - y| (exact: corners for a box).
  double sup_distance(const Vec& y) const;
  /// Extreme points used for admissibility checks (box corners, ball axis
  /// extremes).
  std::vector<Vec> extreme_points() const;
  /// Uniform sample grid with cells_per_axis points per axis.
  std::vector<Vec> sample_grid(int cells_per_axis) const;
  double bounding_extent(int axis_lo_hi, int axis) const;
};

/// The source cylinder C_Omega = Omega x (0, M).
struct Cylinder {
  Omega omega;
  double height_max = 1.0;  // M
};

/// Refraction of the vertical ray at a plane with upper normal
/// (-v, 1)/sqrt(1+|v|^2): Lambda(v) = (-Q v, Q + kappa).
struct RefractionDirection {
  Vec lambda;  // unit vector in R^{n+1}
  double q;    // Q(v) > 0
};
RefractionDirection refraction_direction(const Vec& v, double kappa);

/// Reflection of the vertical ray: Lambda(v) = (2v, |v|^2 - 1)/(1+|v|^2).
Vec reflection_direction(const Vec& v);

/// Focal parameter c(X,Y) = |X-Y| + kappa (x_{n+1} - y_{n+1}): the unique b
/// for which the ellipsoid E(Y,b) passes through X. Throws on X == Y.
double focal_parameter(const SpacePoint& X, const SpacePoint& Y, double kappa);

/// Lower part of the ellipsoid of revolution E(Y,b) with upper focus Y.
struct EllipsoidPiece {
  SpacePoint focus;
  double b = 1.0;
};

/// Downward paraboloid of revolution with focus Y and parameter b.
struct ParaboloidPiece {
  SpacePoint focus;
  double b = 1.0;
};

/// Radius of the horizontal projection ball of E(Y,b): b/sqrt(1-kappa^2).
double ellipsoid_projection_radius(const EllipsoidPiece& piece, double kappa);

/// Height of the lower ellipsoid graph at x. Throws OutOfDomain when the
/// radicand falls below the domain guard (default 1e-14).
double ellipsoid_height(const Vec& x, const EllipsoidPiece& piece, double kappa,
                        double domain_guard = 1e-14);

/// The piece through X0 with focus Y: b = c(X0, Y).
EllipsoidPiece ellipsoid_through(const SpacePoint& X0, const SpacePoint& Y, double kappa);

/// The paraboloid through X0 with focus Y: b = |X0-Y| + x0_{n+1} - y_{n+1}.
/// Rejects the degenerate case b <= 0 (X0 on the vertical ray below Y).
ParaboloidPiece paraboloid_through(const SpacePoint& X0, const SpacePoint& Y);

/// Gradient D_x phi for the ellipsoid through X0 evaluated at its base point:
/// (x0 - y)/(y_{n+1} - x0_{n+1} - kappa |X0-Y|). This is the direction datum
/// of the ray X0 -> Y: if Y = X0 + s Lambda(v) with s > 0 then v equals this.
Vec gradient_at_base(const SpacePoint& X0, const SpacePoint& Y, double kappa);

/// Same for paraboloids: v = (y - x0)/b.
Vec paraboloid_gradient_at_base(const SpacePoint& X0, const SpacePoint& Y);

struct EllipsoidDerivatives {
  Vec grad_x;    // n
  Mat hess_xx;   // n x n, symmetric positive definite on the domain
  Mat mixed_xy;  // n x (n+1): d^2 phi / dx_i dY_j; empty unless base given
  double d_base_height = 0.0;  // d phi / d x0_{n+1}; 0 unless base given
};

/// Analytic derivatives of the lower ellipsoid graph. When `base` is given it
/// must satisfy c(base, Y) = b (the piece passes through it); the mixed x-Y
/// block and the base-height derivative are then filled in.
EllipsoidDerivatives ellipsoid_derivatives(const Vec& x, const EllipsoidPiece& piece,
                                           double kappa,
                                           const std::optional<SpacePoint>& base = std::nullopt);

/// Alternative closed form of D_x phi through lower-part membership:
/// (x - y)/(y_{n+1} - phi(x) - kappa |X - Y|).
Vec ellipsoid_gradient_from_membership(const Vec& x, const EllipsoidPiece& piece, double kappa);

struct ParaboloidEval {
  double height;
  Vec grad_x;
  Mat hess_xx;  // -(1/b) * I
};
ParaboloidEval paraboloid_eval(const Vec& x, const ParaboloidPiece& piece);

/// Admissibility of a target point Y for the cylinder: refractor region
/// membership (E^- condition plus the delta-shrunk projection ball) or the
/// reflector margin |X-Y| + x_{n+1} - y_{n+1} >= beta. Checked on a grid over
/// C_Omega plus the cylinder corners.
struct AdmissibilityReport {
  bool admissible = false;
  double margin = 0.0;       // worst slack over all checks
  double beta_margin = 0.0;  // refractor only: worst of (y-x-k|X-Y|) - beta c(X,Y)
  SpacePoint worst_point;    // node realizing the worst slack
};
AdmissibilityReport admissible_region_check(const SpacePoint& Y, const Cylinder& cyl,
                                            const OpticalConfig& cfg, SurfaceKind mode,
                                            int grid_per_axis = 32);

}  // namespace nearfield
