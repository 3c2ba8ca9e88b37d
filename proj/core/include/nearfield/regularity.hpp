#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "nearfield/solver.hpp"
#include "nearfield/target.hpp"

namespace nearfield {

enum class Verdict { Regular, NotRegular, Inconclusive };
const char* to_string(Verdict v);

enum class Orientation { Above, Below };

struct RegularityWitness {
  Vec x;          // probe (a point, a direction node, ...)
  SpacePoint y;   // target point involved, when applicable
  double lambda = std::numeric_limits<double>::quiet_NaN();
  double value = std::numeric_limits<double>::quiet_NaN();
};

struct RegularityReport {
  Verdict verdict = Verdict::Inconclusive;
  double margin = std::numeric_limits<double>::quiet_NaN();
  std::optional<RegularityWitness> witness;
  std::string method;  // closed_form | finite_difference | sampling
  // Empirical constants, NaN when not produced by the check.
  double c1_fit = std::numeric_limits<double>::quiet_NaN();
  double c2_radius = std::numeric_limits<double>::quiet_NaN();
  double c_hat = std::numeric_limits<double>::quiet_NaN();
};

/// Quantitative graph-target criterion: with ellipsoids above the refractor
/// the target is regular at y0 iff kappa/(1-kappa) < psi(y0) <D2psi(y0) xi,xi>
/// for all unit xi (reversed inequality for the ellipsoids-from-below
/// orientation). margin = lambda_min(psi D2psi) - kappa/(1-kappa) (negated
/// appropriately for Below).
RegularityReport classify_graph_target(const GraphFunction& psi, double kappa,
                                       Orientation orientation, const Vec& y0);

/// Closed form D^2 G(0,0) = (1-kappa)/psi(0) (kappa/(1-kappa) I - psi(0) D2psi(0))
/// in the frame with the base point at the origin below the graph.
Mat G_hessian_closed_form(const GraphFunction& psi, double kappa, int n);

/// Numeric AW condition: worst directional second difference (5-point
/// stencil) of 1/H for refractors, of (1+|v|^2)/s for reflectors. Regular
/// means every directional value is negative.
struct AwOptions {
  double fd_step = 1e-3;
  RayOptions ray;
};
RegularityReport aw_condition_numeric(const Target& target, const SpacePoint& X, double kappa,
                                      SurfaceKind mode, const std::vector<Vec>& v_grid,
                                      const std::vector<Vec>& xi_grid, const AwOptions& opts = {});

/// Synthetic min/max support condition along the wedge [Ybar,Yhat]_Z with the
/// fitted constant C1. Modes follow the four surface orientations.
struct MinConditionOptions {
  std::vector<double> lambda_grid = uniform_lambda_grid(33, 0.25, 0.75);
  RayOptions ray;
  double min_x_distance = 1e-9;
};
RegularityReport min_condition_check(const Target& target, const SpacePoint& Z,
                                     const SpacePoint& Y_bar, const SpacePoint& Y_hat,
                                     double kappa, SurfaceMode mode,
                                     const std::vector<Vec>& x_samples,
                                     const MinConditionOptions& opts = {});

/// Solid-ellipsoid union inclusion E(Y_lambda) <= E(Ybar) u E(Yhat) plus the
/// 1/H midpoint concavity inequality, both anchored at X0.
struct InclusionReport {
  bool midpoint_ok = true;
  double midpoint_margin = 0.0;  // min over the lambda grid of 1/H(v_l) - mix
  int boundary_violations = 0;
  double worst_slack = 0.0;  // most positive min(c-excess over both ellipsoids)
  std::optional<RegularityWitness> witness;
  int samples_checked = 0;
};
InclusionReport ellipsoid_union_inclusion_check(const SpacePoint& X0, const SpacePoint& Y_bar,
                                                const SpacePoint& Y_hat,
                                                const std::vector<double>& lambdas,
                                                const Target& target, double kappa,
                                                int n_samples, std::mt19937_64& rng,
                                                double tol = 1e-9,
                                                const std::vector<double>& midpoint_grid =
                                                    uniform_lambda_grid(65));

/// Tube inclusion experiment on a solved refractor: N_mu of the wedge band
/// intersected with the atom set must land in F_u(B_eta(x0)); reports the
/// smallest calibration M for which it does, plus the support-excess margins.
struct TubeInclusionReport {
  bool applicable = false;    // ratio precondition met
  double ratio = 0.0;         // |Ybar-Yhat| / |xbar-xhat|
  Vec x0;                     // supporting-height crossing on the segment
  double mu = 0.0;
  int tube_atoms = 0;
  double m_cal = 0.0;         // smallest calibration with inclusion
  bool inclusion_holds = false;
  double support_excess_margin = 0.0;  // max over samples of lhs - rhs (<=0 good)
};
struct TubeOptions {
  double ratio_threshold = 1.0;
  int curve_samples = 257;
  RayOptions ray;
};
TubeInclusionReport tube_inclusion_experiment(const PiecewiseSurface& surface,
                                              const SourceDensity& source, const Vec& x_bar,
                                              const Vec& x_hat, const Target& wedge_target,
                                              double kappa, const TubeOptions& opts = {});

/// sigma-measure of the mu-tube around the wedge band against mu^{n-1}|dY|.
struct TubeMeasureReport {
  double measured = 0.0;
  double bound_ratio = std::numeric_limits<double>::quiet_NaN();
};
TubeMeasureReport tube_measure_check(const GraphSurface& graph, const SpacePoint& Z,
                                     const SpacePoint& Y_bar, const SpacePoint& Y_hat,
                                     double mu_radius, double kappa, int quad_cells = 128,
                                     int curve_samples = 257);

/// Explicit gradient Holder exponent: alpha = (n/2q - (n-1)/2) /
/// (1 + 3(n-1)/2 + n/2q), for 1 <= q < n/(n-1) (q unrestricted when n = 1).
double holder_exponent(int n, double q);

}  // namespace nearfield
