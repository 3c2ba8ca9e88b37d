#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nearfield/optics.hpp"
#include "nearfield/target.hpp"

namespace nearfield {

/// Composition rule of the piecewise surface. "Above" modes take the min of
/// the pieces (supporting pieces above the surface), "Below" modes the max.
enum class SurfaceMode { RefractorAbove, RefractorBelow, ReflectorBelow, ReflectorAbove };

bool is_refractor(SurfaceMode mode);
bool is_min_composition(SurfaceMode mode);
const char* to_string(SurfaceMode mode);

/// Piecewise ellipsoid/paraboloid surface u = min_i / max_i of piece graphs.
struct PiecewiseSurface {
  SurfaceMode mode = SurfaceMode::RefractorAbove;
  std::vector<SpacePoint> foci;
  std::vector<double> b;
  double kappa = 0.5;  // unused by reflector modes

  int piece_count() const { return static_cast<int>(foci.size()); }
  double piece_height(int i, const Vec& x) const;
  Vec piece_gradient(int i, const Vec& x) const;
  Mat piece_hessian(int i, const Vec& x) const;
  /// Every refractor piece must project over the whole of Omega.
  void validate_on(const Omega& omega) const;
};

struct EvalResult {
  double height = 0.0;
  int active_index = -1;
  bool near_tie = false;  // runner-up within tie_eps
};
EvalResult evaluate(const PiecewiseSurface& surface, const Vec& x, double tie_eps = 1e-12);

/// Indices of the pieces attaining the composition at x within tie_eps —
/// the discrete refractor map F_u(x). Lowest index first.
std::vector<int> refractor_map(const PiecewiseSurface& surface, const Vec& x,
                               double tie_eps = 1e-12);

struct SurfaceGradient {
  Vec grad;
  bool on_tie = false;
};
/// Gradient of the active piece; flagged when x sits on a near tie.
SurfaceGradient surface_gradient(const PiecewiseSurface& surface, const Vec& x,
                                 double tie_eps = 1e-12);

/// Tensor midpoint quadrature over Omega (cells outside a ball mask dropped).
struct QuadratureGrid {
  Omega omega;
  std::vector<int> dims;
  Vec lo, hi;
  std::vector<Vec> centers;            // valid cells
  std::vector<double> volumes;
  std::vector<long> flat_of_valid;     // tensor index of each valid cell
  std::vector<int> valid_of_flat;      // -1 for masked-out cells

  static QuadratureGrid tensor(const Omega& omega, int cells_per_axis);
  int dim() const { return static_cast<int>(dims.size()); }
  int cell_count() const { return static_cast<int>(centers.size()); }
  Vec cell_width() const;
};

/// Source measure mu = f dx with its quadrature.
struct SourceDensity {
  QuadratureGrid grid;
  std::function<double(const Vec&)> f;
  std::vector<double> masses;  // f(center) * volume per cell
  double total = 0.0;          // mu(Omega)
};
SourceDensity make_source(const Omega& omega, std::function<double(const Vec&)> f,
                          int cells_per_axis);

/// Per-atom masses mu(T_u(Y_i)) by midpoint quadrature; ties to lowest index.
std::vector<double> tracing_measure(const PiecewiseSurface& surface, const SourceDensity& source);

struct SolverConfig {
  SurfaceMode mode = SurfaceMode::RefractorAbove;
  double tol_mass = 1e-3;  // relative to mu(Omega)
  int grid = 2000;         // quadrature cells per axis
  int max_outer = 10000;
  int max_bisect = 60;
  double anchor_height = 0.5;
  double height_floor = 1e-6;  // refractor pieces stay above this over Omega
  bool check_admissibility = true;
  int admissibility_grid = 16;
};

struct SolveReport {
  std::vector<double> b;
  std::vector<double> residuals;  // mu(T_u(Y_i)) - sigma_i
  int iterations = 0;
  bool converged = false;
  std::vector<double> residual_history;  // max |residual| after each fix
  std::string message;
};

/// Monotone supporting-surface iteration: piece 0 is anchored through
/// (center(Omega), anchor_height); every other piece starts at its inactive
/// end and is driven by bisection until its mass residual crosses zero. The
/// bisection returns the midpoint of the interval over which the quantized
/// residual changes sign, so symmetric data yields symmetric parameters.
std::pair<PiecewiseSurface, SolveReport> solve_semidiscrete(const SourceDensity& source,
                                                            const DiscreteAtoms& atoms,
                                                            const OpticalConfig& optics,
                                                            const Cylinder& cylinder,
                                                            const SolverConfig& config);

/// Semiconvexity constant fit over (xbar, xhat, s) triples:
/// C_fit = max ((1-s)u(xbar) + s u(xhat) - u(x_s)) / (s(1-s)|xbar-xhat|^2),
/// compared against the measured sup of the piece Hessian norms.
struct SemiconvexityReport {
  double c_fit = 0.0;
  double hess_sup = 0.0;
  int used_triples = 0;
};
SemiconvexityReport semiconvexity_check(const PiecewiseSurface& surface,
                                        const std::vector<std::tuple<Vec, Vec, double>>& triples);

/// Dual potential u*(y) = inf { c(X, Y) : X on the sampled surface graph }.
struct DualPotential {
  std::vector<double> values;
  double lipschitz = 0.0;  // empirical constant over the given points
};
DualPotential dual_potential(const PiecewiseSurface& surface, const Omega& omega,
                             const std::vector<SpacePoint>& targets, int grid_cells);

/// Mass fraction of cells adjacent to an assignment boundary — the discrete
/// shadow of the tie set, expected O(cell width).
double singular_set_estimate(const PiecewiseSurface& surface, const SourceDensity& source);

/// Largest gradient jump across cell interfaces where the active piece
/// changes, measured at face midpoints.
double max_gradient_jump(const PiecewiseSurface& surface, const QuadratureGrid& grid);

/// Local-implies-global support check: at each probe x, every atom whose
/// re-anchored piece through (x, u(x)) supports the surface locally must
/// support it on the whole grid. Fails with a witness exactly when the
/// target violates the AW condition.
struct SupportWitness {
  Vec x;       // probe where local support holds
  int atom = -1;
  Vec z;       // grid point where global support fails
  double gap;  // u(z) - piece(z) > 0
};
struct SupportCheckReport {
  bool holds = true;
  int probes_checked = 0;
  int local_supports_found = 0;
  std::optional<SupportWitness> witness;
};
SupportCheckReport global_support_check(const PiecewiseSurface& surface,
                                        const std::vector<SpacePoint>& atoms,
                                        const QuadratureGrid& grid, double local_radius,
                                        int probe_stride = 1, double tol = 1e-9);

}  // namespace nearfield
