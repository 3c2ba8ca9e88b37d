#include "nearfield/solver.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace nearfield {

bool is_refractor(SurfaceMode mode) {
  return mode == SurfaceMode::RefractorAbove || mode == SurfaceMode::RefractorBelow;
}

bool is_min_composition(SurfaceMode mode) {
  return mode == SurfaceMode::RefractorAbove || mode == SurfaceMode::ReflectorAbove;
}

const char* to_string(SurfaceMode mode) {
  switch (mode) {
    case SurfaceMode::RefractorAbove: return "refractor_above";
    case SurfaceMode::RefractorBelow: return "refractor_below";
    case SurfaceMode::ReflectorBelow: return "reflector_below";
    case SurfaceMode::ReflectorAbove: return "reflector_above";
  }
  return "?";
}

double PiecewiseSurface::piece_height(int i, const Vec& x) const {
  if (is_refractor(mode)) return ellipsoid_height(x, {foci[i], b[i]}, kappa);
  return paraboloid_eval(x, {foci[i], b[i]}).height;
}

Vec PiecewiseSurface::piece_gradient(int i, const Vec& x) const {
  if (is_refractor(mode))
    return ellipsoid_derivatives(x, {foci[i], b[i]}, kappa).grad_x;
  return paraboloid_eval(x, {foci[i], b[i]}).grad_x;
}

Mat PiecewiseSurface::piece_hessian(int i, const Vec& x) const {
  if (is_refractor(mode))
    return ellipsoid_derivatives(x, {foci[i], b[i]}, kappa).hess_xx;
  return paraboloid_eval(x, {foci[i], b[i]}).hess_xx;
}

void PiecewiseSurface::validate_on(const Omega& omega) const {
  if (!is_refractor(mode)) return;
  for (int i = 0; i < piece_count(); ++i) {
    const double radius = ellipsoid_projection_radius({foci[i], b[i]}, kappa);
    if (omega.sup_distance(foci[i].horizontal) >= radius) {
      std::ostringstream os;
      os << "PiecewiseSurface: piece " << i << " does not project over all of Omega";
      throw OutOfDomain(os.str());
    }
  }
}

namespace {

// Does candidate height h beat the incumbent under the composition rule?
inline bool beats(SurfaceMode mode, double h, double incumbent) {
  return is_min_composition(mode) ? h < incumbent : h > incumbent;
}

// Allocation-free piece heights for the quadrature loops. Domain coverage is
// validated up front, so the radicand stays positive here.
inline double ell_height_raw(const Vec& x, const Vec& fh, double fheight, double b,
                             double kappa) {
  const double omk2 = 1.0 - kappa * kappa;
  const double rho = b * b / (omk2 * omk2) - (x - fh).squaredNorm() / omk2;
  return fheight - kappa * b / omk2 - std::sqrt(rho);
}

inline double par_height_raw(const Vec& x, const Vec& fh, double fheight, double b) {
  return fheight + (b * b - (x - fh).squaredNorm()) / (2.0 * b);
}

inline double piece_height_raw(const PiecewiseSurface& s, int i, double b, const Vec& x) {
  if (is_refractor(s.mode))
    return ell_height_raw(x, s.foci[i].horizontal, s.foci[i].height, b, s.kappa);
  return par_height_raw(x, s.foci[i].horizontal, s.foci[i].height, b);
}

}  // namespace

EvalResult evaluate(const PiecewiseSurface& surface, const Vec& x, double tie_eps) {
  if (surface.piece_count() == 0) throw std::invalid_argument("evaluate: empty surface");
  EvalResult r;
  double second = std::numeric_limits<double>::quiet_NaN();
  for (int i = 0; i < surface.piece_count(); ++i) {
    double h;
    try {
      h = surface.piece_height(i, x);
    } catch (const OutOfDomain&) {
      std::ostringstream os;
      os << "evaluate: piece " << i << " undefined at the query point; surface not admissible";
      throw OutOfDomain(os.str());
    }
    if (r.active_index < 0) {
      r.height = h;
      r.active_index = i;
    } else if (beats(surface.mode, h, r.height)) {
      second = r.height;
      r.height = h;
      r.active_index = i;
    } else if (std::isnan(second) || beats(surface.mode, h, second)) {
      second = h;
    }
  }
  r.near_tie = !std::isnan(second) && std::abs(second - r.height) <= tie_eps;
  return r;
}

std::vector<int> refractor_map(const PiecewiseSurface& surface, const Vec& x, double tie_eps) {
  const EvalResult r = evaluate(surface, x, tie_eps);
  std::vector<int> set;
  for (int i = 0; i < surface.piece_count(); ++i) {
    if (std::abs(surface.piece_height(i, x) - r.height) <= tie_eps) set.push_back(i);
  }
  return set;
}

SurfaceGradient surface_gradient(const PiecewiseSurface& surface, const Vec& x, double tie_eps) {
  const EvalResult r = evaluate(surface, x, tie_eps);
  return {surface.piece_gradient(r.active_index, x), r.near_tie};
}

QuadratureGrid QuadratureGrid::tensor(const Omega& omega, int cells_per_axis) {
  if (cells_per_axis < 1) throw std::invalid_argument("QuadratureGrid: need at least one cell");
  QuadratureGrid g;
  g.omega = omega;
  const int n = omega.dim();
  g.dims.assign(n, cells_per_axis);
  g.lo = Vec(n);
  g.hi = Vec(n);
  for (int i = 0; i < n; ++i) {
    g.lo[i] = omega.bounding_extent(0, i);
    g.hi[i] = omega.bounding_extent(1, i);
  }
  Vec width(n);
  for (int i = 0; i < n; ++i) width[i] = (g.hi[i] - g.lo[i]) / cells_per_axis;
  const double vol = width.prod();

  long flat_count = 1;
  for (int i = 0; i < n; ++i) flat_count *= cells_per_axis;
  g.valid_of_flat.assign(flat_count, -1);

  std::vector<int> idx(n, 0);
  for (long flat = 0; flat < flat_count; ++flat) {
    Vec c(n);
    for (int i = 0; i < n; ++i) c[i] = g.lo[i] + (idx[i] + 0.5) * width[i];
    if (omega.contains(c)) {
      g.valid_of_flat[flat] = static_cast<int>(g.centers.size());
      g.flat_of_valid.push_back(flat);
      g.centers.push_back(std::move(c));
      g.volumes.push_back(vol);
    }
    for (int i = 0; i < n; ++i) {
      if (++idx[i] < cells_per_axis) break;
      idx[i] = 0;
    }
  }
  return g;
}

Vec QuadratureGrid::cell_width() const {
  Vec w(dim());
  for (int i = 0; i < dim(); ++i) w[i] = (hi[i] - lo[i]) / dims[i];
  return w;
}

SourceDensity make_source(const Omega& omega, std::function<double(const Vec&)> f,
                          int cells_per_axis) {
  SourceDensity s;
  s.grid = QuadratureGrid::tensor(omega, cells_per_axis);
  s.f = std::move(f);
  s.masses.resize(s.grid.cell_count());
  s.total = 0.0;
  for (int c = 0; c < s.grid.cell_count(); ++c) {
    const double fv = s.f(s.grid.centers[c]);
    if (fv < 0.0) throw std::invalid_argument("make_source: density must be nonnegative");
    s.masses[c] = fv * s.grid.volumes[c];
    s.total += s.masses[c];
  }
  if (!(s.total > 0.0)) throw std::invalid_argument("make_source: zero total mass");
  return s;
}

namespace {

// Heights of every piece on every cell. Rows are pieces.
std::vector<std::vector<double>> piece_height_table(const PiecewiseSurface& surface,
                                                    const QuadratureGrid& grid) {
  std::vector<std::vector<double>> table(surface.piece_count());
  for (int i = 0; i < surface.piece_count(); ++i) {
    auto& row = table[i];
    row.resize(grid.cell_count());
    for (int c = 0; c < grid.cell_count(); ++c)
      row[c] = piece_height_raw(surface, i, surface.b[i], grid.centers[c]);
  }
  return table;
}

std::vector<int> winners_from_table(SurfaceMode mode,
                                    const std::vector<std::vector<double>>& table,
                                    int cell_count) {
  std::vector<int> winner(cell_count, 0);
  for (int c = 0; c < cell_count; ++c) {
    double best = table[0][c];
    int bi = 0;
    for (size_t i = 1; i < table.size(); ++i) {
      if (beats(mode, table[i][c], best)) {
        best = table[i][c];
        bi = static_cast<int>(i);
      }
    }
    winner[c] = bi;
  }
  return winner;
}

}  // namespace

std::vector<double> tracing_measure(const PiecewiseSurface& surface, const SourceDensity& source) {
  surface.validate_on(source.grid.omega);
  const auto table = piece_height_table(surface, source.grid);
  const auto winner = winners_from_table(surface.mode, table, source.grid.cell_count());
  std::vector<double> mass(surface.piece_count(), 0.0);
  for (int c = 0; c < source.grid.cell_count(); ++c) mass[winner[c]] += source.masses[c];
  return mass;
}

namespace {

struct PieceBounds {
  double b_empty;   // inactive end
  double b_full;    // most-active end permitted by the height constraints
  double dir;       // +1 if mass grows with b, -1 otherwise
};

// Height of a hypothetical piece at the Omega point nearest / farthest from
// the focus, used to cap the b bracket.
double refractor_min_height(const SpacePoint& focus, double b, double kappa, double near_dist) {
  const double omk2 = 1.0 - kappa * kappa;
  const double rho = b * b / (omk2 * omk2) - near_dist * near_dist / omk2;
  return focus.height - kappa * b / omk2 - std::sqrt(std::max(rho, 0.0));
}

double nearest_distance(const Omega& omega, const Vec& y) {
  if (omega.kind == Omega::Kind::Ball) {
    return std::max(0.0, (y - omega.center_pt).norm() - omega.radius);
  }
  double d2 = 0.0;
  for (int i = 0; i < omega.dim(); ++i) {
    const double lo = omega.lo[i], hi = omega.hi[i];
    double d = 0.0;
    if (y[i] < lo) d = lo - y[i];
    else if (y[i] > hi) d = y[i] - hi;
    d2 += d * d;
  }
  return std::sqrt(d2);
}

double reflector_extreme_height(const SpacePoint& focus, double b, double dist) {
  return focus.height + (b * b - dist * dist) / (2.0 * b);
}

PieceBounds piece_bounds(SurfaceMode mode, const SpacePoint& focus, const OpticalConfig& optics,
                         const Omega& omega, double height_cap, double height_floor,
                         int atom_index) {
  PieceBounds pb{};
  const double sup_d = omega.sup_distance(focus.horizontal);
  const double near_d = nearest_distance(omega, focus.horizontal);

  if (is_refractor(mode)) {
    const double kappa = optics.kappa;
    // Omega must stay in the delta-shrunk projection ball of the piece.
    const double b_min = std::sqrt(1.0 - kappa * kappa) * sup_d / optics.delta;
    // The vertex-side minimum height over Omega decreases with b; cap where
    // it reaches the floor.
    double b_hi = std::max(2.0 * b_min, 1.0);
    int guard = 0;
    while (refractor_min_height(focus, b_hi, kappa, near_d) > height_floor) {
      b_hi *= 2.0;
      if (++guard > 200) break;
    }
    if (refractor_min_height(focus, b_min, kappa, near_d) < height_floor) {
      std::ostringstream os;
      os << "solve_semidiscrete: atom " << atom_index
         << " is infeasible (its highest admissible ellipsoid already dips below the floor)";
      throw std::invalid_argument(os.str());
    }
    double lo = b_min, hi = b_hi;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (refractor_min_height(focus, mid, kappa, near_d) > height_floor) lo = mid;
      else hi = mid;
    }
    const double b_max = lo;
    if (mode == SurfaceMode::RefractorAbove) pb = {b_min, b_max, +1.0};
    else pb = {b_max, b_min, -1.0};
  } else {
    // Paraboloids grow with b everywhere; heights at the nearest/farthest
    // Omega point give the max/min over Omega.
    const double scale = std::abs(focus.height) + height_cap + sup_d + 1.0;
    auto solve_height = [&](double dist, double level) {
      // Smallest b with p(dist-point) >= level; the height is increasing in b.
      double lo = 1e-9 * scale, hi = scale;
      int guard = 0;
      while (reflector_extreme_height(focus, hi, dist) < level) {
        hi *= 2.0;
        if (++guard > 200) break;
      }
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (reflector_extreme_height(focus, mid, dist) < level) lo = mid;
        else hi = mid;
      }
      return 0.5 * (lo + hi);
    };
    if (mode == SurfaceMode::ReflectorBelow) {
      // Max composition: a plunging piece is inactive; cap where the piece
      // max reaches the cylinder top.
      pb = {1e-9 * scale, solve_height(near_d, height_cap), +1.0};
    } else {
      // Min composition: a piece entirely above the cylinder is inactive;
      // expanding means lowering toward the floor.
      pb = {solve_height(sup_d, height_cap), solve_height(sup_d, height_floor), -1.0};
    }
  }
  return pb;
}

// Mass of piece j against the cached best-of-others composition, with the
// lowest-index tie break.
class PieceMass {
 public:
  PieceMass(const PiecewiseSurface& surface, const SourceDensity& source, int j)
      : surface_(surface), source_(source), j_(j) {
    const auto table = piece_height_table(surface, source.grid);
    const int cells = source.grid.cell_count();
    other_best_.assign(cells, 0.0);
    other_idx_.assign(cells, -1);
    for (int c = 0; c < cells; ++c) {
      double best = std::numeric_limits<double>::quiet_NaN();
      int bi = -1;
      for (int i = 0; i < surface.piece_count(); ++i) {
        if (i == j) continue;
        if (bi < 0 || beats(surface.mode, table[i][c], best)) {
          best = table[i][c];
          bi = i;
        }
      }
      other_best_[c] = best;
      other_idx_[c] = bi;
    }
  }

  double mass(double bj) const {
    double m = 0.0;
    for (int c = 0; c < source_.grid.cell_count(); ++c) {
      const double h = piece_height_raw(surface_, j_, bj, source_.grid.centers[c]);
      const bool wins =
          other_idx_[c] < 0 || beats(surface_.mode, h, other_best_[c]) ||
          (h == other_best_[c] && j_ < other_idx_[c]);
      if (wins) m += source_.masses[c];
    }
    return m;
  }

  // Mass collected by a subset of atoms while only piece j varies.
  double mass_of_set(double bj, const std::vector<char>& in_set, bool j_in_set) const {
    double m = 0.0;
    for (int c = 0; c < source_.grid.cell_count(); ++c) {
      const double h = piece_height_raw(surface_, j_, bj, source_.grid.centers[c]);
      const bool j_wins =
          other_idx_[c] < 0 || beats(surface_.mode, h, other_best_[c]) ||
          (h == other_best_[c] && j_ < other_idx_[c]);
      const bool counted = j_wins ? j_in_set : (other_idx_[c] >= 0 && in_set[other_idx_[c]]);
      if (counted) m += source_.masses[c];
    }
    return m;
  }

 private:
  const PiecewiseSurface& surface_;
  const SourceDensity& source_;
  int j_;
  std::vector<double> other_best_;
  std::vector<int> other_idx_;
};

// Midpoint of the interval over which the residual crosses zero. r(ta) < 0,
// r(tb) > 0; zero_tol absorbs quadrature round-off on exact-zero plateaus.
double plateau_bisect(const std::function<double(double)>& r, double ta, double tb,
                      double zero_tol, int max_steps) {
  auto edge = [&](double threshold) {
    double lo = ta, hi = tb;  // r(lo) <= threshold < r(hi)
    for (int it = 0; it < max_steps; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (r(mid) > threshold) hi = mid;
      else lo = mid;
    }
    return 0.5 * (lo + hi);
  };
  const double left = edge(-zero_tol);
  const double right = edge(zero_tol);
  return 0.5 * (left + right);
}

}  // namespace

std::pair<PiecewiseSurface, SolveReport> solve_semidiscrete(const SourceDensity& source,
                                                            const DiscreteAtoms& atoms,
                                                            const OpticalConfig& optics,
                                                            const Cylinder& cylinder,
                                                            const SolverConfig& config) {
  optics.validate();
  const int n_atoms = static_cast<int>(atoms.points.size());
  if (n_atoms == 0) throw std::invalid_argument("solve_semidiscrete: no atoms");
  if (atoms.weights.size() != atoms.points.size())
    throw std::invalid_argument("solve_semidiscrete: weights/points mismatch");
  for (int i = 0; i < n_atoms; ++i) {
    if (!(atoms.weights[i] > 0.0))
      throw std::invalid_argument("solve_semidiscrete: weights must be positive");
    for (int j = i + 1; j < n_atoms; ++j)
      if (distance(atoms.points[i], atoms.points[j]) == 0.0)
        throw std::invalid_argument("solve_semidiscrete: atoms must be pairwise distinct");
  }

  const SurfaceKind kind =
      is_refractor(config.mode) ? SurfaceKind::Refractor : SurfaceKind::Reflector;
  if (config.check_admissibility) {
    for (int i = 0; i < n_atoms; ++i) {
      const auto rep = admissible_region_check(atoms.points[i], cylinder, optics, kind,
                                               config.admissibility_grid);
      if (!rep.admissible) {
        std::ostringstream os;
        os << "solve_semidiscrete: atom " << i << " fails the admissible-region check (margin "
           << rep.margin << ")";
        throw std::invalid_argument(os.str());
      }
    }
  }

  // Normalize the prescription to the source mass.
  double wsum = 0.0;
  for (double w : atoms.weights) wsum += w;
  std::vector<double> sigma(n_atoms);
  for (int i = 0; i < n_atoms; ++i) sigma[i] = atoms.weights[i] * (source.total / wsum);

  PiecewiseSurface surface;
  surface.mode = config.mode;
  surface.kappa = optics.kappa;
  surface.foci = atoms.points;
  surface.b.resize(n_atoms);

  std::vector<PieceBounds> bounds;
  bounds.reserve(n_atoms);
  for (int i = 0; i < n_atoms; ++i)
    bounds.push_back(piece_bounds(config.mode, atoms.points[i], optics, source.grid.omega,
                                  cylinder.height_max, config.height_floor, i));

  // Anchor piece 0 through (center, anchor_height); the b vector is only
  // determined up to the common family through one point.
  const SpacePoint anchor{source.grid.omega.center(), config.anchor_height};
  double b0 = is_refractor(config.mode)
                  ? focal_parameter(anchor, atoms.points[0], optics.kappa)
                  : paraboloid_through(anchor, atoms.points[0]).b;
  const double b0_lo = std::min(bounds[0].b_empty, bounds[0].b_full);
  const double b0_hi = std::max(bounds[0].b_empty, bounds[0].b_full);
  std::string note;
  if (b0 < b0_lo || b0 > b0_hi) {
    b0 = std::clamp(b0, b0_lo, b0_hi);
    note = "anchor height clamped into the feasible b range; ";
  }
  surface.b[0] = b0;
  for (int i = 1; i < n_atoms; ++i) surface.b[i] = bounds[i].b_empty;

  SolveReport report;
  report.message = note;
  const double tol = config.tol_mass * source.total;
  const double zero_tol = 1e-12 * source.total;

  std::vector<double> masses = tracing_measure(surface, source);
  std::vector<double> residuals(n_atoms);
  auto refresh_residuals = [&]() {
    double worst = 0.0;
    for (int i = 0; i < n_atoms; ++i) {
      residuals[i] = masses[i] - sigma[i];
      worst = std::max(worst, std::abs(residuals[i]));
    }
    return worst;
  };

  double worst = refresh_residuals();
  report.residual_history.push_back(worst);
  int iter = 0;
  bool feasible = true;

  // Refit atom j so that its residual crosses `target`; returns false when
  // the target is unreachable inside the b bracket.
  auto fix_atom = [&](int j, double target) {
    const PieceMass pm(surface, source, j);
    const double dir = bounds[j].dir;
    auto offset_residual = [&](double t) { return pm.mass(dir * t) - sigma[j] - target; };

    const double t_now = dir * surface.b[j];
    const double t_empty = dir * bounds[j].b_empty;
    const double t_full = dir * bounds[j].b_full;
    const double r_now = residuals[j] - target;
    double t_neg, t_pos;
    if (r_now < 0.0) {
      t_neg = t_now;
      double step = std::max(1e-3 * (t_full - t_empty), 1e-12);
      double t = t_now;
      bool found = false;
      while (t < t_full) {
        t = std::min(t + step, t_full);
        if (offset_residual(t) > 0.0) {
          found = true;
          break;
        }
        t_neg = t;
        step *= 2.0;
      }
      if (!found) return false;
      t_pos = t;
    } else {
      if (offset_residual(t_empty) > 0.0) return false;
      t_neg = t_empty;
      t_pos = t_now;
    }
    surface.b[j] =
        dir * plateau_bisect(offset_residual, t_neg, t_pos, zero_tol, config.max_bisect);
    masses = tracing_measure(surface, source);
    worst = refresh_residuals();
    report.residual_history.push_back(worst);
    ++iter;
    return true;
  };

  // Phase 1: greedy zero-target fixes. Most deficient atom first; the
  // anchored piece is balanced indirectly by contracting whichever non-anchor
  // atom is most over-fed.
  double best_worst = worst;
  int since_progress = 0;
  const int stall_window = 2 * n_atoms + 10;
  while (worst > tol && iter < config.max_outer && since_progress < stall_window) {
    int j = 0;
    for (int i = 1; i < n_atoms; ++i)
      if (residuals[i] < residuals[j]) j = i;
    if (j == 0) {
      j = -1;
      for (int i = 1; i < n_atoms; ++i)
        if (j < 0 || residuals[i] > residuals[j]) j = i;
      if (j < 0) break;  // single atom: nothing to adjust
    }
    if (!fix_atom(j, 0.0)) {
      std::ostringstream os;
      os << "atom " << j << " cannot meet its prescribed mass inside Omega";
      report.message += os.str();
      feasible = false;
      break;
    }
    if (worst < best_worst - zero_tol) {
      best_worst = worst;
      since_progress = 0;
    } else {
      ++since_progress;
    }
  }

  // Phase 2 (n = 1): the greedy can deadlock on mass quantization, with every
  // atom within half a cell of its share and the anchor absorbing the sum of
  // the parity remainders. In one dimension the assignment is an ordered
  // partition, so placing each boundary at the quantile of the cumulative
  // prescription keeps every cumulative error within one cell. Boundary k is
  // moved by refitting the atom just right of it (left when that is the
  // anchor) against the mass of the sorted prefix.
  if (feasible && worst > tol && source.grid.dim() == 1 && n_atoms > 1) {
    std::vector<int> order(n_atoms);
    for (int i = 0; i < n_atoms; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return atoms.points[a].horizontal[0] < atoms.points[b].horizontal[0];
    });

    auto fix_boundary = [&](int k) {
      int j = order[k + 1];
      if (j == 0) j = order[k];
      if (j == 0) return;
      std::vector<char> in_left(n_atoms, 0);
      double sigma_left = 0.0;
      for (int i = 0; i <= k; ++i) {
        in_left[order[i]] = 1;
        sigma_left += sigma[order[i]];
      }
      const bool j_in_left = in_left[j] != 0;

      const PieceMass pm(surface, source, j);
      const double dir = bounds[j].dir;
      // Oriented so the functional increases with t (expanding a left atom
      // pushes the boundary right; expanding a right atom pulls it left).
      auto h = [&](double t) {
        const double g = pm.mass_of_set(dir * t, in_left, j_in_left) - sigma_left;
        return j_in_left ? g : -g;
      };
      const double t_now = dir * surface.b[j];
      const double t_empty = dir * bounds[j].b_empty;
      const double t_full = dir * bounds[j].b_full;
      double t_neg = t_now, t_pos = t_now;
      if (h(t_now) < 0.0) {
        double step = std::max(1e-3 * (t_full - t_empty), 1e-12);
        bool found = false;
        for (double t = t_now; t < t_full;) {
          t = std::min(t + step, t_full);
          if (h(t) > 0.0) {
            t_pos = t;
            found = true;
            break;
          }
          t_neg = t;
          step *= 2.0;
        }
        if (!found) return;
      } else {
        double step = std::max(1e-3 * (t_full - t_empty), 1e-12);
        bool found = false;
        for (double t = t_now; t > t_empty;) {
          t = std::max(t - step, t_empty);
          if (h(t) < 0.0) {
            t_neg = t;
            found = true;
            break;
          }
          t_pos = t;
          step *= 2.0;
        }
        if (!found) return;
      }
      surface.b[j] = dir * plateau_bisect(h, t_neg, t_pos, zero_tol, config.max_bisect);
      masses = tracing_measure(surface, source);
      worst = refresh_residuals();
      report.residual_history.push_back(worst);
      ++iter;
    };

    const int max_sweeps = 4;
    for (int sweep = 0; sweep < max_sweeps && worst > tol && iter < config.max_outer; ++sweep) {
      for (int k = 0; k + 1 < n_atoms && iter < config.max_outer; ++k) fix_boundary(k);
    }
  }

  report.b = surface.b;
  report.residuals = residuals;
  report.iterations = iter;
  report.converged = feasible && worst <= tol;

  // Solved surfaces must stay inside the cylinder.
  if (report.converged) {
    const auto table = piece_height_table(surface, source.grid);
    const auto winner = winners_from_table(surface.mode, table, source.grid.cell_count());
    double umin = std::numeric_limits<double>::infinity(), umax = -umin;
    for (int c = 0; c < source.grid.cell_count(); ++c) {
      umin = std::min(umin, table[winner[c]][c]);
      umax = std::max(umax, table[winner[c]][c]);
    }
    if (!(umin > 0.0 && umax < cylinder.height_max)) {
      report.converged = false;
      std::ostringstream os;
      os << "surface heights [" << umin << ", " << umax << "] leave (0, "
         << cylinder.height_max << ")";
      report.message += os.str();
    }
  }
  if (!report.converged && feasible) {
    std::ostringstream os;
    double min_cell = std::numeric_limits<double>::infinity();
    for (double m : source.masses) min_cell = std::min(min_cell, m);
    os << "stopped at max|residual| = " << worst << " (tol " << tol
       << "); quadrature quantizes masses in steps of ~" << min_cell;
    report.message += os.str();
  }
  return {surface, report};
}

SemiconvexityReport semiconvexity_check(const PiecewiseSurface& surface,
                                        const std::vector<std::tuple<Vec, Vec, double>>& triples) {
  SemiconvexityReport rep;
  rep.c_fit = -std::numeric_limits<double>::infinity();
  for (const auto& [xbar, xhat, s] : triples) {
    const double d2 = (xbar - xhat).squaredNorm();
    if (s <= 0.0 || s >= 1.0 || d2 == 0.0) continue;
    const Vec xs = (1.0 - s) * xbar + s * xhat;
    const double lhs = (1.0 - s) * evaluate(surface, xbar).height +
                       s * evaluate(surface, xhat).height - evaluate(surface, xs).height;
    rep.c_fit = std::max(rep.c_fit, lhs / (s * (1.0 - s) * d2));
    ++rep.used_triples;

    for (const Vec* x : {&xbar, &xhat, &xs}) {
      for (int i = 0; i < surface.piece_count(); ++i) {
        try {
          const Mat h = surface.piece_hessian(i, *x);
          Eigen::SelfAdjointEigenSolver<Mat> es(h);
          const double norm = es.eigenvalues().cwiseAbs().maxCoeff();
          rep.hess_sup = std::max(rep.hess_sup, norm);
        } catch (const OutOfDomain&) {
        }
      }
    }
  }
  if (rep.used_triples == 0) rep.c_fit = 0.0;
  return rep;
}

DualPotential dual_potential(const PiecewiseSurface& surface, const Omega& omega,
                             const std::vector<SpacePoint>& targets, int grid_cells) {
  if (!is_refractor(surface.mode))
    throw std::invalid_argument("dual_potential: defined for refractor surfaces");
  const auto grid = QuadratureGrid::tensor(omega, grid_cells);
  std::vector<SpacePoint> graph;
  graph.reserve(grid.cell_count());
  for (const Vec& x : grid.centers) graph.emplace_back(x, evaluate(surface, x).height);

  DualPotential dp;
  dp.values.reserve(targets.size());
  for (const SpacePoint& Y : targets) {
    double best = std::numeric_limits<double>::infinity();
    for (const SpacePoint& X : graph)
      best = std::min(best, focal_parameter(X, Y, surface.kappa));
    dp.values.push_back(best);
  }
  for (size_t i = 0; i < targets.size(); ++i) {
    for (size_t j = i + 1; j < targets.size(); ++j) {
      const double dy = distance(targets[i], targets[j]);
      if (dy < 1e-14) continue;
      dp.lipschitz = std::max(dp.lipschitz, std::abs(dp.values[i] - dp.values[j]) / dy);
    }
  }
  return dp;
}

namespace {

// Visit the valid face-neighbors of a valid cell.
template <typename F>
void for_each_neighbor(const QuadratureGrid& grid, int cell, F&& fn) {
  const int n = grid.dim();
  long flat = grid.flat_of_valid[cell];
  std::vector<int> idx(n);
  long rem = flat;
  for (int i = 0; i < n; ++i) {
    idx[i] = static_cast<int>(rem % grid.dims[i]);
    rem /= grid.dims[i];
  }
  long stride = 1;
  for (int i = 0; i < n; ++i) {
    for (int d : {-1, 1}) {
      const int v = idx[i] + d;
      if (v >= 0 && v < grid.dims[i]) {
        const int nb = grid.valid_of_flat[flat + d * stride];
        if (nb >= 0) fn(nb, i);
      }
    }
    stride *= grid.dims[i];
  }
}

}  // namespace

double singular_set_estimate(const PiecewiseSurface& surface, const SourceDensity& source) {
  const auto table = piece_height_table(surface, source.grid);
  const auto winner = winners_from_table(surface.mode, table, source.grid.cell_count());
  double flagged = 0.0;
  for (int c = 0; c < source.grid.cell_count(); ++c) {
    bool boundary = false;
    for_each_neighbor(source.grid, c, [&](int nb, int) {
      if (winner[nb] != winner[c]) boundary = true;
    });
    if (boundary) flagged += source.masses[c];
  }
  return flagged / source.total;
}

double max_gradient_jump(const PiecewiseSurface& surface, const QuadratureGrid& grid) {
  const int cells = grid.cell_count();
  std::vector<int> winner(cells);
  for (int c = 0; c < cells; ++c) winner[c] = evaluate(surface, grid.centers[c]).active_index;
  double worst = 0.0;
  for (int c = 0; c < cells; ++c) {
    for_each_neighbor(grid, c, [&](int nb, int axis) {
      if (nb < c || winner[nb] == winner[c]) return;
      Vec mid = 0.5 * (grid.centers[c] + grid.centers[nb]);
      (void)axis;
      const Vec ga = surface.piece_gradient(winner[c], mid);
      const Vec gb = surface.piece_gradient(winner[nb], mid);
      worst = std::max(worst, (ga - gb).norm());
    });
  }
  return worst;
}

SupportCheckReport global_support_check(const PiecewiseSurface& surface,
                                        const std::vector<SpacePoint>& atoms,
                                        const QuadratureGrid& grid, double local_radius,
                                        int probe_stride, double tol) {
  SupportCheckReport rep;
  const bool min_comp = is_min_composition(surface.mode);
  const int cells = grid.cell_count();
  std::vector<double> u(cells);
  for (int c = 0; c < cells; ++c) u[c] = evaluate(surface, grid.centers[c]).height;

  auto candidate_height = [&](const SpacePoint& base, const SpacePoint& focus, const Vec& z,
                              bool& defined) -> double {
    defined = true;
    if (is_refractor(surface.mode)) {
      try {
        return ellipsoid_height(z, ellipsoid_through(base, focus, surface.kappa), surface.kappa);
      } catch (const OutOfDomain&) {
        defined = false;
        return 0.0;
      }
    }
    return paraboloid_eval(z, paraboloid_through(base, focus)).height;
  };

  for (int c = 0; c < cells; c += probe_stride) {
    const SpacePoint base{grid.centers[c], u[c]};
    for (size_t a = 0; a < atoms.size(); ++a) {
      bool local = true;
      bool any_defined = false;
      for (int z = 0; z < cells && local; ++z) {
        if ((grid.centers[z] - grid.centers[c]).norm() > local_radius) continue;
        bool defined;
        const double h = candidate_height(base, atoms[a], grid.centers[z], defined);
        if (!defined) continue;
        any_defined = true;
        const double gap = min_comp ? u[z] - h : h - u[z];
        if (gap > tol) local = false;
      }
      if (!local || !any_defined) continue;
      ++rep.local_supports_found;
      for (int z = 0; z < cells; ++z) {
        bool defined;
        const double h = candidate_height(base, atoms[a], grid.centers[z], defined);
        if (!defined) continue;
        const double gap = min_comp ? u[z] - h : h - u[z];
        if (gap > tol) {
          rep.holds = false;
          if (!rep.witness || gap > rep.witness->gap)
            rep.witness = SupportWitness{grid.centers[c], static_cast<int>(a), grid.centers[z], gap};
        }
      }
    }
    ++rep.probes_checked;
  }
  return rep;
}

}  // namespace nearfield
