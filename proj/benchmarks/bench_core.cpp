#include <benchmark/benchmark.h>

#include <random>

#include "nearfield/regularity.hpp"
#include "nearfield/solver.hpp"

using namespace nearfield;

namespace {

Vec vec1(double x) {
  Vec v(1);
  v << x;
  return v;
}

OpticalConfig bench_optics() {
  OpticalConfig cfg;
  cfg.kappa = 0.5;
  cfg.delta = 0.9;
  return cfg;
}

Cylinder bench_cylinder() { return Cylinder{Omega::box(vec1(-0.5), vec1(0.5)), 1.0}; }

DiscreteAtoms bench_atoms(int count) {
  DiscreteAtoms atoms;
  for (int i = 0; i < count; ++i) {
    const double y = -0.8 + (i + 0.5) * 1.6 / count;
    atoms.points.push_back(SpacePoint::at(y, 4.0 + 0.25 * y * y));
    atoms.weights.push_back(1.0 / count);
  }
  return atoms;
}

}  // namespace

static void BM_EllipsoidHeight(benchmark::State& state) {
  const EllipsoidPiece piece{SpacePoint::at(0.2, 5.0), 2.3};
  const Vec x = vec1(0.1);
  for (auto _ : state) benchmark::DoNotOptimize(ellipsoid_height(x, piece, 0.5));
}
BENCHMARK(BM_EllipsoidHeight);

static void BM_EllipsoidDerivatives(benchmark::State& state) {
  const SpacePoint base = SpacePoint::at(0.0, 0.5);
  const SpacePoint focus = SpacePoint::at(0.2, 5.0);
  const EllipsoidPiece piece = ellipsoid_through(base, focus, 0.5);
  const Vec x = vec1(0.1);
  for (auto _ : state)
    benchmark::DoNotOptimize(ellipsoid_derivatives(x, piece, 0.5, base));
}
BENCHMARK(BM_EllipsoidDerivatives);

static void BM_StretchH(benchmark::State& state) {
  GraphSurface g;
  g.psi = quadratic_graph(4.0, 0.25);
  g.density = [](const Vec&) { return 1.0; };
  g.domain = Omega::box(vec1(-2.0), vec1(2.0));
  const Target target = Target::graph(g);
  const SpacePoint X = SpacePoint::at(0.0, 0.0);
  const Vec v = vec1(0.2);
  for (auto _ : state) benchmark::DoNotOptimize(stretch_H(v, X, target, 0.5).h);
}
BENCHMARK(BM_StretchH);

static void BM_TracingMeasure(benchmark::State& state) {
  const auto source =
      make_source(bench_cylinder().omega, [](const Vec&) { return 1.0; },
                  static_cast<int>(state.range(0)));
  PiecewiseSurface surface;
  surface.mode = SurfaceMode::RefractorAbove;
  surface.kappa = 0.5;
  const auto atoms = bench_atoms(8);
  surface.foci = atoms.points;
  surface.b.assign(8, 2.2);
  for (auto _ : state) benchmark::DoNotOptimize(tracing_measure(surface, source));
}
BENCHMARK(BM_TracingMeasure)->Arg(500)->Arg(2000);

static void BM_SolveSemidiscrete(benchmark::State& state) {
  SolverConfig cfg;
  cfg.grid = 500;
  const auto source = make_source(bench_cylinder().omega, [](const Vec&) { return 1.0; },
                                  cfg.grid);
  const auto atoms = bench_atoms(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    auto result = solve_semidiscrete(source, atoms, bench_optics(), bench_cylinder(), cfg);
    benchmark::DoNotOptimize(result.second.iterations);
  }
}
BENCHMARK(BM_SolveSemidiscrete)->Arg(2)->Arg(8);

BENCHMARK_MAIN();
