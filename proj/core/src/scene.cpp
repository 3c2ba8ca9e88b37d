#include "nearfield/scene.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "nearfield/report.hpp"

namespace nearfield {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& what) { throw SceneError(what); }

Vec to_vec(const json& j, const char* what) {
  if (!j.is_array() || j.empty()) fail(std::string(what) + ": expected a nonempty array");
  Vec v(j.size());
  for (size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) fail(std::string(what) + ": expected numbers");
    v[static_cast<int>(i)] = j[i].get<double>();
    if (!std::isfinite(v[static_cast<int>(i)])) fail(std::string(what) + ": must be finite");
  }
  return v;
}

Omega parse_omega(const json& j, const char* what) {
  const std::string kind = j.value("kind", "box");
  if (kind == "box") {
    if (!j.contains("min") || !j.contains("max"))
      fail(std::string(what) + ": box needs min/max");
    return Omega::box(to_vec(j["min"], what), to_vec(j["max"], what));
  }
  if (kind == "ball") {
    if (!j.contains("center") || !j.contains("radius"))
      fail(std::string(what) + ": ball needs center/radius");
    return Omega::ball(to_vec(j["center"], what), j["radius"].get<double>());
  }
  fail(std::string(what) + ": unknown kind '" + kind + "'");
}

GraphFunction parse_psi(const json& j) {
  const std::string kind = j.value("kind", "");
  if (kind == "quadratic") return quadratic_graph(j.at("base").get<double>(), j.at("coeff").get<double>());
  if (kind == "plane") {
    Vec slope = j.contains("slope") ? to_vec(j["slope"], "target.psi.slope") : Vec();
    if (slope.size() == 0) fail("target.psi: plane needs a slope vector");
    return plane_graph(j.at("base").get<double>(), std::move(slope));
  }
  fail("target.psi: unknown kind '" + kind + "' (quadratic | plane)");
}

std::function<double(const Vec&)> parse_density(const json& j, const char* what) {
  const std::string kind = j.value("kind", "uniform");
  if (kind == "uniform") {
    const double v = j.value("value", 1.0);
    if (!(v >= 0.0)) fail(std::string(what) + ": uniform value must be nonnegative");
    return [v](const Vec&) { return v; };
  }
  fail(std::string(what) + ": unknown kind '" + kind + "'");
}

SurfaceMode parse_mode(const std::string& s) {
  if (s == "refractor_above") return SurfaceMode::RefractorAbove;
  if (s == "refractor_below") return SurfaceMode::RefractorBelow;
  if (s == "reflector_below") return SurfaceMode::ReflectorBelow;
  if (s == "reflector_above") return SurfaceMode::ReflectorAbove;
  fail("solver.mode: unknown mode '" + s + "'");
}

}  // namespace

Scene load_scene(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SceneError("scene file not found: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // Byte offset to line/column for the diagnostic.
    int line = 1, col = 1;
    for (size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw SceneError(std::string("malformed JSON: ") + e.what(), line, col);
  }

  Scene scene;
  scene.path = path;
  scene.hash = fnv1a(text);

  try {
    const json& jo = j.at("optics");
    scene.optics.kappa = jo.at("kappa").get<double>();
    scene.optics.delta = jo.value("delta", 0.9);
    scene.optics.beta_reflector = jo.value("beta_reflector", 0.5);
    scene.optics.validate();

    const json& jc = j.at("cylinder");
    scene.cylinder.omega = parse_omega(jc.at("omega"), "cylinder.omega");
    scene.cylinder.height_max = jc.at("height_max").get<double>();
    if (!(scene.cylinder.height_max > 0.0)) fail("cylinder.height_max must be positive");

    const json& jt = j.at("target");
    const std::string tkind = jt.at("kind").get<std::string>();
    if (tkind == "atoms") {
      DiscreteAtoms atoms;
      const json& pts = jt.at("points");
      const json& ws = jt.at("weights");
      if (pts.size() != ws.size() || pts.empty())
        fail("target: points/weights must be nonempty and of equal length");
      for (size_t i = 0; i < pts.size(); ++i) {
        Vec full = to_vec(pts[i], "target.points");
        if (full.size() < 2) fail("target.points: need horizontal plus height");
        Vec horiz = full.head(full.size() - 1);
        atoms.points.emplace_back(std::move(horiz), full[full.size() - 1]);
        atoms.weights.push_back(ws[i].get<double>());
      }
      scene.target = Target::atoms(std::move(atoms));
      scene.target_desc = "atoms";
    } else if (tkind == "graph") {
      GraphSurface g;
      g.psi = parse_psi(jt.at("psi"));
      g.density = parse_density(jt.value("density", json::object()), "target.density");
      g.domain = parse_omega(jt.at("domain"), "target.domain");
      scene.target = Target::graph(std::move(g));
      scene.target_desc = "graph/" + jt.at("psi").value("kind", "?");
    } else {
      fail("target.kind must be 'atoms' or 'graph'");
    }

    scene.source_f = parse_density(j.value("source", json::object()), "source");
    scene.source_desc = j.contains("source") ? j["source"].value("kind", "uniform") : "uniform";

    if (j.contains("solver")) {
      const json& js = j["solver"];
      scene.solver.mode = parse_mode(js.value("mode", "refractor_above"));
      scene.solver.tol_mass = js.value("tol_mass", 1e-3);
      scene.solver.grid = js.value("grid", 2000);
      scene.solver.max_outer = js.value("max_outer", 10000);
      scene.solver.anchor_height = js.value("anchor_height", 0.5 * scene.cylinder.height_max);
      scene.solver.height_floor = js.value("height_floor", 1e-6);
      if (scene.solver.grid < 2) fail("solver.grid must be at least 2");
      if (!(scene.solver.tol_mass > 0.0)) fail("solver.tol_mass must be positive");
    } else {
      scene.solver.anchor_height = 0.5 * scene.cylinder.height_max;
    }

    scene.seed = j.value("seed", 0);

    scene.check.x = scene.cylinder.omega.center();
    if (j.contains("check")) {
      const json& ck = j["check"];
      if (ck.contains("x")) scene.check.x = to_vec(ck["x"], "check.x");
      scene.check.height = ck.value("height", 0.0);
      scene.check.v_radius = ck.value("v_radius", 0.25);
      scene.check.v_count = ck.value("v_count", 3);
      scene.check.fd_step = ck.value("fd_step", 1e-3);
    }
    if (j.contains("trace")) {
      scene.trace.rays = j["trace"].value("rays", 1000);
      scene.trace.origins = j["trace"].value("origins", "random");
    }
    if (j.contains("experiments")) {
      const json& je = j["experiments"];
      if (je.contains("inclusion")) {
        const json& ji = je["inclusion"];
        scene.inclusion.v_mag = ji.value("v_mag", 0.3);
        if (ji.contains("lambdas"))
          scene.inclusion.lambdas = ji["lambdas"].get<std::vector<double>>();
        scene.inclusion.samples_per_lambda = ji.value("samples_per_lambda", 3334);
        scene.inclusion.tol = ji.value("tol", 1e-9);
      }
      if (je.contains("tube")) {
        const json& jt2 = je["tube"];
        scene.tube.base_separation = jt2.value("base_separation", 0.2);
        if (jt2.contains("scales")) scene.tube.scales = jt2["scales"].get<std::vector<double>>();
        if (jt2.contains("psi")) {
          GraphSurface wedge;
          wedge.psi = parse_psi(jt2["psi"]);
          wedge.density = parse_density(jt2.value("density", json::object()),
                                        "experiments.tube.density");
          wedge.domain = jt2.contains("domain")
                             ? parse_omega(jt2["domain"], "experiments.tube.domain")
                             : Omega::box(Vec::Constant(scene.cylinder.omega.dim(), -2.0),
                                          Vec::Constant(scene.cylinder.omega.dim(), 2.0));
          scene.tube.wedge = std::move(wedge);
        }
      }
      if (je.contains("refinement")) {
        const json& jr = je["refinement"];
        if (jr.contains("atom_counts"))
          scene.refinement.atom_counts = jr["atom_counts"].get<std::vector<int>>();
        scene.refinement.y_lo = jr.value("y_lo", -0.8);
        scene.refinement.y_hi = jr.value("y_hi", 0.8);
      }
    }
  } catch (const json::exception& e) {
    throw SceneError(std::string("scene validation: ") + e.what());
  }
  return scene;
}

}  // namespace nearfield
