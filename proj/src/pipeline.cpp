#include "dehomo/pipeline.hpp"

#include "dehomo/render.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dehomo {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Optimize: return "optimize";
    case Stage::Trace: return "trace";
    case Stage::Mesh: return "mesh";
    case Stage::Dehomo: return "dehomo";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  for (Stage s : {Stage::Optimize, Stage::Trace, Stage::Mesh, Stage::Dehomo})
    if (name == stage_name(s)) return s;
  throw InvalidArgument("unknown stage '" + std::string(name) + "'");
}

void PipelineConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw InvalidArgument("config: " + what);
  };
  require(!problem.empty(), "problem must be named");
  require(nx == 0 || nx >= 2, "nx must be at least 2");
  require(ny == 0 || ny >= 2, "ny must be at least 2");
  require((nx == 0) == (ny == 0), "nx and ny must be given together");
  require(volume_fraction > 0.0 && volume_fraction <= 1.0, "volume_fraction must be in (0, 1]");
  require(youngs_modulus > 0.0, "youngs_modulus must be positive");
  require(poisson_ratio > -1.0 && poisson_ratio < 0.5, "poisson_ratio must be in (-1, 0.5)");
  require(iterations >= 1, "iterations must be at least 1");
  require(filter_radius > 0.0, "filter_radius must be positive");
  require(move_limit > 0.0 && move_limit <= 1.0, "move_limit must be in (0, 1]");
  require(table_samples >= 2, "table samples must be at least 2");
  require(table_resolution >= 4, "table resolution must be at least 4");
  require(d_sep > 0.0, "d_sep must be positive");
  require(step > 0.0 && step < d_sep, "step must be in (0, d_sep)");
  require(t0 >= 0.0, "t0 must not be negative");
  require(delta > 0.0, "delta must be positive");
  require(q >= 1, "q must be at least 1");
  require(void_threshold >= 0.0 && void_threshold < solid_threshold && solid_threshold <= 1.0,
          "thresholds must satisfy 0 <= void < solid <= 1");
  require(variance_threshold >= 0.0 && variance_threshold <= 1.0,
          "variance_threshold must be in [0, 1]");
  require(raster_nx >= 0 && raster_ny >= 0, "raster size must not be negative");
  require((raster_nx == 0) == (raster_ny == 0), "raster_nx and raster_ny must be given together");
  require(!output.empty(), "output directory must be named");
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end)
    throw InvalidArgument("config: bad value '" + text + "' for " + key);
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw InvalidArgument("config: bad value '" + text + "' for " + key);
}

using Setter = std::function<void(PipelineConfig&, const std::string& key, const std::string&)>;

template <typename T>
Setter number(T PipelineConfig::*field) {
  return [field](PipelineConfig& c, const std::string& k, const std::string& v) {
    c.*field = parse_number<T>(k, v);
  };
}

Setter flag(bool PipelineConfig::*field) {
  return [field](PipelineConfig& c, const std::string& k, const std::string& v) {
    c.*field = parse_bool(k, v);
  };
}

const std::map<std::string, Setter>& config_keys() {
  static const std::map<std::string, Setter> keys = {
      {"problem.name", [](PipelineConfig& c, const std::string&,
                          const std::string& v) { c.problem = v; }},
      {"problem.nx", number(&PipelineConfig::nx)},
      {"problem.ny", number(&PipelineConfig::ny)},
      {"problem.volume_fraction", number(&PipelineConfig::volume_fraction)},
      {"problem.youngs_modulus", number(&PipelineConfig::youngs_modulus)},
      {"problem.poisson_ratio", number(&PipelineConfig::poisson_ratio)},
      {"optimizer.iterations", number(&PipelineConfig::iterations)},
      {"optimizer.filter_radius", number(&PipelineConfig::filter_radius)},
      {"optimizer.move_limit", number(&PipelineConfig::move_limit)},
      {"optimizer.baseline", flag(&PipelineConfig::baseline)},
      {"homogenization.samples", number(&PipelineConfig::table_samples)},
      {"homogenization.resolution", number(&PipelineConfig::table_resolution)},
      {"homogenization.cache", [](PipelineConfig& c, const std::string&,
                                  const std::string& v) { c.table_cache = v; }},
      {"streamlines.d_sep", number(&PipelineConfig::d_sep)},
      {"streamlines.step", number(&PipelineConfig::step)},
      {"dehomogenization.t0", number(&PipelineConfig::t0)},
      {"dehomogenization.delta", number(&PipelineConfig::delta)},
      {"dehomogenization.q", number(&PipelineConfig::q)},
      {"dehomogenization.void_threshold", number(&PipelineConfig::void_threshold)},
      {"dehomogenization.solid_threshold", number(&PipelineConfig::solid_threshold)},
      {"dehomogenization.variance_threshold", number(&PipelineConfig::variance_threshold)},
      {"dehomogenization.raster_nx", number(&PipelineConfig::raster_nx)},
      {"dehomogenization.raster_ny", number(&PipelineConfig::raster_ny)},
      {"output.dir", [](PipelineConfig& c, const std::string&,
                        const std::string& v) { c.output = v; }},
      {"output.stage", [](PipelineConfig& c, const std::string&,
                          const std::string& v) { c.stage = parse_stage(v); }},
      {"output.resume", flag(&PipelineConfig::resume)},
      {"output.renders", flag(&PipelineConfig::renders)},
  };
  return keys;
}

}  // namespace

PipelineConfig parse_config(std::istream& in) {
  PipelineConfig config;
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::Error& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  const auto& keys = config_keys();
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    const std::string key = item.fullname();
    const auto it = keys.find(key);
    if (it == keys.end()) throw InvalidArgument("config: unknown key '" + key + "'");
    if (item.inputs.size() != 1) throw InvalidArgument("config: " + key + " needs one value");
    it->second(config, key, item.inputs.front());
  }
  config.validate();
  return config;
}

PipelineConfig load_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw InvalidArgument("config: cannot open " + file.string());
  return parse_config(in);
}

namespace {

struct BuiltinInfo {
  const char* name;
  int nx, ny;
};

constexpr BuiltinInfo kBuiltins[] = {
    {"cantilever", 160, 80},  {"cantilever-pointfix", 160, 80},
    {"cantilever-distributed", 160, 80}, {"michell", 80, 60},
    {"lshape", 100, 100},     {"mbb", 180, 60},
    {"double-clamped", 160, 80},
};

const BuiltinInfo& builtin_info(const std::string& name) {
  for (const auto& b : kBuiltins)
    if (name == b.name) return b;
  throw UnknownProblem("unknown problem '" + name + "'");
}

}  // namespace

std::pair<int, int> builtin_resolution(const std::string& name) {
  const auto& b = builtin_info(name);
  return {b.nx, b.ny};
}

ProblemDefinition builtin_problem(const std::string& name, int nx, int ny,
                                  double youngs_modulus, double poisson_ratio,
                                  double volume_fraction) {
  const auto& info = builtin_info(name);
  if (nx == 0 && ny == 0) {
    nx = info.nx;
    ny = info.ny;
  }
  if (nx < 2 || ny < 2 || nx % 2 || ny % 2)
    throw InvalidArgument(name + ": resolution must be even and at least 2 in each direction");
  if (std::int64_t(nx) * info.ny != std::int64_t(ny) * info.nx)
    throw InvalidArgument(name + ": resolution must keep the aspect ratio " +
                          std::to_string(info.nx / std::gcd(info.nx, info.ny)) + ":" +
                          std::to_string(info.ny / std::gcd(info.nx, info.ny)));
  ProblemDefinition p;
  p.grid = {nx, ny};
  p.youngs_modulus = youngs_modulus;
  p.poisson_ratio = poisson_ratio;
  p.volume_fraction = volume_fraction;
  const auto& g = p.grid;
  auto fix = [&](int i, int j, bool x, bool y) { p.supports.push_back({g.node(i, j), x, y}); };
  auto load = [&](int i, int j, double fx, double fy) {
    p.loads.push_back({g.node(i, j), Vec2(fx, fy)});
  };

  const std::string n = name;
  if (n == "cantilever" || n == "cantilever-distributed") {
    for (int j = 0; j <= ny; ++j) fix(0, j, true, true);
    if (n == "cantilever") {
      load(nx, ny / 2, 0.0, -1.0);
    } else {
      // Consistent nodal loads of a uniform unit traction resultant.
      for (int j = 0; j <= ny; ++j)
        load(nx, j, 0.0, -(j == 0 || j == ny ? 0.5 : 1.0) / ny);
    }
  } else if (n == "cantilever-pointfix") {
    fix(0, 0, true, true);
    fix(0, ny, true, true);
    load(nx, ny / 2, 0.0, -1.0);
  } else if (n == "michell") {
    fix(0, 0, true, true);
    fix(nx, 0, false, true);
    load(nx / 2, 0, 0.0, -1.0);
  } else if (n == "lshape") {
    p.active.assign(g.elements(), 1);
    for (int j = ny / 2; j < ny; ++j)
      for (int i = nx / 2; i < nx; ++i) p.active[g.element(i, j)] = 0;
    for (int i = 0; i <= nx / 2; ++i) fix(i, ny, true, true);
    load(nx, ny / 4, 0.0, -1.0);
  } else if (n == "mbb") {
    for (int j = 0; j <= ny; ++j) fix(0, j, true, false);
    fix(nx, 0, false, true);
    load(0, ny, 0.0, -1.0);
  } else if (n == "double-clamped") {
    for (int j = 0; j <= ny; ++j) {
      fix(0, j, true, true);
      fix(nx, j, true, true);
    }
    load(nx / 2, 0, 0.0, -1.0);
  }
  p.validate();
  return p;
}

namespace {

std::string problem_text(const ProblemDefinition& p) {
  std::ostringstream out;
  char line[200];
  const auto& g = p.grid;
  std::snprintf(line, sizeof line, "grid %d %d\nmaterial %.17g %.17g\n", g.nx, g.ny,
                p.youngs_modulus, p.poisson_ratio);
  out << line;
  for (const auto& s : p.supports) {
    std::snprintf(line, sizeof line, "support %d %d %d %d\n", s.node % (g.nx + 1),
                  s.node / (g.nx + 1), int(s.fix_x), int(s.fix_y));
    out << line;
  }
  for (const auto& l : p.loads) {
    std::snprintf(line, sizeof line, "load %d %d %.17g %.17g\n", l.node % (g.nx + 1),
                  l.node / (g.nx + 1), l.force.x(), l.force.y());
    out << line;
  }
  for (int e = 0; e < g.elements(); ++e)
    if (!p.is_active(e)) out << "void " << e % g.nx << ' ' << e / g.nx << '\n';
  return out.str();
}

}  // namespace

void write_problem(const fs::path& file, const ProblemDefinition& problem) {
  std::ofstream out(file);
  if (!out) throw FormatError("cannot write " + file.string());
  out << "# dehomo problem\n" << problem_text(problem);
}

ProblemDefinition read_problem(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("cannot open " + file.string());
  ProblemDefinition p;
  bool have_grid = false;
  std::string line;
  int row = 0;
  auto fail = [&](const std::string& what) {
    throw FormatError(file.string() + ":" + std::to_string(row) + ": " + what);
  };
  auto node = [&](int i, int j) {
    if (i < 0 || j < 0 || i > p.grid.nx || j > p.grid.ny) fail("node outside the grid");
    return p.grid.node(i, j);
  };
  while (std::getline(in, line)) {
    ++row;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string word;
    if (!(ss >> word)) continue;
    if (word != "grid" && !have_grid) fail("grid must come first");
    if (word == "grid") {
      if (!(ss >> p.grid.nx >> p.grid.ny) || p.grid.nx < 1 || p.grid.ny < 1) fail("bad grid");
      have_grid = true;
    } else if (word == "material") {
      if (!(ss >> p.youngs_modulus >> p.poisson_ratio)) fail("bad material");
    } else if (word == "support") {
      int i, j, fx, fy;
      if (!(ss >> i >> j >> fx >> fy)) fail("bad support");
      p.supports.push_back({node(i, j), fx != 0, fy != 0});
    } else if (word == "load") {
      int i, j;
      double fx, fy;
      if (!(ss >> i >> j >> fx >> fy)) fail("bad load");
      p.loads.push_back({node(i, j), Vec2(fx, fy)});
    } else if (word == "void") {
      int i, j;
      if (!(ss >> i >> j) || i < 0 || j < 0 || i >= p.grid.nx || j >= p.grid.ny)
        fail("bad void element");
      if (p.active.empty()) p.active.assign(p.grid.elements(), 1);
      p.active[p.grid.element(i, j)] = 0;
    } else {
      fail("unknown keyword '" + word + "'");
    }
    std::string extra;
    if (ss >> extra) fail("trailing text");
  }
  if (!have_grid) fail("missing grid");
  return p;
}

void write_metrics(const fs::path& file, const MetricsReport& r) {
  json j;
  j["problem"] = r.problem;
  j["stage"] = r.stage;
  j["resolution"] = {r.nx, r.ny};
  j["c0"] = r.c0;
  j["c_star"] = r.c_star;
  if (r.c) j["c"] = *r.c;
  j["v_target"] = r.v_target;
  j["v_star"] = r.v_star;
  if (r.v_achieved) j["v_achieved"] = *r.v_achieved;
  if (r.deviation) j["deviation"] = *r.deviation;
  if (r.c_baseline) j["c_baseline"] = *r.c_baseline;
  j["counts"] = json::object();
  for (const auto& [k, v] : r.counts) j["counts"][k] = v;
  j["values"] = json::object();
  for (const auto& [k, v] : r.values) j["values"][k] = v;
  j["warnings"] = r.warnings;
  std::ofstream out(file);
  if (!out) throw FormatError("cannot write " + file.string());
  out << j.dump(2) << '\n';
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

// Settings that determine an optimization result; a snapshot is reused only on an exact match.
std::string snapshot_key(const PipelineConfig& c, const ProblemDefinition& p, bool baseline) {
  char buf[400];
  std::snprintf(buf, sizeof buf,
                "vf %.17g it %d rmin %.17g move %.17g table %d %d baseline %d\n",
                c.volume_fraction, c.iterations, c.filter_radius, c.move_limit, c.table_samples,
                c.table_resolution, int(baseline));
  return buf + problem_text(p);
}

// Artifacts per stage, removed when a run stops before producing them.
const std::map<Stage, std::vector<const char*>> kStageArtifacts = {
    {Stage::Trace, {"degenerate_points.csv", "streamlines.txt", "streamlines.svg"}},
    {Stage::Mesh, {"mesh.obj", "mesh.svg"}},
    {Stage::Dehomo, {"layout.pgm", "edge_thickness.csv", "layout.svg"}},
};

struct Optimized {
  DesignField design;
  std::vector<StressTensor2D> stresses;
  double compliance = 0.0;
  bool resumed = false;
};

Optimized optimize_or_resume(const PipelineConfig& c, const ProblemDefinition& problem,
                             const CHLookupTable& table, bool baseline, const std::string& prefix) {
  const fs::path dir = c.output;
  const fs::path design_file = dir / (prefix + "design.csv");
  const fs::path key_file = dir / (prefix + "snapshot.key");
  const std::string key = snapshot_key(c, problem, baseline);
  Optimized r;
  if (c.resume && fs::exists(design_file) && fs::exists(key_file)) {
    std::ifstream in(key_file);
    std::stringstream stored;
    stored << in.rdbuf();
    if (stored.str() == key) {
      r.design = read_design(design_file);
      if (r.design.size() == std::size_t(problem.grid.elements())) {
        // Same call as the optimizer's closing analysis, so c* and the stresses match exactly.
        auto a = analyze(problem, table, r.design);
        r.compliance = a.compliance;
        r.stresses = std::move(a.stresses);
        r.resumed = true;
        return r;
      }
    }
  }
  OptimizerOptions o;
  o.iterations = c.iterations;
  o.filter_radius = c.filter_radius;
  o.move_limit = c.move_limit;
  o.density_baseline = baseline;
  auto res = optimize(problem, table, o);
  write_design(design_file, res.design);
  write_history(dir / (prefix + "history.csv"), res.history);
  std::ofstream(key_file) << key;
  r.design = std::move(res.design);
  r.stresses = std::move(res.final_stresses);
  r.compliance = res.compliance;
  return r;
}

void write_fields(const fs::path& file, const DesignField& design) {
  const auto f = extract_fields(design);
  std::ofstream out(file);
  if (!out) throw FormatError("cannot write " + file.string());
  out << "element,density,u_x,u_y,v_x,v_y\n";
  char line[200];
  for (std::size_t e = 0; e < f.density.size(); ++e) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", e, f.density[e],
                  f.u_dir[e].x(), f.u_dir[e].y(), f.v_dir[e].x(), f.v_dir[e].y());
    out << line;
  }
}

void write_timings(const fs::path& file, const MetricsReport& r) {
  json j = json::object();
  for (const auto& [k, v] : r.seconds) j[k] = v;
  std::ofstream(file) << j.dump(2) << '\n';
}

}  // namespace

MetricsReport run_pipeline(const PipelineConfig& config) {
  config.validate();
#ifdef _OPENMP
  if (const int threads = requested_threads(); threads > 0) omp_set_num_threads(threads);
#endif
  const auto start = std::chrono::steady_clock::now();

  ProblemDefinition problem;
  const bool from_file = config.problem.find('/') != std::string::npos ||
                         config.problem.find('.') != std::string::npos;
  if (from_file) {
    problem = read_problem(config.problem);
    problem.volume_fraction = config.volume_fraction;
    if (config.nx && (config.nx != problem.grid.nx || config.ny != problem.grid.ny))
      throw InvalidArgument("config: resolution differs from the problem file's grid");
  } else {
    problem = builtin_problem(config.problem, config.nx, config.ny, config.youngs_modulus,
                              config.poisson_ratio, config.volume_fraction);
  }
  problem.validate();
  const GridShape grid = problem.grid;
  const int NX = config.raster_nx ? config.raster_nx : 8 * grid.nx;
  const int NY = config.raster_ny ? config.raster_ny : 8 * grid.ny;
  if (NX % grid.nx || NY % grid.ny || NX / grid.nx != NY / grid.ny)
    throw InvalidArgument("config: raster size must be the same integer multiple of nx and ny");

  fs::create_directories(config.output);
  for (const auto& [stage, files] : kStageArtifacts)
    if (stage > config.stage)
      for (const char* f : files) fs::remove(config.output / f);

  MetricsReport report;
  report.problem = config.problem;
  report.nx = grid.nx;
  report.ny = grid.ny;
  report.v_target = problem.volume_fraction;
  report.counts["elements"] = grid.elements();
  report.counts["active_elements"] = problem.active_count();
  const fs::path out = config.output;
  auto finish_stage = [&](Stage s, std::chrono::steady_clock::time_point t) {
    report.stage = stage_name(s);
    report.seconds[stage_name(s)] = seconds_since(t);
    report.seconds["total"] = seconds_since(start);
    write_metrics(out / "metrics.json", report);
    write_timings(out / "timings.json", report);
  };
  auto in_stage = [](Stage s, auto&& body) {
    try {
      body();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(s, e.what());
    }
  };

  // Optimization.
  auto t = std::chrono::steady_clock::now();
  Optimized opt;
  in_stage(Stage::Optimize, [&] {
    const auto table = cached_lookup(config.table_cache, problem.youngs_modulus,
                                     problem.poisson_ratio, config.table_samples,
                                     config.table_resolution);
    opt = optimize_or_resume(config, problem, table, false, "");
    report.c_star = opt.compliance;
    report.v_star = opt.design.mean_density(problem);
    report.c0 = analyze(problem, table, DesignField::uniform(problem, 0.0, 0.0)).compliance;
    if (config.baseline) {
      const auto base = optimize_or_resume(config, problem, table, true, "baseline_");
      report.c_baseline = base.compliance;
    }
    report.counts["iterations"] = config.iterations;
    write_problem(out / "problem.txt", problem);
    write_fields(out / "fields.csv", opt.design);
    if (config.renders) render_density(out / "density.svg", problem, opt.design);
  });
  finish_stage(Stage::Optimize, t);
  if (config.stage == Stage::Optimize) return report;

  // Streamlines.
  t = std::chrono::steady_clock::now();
  std::vector<std::uint8_t> active = problem.active;
  if (active.empty()) active.assign(grid.elements(), 1);
  DirectionField field;
  std::vector<DegeneratePoint> points;
  StreamlineSet set;
  std::vector<std::vector<Vec2>> boundary;
  in_stage(Stage::Trace, [&] {
    field = DirectionField::from_elements(grid, active, opt.stresses);
    points = find_degenerate_points(field);
    write_degenerate_points(out / "degenerate_points.csv", points);
    TraceOptions o;
    o.d_sep = config.d_sep;
    o.step = config.step;
    set = evenly_spaced_set(field, o, points);
    write_polylines(out / "streamlines.txt", set.lines);
    boundary = domain_boundary(field);
    if (config.renders) render_streamlines(out / "streamlines.svg", boundary, set.lines);
    int trisectors = 0, seedable = 0;
    for (const auto& p : points) {
      trisectors += p.kind == DegeneratePoint::Kind::Trisector;
      seedable += p.seedable;
    }
    report.counts["degenerate_points"] = long(points.size());
    report.counts["trisectors"] = trisectors;
    report.counts["wedges"] = long(points.size()) - trisectors;
    report.counts["seedable_degenerate_points"] = seedable;
    report.counts["u_lines"] = set.count(Family::U);
    report.counts["v_lines"] = set.count(Family::V);
    report.counts["crossings"] = long(set.crossings.size());
    report.values["d_sep"] = config.d_sep;
    const double radius = config.d_sep * std::sqrt(2.0);
    report.values["coverage_u"] = coverage(field, set.lines, Family::U, radius);
    report.values["coverage_v"] = coverage(field, set.lines, Family::V, radius);
  });
  finish_stage(Stage::Trace, t);
  if (config.stage == Stage::Trace) return report;

  // Mesh.
  t = std::chrono::steady_clock::now();
  QuadDominantMesh mesh;
  in_stage(Stage::Mesh, [&] {
    const auto graph = build_graph(set.lines, set.crossings, boundary);
    mesh = extract_cells(graph);
    orient_cells(mesh);
    const auto check = validate_mesh(mesh, field);
    write_obj(out / "mesh.obj", mesh);
    if (config.renders) render_mesh(out / "mesh.svg", mesh, boundary);
    for (const auto& w : graph.warnings) report.warnings.push_back("mesh: " + w);
    for (const auto& w : mesh.warnings) report.warnings.push_back("mesh: " + w);
    report.counts["mesh_nodes"] = long(mesh.nodes.size());
    report.counts["mesh_edges"] = long(mesh.edges.size());
    report.counts["mesh_cells"] = long(mesh.cells.size());
    report.counts["triangles"] = mesh.triangles();
    report.counts["quads"] = mesh.quads();
    report.counts["graph_components"] = graph.components;
    report.counts["mesh_overlap_probes"] = check.overlap_probes;
    report.counts["mesh_ccw"] = check.all_ccw;
    report.counts["mesh_valence_ok"] = check.valence_ok;
    report.counts["mesh_valid"] = check.passes();
    report.values["mesh_covered_fraction"] = check.covered_fraction;
  });
  finish_stage(Stage::Mesh, t);
  if (config.stage == Stage::Mesh) return report;

  // Dehomogenization and evaluation.
  t = std::chrono::steady_clock::now();
  in_stage(Stage::Dehomo, [&] {
    DesignField oriented = opt.design;
    oriented.theta = update_angles(opt.stresses, opt.design.theta);
    DehomogenizationOptions o;
    o.budget.q = config.q;
    o.budget.void_threshold = config.void_threshold;
    o.budget.solid_threshold = config.solid_threshold;
    o.nx = NX;
    o.ny = NY;
    o.t0 = config.t0;
    o.delta = config.delta;
    o.variance_threshold = config.variance_threshold;
    const auto lattice = dehomogenize(mesh, problem, oriented, o);
    for (const auto& w : lattice.warnings) report.warnings.push_back("dehomo: " + w);
    auto layout = rasterize(lattice, Vec2::Zero(), Vec2(grid.nx, grid.ny), NX, NY, &problem);
    const auto fine = refine_problem(problem, NX / grid.nx);
    report.counts["load_pad_pixels"] = pad_loads(layout, fine);
    write_pgm(out / "layout.pgm", layout);
    write_edge_thickness(out / "edge_thickness.csv", lattice);
    if (config.renders) render_layout(out / "layout.svg", layout);

    const auto eval = evaluate_binary(fine, layout);
    report.c = eval.compliance;
    report.v_achieved = layout.volume_fraction();
    report.deviation = (*report.c - report.c_star) / report.c_star;

    int counts[3] = {0, 0, 0};
    for (const auto& cell : lattice.cells) ++counts[int(cell.budget.classification)];
    report.counts["cells_void"] = counts[int(CellClass::Void)];
    report.counts["cells_solid"] = counts[int(CellClass::Solid)];
    report.counts["cells_lattice"] = counts[int(CellClass::Lattice)];
    report.counts["cells_below_floor"] = lattice.below_floor;
    report.counts["cells_subdivided"] = lattice.subdivided;
    report.counts["raster_nx"] = NX;
    report.counts["raster_ny"] = NY;
    report.counts["floating_pixels"] = eval.floating_pixels;
  });
  finish_stage(Stage::Dehomo, t);
  return report;
}

}  // namespace dehomo
