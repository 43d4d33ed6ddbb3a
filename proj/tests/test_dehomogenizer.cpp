#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dehomo/dehomogenizer.hpp"

#include <Eigen/Geometry>

#include <filesystem>
#include <fstream>
#include <random>

using namespace dehomo;

namespace {

using Polygon = std::vector<Vec2>;

ProblemDefinition block(int nx, int ny) {
  ProblemDefinition p;
  p.grid = {nx, ny};
  for (int j = 0; j <= ny; ++j) p.supports.push_back({p.grid.node(0, j), true, true});
  p.loads.push_back({p.grid.node(nx, ny / 2), {0.0, -1.0}});
  return p;
}

Polygon square(double x0, double y0, double size) {
  return {{x0, y0}, {x0 + size, y0}, {x0 + size, y0 + size}, {x0, y0 + size}};
}

Polygon rotated(const Polygon& poly, double angle) {
  const Eigen::Rotation2Dd R(angle);
  Polygon out;
  for (const auto& p : poly) out.push_back(R * p);
  return out;
}

/// Random convex quad: four sorted angles on a jittered ellipse.
Polygon random_convex_quad(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::array<double, 4> a;
  for (int k = 0; k < 4; ++k) a[k] = (k + 0.2 + 0.6 * u(rng)) * kPi / 2;
  const double rx = 0.5 + u(rng), ry = 0.5 + u(rng), rot = 2 * kPi * u(rng);
  Polygon q;
  for (double t : a) q.push_back(Eigen::Rotation2Dd(rot) * Vec2(rx * std::cos(t), ry * std::sin(t)));
  return q;
}

double min_width(const Polygon& poly) {
  // Smallest distance from a vertex to a non-incident edge line bounds the inradius from above.
  double w = 1e300;
  const std::size_t n = poly.size();
  for (std::size_t j = 0; j < n; ++j) {
    const Vec2 a = poly[j], d = (poly[(j + 1) % n] - a).normalized();
    for (std::size_t k = 0; k < n; ++k) {
      if (k == j || k == (j + 1) % n) continue;
      const Vec2 r = poly[k] - a;
      w = std::min(w, std::abs(d.x() * r.y() - d.y() * r.x()));
    }
  }
  return w;
}

/// Sutherland-Hodgman clip of a convex polygon by an axis-aligned box.
Polygon clip_box(Polygon poly, Vec2 lo, Vec2 hi) {
  auto clip = [](const Polygon& in, auto inside, auto cut) {
    Polygon out;
    for (std::size_t k = 0; k < in.size(); ++k) {
      const Vec2 a = in[k], b = in[(k + 1) % in.size()];
      if (inside(a)) out.push_back(a);
      if (inside(a) != inside(b)) out.push_back(cut(a, b));
    }
    return out;
  };
  for (int axis = 0; axis < 2; ++axis) {
    for (int side = 0; side < 2; ++side) {
      const double c = side ? hi[axis] : lo[axis];
      poly = clip(poly, [&](const Vec2& p) { return side ? p[axis] <= c : p[axis] >= c; },
                  [&](const Vec2& a, const Vec2& b) {
                    return Vec2(a + (b - a) * ((c - a[axis]) / (b[axis] - a[axis])));
                  });
      if (poly.empty()) return poly;
    }
  }
  return poly;
}

/// Area-weighted mean of the element densities over a convex cell.
double clipped_mean_density(const ProblemDefinition& p, const DesignField& d, const Polygon& cell) {
  double area = 0.0, mass = 0.0;
  for (int e = 0; e < p.grid.elements(); ++e) {
    const Vec2 lo(e % p.grid.nx, e / p.grid.nx);
    const auto piece = clip_box(cell, lo, lo + Vec2(1, 1));
    if (piece.size() < 3) continue;
    const double a = polygon_area(piece);
    area += a;
    mass += a * d.density(e);
  }
  return mass / area;
}

LatticeCell lattice_cell(Polygon poly, double t) {
  LatticeCell c;
  c.nodes.assign(poly.size(), -1);
  c.thickness.assign(poly.size(), t);
  c.weights.assign(poly.size(), 1.0);
  c.polygon = std::move(poly);
  return c;
}

ElementBudget budget_of(double raw1, double raw2, Vec2 u) {
  ElementBudget b;
  b.phi1_raw = raw1;
  b.phi2_raw = raw2;
  const double top = std::max(raw1, raw2);
  b.phi1 = raw1 / top;
  b.phi2 = raw2 / top;
  b.u_dir = u.normalized();
  b.v_dir = Vec2(-b.u_dir.y(), b.u_dir.x());
  return b;
}

}  // namespace

TEST_CASE("budgets of uniform designs") {
  const auto p = block(10, 10);
  const auto d = DesignField::uniform(p, 0.2, 0.6, 0.3);
  const DesignSampler sampler(p, d);
  for (const Polygon& cell : {Polygon{{2, 2}, {6, 2.5}, {7, 7}, {1.5, 6}}, Polygon{{1, 1}, {8, 2}, {4, 9}}}) {
    const auto b = element_budget(cell, sampler);
    CHECK(b.v_star == doctest::Approx(0.88).epsilon(1e-12));
    CHECK(b.phi1 == doctest::Approx(1.0));
    CHECK(b.phi2 == doctest::Approx(0.5));
    CHECK(std::max(b.phi1, b.phi2) == 1.0);
    CHECK(line_angle_between(b.u_dir, direction_of(0.3)) < 1e-9);
    CHECK(std::abs(b.u_dir.dot(b.v_dir)) < 1e-12);
    CHECK(b.direction_variance < 1e-12);
    CHECK(b.classification == CellClass::Lattice);
  }
  const auto full = DesignField::uniform(p, 0.0, 0.0);
  const auto b = element_budget(square(3, 3, 2), DesignSampler(p, full));
  CHECK(b.v_star == 1.0);
  CHECK(b.classification == CellClass::Solid);
}

TEST_CASE("budget against a clipping oracle") {
  auto p = block(12, 12);
  DesignField d = DesignField::uniform(p, 0.5, 0.5);
  // Density linear in x and y.
  for (int e = 0; e < p.grid.elements(); ++e) {
    d.alpha_x[e] = 0.2 + 0.05 * (e % 12);
    d.alpha_y[e] = 1.0 - 0.01 * (e / 12) / d.alpha_x[e];
  }
  const DesignSampler sampler(p, d);
  SUBCASE("element-aligned square") {
    const Polygon cell = square(3, 4, 5);
    CHECK(element_budget(cell, sampler).v_star ==
          doctest::Approx(clipped_mean_density(p, d, cell)).epsilon(1e-12));
  }
  SUBCASE("random convex quads") {
    std::mt19937_64 rng(11);
    double worst = 0.0;
    for (int k = 0; k < 30; ++k) {
      Polygon q = random_convex_quad(rng);
      for (auto& v : q) v = 1.5 * v + Vec2(6, 6);
      worst = std::max(worst, std::abs(element_budget(q, sampler).v_star - clipped_mean_density(p, d, q)));
    }
    // The oracle is piecewise constant, so partial elements differ by up to half an element's
    // variation (0.025 here) over a thin rim.
    CHECK(worst < 5e-3);
  }
}

TEST_CASE("classification thresholds") {
  CHECK(classify(0.03) == CellClass::Void);
  CHECK(classify(0.97) == CellClass::Solid);
  CHECK(classify(0.50) == CellClass::Lattice);
  CHECK(classify(0.05) == CellClass::Lattice);
  CHECK(classify(0.95) == CellClass::Lattice);
  BudgetOptions o;
  o.void_threshold = 0.2;
  o.solid_threshold = 0.6;
  CHECK(classify(0.1, o) == CellClass::Void);
  CHECK(classify(0.7, o) == CellClass::Solid);
  CHECK(std::string(cell_class_name(CellClass::Lattice)) == "lattice");
}

TEST_CASE("edge weights") {
  const auto b = budget_of(1.0, 0.5, {1, 0});
  CHECK(edge_weights(square(0, 0, 1), b) == std::vector<double>{1.0, 0.5, 1.0, 0.5});
  CHECK(edge_weights(square(0, 0, 1), budget_of(1.0, 0.5, {0, 1})) ==
        std::vector<double>{0.5, 1.0, 0.5, 1.0});
  CHECK(edge_weights(square(0, 0, 1), budget_of(0.7, 0.7, {1, 2})) ==
        std::vector<double>{1.0, 1.0, 1.0, 1.0});

  // An edge parallel to U gets phi1 even when its opposite edge is skewed.
  const Polygon trapezoid{{0, 0}, {4, 0}, {3, 1}, {0.5, 1.2}};
  const auto w = edge_weights(trapezoid, b);
  CHECK(w[0] == 1.0);
  CHECK(w[0] == w[2]);
  CHECK(w[1] == w[3]);

  // Triangles collapse at the widest angle, whose two edges share a weight.
  const Polygon tri{{0, 0}, {4, 0}, {1, 1}};
  const auto wt = edge_weights(tri, budget_of(0.4, 1.0, {1, 0.1}));
  CHECK(wt[1] == wt[2]);
  CHECK(wt[0] == 0.4);
}

TEST_CASE("edge weight invariances") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int cells = 0;
  for (int k = 0; k < 1000; ++k) {
    Polygon cell = random_convex_quad(rng);
    if (k % 4 == 3) cell.pop_back();
    const double r1 = 0.05 + u(rng), r2 = 0.05 + u(rng), angle = 2 * kPi * u(rng);
    const Vec2 dir = direction_of(kPi * u(rng));
    const auto w = edge_weights(cell, budget_of(r1, r2, dir));

    const double scale = std::exp(8 * u(rng) - 4);
    const auto ws = edge_weights(cell, budget_of(scale * r1, scale * r2, dir));
    const auto wr = edge_weights(rotated(cell, angle),
                                 budget_of(r1, r2, Eigen::Rotation2Dd(angle) * dir));
    REQUIRE(ws.size() == w.size());
    bool same = true;
    for (std::size_t j = 0; j < w.size(); ++j) {
      same = same && std::abs(ws[j] - w[j]) < 1e-12 && std::abs(wr[j] - w[j]) < 1e-12;
      CHECK(w[j] > 0.0);
      CHECK(w[j] <= 1.0);
    }
    CHECK(same);
    ++cells;
  }
  CHECK(cells == 1000);
}

TEST_CASE("band area") {
  const Polygon unit = square(0, 0, 1);
  const std::vector<double> t01(4, 0.1);
  CHECK(band_area(unit, t01) == doctest::Approx(0.36).epsilon(1e-12));
  CHECK(band_area(unit, std::vector<double>(4, 0.0)) == 0.0);
  CHECK(band_area(unit, std::vector<double>(4, 0.5)) == 1.0);
  CHECK(band_area(unit, std::vector<double>(4, 0.8)) == 1.0);
  // Clockwise input and rectangles with per-edge offsets.
  const Polygon cw{{0, 0}, {0, 1}, {1, 1}, {1, 0}};
  CHECK(band_area(cw, t01) == doctest::Approx(0.36));
  const Polygon rect{{0, 0}, {2, 0}, {2, 1}, {0, 1}};
  CHECK(band_area(rect, std::vector<double>{0.1, 0.2, 0.1, 0.2}) ==
        doctest::Approx(1.0 - 0.8 * 1.6 / 2.0));
  CHECK(band_area(rect, std::vector<double>{0.1, 0, 0, 0}) == doctest::Approx(0.1));
  // Equilateral triangle: the uncovered core is similar with inradius r - t.
  const Polygon tri{{0, 0}, {1, 0}, {0.5, std::sqrt(3.0) / 2}};
  const double r = std::sqrt(3.0) / 6;
  CHECK(band_area(tri, std::vector<double>(3, 0.1)) == doctest::Approx(1 - std::pow((r - 0.1) / r, 2)));

  CHECK_THROWS_AS(band_area(Polygon{{0, 0}, {1, 0}, {2, 0}}, std::vector<double>(3, 0.1)),
                  DegeneratePolygon);
  CHECK_THROWS_AS(band_area(unit, std::vector<double>(3, 0.1)), InvalidArgument);
}

TEST_CASE("band area is monotone in every thickness") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 200; ++k) {
    const Polygon q = random_convex_quad(rng);
    const double w = min_width(q);
    std::vector<double> t(4);
    for (auto& x : t) x = 0.4 * w * u(rng);
    const double base = band_area(q, t);
    const int j = k % 4;
    t[j] += 0.1 * w * u(rng);
    CHECK(band_area(q, t) >= base - 1e-12);
  }
}

TEST_CASE("band area against sampling") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const Polygon q = random_convex_quad(rng);
    const double w = min_width(q);
    std::vector<double> t(4);
    for (auto& x : t) x = 0.35 * w * u(rng);
    worst = std::max(worst, std::abs(band_area(q, t) - band_area_sampled(q, t, 10000, k)));
  }
  CHECK(worst <= 0.01);

  // Non-convex dart.
  const Polygon dart{{0, 0}, {2, 1}, {0, 2}, {0.8, 1}};
  const std::vector<double> t(4, 0.08);
  CHECK(std::abs(band_area(dart, t) - band_area_sampled(dart, t, 40000, 1)) <= 0.01);
}

TEST_CASE("thickening") {
  const Polygon unit = square(0, 0, 1);
  const std::vector<double> ones(4, 1.0);
  const auto s = thicken(unit, ones, 0.36, 0.01, 0.001);
  CHECK(s.thickness[0] == doctest::Approx(0.1).epsilon(0.01));
  CHECK(std::abs(s.k - 90) <= 1);
  CHECK(s.achieved >= 0.36);
  CHECK(s.achieved <= 0.365);
  CHECK_FALSE(s.below_floor);
  // Smallest such k.
  const std::vector<double> before(4, 0.01 + (s.k - 1) * 0.001);
  CHECK(band_area(unit, before) < 0.36);
  CHECK(s.achieved - 0.36 <= s.achieved - band_area(unit, before));

  const std::vector<double> w{1.0, 0.5, 1.0, 0.5};
  const auto a = thicken(unit, w, 0.5, 0.02, 0.001);
  for (int j = 0; j < 4; ++j) CHECK(a.thickness[j] == doctest::Approx(0.02 + w[j] * a.k * 0.001));
  CHECK(a.achieved >= 0.5);

  const auto floor = thicken(unit, ones, 0.1, 0.1, 0.01);
  CHECK(floor.below_floor);
  CHECK(floor.k == 0);
  CHECK(floor.thickness == std::vector<double>(4, 0.1));

  const auto full = thicken(unit, ones, 1.0, 0.01, 0.001);
  CHECK(full.saturated);
  CHECK(full.achieved == 1.0);
}

TEST_CASE("subdivision") {
  const auto p = block(10, 10);
  const Polygon cell{{0.5, 0.5}, {9.5, 0.5}, {9.5, 9.5}, {0.5, 9.5}};
  const auto uniform = DesignField::uniform(p, 0.3, 0.4, 0.7);
  const auto b0 = element_budget(cell, DesignSampler(p, uniform));
  CHECK(subdivide_if_needed(cell, b0).size() == 1);

  // Cell axes turning through 90 degrees across the cell.
  DesignField turning = uniform;
  for (int e = 0; e < p.grid.elements(); ++e) turning.theta[e] = (e % 10) / 9.0 * kPi / 2;
  const auto b1 = element_budget(cell, DesignSampler(p, turning));
  CHECK(b1.direction_variance > 0.2);
  const auto parts = subdivide_if_needed(cell, b1);
  REQUIRE(parts.size() == 4);
  double area = 0.0;
  for (const auto& c : parts) {
    CHECK(polygon_area(c) > 0.0);
    area += polygon_area(c);
  }
  CHECK(std::abs(area - polygon_area(cell)) < 1e-12);

  const Polygon tri{{0.3, 0.1}, {2.7, 0.4}, {1.1, 3.3}};
  double tri_area = 0.0;
  const auto kids = split_cell(tri);
  REQUIRE(kids.size() == 4);
  for (const auto& c : kids) tri_area += polygon_area(c);
  CHECK(std::abs(tri_area - polygon_area(tri)) < 1e-12);
}

TEST_CASE("rasterization") {
  SUBCASE("solid cell") {
    LatticeDesign d;
    auto c = lattice_cell(square(0, 0, 4), 0.0);
    c.budget.classification = CellClass::Solid;
    d.cells.push_back(c);
    const auto L = rasterize(d, {0, 0}, {4, 4}, 40, 40);
    CHECK(std::all_of(L.pixels.begin(), L.pixels.end(), [](auto v) { return v == 1; }));
    CHECK(L.volume_fraction() == 1.0);
  }
  SUBCASE("unit lattice cell") {
    LatticeDesign d;
    d.cells.push_back(lattice_cell(square(0, 0, 1), 0.1));
    const auto L = rasterize(d, {0, 0}, {1, 1}, 1000, 1000);
    CHECK(std::abs(L.volume_fraction() - 0.36) <= 0.005);
    CHECK(std::all_of(L.cell.begin(), L.cell.end(), [](int c) { return c == 0; }));
  }
  SUBCASE("shared edge") {
    LatticeDesign d;
    d.cells.push_back(lattice_cell(square(0, 0, 1), 0.02));
    d.cells.push_back(lattice_cell(square(1, 0, 1), 0.03));
    const auto L = rasterize(d, {0, 0}, {2, 1}, 400, 200);
    for (int j = 0; j < 200; ++j) {
      for (int i = 196; i < 206; ++i) CHECK(L.at(i, j) == 1);
      if (j > 10 && j < 190) {
        CHECK(L.at(195, j) == 0);
        CHECK(L.at(206, j) == 0);
      }
    }
    CHECK(L.cell[100 * 400 + 50] == 0);
    CHECK(L.cell[100 * 400 + 350] == 1);
  }
  SUBCASE("void cells and the domain mask") {
    LatticeDesign d;
    auto c = lattice_cell(square(0, 0, 2), 0.5);
    c.budget.classification = CellClass::Void;
    d.cells.push_back(c);
    auto p = block(2, 2);
    p.active = {1, 1, 1, 0};
    const auto L = rasterize(d, {0, 0}, {3, 3}, 30, 30, &p);
    CHECK(std::all_of(L.pixels.begin(), L.pixels.end(), [](auto v) { return v == 0; }));
    CHECK(L.inside[0] == 1);
    CHECK(L.inside[29 * 30 + 29] == 0);
    CHECK(L.inside[15 * 30 + 15] == 0);
    CHECK(L.cell[29 * 30 + 29] == -1);
  }
}

TEST_CASE("refined problems") {
  ProblemDefinition coarse = block(4, 2);
  const auto fine = refine_problem(coarse, 4);
  CHECK(fine.grid == GridShape{16, 8});
  // The fixed left edge maps onto the fixed fine left edge only.
  CHECK(fine.supports.size() == 9);
  for (const auto& s : fine.supports) CHECK(s.node % 17 == 0);
  Vec2 total = Vec2::Zero(), moment = Vec2::Zero();
  for (const auto& l : fine.loads) {
    total += l.force;
    moment.x() += l.force.y() * fine.grid.node_position(l.node).y();
  }
  CHECK(total.x() == doctest::Approx(0.0));
  CHECK(total.y() == doctest::Approx(-1.0));
  CHECK(moment.x() / total.y() == doctest::Approx(4.0));  // centred on the coarse node
  CHECK(fine.loads.size() == 7);

  ProblemDefinition ends = coarse;
  ends.supports = {{coarse.grid.node(0, 0), true, true}, {coarse.grid.node(0, 2), true, true}};
  CHECK(refine_problem(ends, 4).supports.size() == 10);

  ProblemDefinition masked = block(4, 4);
  masked.active.assign(16, 1);
  masked.active[masked.grid.element(3, 3)] = 0;
  const auto mf = refine_problem(masked, 2);
  CHECK(mf.active_count() == 60);
  CHECK_THROWS_AS(refine_problem(coarse, 0), InvalidArgument);
}

TEST_CASE("load pads") {
  ProblemDefinition p = block(6, 4);
  p.loads = {{p.grid.node(6, 2), {0.0, -1.0}}, {p.grid.node(3, 2), {1.0, 0.0}},
             {p.grid.node(1, 1), {0.0, 0.0}}};
  p.active.assign(24, 1);
  p.active[p.grid.element(2, 2)] = 0;
  BinaryLayout b;
  b.nx = 6;
  b.ny = 4;
  b.pixels.assign(24, 0);
  b.pixels[p.grid.element(3, 1)] = 1;
  // Edge load: two pixels. Interior load: four minus one inactive and one already solid.
  CHECK(pad_loads(b, p) == 4);
  for (auto [i, j] : {std::pair{5, 1}, {5, 2}, {2, 1}, {3, 1}, {3, 2}}) CHECK(b.at(i, j) == 1);
  CHECK(b.at(2, 2) == 0);
  CHECK(b.at(0, 0) == 0);
  CHECK(pad_loads(b, p) == 0);
  BinaryLayout wrong;
  wrong.nx = 3;
  wrong.ny = 2;
  CHECK_THROWS_AS(pad_loads(wrong, p), InvalidArgument);
}

TEST_CASE("binary evaluation") {
  const auto fine = refine_problem(block(8, 4), 2);
  BinaryLayout L;
  L.nx = 16;
  L.ny = 8;
  L.pixels.assign(128, 1);
  L.inside.assign(128, 1);
  L.cell.assign(128, -1);
  const auto C = isotropic_tensor(1.0, 0.3);
  const std::vector<ElasticityTensor> tensors(128, C);
  SolverOptions direct;
  direct.preconditioner = Preconditioner::Direct;
  const double c0 = compliance(fine.load_vector(), assemble_solve(fine, tensors, direct));
  const auto full = evaluate_binary(fine, L, direct);
  CHECK(full.compliance == doctest::Approx(c0).epsilon(1e-10));
  CHECK(full.volume == 1.0);
  CHECK(full.floating_pixels == 0);

  // A solid speck surrounded by void barely matters and is reported.
  for (int j = 2; j < 6; ++j)
    for (int i = 9; i < 12; ++i) L.pixels[j * 16 + i] = 0;
  const auto cut = evaluate_binary(fine, L, direct);
  L.pixels[3 * 16 + 10] = 1;
  const auto speck = evaluate_binary(fine, L, direct);
  CHECK(speck.floating_pixels == 1);
  CHECK(speck.compliance == doctest::Approx(cut.compliance).epsilon(1e-4));
  CHECK(cut.compliance > c0);
}

TEST_CASE("dehomogenizing a small mesh") {
  const auto p = block(8, 8);
  const auto design = DesignField::uniform(p, 0.3, 0.5, 0.0);
  QuadDominantMesh mesh;
  for (int j = 0; j <= 4; ++j)
    for (int i = 0; i <= 4; ++i) mesh.nodes.push_back({2.0 * i, 2.0 * j});
  for (int j = 0; j < 4; ++j)
    for (int i = 0; i < 4; ++i)
      mesh.cells.push_back({j * 5 + i, j * 5 + i + 1, (j + 1) * 5 + i + 1, (j + 1) * 5 + i});
  DehomogenizationOptions o;
  o.nx = 160;
  const auto d = dehomogenize(mesh, p, design, o);
  REQUIRE(d.cells.size() == 16);
  CHECK(d.subdivided == 0);
  for (const auto& c : d.cells) {
    CHECK(c.budget.v_star == doctest::Approx(0.85));
    CHECK(c.achieved >= c.budget.v_star);
    CHECK(c.achieved - c.budget.v_star < 0.01);
    REQUIRE(c.weights.size() == 4);
    CHECK(c.weights[0] == 1.0);
    CHECK(c.weights[1] == doctest::Approx(0.5 / 0.7));
    CHECK(c.weights[2] == 1.0);
    CHECK(c.weights[3] == doctest::Approx(0.5 / 0.7));
    CHECK(c.nodes[0] >= 0);
  }
  const auto L = rasterize(d, {0, 0}, {8, 8}, 160, 160, &p);
  CHECK(std::abs(L.volume_fraction() - design.mean_density(p)) < 0.02);
}

TEST_CASE("graymap and edge files") {
  BinaryLayout L;
  L.nx = 5;
  L.ny = 3;
  L.pixels = {1, 0, 0, 0, 0, 0, 1, 0, 1, 0, 1, 1, 1, 1, 1};
  L.inside.assign(15, 1);
  L.cell.assign(15, -1);
  const auto dir = std::filesystem::temp_directory_path();
  for (bool binary : {true, false}) {
    const auto file = dir / (binary ? "dehomo_p5.pgm" : "dehomo_p2.pgm");
    write_pgm(file, L, binary);
    const auto back = read_pgm(file);
    CHECK(back.nx == 5);
    CHECK(back.ny == 3);
    CHECK(back.pixels == L.pixels);
    std::ifstream in(file, std::ios::binary);
    std::string magic;
    in >> magic;
    CHECK(magic == (binary ? "P5" : "P2"));
    if (!binary) {
      std::string line;
      for (int k = 0; k < 3; ++k) std::getline(in, line);
      std::getline(in, line);
      CHECK(line == "255 255 255 255 255");  // top row first
    }
    std::filesystem::remove(file);
  }
  const auto bad = dir / "dehomo_bad.pgm";
  std::ofstream(bad) << "P6\n1 1\n255\n\0";
  CHECK_THROWS_AS(read_pgm(bad), FormatError);
  std::filesystem::remove(bad);

  LatticeDesign d;
  d.cells.push_back(lattice_cell(square(0, 0, 1), 0.1));
  d.cells[0].nodes = {4, 5, 9, 8};
  auto solid = lattice_cell(square(1, 0, 1), 0.0);
  solid.budget.classification = CellClass::Solid;
  d.cells.push_back(solid);
  const auto csv = dir / "dehomo_edges.csv";
  write_edge_thickness(csv, d);
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "cell,node_a,node_b,ax,ay,bx,by,thickness,weight");
  int rows = 0;
  std::string first;
  while (std::getline(in, line)) {
    if (rows == 0) first = line;
    ++rows;
  }
  CHECK(rows == 4);
  CHECK(first == "0,4,5,0,0,1,0,0.10000000000000001,1");
  std::filesystem::remove(csv);
}
