#include "dehomo/dehomogenizer.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace dehomo {

const char* cell_class_name(CellClass c) {
  switch (c) {
    case CellClass::Void: return "void";
    case CellClass::Solid: return "solid";
    case CellClass::Lattice: return "lattice";
  }
  return "?";
}

namespace {

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

double segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double l2 = ab.squaredNorm();
  const double t = l2 > 0.0 ? std::clamp((p - a).dot(ab) / l2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

Vec2 perp(const Vec2& v) { return {-v.y(), v.x()}; }

/// Flips `v` onto the half-plane of `ref`.
Vec2 aligned(const Vec2& v, const Vec2& ref) { return v.dot(ref) < 0.0 ? Vec2(-v) : v; }

/// Bilinear map of the unit square onto the cell; triangles repeat their last vertex.
struct BilinearMap {
  std::array<Vec2, 4> p;

  explicit BilinearMap(std::span<const Vec2> cell) {
    for (int k = 0; k < 4; ++k) p[k] = cell[std::min<std::size_t>(k, cell.size() - 1)];
  }
  [[nodiscard]] Vec2 at(double s, double t) const {
    return (1 - s) * (1 - t) * p[0] + s * (1 - t) * p[1] + s * t * p[2] + (1 - s) * t * p[3];
  }
  [[nodiscard]] double jacobian(double s, double t) const {
    const Vec2 ds = (1 - t) * (p[1] - p[0]) + t * (p[2] - p[3]);
    const Vec2 dt = (1 - s) * (p[3] - p[0]) + s * (p[2] - p[1]);
    return cross2(ds, dt);
  }
};

std::vector<Vec2> clip_half_plane(const std::vector<Vec2>& poly, const Vec2& n, double c) {
  // Keeps n.x >= c.
  std::vector<Vec2> out;
  const std::size_t m = poly.size();
  for (std::size_t k = 0; k < m; ++k) {
    const Vec2& a = poly[k];
    const Vec2& b = poly[(k + 1) % m];
    const double da = n.dot(a) - c, db = n.dot(b) - c;
    if (da >= 0) out.push_back(a);
    if ((da >= 0) != (db >= 0)) out.push_back(a + (b - a) * (da / (da - db)));
  }
  return out;
}

bool is_convex(std::span<const Vec2> poly) {
  const std::size_t n = poly.size();
  double scale = 0.0;
  for (const auto& p : poly) scale = std::max(scale, (p - poly[0]).squaredNorm());
  for (std::size_t k = 0; k < n; ++k) {
    const Vec2 e0 = poly[(k + 1) % n] - poly[k];
    const Vec2 e1 = poly[(k + 2) % n] - poly[(k + 1) % n];
    if (cross2(e0, e1) < -1e-12 * scale) return false;
  }
  return true;
}

bool covered(const Vec2& p, std::span<const Vec2> poly, std::span<const double> t) {
  const std::size_t n = poly.size();
  for (std::size_t j = 0; j < n; ++j)
    if (segment_distance(p, poly[j], poly[(j + 1) % n]) <= t[j]) return true;
  return false;
}

std::vector<Vec2> counter_clockwise(std::span<const Vec2> cell, std::vector<double>* t = nullptr) {
  std::vector<Vec2> poly(cell.begin(), cell.end());
  if (polygon_area(poly) < 0) {
    std::reverse(poly.begin(), poly.end());
    // Edge j = (p_j, p_j+1) becomes edge n-2-j after reversal.
    if (t) {
      const std::size_t n = t->size();
      std::vector<double> r(n);
      for (std::size_t j = 0; j < n; ++j) r[(2 * n - 2 - j) % n] = (*t)[j];
      *t = std::move(r);
    }
  }
  return poly;
}

}  // namespace

// ---------------------------------------------------------------------------
// Budgets
// ---------------------------------------------------------------------------

DesignSampler::DesignSampler(const ProblemDefinition& problem, const DesignField& design)
    : problem_(problem), design_(design) {
  if (int(design.size()) != problem.grid.elements())
    throw InvalidArgument("design does not match the problem grid");
}

DesignSampler::Sample DesignSampler::at(const Vec2& p) const {
  const auto& g = problem_.grid;
  const double x = std::clamp(p.x() - 0.5, 0.0, double(g.nx - 1));
  const double y = std::clamp(p.y() - 0.5, 0.0, double(g.ny - 1));
  const int i0 = std::min(int(x), std::max(g.nx - 2, 0));
  const int j0 = std::min(int(y), std::max(g.ny - 2, 0));
  const double fx = x - i0, fy = y - j0;

  double wsum = 0.0, rho = 0.0, ax = 0.0, ay = 0.0;
  Vec2 doubled = Vec2::Zero();
  for (int dj = 0; dj <= 1; ++dj) {
    for (int di = 0; di <= 1; ++di) {
      const int i = i0 + di, j = j0 + dj;
      if (i >= g.nx || j >= g.ny) continue;
      const int e = g.element(i, j);
      const double w = (di ? fx : 1 - fx) * (dj ? fy : 1 - fy);
      if (w <= 0.0 || !problem_.is_active(e)) continue;
      wsum += w;
      rho += w * design_.density(e);
      ax += w * design_.alpha_x[e];
      ay += w * design_.alpha_y[e];
      doubled += w * direction_of(2.0 * design_.theta[e]);
    }
  }
  const int ci = std::clamp(int(std::floor(p.x())), 0, g.nx - 1);
  const int cj = std::clamp(int(std::floor(p.y())), 0, g.ny - 1);
  const int home = g.element(ci, cj);
  if (wsum <= 1e-12) {
    if (!problem_.is_active(home)) return {0.0, 1.0, 1.0, Vec2::UnitX()};
    return {design_.density(home), design_.alpha_x[home], design_.alpha_y[home],
            direction_of(design_.theta[home])};
  }
  const double angle = doubled.norm() > 1e-12 * wsum ? 0.5 * std::atan2(doubled.y(), doubled.x())
                                                      : design_.theta[home];
  return {rho / wsum, ax / wsum, ay / wsum, direction_of(angle)};
}

CellClass classify(double v_star, const BudgetOptions& options) {
  if (v_star < options.void_threshold) return CellClass::Void;
  if (v_star > options.solid_threshold) return CellClass::Solid;
  return CellClass::Lattice;
}

ElementBudget element_budget(std::span<const Vec2> cell, const DesignSampler& sampler,
                             const BudgetOptions& options) {
  if (cell.size() < 3 || cell.size() > 4) throw InvalidArgument("cells must have 3 or 4 nodes");
  if (options.q < 1) throw InvalidArgument("sampling density must be positive");
  const BilinearMap map(cell);
  const int q = options.q;
  double wsum = 0.0, rho = 0.0, p1 = 0.0, p2 = 0.0;
  Vec2 mean = Vec2::Zero(), doubled = Vec2::Zero();
  for (int b = 0; b < q; ++b) {
    for (int a = 0; a < q; ++a) {
      const double s = (a + 0.5) / q, t = (b + 0.5) / q;
      const double w = std::abs(map.jacobian(s, t));
      if (w <= 0.0) continue;
      const auto smp = sampler.at(map.at(s, t));
      wsum += w;
      rho += w * smp.density;
      p1 += w * (1.0 - smp.alpha_x);
      p2 += w * (1.0 - smp.alpha_y);
      mean += w * (mean.squaredNorm() > 0.0 ? aligned(smp.u_dir, mean) : smp.u_dir);
      const double c = smp.u_dir.x(), sn = smp.u_dir.y();
      doubled += w * Vec2(c * c - sn * sn, 2 * c * sn);
    }
  }
  if (wsum <= 0.0) throw DegeneratePolygon("cell has no area");
  ElementBudget b;
  b.v_star = std::clamp(rho / wsum, 0.0, 1.0);
  b.phi1_raw = p1 / wsum;
  b.phi2_raw = p2 / wsum;
  const double top = std::max(b.phi1_raw, b.phi2_raw);
  if (top > 0.0) {
    b.phi1 = b.phi1_raw / top;
    b.phi2 = b.phi2_raw / top;
  }
  if (mean.norm() > 0.0) b.u_dir = mean.normalized();
  b.v_dir = perp(b.u_dir);
  b.direction_variance = std::clamp(1.0 - doubled.norm() / wsum, 0.0, 1.0);
  b.classification = classify(b.v_star, options);
  return b;
}

std::vector<double> edge_weights(std::span<const Vec2> cell, const ElementBudget& budget) {
  const std::size_t n = cell.size();
  auto edge = [&](std::size_t j) -> Vec2 { return cell[(j + 1) % n] - cell[j]; };
  auto weight = [&](const Vec2& d) {
    if (d.squaredNorm() == 0.0) return budget.phi1;
    return line_angle_between(d, budget.u_dir) < line_angle_between(d, budget.v_dir) ? budget.phi1
                                                                                     : budget.phi2;
  };
  auto pair_mean = [&](std::size_t a, std::size_t b) -> Vec2 {
    const Vec2 da = edge(a), db = edge(b);
    const Vec2 ua = da.squaredNorm() > 0 ? Vec2(da.normalized()) : Vec2::Zero();
    const Vec2 ub = db.squaredNorm() > 0 ? Vec2(db.normalized()) : Vec2::Zero();
    const Vec2 m = ua + aligned(ub, ua);
    return m.squaredNorm() > 1e-24 ? m : ua;
  };

  std::vector<double> w(n);
  if (n == 4) {
    for (std::size_t j = 0; j < 2; ++j) w[j] = w[j + 2] = weight(pair_mean(j, j + 2));
  } else if (n == 3) {
    // Collapse at the widest angle c: edges c and c+2 meet there and form the opposite pair.
    std::size_t c = 0;
    double widest = -1.0;
    for (std::size_t k = 0; k < 3; ++k) {
      const Vec2 a = cell[(k + 1) % 3] - cell[k], b = cell[(k + 2) % 3] - cell[k];
      const double angle = std::atan2(std::abs(cross2(a, b)), a.dot(b));
      if (angle > widest) {
        widest = angle;
        c = k;
      }
    }
    w[c] = w[(c + 2) % 3] = weight(pair_mean(c, (c + 2) % 3));
    w[(c + 1) % 3] = weight(edge((c + 1) % 3));
  } else {
    for (std::size_t j = 0; j < n; ++j) w[j] = weight(edge(j));
  }
  return w;
}

// ---------------------------------------------------------------------------
// Band area and thickening
// ---------------------------------------------------------------------------

double band_area(std::span<const Vec2> cell, std::span<const double> thickness) {
  if (thickness.size() != cell.size()) throw InvalidArgument("one thickness per edge expected");
  std::vector<double> t(thickness.begin(), thickness.end());
  const auto poly = counter_clockwise(cell, &t);
  const double area = polygon_area(poly);
  if (!(std::abs(area) >= 1e-12)) throw DegeneratePolygon("cell area below 1e-12");
  const std::size_t n = poly.size();
  for (double tj : t)
    if (tj < 0) throw InvalidArgument("negative thickness");

  if (is_convex(poly)) {
    std::vector<Vec2> inner = poly;
    for (std::size_t j = 0; j < n && !inner.empty(); ++j) {
      const Vec2 d = poly[(j + 1) % n] - poly[j];
      if (d.squaredNorm() == 0.0 || t[j] == 0.0) continue;
      const Vec2 normal = perp(d).normalized();
      inner = clip_half_plane(inner, normal, normal.dot(poly[j]) + t[j]);
    }
    const double rest = inner.size() >= 3 ? std::max(polygon_area(inner), 0.0) : 0.0;
    return std::clamp(1.0 - rest / area, 0.0, 1.0);
  }

  // Non-convex: midpoint quadrature of the distance rule over the bounding box.
  constexpr int kGrid = 128;
  Vec2 lo = poly[0], hi = poly[0];
  for (const auto& p : poly) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec2 step = (hi - lo) / kGrid;
  int inside = 0, hit = 0;
  for (int b = 0; b < kGrid; ++b) {
    for (int a = 0; a < kGrid; ++a) {
      const Vec2 p = lo + Vec2((a + 0.5) * step.x(), (b + 0.5) * step.y());
      if (!point_in_polygon(p, poly, 0.0)) continue;
      ++inside;
      if (covered(p, poly, t)) ++hit;
    }
  }
  return inside ? double(hit) / inside : 1.0;
}

double band_area_sampled(std::span<const Vec2> cell, std::span<const double> thickness,
                         int samples, std::uint64_t seed) {
  if (thickness.size() != cell.size()) throw InvalidArgument("one thickness per edge expected");
  if (samples < 1) throw InvalidArgument("sample count must be positive");
  if (!(std::abs(polygon_area(cell)) >= 1e-12)) throw DegeneratePolygon("cell area below 1e-12");
  Vec2 lo = cell[0], hi = cell[0];
  for (const auto& p : cell) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  // Jittered strata over the box, sized so that about `samples` points land inside.
  const double fill = std::abs(polygon_area(cell)) / ((hi.x() - lo.x()) * (hi.y() - lo.y()));
  const int m = std::max(1, int(std::ceil(std::sqrt(samples / fill))));
  const Vec2 step = (hi - lo) / m;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int inside = 0, hit = 0;
  for (int b = 0; b < m; ++b) {
    for (int a = 0; a < m; ++a) {
      const Vec2 p = lo + Vec2((a + u(rng)) * step.x(), (b + u(rng)) * step.y());
      if (!point_in_polygon(p, cell, 0.0)) continue;
      ++inside;
      if (covered(p, cell, thickness)) ++hit;
    }
  }
  return inside ? double(hit) / inside : 0.0;
}

EdgeThicknessSolution thicken(std::span<const Vec2> cell, std::span<const double> weights,
                              double v_star, double t0, double delta) {
  if (weights.size() != cell.size()) throw InvalidArgument("one weight per edge expected");
  if (!(t0 >= 0.0) || !(delta > 0.0)) throw InvalidArgument("t0 must be >= 0 and delta > 0");
  v_star = std::clamp(v_star, 0.0, 1.0);
  std::vector<double> t(cell.size());
  auto at = [&](long k) {
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = t0 + weights[j] * double(k) * delta;
    return band_area(cell, t);
  };

  EdgeThicknessSolution s;
  const double floor_area = at(0);
  if (floor_area >= v_star) {
    s.below_floor = floor_area > v_star;
    s.thickness = t;
    s.achieved = floor_area;
    s.saturated = floor_area >= 1.0 - 1e-12;
    return s;
  }
  // Exponential search, then bisection for the smallest k reaching the budget.
  constexpr long kMaxK = 1L << 30;
  long lo = 0, hi = 1;
  double a = at(hi);
  while (a < v_star && a < 1.0 - 1e-12 && hi < kMaxK) {
    lo = hi;
    hi *= 2;
    a = at(hi);
  }
  if (a < v_star && a >= 1.0 - 1e-12) {
    // Saturates before the budget: smallest k reaching full coverage.
    while (hi - lo > 1) {
      const long mid = lo + (hi - lo) / 2;
      (at(mid) >= 1.0 - 1e-12 ? hi : lo) = mid;
    }
  } else {
    while (hi - lo > 1) {
      const long mid = lo + (hi - lo) / 2;
      (at(mid) >= v_star ? hi : lo) = mid;
    }
  }
  s.achieved = at(hi);
  s.thickness = t;
  s.k = int(std::min<long>(hi, std::numeric_limits<int>::max()));
  s.saturated = s.achieved >= 1.0 - 1e-12;
  return s;
}

std::vector<std::vector<Vec2>> split_cell(std::span<const Vec2> cell) {
  const std::size_t n = cell.size();
  auto mid = [&](std::size_t a) -> Vec2 { return 0.5 * (cell[a] + cell[(a + 1) % n]); };
  if (n == 4) {
    Vec2 c = Vec2::Zero();
    for (const auto& p : cell) c += p / 4.0;
    const Vec2 m01 = mid(0), m12 = mid(1), m23 = mid(2), m30 = mid(3);
    return {{cell[0], m01, c, m30}, {m01, cell[1], m12, c}, {c, m12, cell[2], m23},
            {m30, c, m23, cell[3]}};
  }
  if (n == 3) {
    const Vec2 m01 = mid(0), m12 = mid(1), m20 = mid(2);
    return {{cell[0], m01, m20}, {m01, cell[1], m12}, {m20, m12, cell[2]}, {m01, m12, m20}};
  }
  return {std::vector<Vec2>(cell.begin(), cell.end())};
}

std::vector<std::vector<Vec2>> subdivide_if_needed(std::span<const Vec2> cell,
                                                   const ElementBudget& budget,
                                                   double threshold) {
  if (budget.direction_variance > threshold) return split_cell(cell);
  return {std::vector<Vec2>(cell.begin(), cell.end())};
}

// ---------------------------------------------------------------------------
// Pipeline over a mesh
// ---------------------------------------------------------------------------

LatticeDesign dehomogenize(const QuadDominantMesh& mesh, const ProblemDefinition& problem,
                           const DesignField& design, const DehomogenizationOptions& options) {
  const int nx = options.nx > 0 ? options.nx : 8 * problem.grid.nx;
  if (nx <= 0) throw InvalidArgument("raster resolution must be positive");
  const double pixel = double(problem.grid.nx) / nx;
  const double t0 = options.t0 * pixel, delta = options.delta * pixel;
  const DesignSampler sampler(problem, design);

  std::vector<std::vector<LatticeCell>> per_cell(mesh.cells.size());
  std::vector<std::uint8_t> split(mesh.cells.size(), 0);
  std::vector<std::string> errors(mesh.cells.size());

#pragma omp parallel for schedule(dynamic, 8)
  for (int c = 0; c < int(mesh.cells.size()); ++c) {
    try {
      const auto poly = mesh.cell_polygon(c);
      const auto budget = element_budget(poly, sampler, options.budget);
      std::vector<std::vector<Vec2>> parts{poly};
      if (options.subdivide) parts = subdivide_if_needed(poly, budget, options.variance_threshold);
      split[c] = parts.size() > 1;
      for (auto& part : parts) {
        LatticeCell lc;
        lc.parent = c;
        lc.budget = parts.size() > 1 ? element_budget(part, sampler, options.budget) : budget;
        for (const auto& p : part) {
          int id = -1;
          for (int node : mesh.cells[c])
            if (mesh.nodes[node] == p) id = node;
          lc.nodes.push_back(id);
        }
        lc.polygon = std::move(part);
        lc.weights = edge_weights(lc.polygon, lc.budget);
        if (lc.budget.classification == CellClass::Lattice) {
          auto sol = thicken(lc.polygon, lc.weights, lc.budget.v_star, t0, delta);
          lc.thickness = std::move(sol.thickness);
          lc.achieved = sol.achieved;
          lc.k = sol.k;
          lc.below_floor = sol.below_floor;
        } else {
          lc.achieved = lc.budget.classification == CellClass::Solid ? 1.0 : 0.0;
        }
        per_cell[c].push_back(std::move(lc));
      }
    } catch (const Error& e) {
      errors[c] = e.what();
    }
  }

  LatticeDesign out;
  for (std::size_t c = 0; c < mesh.cells.size(); ++c) {
    if (!errors[c].empty()) {
      out.warnings.push_back("cell " + std::to_string(c) + ": " + errors[c]);
      continue;
    }
    out.subdivided += split[c];
    for (auto& lc : per_cell[c]) {
      out.below_floor += lc.below_floor;
      out.cells.push_back(std::move(lc));
    }
  }
  if (out.below_floor > 0)
    out.warnings.push_back("BudgetBelowFloor: " + std::to_string(out.below_floor) + " cells");
  return out;
}

// ---------------------------------------------------------------------------
// Raster
// ---------------------------------------------------------------------------

double BinaryLayout::volume_fraction() const {
  std::size_t in = 0, solid = 0;
  for (std::size_t k = 0; k < pixels.size(); ++k) {
    if (!inside.empty() && !inside[k]) continue;
    ++in;
    solid += pixels[k] != 0;
  }
  return in ? double(solid) / double(in) : 0.0;
}

BinaryLayout rasterize(const LatticeDesign& design, Vec2 lo, Vec2 hi, int nx, int ny,
                       const ProblemDefinition* coarse) {
  if (nx <= 0 || ny <= 0) throw InvalidArgument("raster resolution must be positive");
  if (!(hi.x() > lo.x() && hi.y() > lo.y())) throw InvalidArgument("empty raster box");
  BinaryLayout L;
  L.nx = nx;
  L.ny = ny;
  const std::size_t total = std::size_t(nx) * ny;
  L.pixels.assign(total, 0);
  L.cell.assign(total, -1);
  L.inside.assign(total, 1);
  const Vec2 pix((hi.x() - lo.x()) / nx, (hi.y() - lo.y()) / ny);

  // Bucket grid over the cell bounding boxes.
  const int ncell = int(design.cells.size());
  const double box_area = (hi.x() - lo.x()) * (hi.y() - lo.y());
  const double bucket = std::max(std::sqrt(box_area / std::max(ncell, 1)), 1e-9);
  const int bx = std::max(1, int(std::ceil((hi.x() - lo.x()) / bucket)));
  const int by = std::max(1, int(std::ceil((hi.y() - lo.y()) / bucket)));
  std::vector<std::vector<int>> buckets(std::size_t(bx) * by);
  auto bucket_of = [&](double v, double origin, int count) {
    return std::clamp(int(std::floor((v - origin) / bucket)), 0, count - 1);
  };
  for (int c = 0; c < ncell; ++c) {
    Vec2 a = design.cells[c].polygon[0], b = a;
    for (const auto& p : design.cells[c].polygon) {
      a = a.cwiseMin(p);
      b = b.cwiseMax(p);
    }
    for (int j = bucket_of(a.y(), lo.y(), by); j <= bucket_of(b.y(), lo.y(), by); ++j)
      for (int i = bucket_of(a.x(), lo.x(), bx); i <= bucket_of(b.x(), lo.x(), bx); ++i)
        buckets[std::size_t(j) * bx + i].push_back(c);
  }

#pragma omp parallel for schedule(dynamic, 4)
  for (int J = 0; J < ny; ++J) {
    for (int I = 0; I < nx; ++I) {
      const std::size_t k = std::size_t(J) * nx + I;
      const Vec2 p = lo + Vec2((I + 0.5) * pix.x(), (J + 0.5) * pix.y());
      if (coarse) {
        const auto& g = coarse->grid;
        const int ei = int(std::floor(p.x())), ej = int(std::floor(p.y()));
        if (ei < 0 || ej < 0 || ei >= g.nx || ej >= g.ny || !coarse->is_active(g.element(ei, ej))) {
          L.inside[k] = 0;
          continue;
        }
      }
      const auto& cand = buckets[std::size_t(bucket_of(p.y(), lo.y(), by)) * bx +
                                 bucket_of(p.x(), lo.x(), bx)];
      int found = -1, touching = -1;
      for (int c : cand) {
        const auto& poly = design.cells[c].polygon;
        if (point_in_polygon(p, poly, 0.0)) {
          found = c;
          break;
        }
        if (touching < 0) {
          for (std::size_t j = 0; j < poly.size(); ++j)
            if (segment_distance(p, poly[j], poly[(j + 1) % poly.size()]) <= 1e-9) touching = c;
        }
      }
      if (found < 0) found = touching;
      if (found < 0) continue;
      L.cell[k] = found;
      const auto& lc = design.cells[found];
      switch (lc.budget.classification) {
        case CellClass::Solid: L.pixels[k] = 1; break;
        case CellClass::Void: break;
        case CellClass::Lattice: L.pixels[k] = covered(p, lc.polygon, lc.thickness); break;
      }
    }
  }
  return L;
}

// ---------------------------------------------------------------------------
// Fine problem and evaluation
// ---------------------------------------------------------------------------

namespace {

/// True when the coarse grid edge from node (i, j) one step along d separates an active element
/// from an inactive or missing one.
bool boundary_edge(const ProblemDefinition& p, int i, int j, int dx, int dy) {
  const auto& g = p.grid;
  auto active = [&](int ei, int ej) {
    return ei >= 0 && ej >= 0 && ei < g.nx && ej < g.ny && p.is_active(g.element(ei, ej));
  };
  const int ni = i + dx, nj = j + dy;
  if (ni < 0 || nj < 0 || ni > g.nx || nj > g.ny) return false;
  if (dy == 0) {
    const int ei = std::min(i, ni);
    return active(ei, j - 1) != active(ei, j);
  }
  const int ej = std::min(j, nj);
  return active(i - 1, ej) != active(i, ej);
}

constexpr std::array<std::array<int, 2>, 4> kDirections{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};

}  // namespace

int pad_loads(BinaryLayout& layout, const ProblemDefinition& fine) {
  const auto& g = fine.grid;
  if (g.nx != layout.nx || g.ny != layout.ny)
    throw InvalidArgument("layout and problem grids differ");
  int changed = 0;
  for (const auto& load : fine.loads) {
    if (load.force.isZero()) continue;
    const int i = load.node % (g.nx + 1), j = load.node / (g.nx + 1);
    for (int dj = -1; dj <= 0; ++dj)
      for (int di = -1; di <= 0; ++di) {
        const int ei = i + di, ej = j + dj;
        if (ei < 0 || ej < 0 || ei >= g.nx || ej >= g.ny) continue;
        const int e = g.element(ei, ej);
        if (!fine.is_active(e) || layout.pixels[e]) continue;
        layout.pixels[e] = 1;
        ++changed;
      }
  }
  return changed;
}

ProblemDefinition refine_problem(const ProblemDefinition& coarse, int factor) {
  if (factor < 1) throw InvalidArgument("refinement factor must be positive");
  const auto& g = coarse.grid;
  ProblemDefinition fine;
  fine.grid = {g.nx * factor, g.ny * factor};
  fine.youngs_modulus = coarse.youngs_modulus;
  fine.poisson_ratio = coarse.poisson_ratio;
  fine.volume_fraction = coarse.volume_fraction;
  if (!coarse.active.empty()) {
    fine.active.resize(fine.grid.elements());
    for (int J = 0; J < fine.grid.ny; ++J)
      for (int I = 0; I < fine.grid.nx; ++I)
        fine.active[fine.grid.element(I, J)] = coarse.active[g.element(I / factor, J / factor)];
  }
  auto fine_node = [&](int i, int j) { return fine.grid.node(i, j); };

  std::map<int, std::pair<bool, bool>> fixed;
  std::map<int, bool> supported;
  for (const auto& s : coarse.supports) supported[s.node] = true;
  for (const auto& s : coarse.supports) {
    const int ci = s.node % (g.nx + 1), cj = s.node / (g.nx + 1);
    std::vector<std::array<int, 2>> along, towards_support;
    for (const auto& d : kDirections) {
      if (!boundary_edge(coarse, ci, cj, d[0], d[1])) continue;
      along.push_back(d);
      if (supported.count(g.node(ci + d[0], cj + d[1]))) towards_support.push_back(d);
    }
    if (!towards_support.empty()) along = towards_support;
    auto fix = [&](int n) {
      auto& f = fixed[n];
      f.first = f.first || s.fix_x;
      f.second = f.second || s.fix_y;
    };
    fix(fine_node(ci * factor, cj * factor));
    for (const auto& d : along)
      for (int k = 1; k <= factor / 2; ++k)
        fix(fine_node(ci * factor + k * d[0], cj * factor + k * d[1]));
  }
  for (const auto& [n, f] : fixed) fine.supports.push_back({n, f.first, f.second});

  std::map<int, Vec2> forces;
  for (const auto& l : coarse.loads) {
    const int ci = l.node % (g.nx + 1), cj = l.node / (g.nx + 1);
    std::vector<std::pair<int, double>> spread;
    std::vector<std::array<int, 2>> along;
    for (const auto& d : kDirections)
      if (boundary_edge(coarse, ci, cj, d[0], d[1])) along.push_back(d);
    if (!along.empty()) {
      spread.emplace_back(fine_node(ci * factor, cj * factor), 1.0);
      for (const auto& d : along)
        for (int k = 1; k < factor; ++k)
          spread.emplace_back(fine_node(ci * factor + k * d[0], cj * factor + k * d[1]),
                              1.0 - double(k) / factor);
    } else {
      for (int dj = 1 - factor; dj < factor; ++dj)
        for (int di = 1 - factor; di < factor; ++di) {
          const int i = ci * factor + di, j = cj * factor + dj;
          if (i < 0 || j < 0 || i > fine.grid.nx || j > fine.grid.ny) continue;
          if (!fine.node_in_domain(fine_node(i, j))) continue;
          spread.emplace_back(fine_node(i, j), (1.0 - std::abs(di) / double(factor)) *
                                                   (1.0 - std::abs(dj) / double(factor)));
        }
    }
    double total = 0.0;
    for (const auto& [n, w] : spread) total += w;
    for (const auto& [n, w] : spread) {
      auto [it, fresh] = forces.try_emplace(n, Vec2::Zero());
      it->second += l.force * (w / total);
    }
  }
  for (const auto& [n, f] : forces) fine.loads.push_back({n, f});
  return fine;
}

BinaryEvaluation evaluate_binary(const ProblemDefinition& fine, const BinaryLayout& layout,
                                 const SolverOptions& solver) {
  if (layout.nx != fine.grid.nx || layout.ny != fine.grid.ny)
    throw InvalidArgument("layout does not match the fine grid");
  const auto C = isotropic_tensor(fine.youngs_modulus, fine.poisson_ratio);
  const auto& g = fine.grid;
  const auto fixed = fine.constrained_dofs();
  auto solid = [&](int e) { return fine.is_active(e) && layout.pixels[e] != 0; };

  // Solid pieces sharing nodes with a support.
  std::vector<std::uint8_t> grounded(layout.pixels.size(), 0);
  std::vector<int> stack;
  for (int e = 0; e < g.elements(); ++e) {
    if (!solid(e) || grounded[e]) continue;
    bool supported = false;
    for (int n : g.element_nodes(e)) supported = supported || fixed[2 * n] || fixed[2 * n + 1];
    if (!supported) continue;
    grounded[e] = 1;
    stack.push_back(e);
    while (!stack.empty()) {
      const int c = stack.back();
      stack.pop_back();
      const int i = c % g.nx, j = c / g.nx;
      for (int b = std::max(j - 1, 0); b <= std::min(j + 1, g.ny - 1); ++b) {
        for (int a = std::max(i - 1, 0); a <= std::min(i + 1, g.nx - 1); ++a) {
          const int k = g.element(a, b);
          if (solid(k) && !grounded[k]) {
            grounded[k] = 1;
            stack.push_back(k);
          }
        }
      }
    }
  }

  BinaryEvaluation r;
  ElementMaterials m;
  m.table = {element_stiffness(C), element_stiffness(kVoidStiffnessRatio * C)};
  m.index.resize(layout.pixels.size());
  for (int e = 0; e < g.elements(); ++e) {
    m.index[e] = fine.is_active(e) ? (grounded[e] ? 0 : 1) : -1;
    r.floating_pixels += solid(e) && !grounded[e];
  }
  // Thin members joined at pixel corners stall multigrid; factor directly unless told otherwise.
  SolverOptions options = solver;
  if (options.preconditioner == Preconditioner::Auto) options.preconditioner = Preconditioner::Direct;
  const Eigen::VectorXd u = solve_displacements(fine, m, options, &r.stats);
  r.compliance = compliance(fine.load_vector(), u);
  r.volume = layout.volume_fraction();
  return r;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

void write_pgm(const std::filesystem::path& file, const BinaryLayout& layout, bool binary) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write " + file.string());
  out << (binary ? "P5" : "P2") << "\n" << layout.nx << " " << layout.ny << "\n255\n";
  for (int j = layout.ny - 1; j >= 0; --j) {
    if (binary) {
      std::string row(std::size_t(layout.nx), '\0');
      for (int i = 0; i < layout.nx; ++i) row[i] = layout.at(i, j) ? char(255) : char(0);
      out.write(row.data(), std::streamsize(row.size()));
    } else {
      for (int i = 0; i < layout.nx; ++i) out << (i ? " " : "") << (layout.at(i, j) ? 255 : 0);
      out << "\n";
    }
  }
}

BinaryLayout read_pgm(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot read " + file.string());
  auto token = [&]() {
    std::string t;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
        if (!t.empty()) break;
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
      } else {
        t += ch;
      }
    }
    if (t.empty()) throw FormatError("truncated graymap header");
    return t;
  };
  const std::string magic = token();
  if (magic != "P2" && magic != "P5") throw FormatError("not a P2/P5 graymap");
  BinaryLayout L;
  int maxval = 0;
  try {
    L.nx = std::stoi(token());
    L.ny = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::logic_error&) {
    throw FormatError("malformed graymap header");
  }
  if (L.nx <= 0 || L.ny <= 0 || maxval <= 0 || maxval > 255) throw FormatError("unsupported graymap");
  const std::size_t total = std::size_t(L.nx) * L.ny;
  L.pixels.assign(total, 0);
  L.cell.assign(total, -1);
  L.inside.assign(total, 1);
  for (int j = L.ny - 1; j >= 0; --j) {
    for (int i = 0; i < L.nx; ++i) {
      int v = 0;
      if (magic == "P5") {
        const int ch = in.get();
        if (ch == EOF) throw FormatError("truncated graymap data");
        v = ch;
      } else if (!(in >> v)) {
        throw FormatError("truncated graymap data");
      }
      L.pixels[std::size_t(j) * L.nx + i] = 2 * v >= maxval;
    }
  }
  return L;
}

void write_edge_thickness(const std::filesystem::path& file, const LatticeDesign& design) {
  std::ofstream out(file);
  if (!out) throw InvalidArgument("cannot write " + file.string());
  out << "cell,node_a,node_b,ax,ay,bx,by,thickness,weight\n";
  char buf[256];
  for (std::size_t c = 0; c < design.cells.size(); ++c) {
    const auto& lc = design.cells[c];
    if (lc.budget.classification != CellClass::Lattice) continue;
    const std::size_t n = lc.polygon.size();
    for (std::size_t j = 0; j < n; ++j) {
      const Vec2 &a = lc.polygon[j], &b = lc.polygon[(j + 1) % n];
      std::snprintf(buf, sizeof buf, "%zu,%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", c,
                    lc.nodes[j], lc.nodes[(j + 1) % n], a.x(), a.y(), b.x(), b.y(),
                    lc.thickness[j], lc.weights[j]);
      out << buf;
    }
  }
}

}  // namespace dehomo
