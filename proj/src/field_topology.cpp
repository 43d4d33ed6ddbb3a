#include "dehomo/field_topology.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace dehomo {

PrincipalStress principal_decompose(const StressTensor2D& s) {
  const double mean = 0.5 * (s.sxx + s.syy);
  const double a = 0.5 * (s.sxx - s.syy);
  const double r = std::hypot(a, s.txy);
  PrincipalStress p;
  p.s1 = mean + r;
  p.s2 = mean - r;
  p.degenerate = p.s1 - p.s2 < 1e-12 * (std::abs(p.s1) + std::abs(p.s2) + 1e-30);
  p.angle1 = p.degenerate ? 0.0 : wrap_line_angle(0.5 * std::atan2(s.txy, a));
  p.dir1 = direction_of(p.angle1);
  p.dir2 = {-p.dir1.y(), p.dir1.x()};
  return p;
}

// ---------------------------------------------------------------------------
// Field
// ---------------------------------------------------------------------------

DirectionField::DirectionField(Vec2 origin, double spacing, int ni, int nj,
                               std::vector<StressTensor2D> samples)
    : origin_(origin), h_(spacing), ni_(ni), nj_(nj), samples_(std::move(samples)) {
  if (ni_ < 2 || nj_ < 2 || !(h_ > 0.0) || int(samples_.size()) != ni_ * nj_)
    throw InvalidArgument("direction field needs at least 2x2 samples");
  lo_ = origin_;
  hi_ = node_position(ni_ - 1, nj_ - 1);
  update_scale();
}

DirectionField DirectionField::from_elements(const GridShape& grid,
                                             std::span<const std::uint8_t> active,
                                             std::span<const StressTensor2D> stresses) {
  if (int(stresses.size()) != grid.elements()) throw InvalidArgument("stress field size mismatch");
  if (grid.nx < 2 || grid.ny < 2) throw InvalidArgument("direction field needs at least 2x2 elements");
  std::vector<StressTensor2D> s(stresses.begin(), stresses.end());
  std::vector<std::uint8_t> filled(grid.elements(), 1);
  if (!active.empty()) {
    for (int e = 0; e < grid.elements(); ++e) filled[e] = active[e];
    // Layer-by-layer extension into the cut-outs.
    bool changed = true;
    while (changed) {
      changed = false;
      std::vector<std::uint8_t> next = filled;
      for (int e = 0; e < grid.elements(); ++e) {
        if (filled[e]) continue;
        const int i = e % grid.nx, j = e / grid.nx;
        Vec3 sum = Vec3::Zero();
        int n = 0;
        for (auto [di, dj] : {std::pair{-1, 0}, std::pair{1, 0}, std::pair{0, -1}, std::pair{0, 1}}) {
          const int ii = i + di, jj = j + dj;
          if (ii < 0 || jj < 0 || ii >= grid.nx || jj >= grid.ny) continue;
          const int f = grid.element(ii, jj);
          if (!filled[f]) continue;
          sum += s[f].voigt();
          ++n;
        }
        if (n == 0) continue;
        sum /= n;
        s[e] = {sum[0], sum[1], sum[2]};
        next[e] = 1;
        changed = true;
      }
      filled.swap(next);
    }
  }
  DirectionField f({0.5, 0.5}, 1.0, grid.nx, grid.ny, std::move(s));
  f.lo_ = Vec2::Zero();
  f.hi_ = {double(grid.nx), double(grid.ny)};
  f.cells_ = grid;
  f.active_.assign(active.begin(), active.end());
  return f;
}

void DirectionField::update_scale() {
  scale_ = 0.0;
  for (const auto& s : samples_) scale_ = std::max(scale_, std::hypot(0.5 * (s.sxx - s.syy), s.txy));
}

bool DirectionField::cell_active(int i, int j) const {
  if (cells_.nx == 0) return true;
  if (i < 0 || j < 0 || i >= cells_.nx || j >= cells_.ny) return false;
  return active_.empty() || active_[cells_.element(i, j)] != 0;
}

bool DirectionField::inside(const Vec2& p, double tol) const {
  if (!p.allFinite()) return false;
  if (p.x() < lo_.x() - tol || p.y() < lo_.y() - tol || p.x() > hi_.x() + tol ||
      p.y() > hi_.y() + tol)
    return false;
  if (cells_.nx == 0 || active_.empty()) return true;
  const int i0 = int(std::floor(p.x() - tol)), i1 = int(std::floor(p.x() + tol));
  const int j0 = int(std::floor(p.y() - tol)), j1 = int(std::floor(p.y() + tol));
  for (int j = j0; j <= j1; ++j)
    for (int i = i0; i <= i1; ++i)
      if (cell_active(i, j)) return true;
  return false;
}

namespace {

constexpr double kNegligibleGradient = 1e-6;

struct LatticeCoord {
  int i, j;
  double fx, fy;
  bool clamped_x, clamped_y;
};

LatticeCoord locate(const Vec2& p, Vec2 origin, double h, int ni, int nj) {
  const Vec2 t = (p - origin) / h;
  LatticeCoord c;
  const double tx = std::clamp(t.x(), 0.0, double(ni - 1));
  const double ty = std::clamp(t.y(), 0.0, double(nj - 1));
  c.clamped_x = t.x() < 0.0 || t.x() > ni - 1;
  c.clamped_y = t.y() < 0.0 || t.y() > nj - 1;
  c.i = std::clamp(int(std::floor(tx)), 0, ni - 2);
  c.j = std::clamp(int(std::floor(ty)), 0, nj - 2);
  c.fx = tx - c.i;
  c.fy = ty - c.j;
  return c;
}

}  // namespace

StressTensor2D DirectionField::tensor_at(const Vec2& p) const {
  const auto c = locate(p, origin_, h_, ni_, nj_);
  const Vec3 v = (1 - c.fx) * (1 - c.fy) * sample(c.i, c.j).voigt() +
                 c.fx * (1 - c.fy) * sample(c.i + 1, c.j).voigt() +
                 (1 - c.fx) * c.fy * sample(c.i, c.j + 1).voigt() +
                 c.fx * c.fy * sample(c.i + 1, c.j + 1).voigt();
  return {v[0], v[1], v[2]};
}

void DirectionField::deviator_at(const Vec2& p, double& a, double& b, Eigen::Matrix2d* grad) const {
  const auto c = locate(p, origin_, h_, ni_, nj_);
  auto dev = [](const StressTensor2D& s) { return Vec2(0.5 * (s.sxx - s.syy), s.txy); };
  const Vec2 d00 = dev(sample(c.i, c.j)), d10 = dev(sample(c.i + 1, c.j));
  const Vec2 d01 = dev(sample(c.i, c.j + 1)), d11 = dev(sample(c.i + 1, c.j + 1));
  const Vec2 v = (1 - c.fx) * (1 - c.fy) * d00 + c.fx * (1 - c.fy) * d10 +
                 (1 - c.fx) * c.fy * d01 + c.fx * c.fy * d11;
  a = v.x();
  b = v.y();
  if (grad) {
    // Columns: d/dx, d/dy; rows: a, b.
    const Vec2 dx = c.clamped_x ? Vec2::Zero().eval()
                                : Vec2(((1 - c.fy) * (d10 - d00) + c.fy * (d11 - d01)) / h_);
    const Vec2 dy = c.clamped_y ? Vec2::Zero().eval()
                                : Vec2(((1 - c.fx) * (d01 - d00) + c.fx * (d11 - d10)) / h_);
    grad->col(0) = dx;
    grad->col(1) = dy;
  }
}

DirectionSample interpolate_direction(const DirectionField& field, const Vec2& p, Family family) {
  if (!field.inside(p, 1e-9)) throw OutOfDomain("point outside the field domain");
  const auto ps = principal_decompose(field.tensor_at(p));
  return {family == Family::U ? ps.dir1 : ps.dir2, ps.degenerate};
}

// ---------------------------------------------------------------------------
// Degenerate points
// ---------------------------------------------------------------------------

std::vector<double> separatrix_directions(const Eigen::Vector4d& g) {
  const double ax = g[0], ay = g[1], bx = g[2], by = g[3];
  const double delta = ax * by - ay * bx;
  if (!(std::abs(delta) > 1e-10 * g.squaredNorm())) {
    throw IllConditioned("degenerate point has a rank-deficient linear part");
  }
  // Homogeneous form of b_y t^3 + (b_x + 2 a_y) t^2 + (2 a_x - b_y) t - b_x with t = tan(theta);
  // it also carries the vertical root when b_y vanishes.
  auto f = [&](double th) {
    const double c = std::cos(th), s = std::sin(th);
    return by * s * s * s + (bx + 2 * ay) * s * s * c + (2 * ax - by) * s * c * c - bx * c * c * c;
  };
  constexpr int kSamples = 720;
  std::vector<double> lines;
  double t0 = 0.0, f0 = f(0.0);
  if (f0 == 0.0) lines.push_back(0.0);
  for (int k = 1; k <= kSamples; ++k) {
    const double t1 = kPi * k / kSamples;
    const double f1 = k == kSamples ? -f(0.0) : f(t1);
    if (f1 == 0.0 && k < kSamples) {
      lines.push_back(t1);
    } else if (f0 * f1 < 0.0) {
      double lo = t0, hi = t1, flo = f0;
      for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        if ((fm < 0) == (flo < 0)) {
          lo = mid;
          flo = fm;
        } else {
          hi = mid;
        }
      }
      lines.push_back(0.5 * (lo + hi));
    }
    t0 = t1;
    f0 = f1;
  }
  std::vector<double> rays;
  for (double th : lines) {
    const double c = std::cos(th), s = std::sin(th);
    const double phi = 0.5 * std::atan2(bx * c + by * s, ax * c + ay * s);
    double ray = line_angle_between(direction_of(phi), direction_of(th)) < kPi / 4 ? th : th + kPi;
    ray = std::fmod(ray + 2 * kPi, 2 * kPi);
    rays.push_back(ray);
  }
  std::sort(rays.begin(), rays.end());
  return rays;
}

namespace {

/// Newton on the bilinear deviator restricted to a lattice cell; s, t local in [0, 1].
bool newton_in_cell(const std::array<Vec2, 4>& d, double& s, double& t, double tol) {
  for (int it = 0; it < 50; ++it) {
    const Vec2 v = (1 - s) * (1 - t) * d[0] + s * (1 - t) * d[1] + (1 - s) * t * d[2] + s * t * d[3];
    if (v.cwiseAbs().sum() <= tol) return s > -1e-9 && s < 1 + 1e-9 && t > -1e-9 && t < 1 + 1e-9;
    Eigen::Matrix2d J;
    J.col(0) = (1 - t) * (d[1] - d[0]) + t * (d[3] - d[2]);
    J.col(1) = (1 - s) * (d[2] - d[0]) + s * (d[3] - d[1]);
    const double det = J.determinant();
    if (!(std::abs(det) > 1e-300)) return false;
    const Vec2 step = J.inverse() * v;
    s -= step.x();
    t -= step.y();
    if (!std::isfinite(s) || !std::isfinite(t) || std::abs(s - 0.5) > 2 || std::abs(t - 0.5) > 2)
      return false;
  }
  return false;
}

bool contains_zero(const std::array<Vec2, 4>& d) {
  double amin = d[0].x(), amax = amin, bmin = d[0].y(), bmax = bmin;
  for (const auto& v : d) {
    amin = std::min(amin, v.x());
    amax = std::max(amax, v.x());
    bmin = std::min(bmin, v.y());
    bmax = std::max(bmax, v.y());
  }
  return amin <= 0.0 && amax >= 0.0 && bmin <= 0.0 && bmax >= 0.0;
}

Vec2 bilinear(const std::array<Vec2, 4>& d, double s, double t) {
  return (1 - s) * (1 - t) * d[0] + s * (1 - t) * d[1] + (1 - s) * t * d[2] + s * t * d[3];
}

/// Subdivision fallback: roots in the sub-square [s0, s0 + w] x [t0, t0 + w].
void subdivide(const std::array<Vec2, 4>& d, double s0, double t0, double w, int depth, double tol,
               std::vector<Vec2>& roots) {
  const std::array<Vec2, 4> sub = {bilinear(d, s0, t0), bilinear(d, s0 + w, t0),
                                   bilinear(d, s0, t0 + w), bilinear(d, s0 + w, t0 + w)};
  if (!contains_zero(sub)) return;
  double s = s0 + w / 2, t = t0 + w / 2;
  if (depth >= 20) {
    roots.emplace_back(s, t);
    return;
  }
  if (w < 0.25 && newton_in_cell(d, s, t, tol) && s >= s0 - 1e-9 && s <= s0 + w + 1e-9 &&
      t >= t0 - 1e-9 && t <= t0 + w + 1e-9) {
    roots.emplace_back(s, t);
    return;
  }
  const double hw = w / 2;
  for (int q = 0; q < 4; ++q)
    subdivide(d, s0 + (q % 2) * hw, t0 + (q / 2) * hw, hw, depth + 1, tol, roots);
}

}  // namespace

std::vector<DegeneratePoint> find_degenerate_points(const DirectionField& field) {
  std::vector<DegeneratePoint> out;
  const double tol = 1e-13 * std::max(field.scale(), 1e-300);
  const double h = field.spacing();
  auto dev = [&](int i, int j) {
    const auto& s = field.sample(i, j);
    return Vec2(0.5 * (s.sxx - s.syy), s.txy);
  };
  for (int j = 0; j + 1 < field.nj(); ++j) {
    for (int i = 0; i + 1 < field.ni(); ++i) {
      const std::array<Vec2, 4> d = {dev(i, j), dev(i + 1, j), dev(i, j + 1), dev(i + 1, j + 1)};
      if (!contains_zero(d)) continue;
      if (!field.inside(field.node_position(i, j) + Vec2::Constant(h / 2))) continue;
      std::vector<Vec2> local;
      double s = 0.5, t = 0.5;
      if (newton_in_cell(d, s, t, tol)) {
        local.emplace_back(std::clamp(s, 0.0, 1.0), std::clamp(t, 0.0, 1.0));
      } else {
        subdivide(d, 0.0, 0.0, 1.0, 0, tol, local);
      }
      for (const Vec2& st : local) {
        const Vec2 p = field.node_position(i, j) + h * st;
        const bool dup = std::any_of(out.begin(), out.end(), [&](const DegeneratePoint& q) {
          return (q.position - p).norm() < 1e-3 * h;
        });
        if (dup) continue;
        DegeneratePoint dp;
        dp.position = p;
        // Partials of this cell's interpolant.
        const double sc = st.x(), tc = st.y();
        const Vec2 dx = ((1 - tc) * (d[1] - d[0]) + tc * (d[3] - d[2])) / h;
        const Vec2 dy = ((1 - sc) * (d[2] - d[0]) + sc * (d[3] - d[1])) / h;
        dp.partials << dx.x(), dy.x(), dx.y(), dy.y();
        dp.delta = dx.x() * dy.y() - dy.x() * dx.y();
        dp.kind = dp.delta < 0.0 ? DegeneratePoint::Kind::Trisector : DegeneratePoint::Kind::Wedge;
        try {
          dp.separatrix_angles = separatrix_directions(dp.partials);
        } catch (const IllConditioned&) {
          dp.seedable = false;
        }
        // Zeros of a vanishing stress field (void regions) carry no usable topology.
        if (dp.partials.norm() * h < kNegligibleGradient * field.scale()) dp.seedable = false;
        for (int k = 0; k < 8 && dp.seedable; ++k) {
          const double a = k * kPi / 4;
          if (!field.inside(p + h * direction_of(a), 0.0)) dp.seedable = false;
        }
        out.push_back(std::move(dp));
      }
    }
  }
  return out;
}

void write_degenerate_points(const std::filesystem::path& file,
                             std::span<const DegeneratePoint> points) {
  std::ofstream out(file);
  if (!out) throw FormatError("cannot write " + file.string());
  out << "x,y,kind,delta,angles\n";
  char buf[160];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%s,%.17g,", p.position.x(), p.position.y(),
                  p.kind == DegeneratePoint::Kind::Trisector ? "trisector" : "wedge", p.delta);
    out << buf;
    for (std::size_t k = 0; k < p.separatrix_angles.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%s%.17g", k ? ";" : "", p.separatrix_angles[k]);
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace dehomo
