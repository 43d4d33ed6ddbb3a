#include "dehomo/streamlines.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>
#include <fstream>
#include <map>
#include <sstream>

namespace dehomo {

const char* stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::Boundary: return "boundary";
    case StopReason::Proximity: return "proximity";
    case StopReason::Degenerate: return "degenerate";
    case StopReason::Singularity: return "singularity";
    case StopReason::StepCap: return "step-cap";
    case StopReason::Loop: return "loop";
  }
  return "?";
}

Vec2 Streamline::point_at(double index) const {
  const int n = int(points.size());
  if (n == 0) return Vec2::Zero();
  const double c = std::clamp(index, 0.0, double(n - 1));
  const int k = std::min(int(c), n - 2 < 0 ? 0 : n - 2);
  if (n == 1) return points[0];
  const double t = c - k;
  return (1 - t) * points[k] + t * points[k + 1];
}

int StreamlineSet::count(Family f) const {
  return int(std::count_if(lines.begin(), lines.end(),
                           [&](const Streamline& l) { return l.family == f; }));
}

namespace {

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double l2 = ab.squaredNorm();
  const double t = l2 > 0.0 ? std::clamp((p - a).dot(ab) / l2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

/// Parameters (t, s) of the crossing of ab and cd, if any.
bool segment_intersection(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d, double& t,
                          double& s) {
  const Vec2 r = b - a, w = d - c;
  const double den = cross2(r, w);
  if (std::abs(den) <= 1e-300) return false;
  const Vec2 qp = c - a;
  t = cross2(qp, w) / den;
  s = cross2(qp, r) / den;
  constexpr double eps = 1e-12;
  if (t < -eps || t > 1 + eps || s < -eps || s > 1 + eps) return false;
  t = std::clamp(t, 0.0, 1.0);
  s = std::clamp(s, 0.0, 1.0);
  return true;
}

double segment_distance(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  double t, s;
  if ((a - b).squaredNorm() > 0 && (c - d).squaredNorm() > 0 && segment_intersection(a, b, c, d, t, s))
    return 0.0;
  return std::min({point_segment_distance(a, c, d), point_segment_distance(b, c, d),
                   point_segment_distance(c, a, b), point_segment_distance(d, a, b)});
}

Vec2 aligned(const Vec2& d, const Vec2& heading) { return d.dot(heading) < 0.0 ? Vec2(-d) : d; }

int family_slot(Family f) { return f == Family::U ? 0 : 1; }

}  // namespace

// ---------------------------------------------------------------------------
// Spacing index
// ---------------------------------------------------------------------------

SpacingIndex::SpacingIndex(Vec2 lo, Vec2 hi, double bucket) : lo_(lo), bucket_(bucket) {
  if (!(bucket > 0.0)) throw InvalidArgument("bucket size must be positive");
  bx_ = std::max(1, int(std::ceil((hi.x() - lo.x()) / bucket)));
  by_ = std::max(1, int(std::ceil((hi.y() - lo.y()) / bucket)));
  for (auto& b : buckets_) b.assign(std::size_t(bx_) * by_, {});
}

int SpacingIndex::bucket_x(double x) const {
  return std::clamp(int(std::floor((x - lo_.x()) / bucket_)), 0, bx_ - 1);
}
int SpacingIndex::bucket_y(double y) const {
  return std::clamp(int(std::floor((y - lo_.y()) / bucket_)), 0, by_ - 1);
}

void SpacingIndex::add(const Streamline& line) {
  auto& grid = buckets_[family_slot(line.family)];
  const std::size_t n = line.points.size();
  for (std::size_t k = 0; k < n; ++k) {
    const Vec2& a = line.points[k];
    const Vec2& b = line.points[std::min(k + 1, n - 1)];
    if (k + 1 == n && n > 1) break;
    const int id = int(segs_.size());
    segs_.push_back({a, b, line.id, line.family});
    for (int j = bucket_y(std::min(a.y(), b.y())); j <= bucket_y(std::max(a.y(), b.y())); ++j)
      for (int i = bucket_x(std::min(a.x(), b.x())); i <= bucket_x(std::max(a.x(), b.x())); ++i)
        grid[std::size_t(j) * bx_ + i].push_back(id);
  }
}

double SpacingIndex::distance(Family family, const Vec2& a, const Vec2& b, double limit,
                              int skip_line, int* nearest_line) const {
  if (nearest_line) *nearest_line = -1;
  if (segs_.empty()) return limit;
  const auto& grid = buckets_[family_slot(family)];
  double best = limit;
  const int i0 = bucket_x(std::min(a.x(), b.x()) - limit), i1 = bucket_x(std::max(a.x(), b.x()) + limit);
  const int j0 = bucket_y(std::min(a.y(), b.y()) - limit), j1 = bucket_y(std::max(a.y(), b.y()) + limit);
  for (int j = j0; j <= j1; ++j) {
    for (int i = i0; i <= i1; ++i) {
      for (int id : grid[std::size_t(j) * bx_ + i]) {
        const Segment& s = segs_[id];
        if (s.line == skip_line) continue;
        const double d = segment_distance(a, b, s.a, s.b);
        if (d < best) {
          best = d;
          if (nearest_line) *nearest_line = s.line;
        }
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Tracing
// ---------------------------------------------------------------------------

namespace {

struct HalfTrace {
  std::vector<Vec2> points;
  StopReason stop = StopReason::Boundary;
  int blocker = -1;
  bool closed = false;
};

struct Tracer {
  const DirectionField& field;
  Family family;
  const TraceOptions& opt;
  std::span<const DegeneratePoint> points;
  const SpacingIndex* index;
  int origin_point = -1;
  int max_steps = 0;

  bool direction(const Vec2& p, const Vec2& heading, Vec2& out) const {
    const auto s = interpolate_direction(field, p, family);
    if (s.degenerate) return false;
    out = aligned(s.dir, heading);
    return true;
  }

  /// Last inside point on the segment p -> q, which leaves the domain.
  Vec2 clip(const Vec2& p, const Vec2& q) const {
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      (field.inside(p + mid * (q - p), 0.0) ? lo : hi) = mid;
    }
    return p + lo * (q - p);
  }

  bool near_degenerate(const Vec2& p) const {
    for (std::size_t k = 0; k < points.size(); ++k) {
      if (int(k) == origin_point) continue;
      if ((points[k].position - p).norm() < opt.r_deg) return true;
    }
    return false;
  }

  /// Integrates from `start` with initial heading; `seed` and `loop_check` drive closure.
  HalfTrace run(Vec2 p, Vec2 heading, const Vec2& seed, bool loop_check) const {
    HalfTrace out;
    const double h = opt.step, dt = opt.test_distance();
    const Vec2 origin = origin_point >= 0 ? points[origin_point].position : Vec2(Vec2::Constant(1e300));
    for (int step = 0; step < max_steps; ++step) {
      Vec2 k1, k2, k3, k4, q;
      bool exits = false;
      try {
        if (!direction(p, heading, k1)) {
          out.stop = StopReason::Degenerate;
          return out;
        }
        if (!direction(p + 0.5 * h * k1, heading, k2) || !direction(p + 0.5 * h * k2, heading, k3) ||
            !direction(p + h * k3, heading, k4)) {
          out.stop = StopReason::Degenerate;
          return out;
        }
        const Vec2 d = (k1 + 2 * k2 + 2 * k3 + k4) / 6.0;
        q = p + h * d;
        exits = !field.inside(q, 0.0);
      } catch (const OutOfDomain&) {
        q = p + h * k1;
        exits = true;
      }
      if (exits) {
        if (!field.inside(q, 0.0)) q = clip(p, q);
      }
      if (near_degenerate(q)) {
        out.stop = StopReason::Degenerate;
        return out;
      }
      if (index && (q - origin).norm() >= opt.d_sep) {
        int blocker = -1;
        if (index->distance(family, p, q, dt, -1, &blocker) < dt) {
          out.stop = StopReason::Proximity;
          out.blocker = blocker;
          return out;
        }
      }
      const Vec2 move = q - p;
      if (move.norm() > 0.0) heading = move.normalized();
      if (loop_check && step >= 3 && (q - seed).norm() < h) {
        out.points.push_back(q);
        out.points.push_back(seed);
        out.stop = StopReason::Loop;
        out.closed = true;
        return out;
      }
      out.points.push_back(q);
      p = q;
      if (exits) {
        out.stop = StopReason::Boundary;
        return out;
      }
    }
    out.stop = StopReason::StepCap;
    return out;
  }
};

int default_steps(const DirectionField& field, const TraceOptions& opt) {
  if (opt.max_steps > 0) return opt.max_steps;
  const Vec2 ext = field.domain_max() - field.domain_min();
  return int(std::ceil(20.0 * (ext.x() + ext.y()) / opt.step));
}

void finish(Streamline& s) {
  s.arc.assign(s.points.size(), 0.0);
  for (std::size_t k = 1; k < s.points.size(); ++k)
    s.arc[k] = s.arc[k - 1] + (s.points[k] - s.points[k - 1]).norm();
}

void check_options(const TraceOptions& opt) {
  if (!(opt.step > 0.0) || !(opt.d_sep > 0.0) || !(opt.r_deg >= 0.0))
    throw InvalidArgument("step, d_sep must be positive and r_deg non-negative");
  const double dt = opt.test_distance();
  if (!(dt > 0.0 && dt < opt.d_sep)) throw InvalidArgument("require 0 < d_test < d_sep");
}

}  // namespace

Streamline trace(const DirectionField& field, const Vec2& seed, Family family,
                 const TraceOptions& options, std::span<const DegeneratePoint> points,
                 const SpacingIndex* index) {
  check_options(options);
  if (!field.inside(seed, 0.0)) throw SeedRejected("seed outside the domain");
  const auto s0 = interpolate_direction(field, seed, family);
  if (s0.degenerate) throw SeedRejected("seed at a degenerate sample");
  Tracer tr{field, family, options, points, index, -1, default_steps(field, options)};
  if (tr.near_degenerate(seed)) throw SeedRejected("seed within r_deg of a degenerate point");
  if (index && index->distance(family, seed, options.test_distance()) < options.test_distance())
    throw SeedRejected("seed closer than d_test to a line of the same family");

  Streamline line;
  line.family = family;
  const HalfTrace fwd = tr.run(seed, s0.dir, seed, true);
  HalfTrace bwd;
  if (fwd.closed) {
    bwd.stop = StopReason::Loop;
  } else {
    bwd = tr.run(seed, -s0.dir, seed, false);
  }
  line.points.assign(bwd.points.rbegin(), bwd.points.rend());
  line.points.push_back(seed);
  line.points.insert(line.points.end(), fwd.points.begin(), fwd.points.end());
  line.start_stop = bwd.stop;
  line.end_stop = fwd.stop;
  line.start_blocker = bwd.blocker;
  line.end_blocker = fwd.blocker;
  line.closed = fwd.closed;
  finish(line);
  return line;
}

Streamline trace_separatrix(const DirectionField& field, std::span<const DegeneratePoint> points,
                            int point_id, double angle, Family family, const TraceOptions& options,
                            const SpacingIndex* index) {
  check_options(options);
  if (point_id < 0 || point_id >= int(points.size())) throw InvalidArgument("bad degenerate point id");
  const Vec2 origin = points[point_id].position;
  const Vec2 ray = direction_of(angle);
  Streamline line;
  line.family = family;
  line.separatrix = true;
  line.origin_point = point_id;
  line.start_stop = StopReason::Singularity;
  line.points.push_back(origin);
  // The family is radial along the ray, so the first r_deg are straight.
  const double lead = std::max(options.r_deg, options.step);
  Vec2 q = origin + lead * ray;
  Tracer tr{field, family, options, points, index, point_id, default_steps(field, options)};
  if (!field.inside(q, 0.0)) {
    line.points.push_back(tr.clip(origin, q));
    line.end_stop = StopReason::Boundary;
    finish(line);
    return line;
  }
  line.points.push_back(q);
  const HalfTrace fwd = tr.run(q, ray, q, false);
  line.points.insert(line.points.end(), fwd.points.begin(), fwd.points.end());
  line.end_stop = fwd.stop;
  line.end_blocker = fwd.blocker;
  finish(line);
  return line;
}

// ---------------------------------------------------------------------------
// Evenly spaced set
// ---------------------------------------------------------------------------

StreamlineSet evenly_spaced_set(const DirectionField& field, const TraceOptions& options,
                                std::span<const DegeneratePoint> points) {
  check_options(options);
  if (!(field.scale() > 0.0)) throw EmptyField("direction field has no deviatoric stress");
  const double d_sep = options.d_sep;
  const Vec2 lo = field.domain_min(), hi = field.domain_max();
  SpacingIndex index(lo, hi, d_sep);
  StreamlineSet set;

  auto accept = [&](Streamline&& s, std::deque<int>& queue) {
    if (s.points.size() < 2 || !(s.length() > 0.0)) return;
    s.id = int(set.lines.size());
    index.add(s);
    queue.push_back(s.id);
    set.lines.push_back(std::move(s));
  };

  auto try_seed = [&](const Vec2& p, Family f, std::deque<int>& queue) {
    if (!field.inside(p, 0.0)) return false;
    if (index.distance(f, p, d_sep) < d_sep * (1.0 - 1e-12)) return false;
    try {
      const std::size_t before = set.lines.size();
      accept(trace(field, p, f, options, points, &index), queue);
      return set.lines.size() > before;
    } catch (const SeedRejected&) {
      return false;
    }
  };

  // Probe grid for initial and gap-filling seeds, ordered from the domain centre outwards.
  std::vector<Vec2> probes;
  const double ps = 0.5 * d_sep;
  for (double y = lo.y() + 0.5 * ps; y < hi.y(); y += ps)
    for (double x = lo.x() + 0.5 * ps; x < hi.x(); x += ps) probes.emplace_back(x, y);
  const Vec2 centre = 0.5 * (lo + hi);
  std::stable_sort(probes.begin(), probes.end(), [&](const Vec2& a, const Vec2& b) {
    return (a - centre).squaredNorm() < (b - centre).squaredNorm();
  });

  for (Family f : {Family::U, Family::V}) {
    std::deque<int> queue;
    for (std::size_t pid = 0; pid < points.size(); ++pid) {
      const auto& dp = points[pid];
      if (!dp.seedable) continue;
      for (double a : dp.separatrix_angles) {
        const double ray = f == Family::U ? a : a + kPi;
        accept(trace_separatrix(field, points, int(pid), ray, f, options, &index), queue);
      }
    }
    std::size_t next_probe = 0;
    for (;;) {
      while (!queue.empty()) {
        const Streamline& line = set.lines[queue.front()];
        queue.pop_front();
        const auto pts = line.points;
        for (std::size_t k = 0; k < pts.size(); ++k) {
          const Vec2 t = pts[std::min(k + 1, pts.size() - 1)] - pts[k > 0 ? k - 1 : 0];
          if (t.norm() == 0.0) continue;
          const Vec2 n = Vec2(-t.y(), t.x()).normalized();
          for (double side : {1.0, -1.0}) try_seed(pts[k] + side * d_sep * n, f, queue);
        }
      }
      bool seeded = false;
      for (; next_probe < probes.size() && !seeded; ++next_probe)
        seeded = try_seed(probes[next_probe], f, queue);
      if (!seeded) break;
    }
  }
  set.crossings = compute_intersections(set.lines);
  return set;
}

// ---------------------------------------------------------------------------
// Intersections
// ---------------------------------------------------------------------------

std::vector<Vec2> compute_intersections(std::vector<Streamline>& lines, double cell_size) {
  for (auto& l : lines) l.intersections.clear();
  if (lines.empty()) return {};
  Vec2 lo = Vec2::Constant(1e300), hi = Vec2::Constant(-1e300);
  for (const auto& l : lines)
    for (const auto& p : l.points) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
  if (!(lo.x() <= hi.x())) return {};
  const int nx = std::max(1, int(std::ceil((hi.x() - lo.x()) / cell_size)) + 1);
  const int ny = std::max(1, int(std::ceil((hi.y() - lo.y()) / cell_size)) + 1);
  auto cx = [&](double x) { return std::clamp(int(std::floor((x - lo.x()) / cell_size)), 0, nx - 1); };
  auto cy = [&](double y) { return std::clamp(int(std::floor((y - lo.y()) / cell_size)), 0, ny - 1); };

  // Registry of (line, segment) ids per cell and family.
  std::vector<std::vector<std::pair<int, int>>> reg[2];
  for (auto& r : reg) r.assign(std::size_t(nx) * ny, {});
  for (int li = 0; li < int(lines.size()); ++li) {
    const auto& pts = lines[li].points;
    for (int k = 0; k + 1 < int(pts.size()); ++k) {
      const Vec2 &a = pts[k], &b = pts[k + 1];
      for (int j = cy(std::min(a.y(), b.y())); j <= cy(std::max(a.y(), b.y())); ++j)
        for (int i = cx(std::min(a.x(), b.x())); i <= cx(std::max(a.x(), b.x())); ++i)
          reg[family_slot(lines[li].family)][std::size_t(j) * nx + i].emplace_back(li, k);
    }
  }

  struct Hit {
    int u, v;
    double iu, iv;
    Vec2 p;
  };
  std::vector<std::vector<Hit>> found(std::size_t(nx) * ny);
#pragma omp parallel for schedule(dynamic, 16)
  for (int c = 0; c < nx * ny; ++c) {
    for (const auto& [ul, us] : reg[0][c]) {
      for (const auto& [vl, vs] : reg[1][c]) {
        const auto& U = lines[ul].points;
        const auto& V = lines[vl].points;
        double t, s;
        if (!segment_intersection(U[us], U[us + 1], V[vs], V[vs + 1], t, s)) continue;
        const Vec2 p = U[us] + t * (U[us + 1] - U[us]);
        // Pairs sharing several cells repeat here; the merge below drops the copies.
        found[c].push_back({ul, vl, us + t, vs + s, p});
      }
    }
  }
  std::vector<Hit> hits;
  for (auto& f : found) hits.insert(hits.end(), f.begin(), f.end());
  std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
    if (a.u != b.u) return a.u < b.u;
    if (a.v != b.v) return a.v < b.v;
    if (a.iu != b.iu) return a.iu < b.iu;
    return a.iv < b.iv;
  });
  // Merge duplicates (shared segment vertices) of the same line pair.
  std::vector<Hit> merged;
  for (const Hit& h : hits) {
    bool dup = false;
    for (auto it = merged.rbegin(); it != merged.rend() && it->u == h.u && it->v == h.v; ++it) {
      if ((it->p - h.p).norm() <= 1e-9) {
        dup = true;
        break;
      }
    }
    if (!dup) merged.push_back(h);
  }
  std::vector<Vec2> nodes;
  nodes.reserve(merged.size());
  for (const Hit& h : merged) {
    const int id = int(nodes.size());
    nodes.push_back(h.p);
    lines[h.u].intersections.push_back({h.p, lines[h.v].id, h.iu, id});
    lines[h.v].intersections.push_back({h.p, lines[h.u].id, h.iv, id});
  }
  for (auto& l : lines)
    std::stable_sort(l.intersections.begin(), l.intersections.end(),
                     [](const Crossing& a, const Crossing& b) { return a.index < b.index; });
  return nodes;
}

double coverage(const DirectionField& field, std::span<const Streamline> lines, Family family,
                double radius, int probes) {
  const Vec2 lo = field.domain_min(), hi = field.domain_max();
  SpacingIndex index(lo, hi, std::max(radius, 1e-9));
  for (const auto& l : lines)
    if (l.family == family) index.add(l);
  int inside = 0, covered = 0;
  for (int j = 0; j < probes; ++j) {
    for (int i = 0; i < probes; ++i) {
      const Vec2 p = lo + (hi - lo).cwiseProduct(Vec2((i + 0.5) / probes, (j + 0.5) / probes));
      if (!field.inside(p, 0.0)) continue;
      ++inside;
      if (index.distance(family, p, radius) <= radius * (1.0 - 1e-12)) ++covered;
    }
  }
  return inside ? double(covered) / inside : 1.0;
}

void write_polylines(const std::filesystem::path& file, std::span<const Streamline> lines) {
  std::ofstream out(file);
  if (!out) throw FormatError("cannot write " + file.string());
  char buf[64];
  for (const auto& l : lines) {
    out << family_name(l.family) << ' ' << l.id << ' ' << l.points.size();
    for (const auto& p : l.points) {
      std::snprintf(buf, sizeof buf, " %.17g %.17g", p.x(), p.y());
      out << buf;
    }
    out << '\n';
  }
}

std::vector<Streamline> read_polylines(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("cannot read " + file.string());
  std::vector<Streamline> lines;
  std::string row;
  while (std::getline(in, row)) {
    if (row.empty()) continue;
    std::istringstream ss(row);
    std::string fam;
    std::size_t n = 0;
    Streamline l;
    if (!(ss >> fam >> l.id >> n) || (fam != "u" && fam != "v"))
      throw FormatError("bad polyline row in " + file.string());
    l.family = fam == "u" ? Family::U : Family::V;
    l.points.resize(n);
    for (auto& p : l.points)
      if (!(ss >> p.x() >> p.y())) throw FormatError("short polyline row in " + file.string());
    finish(l);
    lines.push_back(std::move(l));
  }
  return lines;
}

}  // namespace dehomo
