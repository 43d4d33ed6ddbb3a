#include "dehomo/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace dehomo {

namespace {

// SVG document over the box [lo, hi], y pointing up, `scale` pixels per unit.
class Svg {
 public:
  Svg(const std::filesystem::path& file, Vec2 lo, Vec2 hi, double scale)
      : out_(file), lo_(lo), hi_(hi) {
    if (!out_) throw FormatError("cannot write " + file.string());
    const Vec2 size = hi - lo;
    out_ << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(size.x() * scale)
         << "\" height=\"" << num(size.y() * scale) << "\" viewBox=\"0 0 " << num(size.x())
         << ' ' << num(size.y()) << "\">\n";
    out_ << "<rect x=\"0\" y=\"0\" width=\"" << num(size.x()) << "\" height=\"" << num(size.y())
         << "\" fill=\"white\"/>\n";
  }
  ~Svg() { out_ << "</svg>\n"; }

  static std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
  }
  [[nodiscard]] std::string point(const Vec2& p) const {
    return num(p.x() - lo_.x()) + ',' + num(hi_.y() - p.y());
  }
  std::ofstream& out() { return out_; }

  void outline(const std::vector<std::vector<Vec2>>& loops, double width) {
    if (loops.empty()) return;
    out_ << "<path fill=\"none\" stroke=\"black\" stroke-width=\"" << num(width) << "\" d=\"";
    for (const auto& loop : loops) {
      for (std::size_t k = 0; k < loop.size(); ++k)
        out_ << (k ? " L" : "M") << point(loop[k]);
      out_ << " Z ";
    }
    out_ << "\"/>\n";
  }

 private:
  std::ofstream out_;
  Vec2 lo_, hi_;
};

void bounds(const std::vector<std::vector<Vec2>>& loops, Vec2& lo, Vec2& hi) {
  lo = Vec2::Constant(INFINITY);
  hi = Vec2::Constant(-INFINITY);
  for (const auto& loop : loops)
    for (const auto& p : loop) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
  if (!(lo.array() <= hi.array()).all()) lo = hi = Vec2::Zero();
}

double pixel_scale(const Vec2& size) {
  return std::max(1.0, 800.0 / std::max({size.x(), size.y(), 1e-12}));
}

}  // namespace

void render_density(const std::filesystem::path& file, const ProblemDefinition& problem,
                    const DesignField& design) {
  const auto& g = problem.grid;
  const Vec2 hi(g.nx, g.ny);
  Svg svg(file, Vec2::Zero(), hi, pixel_scale(hi));
  for (int e = 0; e < g.elements(); ++e) {
    if (!problem.is_active(e)) continue;
    const int level = int(std::lround(255.0 * (1.0 - std::clamp(design.density(e), 0.0, 1.0))));
    const Vec2 corner = g.centroid(e) + Vec2(-0.5, 0.5);
    svg.out() << "<rect x=\"" << corner.x() << "\" y=\"" << g.ny - corner.y()
              << "\" width=\"1\" height=\"1\" fill=\"rgb(" << level << ',' << level << ','
              << level << ")\"/>\n";
  }
}

void render_streamlines(const std::filesystem::path& file,
                        const std::vector<std::vector<Vec2>>& boundary,
                        std::span<const Streamline> lines) {
  Vec2 lo, hi;
  bounds(boundary, lo, hi);
  const double w = 0.002 * std::max((hi - lo).maxCoeff(), 1.0);
  Svg svg(file, lo, hi, pixel_scale(hi - lo));
  svg.outline(boundary, 2 * w);
  for (const auto& line : lines) {
    if (line.points.size() < 2) continue;
    svg.out() << "<polyline fill=\"none\" stroke=\""
              << (line.family == Family::U ? "#c0392b" : "#2e6fb7") << "\" stroke-width=\""
              << Svg::num(w * 1.5) << "\" points=\"";
    for (std::size_t k = 0; k < line.points.size(); ++k)
      svg.out() << (k ? " " : "") << svg.point(line.points[k]);
    svg.out() << "\"/>\n";
  }
}

void render_mesh(const std::filesystem::path& file, const QuadDominantMesh& mesh,
                 const std::vector<std::vector<Vec2>>& boundary) {
  Vec2 lo, hi;
  bounds(boundary, lo, hi);
  const double w = 0.002 * std::max((hi - lo).maxCoeff(), 1.0);
  Svg svg(file, lo, hi, pixel_scale(hi - lo));
  svg.outline(boundary, w);
  for (const auto& e : mesh.edges) {
    svg.out() << "<line x1=\"" << Svg::num(mesh.nodes[e.a].x() - lo.x()) << "\" y1=\""
              << Svg::num(hi.y() - mesh.nodes[e.a].y()) << "\" x2=\""
              << Svg::num(mesh.nodes[e.b].x() - lo.x()) << "\" y2=\""
              << Svg::num(hi.y() - mesh.nodes[e.b].y()) << "\" stroke=\""
              << (e.kind == EdgeKind::U   ? "#c0392b"
                  : e.kind == EdgeKind::V ? "#2e6fb7"
                                          : "#555555")
              << "\" stroke-width=\"" << Svg::num(w) << "\"/>\n";
  }
  for (const auto& p : mesh.nodes)
    svg.out() << "<circle cx=\"" << Svg::num(p.x() - lo.x()) << "\" cy=\""
              << Svg::num(hi.y() - p.y()) << "\" r=\"" << Svg::num(2 * w) << "\"/>\n";
}

void render_layout(const std::filesystem::path& file, const BinaryLayout& layout) {
  const Vec2 hi(layout.nx, layout.ny);
  Svg svg(file, Vec2::Zero(), hi, std::min(1.0, pixel_scale(hi)));
  svg.out() << "<path fill=\"black\" shape-rendering=\"crispEdges\" d=\"";
  for (int j = 0; j < layout.ny; ++j) {
    const int y = layout.ny - 1 - j;
    for (int i = 0; i < layout.nx;) {
      if (!layout.at(i, j)) {
        ++i;
        continue;
      }
      int end = i;
      while (end < layout.nx && layout.at(end, j)) ++end;
      svg.out() << 'M' << i << ' ' << y << 'h' << end - i << "v1h" << i - end << "z";
      i = end;
    }
  }
  svg.out() << "\"/>\n";
}

}  // namespace dehomo
