#include "dehomo/mesh.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

namespace dehomo {

const char* edge_kind_name(EdgeKind k) {
  switch (k) {
    case EdgeKind::U: return "u";
    case EdgeKind::V: return "v";
    case EdgeKind::Boundary: return "boundary";
    case EdgeKind::Split: return "split";
  }
  return "?";
}

namespace {

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double l2 = ab.squaredNorm();
  const double t = l2 > 0.0 ? std::clamp((p - a).dot(ab) / l2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

/// Proper crossing of two segments (touching at endpoints does not count).
bool segments_cross(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  const double d1 = cross2(b - a, c - a), d2 = cross2(b - a, d - a);
  const double d3 = cross2(d - c, a - c), d4 = cross2(d - c, b - c);
  const double eps = 1e-12 * ((b - a).squaredNorm() + (d - c).squaredNorm());
  return ((d1 > eps && d2 < -eps) || (d1 < -eps && d2 > eps)) &&
         ((d3 > eps && d4 < -eps) || (d3 < -eps && d4 > eps));
}

}  // namespace

double polygon_area(std::span<const Vec2> poly) {
  double a = 0.0;
  for (std::size_t k = 0; k < poly.size(); ++k) a += cross2(poly[k], poly[(k + 1) % poly.size()]);
  return 0.5 * a;
}

bool point_in_polygon(const Vec2& p, std::span<const Vec2> poly, double tol) {
  bool in = false;
  const std::size_t n = poly.size();
  for (std::size_t k = 0, j = n - 1; k < n; j = k++) {
    const Vec2 &a = poly[k], &b = poly[j];
    if (point_segment_distance(p, a, b) <= tol) return false;
    if ((a.y() > p.y()) != (b.y() > p.y()) &&
        p.x() < (b.x() - a.x()) * (p.y() - a.y()) / (b.y() - a.y()) + a.x())
      in = !in;
  }
  return in;
}

// ---------------------------------------------------------------------------
// Domain boundary
// ---------------------------------------------------------------------------

std::vector<std::vector<Vec2>> domain_boundary(const DirectionField& field) {
  const Vec2 lo = field.domain_min(), hi = field.domain_max();
  const GridShape& g = field.cells();
  if (g.nx == 0) return {{lo, {hi.x(), lo.y()}, hi, {lo.x(), hi.y()}}};

  using Key = std::pair<int, int>;
  std::map<Key, std::vector<Key>> out;
  std::size_t count = 0;
  auto add = [&](Key a, Key b) {
    out[a].push_back(b);
    ++count;
  };
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      if (!field.cell_active(i, j)) continue;
      if (!field.cell_active(i, j - 1)) add({i, j}, {i + 1, j});
      if (!field.cell_active(i + 1, j)) add({i + 1, j}, {i + 1, j + 1});
      if (!field.cell_active(i, j + 1)) add({i + 1, j + 1}, {i, j + 1});
      if (!field.cell_active(i - 1, j)) add({i, j + 1}, {i, j});
    }
  std::vector<std::vector<Vec2>> loops;
  while (count > 0) {
    auto it = std::find_if(out.begin(), out.end(), [](const auto& kv) { return !kv.second.empty(); });
    const Key start = it->first;
    std::vector<Key> chain{start};
    Key cur = start;
    for (;;) {
      auto& next = out[cur];
      const Key nk = next.back();
      next.pop_back();
      --count;
      if (nk == start) break;
      chain.push_back(nk);
      cur = nk;
    }
    std::vector<Vec2> loop;
    const std::size_t n = chain.size();
    for (std::size_t k = 0; k < n; ++k) {
      const Key &a = chain[(k + n - 1) % n], &b = chain[k], &c = chain[(k + 1) % n];
      const long cr = long(b.first - a.first) * (c.second - b.second) -
                      long(b.second - a.second) * (c.first - b.first);
      if (cr != 0) loop.emplace_back(lo.x() + b.first, lo.y() + b.second);
    }
    loops.push_back(std::move(loop));
  }
  std::stable_sort(loops.begin(), loops.end(), [](const auto& a, const auto& b) {
    return std::abs(polygon_area(a)) > std::abs(polygon_area(b));
  });
  return loops;
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

int StreamGraph::find_edge(int a, int b) const {
  if (a < 0 || a >= int(adjacency.size())) return -1;
  for (std::size_t k = 0; k < adjacency[a].size(); ++k) {
    if (adjacency[a][k] != b) continue;
    for (std::size_t e = 0; e < edges.size(); ++e)
      if ((edges[e].a == a && edges[e].b == b) || (edges[e].a == b && edges[e].b == a)) return int(e);
  }
  return -1;
}

namespace {

/// Mutable graph with edge lookup, compacted at the end.
struct GraphBuilder {
  std::vector<Vec2> nodes;
  std::vector<std::uint8_t> boundary;
  std::map<std::pair<int, int>, int> lookup;
  std::vector<GraphEdge> edges;
  std::vector<std::uint8_t> removed;

  int add_node(const Vec2& p, bool on_boundary) {
    nodes.push_back(p);
    boundary.push_back(on_boundary);
    return int(nodes.size()) - 1;
  }
  int add_edge(int a, int b, EdgeKind kind) {
    if (a == b) return -1;
    const auto key = std::minmax(a, b);
    if (auto it = lookup.find(key); it != lookup.end()) return it->second;
    edges.push_back({a, b, kind});
    removed.push_back(0);
    lookup[key] = int(edges.size()) - 1;
    return int(edges.size()) - 1;
  }
  [[nodiscard]] std::vector<std::vector<int>> adjacency() const {
    std::vector<std::vector<int>> adj(nodes.size());
    for (std::size_t e = 0; e < edges.size(); ++e) {
      if (removed[e]) continue;
      adj[edges[e].a].push_back(edges[e].b);
      adj[edges[e].b].push_back(edges[e].a);
    }
    return adj;
  }
  /// Merges nodes closer than `tol`, keeping the lowest id of each cluster.
  GraphBuilder snapped(double tol) const {
    std::vector<int> parent(nodes.size());
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> root = [&](int n) { return parent[n] == n ? n : parent[n] = root(parent[n]); };
    std::map<std::pair<long, long>, std::vector<int>> grid;
    const double cell = std::max(tol, 1e-12) * 4;
    auto key = [&](const Vec2& p) {
      return std::pair<long, long>(long(std::floor(p.x() / cell)), long(std::floor(p.y() / cell)));
    };
    for (std::size_t n = 0; n < nodes.size(); ++n) {
      const auto [i, j] = key(nodes[n]);
      for (long dj = -1; dj <= 1; ++dj)
        for (long di = -1; di <= 1; ++di) {
          const auto it = grid.find({i + di, j + dj});
          if (it == grid.end()) continue;
          for (int m : it->second) {
            if ((nodes[m] - nodes[n]).norm() > tol) continue;
            const int a = root(int(n)), b = root(m);
            if (a != b) parent[std::max(a, b)] = std::min(a, b);
          }
        }
      grid[{i, j}].push_back(int(n));
    }
    GraphBuilder out;
    out.nodes = nodes;
    out.boundary = boundary;
    for (std::size_t n = 0; n < nodes.size(); ++n) out.boundary[root(int(n))] |= boundary[n];
    for (std::size_t e = 0; e < edges.size(); ++e)
      if (!removed[e]) out.add_edge(root(edges[e].a), root(edges[e].b), edges[e].kind);
    return out;
  }
  void remove_edge(int a, int b) {
    const auto it = lookup.find(std::minmax(a, b));
    if (it == lookup.end()) return;
    removed[it->second] = 1;
    lookup.erase(it);
  }
};

/// Neighbours sorted counter-clockwise by angle.
std::vector<std::vector<int>> sorted_adjacency(const std::vector<Vec2>& nodes,
                                              std::vector<std::vector<int>> adj) {
  for (std::size_t n = 0; n < adj.size(); ++n) {
    std::sort(adj[n].begin(), adj[n].end(), [&](int a, int b) {
      const Vec2 da = nodes[a] - nodes[n], db = nodes[b] - nodes[n];
      return std::atan2(da.y(), da.x()) < std::atan2(db.y(), db.x());
    });
  }
  return adj;
}

std::vector<std::vector<int>> faces_of(const std::vector<Vec2>& nodes,
                                       const std::vector<std::vector<int>>& adjacency) {
  const auto adj = sorted_adjacency(nodes, adjacency);
  std::vector<std::vector<std::uint8_t>> seen(adj.size());
  for (std::size_t n = 0; n < adj.size(); ++n) seen[n].assign(adj[n].size(), 0);
  std::vector<std::vector<int>> faces;
  for (std::size_t n0 = 0; n0 < adj.size(); ++n0) {
    for (std::size_t k0 = 0; k0 < adj[n0].size(); ++k0) {
      if (seen[n0][k0]) continue;
      std::vector<int> face;
      int a = int(n0);
      std::size_t k = k0;
      while (!seen[a][k]) {
        seen[a][k] = 1;
        face.push_back(a);
        const int b = adj[a][k];
        const auto& nb = adj[b];
        const std::size_t pos = std::find(nb.begin(), nb.end(), a) - nb.begin();
        k = (pos + nb.size() - 1) % nb.size();
        a = b;
      }
      std::vector<Vec2> poly;
      for (int v : face) poly.push_back(nodes[v]);
      if (face.size() >= 3 && polygon_area(poly) > 0.0) faces.push_back(std::move(face));
    }
  }
  return faces;
}

/// Diagonal a-b lies strictly inside the simple polygon `face`.
bool valid_diagonal(const std::vector<Vec2>& nodes, const std::vector<int>& face, std::size_t i,
                    std::size_t j) {
  const Vec2 &a = nodes[face[i]], &b = nodes[face[j]];
  const std::size_t n = face.size();
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t l = (k + 1) % n;
    if (k != i && k != j && point_segment_distance(nodes[face[k]], a, b) < 1e-9) return false;
    if (k == i || k == j || l == i || l == j) continue;
    if (segments_cross(a, b, nodes[face[k]], nodes[face[l]])) return false;
  }
  std::vector<Vec2> poly;
  for (int v : face) poly.push_back(nodes[v]);
  return point_in_polygon(0.5 * (a + b), poly, 1e-12);
}

/// Splits a simple polygon into pieces of at most four nodes, favouring quads and short
/// diagonals. Returns false when no admissible diagonal exists.
bool split_face(const std::vector<Vec2>& nodes, const std::vector<int>& face,
                std::vector<std::pair<int, int>>& diagonals) {
  const std::size_t n = face.size();
  if (n <= 4) return true;
  double best = 1e300;
  std::size_t bi = 0, bj = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 2; j < n; ++j) {
      if (i == 0 && j == n - 1) continue;
      const std::size_t s1 = j - i + 1, s2 = n - (j - i) + 1;
      if (!valid_diagonal(nodes, face, i, j)) continue;
      const double len = (nodes[face[i]] - nodes[face[j]]).norm();
      // Rank: pieces still too large, then triangles, then length.
      const double score = 1e6 * ((s1 > 4) + (s2 > 4)) + 1e3 * ((s1 == 3) + (s2 == 3)) + len;
      if (score < best) {
        best = score;
        bi = i;
        bj = j;
      }
    }
  }
  if (best == 1e300) return false;
  diagonals.emplace_back(face[bi], face[bj]);
  std::vector<int> p1(face.begin() + bi, face.begin() + bj + 1);
  std::vector<int> p2(face.begin() + bj, face.end());
  p2.insert(p2.end(), face.begin(), face.begin() + bi + 1);
  return split_face(nodes, p1, diagonals) && split_face(nodes, p2, diagonals);
}

struct BoundaryNode {
  int loop;
  double arc;
  int node;
};

struct BoundaryLocator {
  const std::vector<std::vector<Vec2>>& loops;
  std::vector<std::vector<double>> cum;

  explicit BoundaryLocator(const std::vector<std::vector<Vec2>>& l) : loops(l) {
    for (const auto& loop : loops) {
      std::vector<double> c{0.0};
      for (std::size_t k = 0; k < loop.size(); ++k)
        c.push_back(c.back() + (loop[(k + 1) % loop.size()] - loop[k]).norm());
      cum.push_back(std::move(c));
    }
  }
  /// Nearest boundary location of p: (loop, arc, distance).
  std::tuple<int, double, double> locate(const Vec2& p) const {
    int bl = -1;
    double barc = 0.0, bd = 1e300;
    for (std::size_t l = 0; l < loops.size(); ++l) {
      const auto& loop = loops[l];
      for (std::size_t k = 0; k < loop.size(); ++k) {
        const Vec2 &a = loop[k], &b = loop[(k + 1) % loop.size()];
        const Vec2 ab = b - a;
        const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
        const double d = (p - a - t * ab).norm();
        if (d < bd) {
          bd = d;
          bl = int(l);
          barc = cum[l][k] + t * ab.norm();
        }
      }
    }
    return {bl, barc, bd};
  }
};

}  // namespace

StreamGraph make_graph(std::vector<Vec2> nodes, std::span<const GraphEdge> edges) {
  StreamGraph g;
  g.nodes = std::move(nodes);
  g.adjacency.assign(g.nodes.size(), {});
  g.on_boundary.assign(g.nodes.size(), 0);
  std::set<std::pair<int, int>> seen;
  for (const auto& e : edges) {
    if (e.a == e.b || !seen.insert(std::minmax(e.a, e.b)).second) continue;
    g.edges.push_back(e);
    g.adjacency[e.a].push_back(e.b);
    g.adjacency[e.b].push_back(e.a);
    if (e.kind == EdgeKind::Boundary) g.on_boundary[e.a] = g.on_boundary[e.b] = 1;
  }
  std::vector<int> comp(g.nodes.size(), -1);
  for (std::size_t s = 0; s < g.nodes.size(); ++s) {
    if (comp[s] >= 0) continue;
    std::vector<int> stack{int(s)};
    comp[s] = g.components;
    while (!stack.empty()) {
      const int n = stack.back();
      stack.pop_back();
      for (int m : g.adjacency[n])
        if (comp[m] < 0) {
          comp[m] = g.components;
          stack.push_back(m);
        }
    }
    ++g.components;
  }
  if (g.components > 1)
    g.warnings.push_back("DisconnectedGraph: " + std::to_string(g.components) + " components");
  return g;
}

std::vector<std::vector<int>> graph_faces(const StreamGraph& graph) {
  return faces_of(graph.nodes, graph.adjacency);
}

StreamGraph build_graph(std::span<const Streamline> lines, std::span<const Vec2> crossings,
                        const std::vector<std::vector<Vec2>>& boundary, const GraphOptions& options) {
  GraphBuilder gb;
  for (const Vec2& c : crossings) gb.add_node(c, false);
  const BoundaryLocator locator(boundary);
  std::vector<BoundaryNode> bnodes;
  std::map<int, int> singular;

  auto end_node = [&](const Streamline& l, bool at_start, int neighbour) -> int {
    const Vec2 p = at_start ? l.points.front() : l.points.back();
    if (neighbour >= 0 && (gb.nodes[neighbour] - p).norm() <= 1e-9) return -1;
    if (at_start && l.origin_point >= 0) {
      auto it = singular.find(l.origin_point);
      if (it == singular.end()) it = singular.emplace(l.origin_point, gb.add_node(p, false)).first;
      return it->second;
    }
    const auto [loop, arc, dist] = locator.locate(p);
    if (loop < 0 || dist > options.boundary_tolerance) return -1;
    const int id = gb.add_node(p, true);
    bnodes.push_back({loop, arc, id});
    return id;
  };

  for (const auto& l : lines) {
    if (l.points.size() < 2) continue;
    std::vector<int> seq;
    for (const auto& c : l.intersections) seq.push_back(c.node);
    const EdgeKind kind = l.family == Family::U ? EdgeKind::U : EdgeKind::V;
    if (l.closed) {
      for (std::size_t k = 0; k + 1 < seq.size(); ++k) gb.add_edge(seq[k], seq[k + 1], kind);
      if (seq.size() > 2) gb.add_edge(seq.back(), seq.front(), kind);
      continue;
    }
    // Ends only become nodes when they link to something on this line.
    const bool open_start = l.origin_point >= 0 ||
                            std::get<2>(locator.locate(l.points.front())) <= options.boundary_tolerance;
    const bool open_end = std::get<2>(locator.locate(l.points.back())) <= options.boundary_tolerance;
    if (seq.empty() && !(open_start && open_end)) continue;
    if (open_start) {
      const int s = end_node(l, true, seq.empty() ? -1 : seq.front());
      if (s >= 0) seq.insert(seq.begin(), s);
    }
    if (open_end) {
      const int e = end_node(l, false, seq.empty() ? -1 : seq.back());
      if (e >= 0) seq.push_back(e);
    }
    for (std::size_t k = 0; k + 1 < seq.size(); ++k) gb.add_edge(seq[k], seq[k + 1], kind);
  }

  // Boundary arcs through endpoints and corners.
  for (std::size_t l = 0; l < boundary.size(); ++l) {
    for (std::size_t k = 0; k < boundary[l].size(); ++k) {
      const Vec2& c = boundary[l][k];
      const double arc = locator.cum[l][k];
      const auto dup = std::find_if(bnodes.begin(), bnodes.end(), [&](const BoundaryNode& b) {
        return b.loop == int(l) && (gb.nodes[b.node] - c).norm() <= 1e-9;
      });
      if (dup == bnodes.end()) bnodes.push_back({int(l), arc, gb.add_node(c, true)});
    }
  }
  for (std::size_t l = 0; l < boundary.size(); ++l) {
    std::vector<BoundaryNode> on;
    for (const auto& b : bnodes)
      if (b.loop == int(l)) on.push_back(b);
    std::stable_sort(on.begin(), on.end(),
                     [](const BoundaryNode& a, const BoundaryNode& b) { return a.arc < b.arc; });
    for (std::size_t k = 0; k < on.size(); ++k)
      gb.add_edge(on[k].node, on[(k + 1) % on.size()].node, EdgeKind::Boundary);
  }

  gb = gb.snapped(options.snap_tolerance);

  // Prune dangling chains.
  for (bool changed = true; changed;) {
    changed = false;
    const auto adj = gb.adjacency();
    for (std::size_t n = 0; n < adj.size(); ++n) {
      if (adj[n].size() == 1) {
        gb.remove_edge(int(n), adj[n][0]);
        changed = true;
      }
    }
  }

  std::vector<std::string> warnings;
  // Straight chords of curved lines can cut each other between nodes. A node at every such
  // crossing keeps the embedding planar.
  {
    std::vector<int> live;
    for (std::size_t e = 0; e < gb.edges.size(); ++e)
      if (!gb.removed[e]) live.push_back(int(e));
    Vec2 lo = Vec2::Constant(1e300), hi = Vec2::Constant(-1e300);
    for (const auto& p : gb.nodes) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    const double cell = std::max(1e-9, (hi - lo).maxCoeff() / 64);
    std::map<std::pair<int, int>, std::vector<int>> buckets;
    for (int e : live) {
      const Vec2 &a = gb.nodes[gb.edges[e].a], &b = gb.nodes[gb.edges[e].b];
      for (int j = int((std::min(a.y(), b.y()) - lo.y()) / cell); j <= int((std::max(a.y(), b.y()) - lo.y()) / cell); ++j)
        for (int i = int((std::min(a.x(), b.x()) - lo.x()) / cell); i <= int((std::max(a.x(), b.x()) - lo.x()) / cell); ++i)
          buckets[{i, j}].push_back(e);
    }
    std::set<std::pair<int, int>> pairs;
    for (const auto& [key, es] : buckets)
      for (std::size_t x = 0; x < es.size(); ++x)
        for (std::size_t y = x + 1; y < es.size(); ++y) {
          const auto &e1 = gb.edges[es[x]], &e2 = gb.edges[es[y]];
          if (e1.a == e2.a || e1.a == e2.b || e1.b == e2.a || e1.b == e2.b) continue;
          if (segments_cross(gb.nodes[e1.a], gb.nodes[e1.b], gb.nodes[e2.a], gb.nodes[e2.b]))
            pairs.insert(std::minmax(es[x], es[y]));
        }
    // Split points per edge as (parameter, node).
    std::map<int, std::vector<std::pair<double, int>>> splits;
    for (const auto& [e1, e2] : pairs) {
      const Vec2 p = gb.nodes[gb.edges[e1].a], r = gb.nodes[gb.edges[e1].b] - p;
      const Vec2 q = gb.nodes[gb.edges[e2].a], w = gb.nodes[gb.edges[e2].b] - q;
      const double den = cross2(r, w);
      const double t = cross2(q - p, w) / den, u = cross2(q - p, r) / den;
      const int n = gb.add_node(p + t * r, false);
      splits[e1].emplace_back(t, n);
      splits[e2].emplace_back(u, n);
    }
    for (auto& [e, pts] : splits) {
      const GraphEdge edge = gb.edges[e];
      std::sort(pts.begin(), pts.end());
      gb.remove_edge(edge.a, edge.b);
      int prev = edge.a;
      for (const auto& [t, n] : pts) {
        gb.add_edge(prev, n, edge.kind);
        prev = n;
      }
      gb.add_edge(prev, edge.b, edge.kind);
    }
    if (!pairs.empty())
      warnings.push_back("crossing chords split: " + std::to_string(pairs.size()));
  }

  if (options.split_faces) {
    const auto faces = faces_of(gb.nodes, gb.adjacency());
    int failed = 0;
    for (const auto& f : faces) {
      if (f.size() <= 4) continue;
      std::set<int> uniq(f.begin(), f.end());
      if (uniq.size() != f.size()) {
        ++failed;
        continue;
      }
      std::vector<std::pair<int, int>> diagonals;
      if (!split_face(gb.nodes, f, diagonals)) ++failed;
      for (const auto& [a, b] : diagonals) gb.add_edge(a, b, EdgeKind::Split);
    }
    if (failed > 0) warnings.push_back("unsplit faces: " + std::to_string(failed));
  }

  // Compact.
  const auto adj = gb.adjacency();
  std::vector<int> remap(gb.nodes.size(), -1);
  std::vector<Vec2> nodes;
  std::vector<std::uint8_t> on_boundary;
  for (std::size_t n = 0; n < gb.nodes.size(); ++n) {
    if (adj[n].empty()) continue;
    remap[n] = int(nodes.size());
    nodes.push_back(gb.nodes[n]);
    on_boundary.push_back(gb.boundary[n]);
  }
  std::vector<GraphEdge> edges;
  for (std::size_t e = 0; e < gb.edges.size(); ++e)
    if (!gb.removed[e]) edges.push_back({remap[gb.edges[e].a], remap[gb.edges[e].b], gb.edges[e].kind});
  StreamGraph g = make_graph(std::move(nodes), edges);
  g.on_boundary = std::move(on_boundary);
  g.warnings.insert(g.warnings.begin(), warnings.begin(), warnings.end());
  return g;
}

// ---------------------------------------------------------------------------
// Mesh
// ---------------------------------------------------------------------------

int QuadDominantMesh::triangles() const {
  return int(std::count_if(cells.begin(), cells.end(), [](const auto& c) { return c.size() == 3; }));
}
int QuadDominantMesh::quads() const {
  return int(std::count_if(cells.begin(), cells.end(), [](const auto& c) { return c.size() == 4; }));
}
std::vector<Vec2> QuadDominantMesh::cell_polygon(int c) const {
  std::vector<Vec2> p;
  for (int n : cells[c]) p.push_back(nodes[n]);
  return p;
}
double QuadDominantMesh::cell_area(int c) const { return polygon_area(cell_polygon(c)); }

int QuadDominantMesh::find_edge(int a, int b) const {
  if (a < 0 || a >= int(incidence.size())) return -1;
  for (const auto& [m, e] : incidence[a])
    if (m == b) return e;
  return -1;
}
int QuadDominantMesh::cell_edge(int c, int k) const {
  const auto& cell = cells[c];
  return find_edge(cell[k], cell[(k + 1) % cell.size()]);
}

void QuadDominantMesh::update_adjacency() {
  incidence.assign(nodes.size(), {});
  for (std::size_t e = 0; e < edges.size(); ++e) {
    incidence[edges[e].a].emplace_back(edges[e].b, int(e));
    incidence[edges[e].b].emplace_back(edges[e].a, int(e));
  }
  valence.assign(edges.size(), 0);
  edge_cells.assign(edges.size(), {-1, -1});
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (std::size_t k = 0; k < cells[c].size(); ++k) {
      const int e = cell_edge(int(c), int(k));
      if (e < 0) throw NonManifold("cell side without a graph edge");
      if (valence[e] >= 2) throw NonManifold("edge " + std::to_string(e) + " exceeds valence 2");
      edge_cells[e][valence[e]++] = int(c);
    }
  }
}

QuadDominantMesh extract_cells(const StreamGraph& graph) {
  QuadDominantMesh mesh;
  mesh.nodes = graph.nodes;
  mesh.edges = graph.edges;
  mesh.update_adjacency();
  const auto& nodes = graph.nodes;
  const auto& adj = graph.adjacency;

  // Node buckets for the empty-interior test.
  Vec2 lo = Vec2::Constant(1e300), hi = Vec2::Constant(-1e300);
  for (const auto& p : nodes) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const int nb = std::max(1, int(std::sqrt(double(nodes.size()))));
  const Vec2 ext = (hi - lo).cwiseMax(Vec2::Constant(1e-12));
  auto bucket = [&](const Vec2& p) {
    const int i = std::clamp(int((p.x() - lo.x()) / ext.x() * nb), 0, nb - 1);
    const int j = std::clamp(int((p.y() - lo.y()) / ext.y() * nb), 0, nb - 1);
    return std::pair{i, j};
  };
  std::vector<std::vector<int>> grid(std::size_t(nb) * nb);
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    const auto [i, j] = bucket(nodes[n]);
    grid[std::size_t(j) * nb + i].push_back(int(n));
  }
  auto empty_inside = [&](const std::vector<int>& cell) {
    std::vector<Vec2> poly;
    Vec2 clo = Vec2::Constant(1e300), chi = Vec2::Constant(-1e300);
    for (int n : cell) {
      poly.push_back(nodes[n]);
      clo = clo.cwiseMin(nodes[n]);
      chi = chi.cwiseMax(nodes[n]);
    }
    const auto [i0, j0] = bucket(clo);
    const auto [i1, j1] = bucket(chi);
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i)
        for (int n : grid[std::size_t(j) * nb + i]) {
          if (std::find(cell.begin(), cell.end(), n) != cell.end()) continue;
          if (point_in_polygon(nodes[n], poly, 0.0)) return false;
        }
    return true;
  };

  std::vector<int> valence(graph.edges.size(), 0);
  std::set<std::vector<int>> seen;
  auto try_cell = [&](std::vector<int> cell) {
    std::vector<int> key = cell;
    std::sort(key.begin(), key.end());
    if (std::adjacent_find(key.begin(), key.end()) != key.end()) return;
    if (seen.count(key)) return;
    std::vector<Vec2> poly;
    for (int n : cell) poly.push_back(nodes[n]);
    if (std::abs(polygon_area(poly)) < 1e-9) return;
    if (cell.size() == 4) {
      if (segments_cross(poly[0], poly[1], poly[2], poly[3]) ||
          segments_cross(poly[1], poly[2], poly[3], poly[0]))
        return;
      if (mesh.find_edge(cell[0], cell[2]) >= 0 || mesh.find_edge(cell[1], cell[3]) >= 0) return;
    }
    if (!empty_inside(cell)) return;
    seen.insert(key);
    std::vector<int> es;
    for (std::size_t k = 0; k < cell.size(); ++k) {
      const int e = mesh.find_edge(cell[k], cell[(k + 1) % cell.size()]);
      if (valence[e] >= 2) throw NonManifold("edge " + std::to_string(e) + " exceeds valence 2");
      es.push_back(e);
    }
    for (int e : es) ++valence[e];
    mesh.cells.push_back(std::move(cell));
  };

  for (std::size_t e = 0; e < graph.edges.size(); ++e) {
    if (valence[e] >= 2) continue;
    const int p1 = graph.edges[e].a, p2 = graph.edges[e].b;
    for (int q : adj[p1])
      if (q != p2 && std::find(adj[p2].begin(), adj[p2].end(), q) != adj[p2].end())
        try_cell({p1, p2, q});
    for (int q1 : adj[p1]) {
      if (q1 == p2) continue;
      for (int q2 : adj[p2]) {
        if (q2 == p1 || q2 == q1) continue;
        const int f = mesh.find_edge(q1, q2);
        if (f >= 0 && valence[f] < 2) try_cell({p1, p2, q2, q1});
      }
    }
  }
  mesh.update_adjacency();
  return mesh;
}

void orient_cells(QuadDominantMesh& mesh) {
  std::vector<std::vector<int>> kept;
  for (std::size_t c = 0; c < mesh.cells.size(); ++c) {
    const double a = mesh.cell_area(int(c));
    if (std::abs(a) < 1e-9) {
      mesh.warnings.push_back("DegenerateCell: removed cell " + std::to_string(c));
      continue;
    }
    auto cell = mesh.cells[c];
    if (a < 0) std::reverse(cell.begin(), cell.end());
    kept.push_back(std::move(cell));
  }
  mesh.cells = std::move(kept);
  mesh.update_adjacency();
}

MeshReport validate_mesh(const QuadDominantMesh& mesh, const DirectionField& field, int probes) {
  MeshReport r;
  r.triangles = mesh.triangles();
  r.quads = mesh.quads();
  std::vector<int> valence(mesh.edges.size(), 0);
  for (std::size_t c = 0; c < mesh.cells.size(); ++c) {
    if (!(mesh.cell_area(int(c)) > 0.0)) r.all_ccw = false;
    for (std::size_t k = 0; k < mesh.cells[c].size(); ++k) {
      const int e = mesh.cell_edge(int(c), int(k));
      if (e >= 0) ++valence[e];
    }
  }
  for (std::size_t e = 0; e < mesh.edges.size(); ++e) {
    ++r.valence_histogram[valence[e]];
    if (valence[e] == 0) r.dangling_edges.push_back(int(e));
    const int want = mesh.edges[e].kind == EdgeKind::Boundary ? 1 : 2;
    if (valence[e] != want) r.valence_ok = false;
  }

  // Cell buckets over the domain box.
  const Vec2 lo = field.domain_min(), hi = field.domain_max();
  const Vec2 ext = hi - lo;
  const int nb = std::max(1, int(std::sqrt(double(mesh.cells.size()))));
  std::vector<std::vector<int>> grid(std::size_t(nb) * nb);
  std::vector<std::vector<Vec2>> polys(mesh.cells.size());
  auto bi = [&](double x) { return std::clamp(int((x - lo.x()) / ext.x() * nb), 0, nb - 1); };
  auto bj = [&](double y) { return std::clamp(int((y - lo.y()) / ext.y() * nb), 0, nb - 1); };
  for (std::size_t c = 0; c < mesh.cells.size(); ++c) {
    polys[c] = mesh.cell_polygon(int(c));
    Vec2 clo = Vec2::Constant(1e300), chi = Vec2::Constant(-1e300);
    for (const auto& p : polys[c]) {
      clo = clo.cwiseMin(p);
      chi = chi.cwiseMax(p);
    }
    for (int j = bj(clo.y()); j <= bj(chi.y()); ++j)
      for (int i = bi(clo.x()); i <= bi(chi.x()); ++i) grid[std::size_t(j) * nb + i].push_back(int(c));
  }
  const int px = std::max(1, int(std::round(std::sqrt(probes * ext.x() / ext.y()))));
  const int py = std::max(1, probes / px);
  int inside = 0, covered = 0, overlaps = 0;
#pragma omp parallel for reduction(+ : inside, covered, overlaps) schedule(static)
  for (int j = 0; j < py; ++j) {
    for (int i = 0; i < px; ++i) {
      const Vec2 p = lo + ext.cwiseProduct(Vec2((i + 0.5) / px, (j + 0.5) / py));
      if (!field.inside(p, 0.0)) continue;
      ++inside;
      int strictly = 0;
      bool touched = false;
      for (int c : grid[std::size_t(bj(p.y())) * nb + bi(p.x())]) {
        if (point_in_polygon(p, polys[c], 1e-9)) {
          ++strictly;
          touched = true;
        } else if (!touched && point_in_polygon(p, polys[c], -1e-9)) {
          touched = true;
        }
      }
      if (touched) ++covered;
      if (strictly > 1) ++overlaps;
    }
  }
  r.probes = inside;
  r.covered_fraction = inside ? double(covered) / inside : 1.0;
  r.overlap_probes = overlaps;
  return r;
}

void write_obj(const std::filesystem::path& file, const QuadDominantMesh& mesh) {
  std::ofstream out(file);
  if (!out) throw FormatError("cannot write " + file.string());
  char buf[96];
  for (const auto& p : mesh.nodes) {
    std::snprintf(buf, sizeof buf, "v %.17g %.17g 0\n", p.x(), p.y());
    out << buf;
  }
  for (const auto& c : mesh.cells) {
    out << 'f';
    for (int n : c) out << ' ' << n + 1;
    out << '\n';
  }
}

QuadDominantMesh read_obj(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("cannot read " + file.string());
  QuadDominantMesh mesh;
  std::string row;
  while (std::getline(in, row)) {
    std::istringstream ss(row);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ss >> x >> y >> z)) throw FormatError("bad vertex row: " + row);
      mesh.nodes.emplace_back(x, y);
    } else if (tag == "f") {
      std::vector<int> cell;
      int n;
      while (ss >> n) {
        if (n < 1 || n > int(mesh.nodes.size())) throw FormatError("bad face index: " + row);
        cell.push_back(n - 1);
      }
      if (cell.size() < 3 || cell.size() > 4) throw FormatError("face arity must be 3 or 4: " + row);
      mesh.cells.push_back(std::move(cell));
    }
  }
  std::map<std::pair<int, int>, int> count;
  for (const auto& c : mesh.cells)
    for (std::size_t k = 0; k < c.size(); ++k) ++count[std::minmax(c[k], c[(k + 1) % c.size()])];
  for (const auto& [key, n] : count)
    mesh.edges.push_back({key.first, key.second, n == 1 ? EdgeKind::Boundary : EdgeKind::U});
  mesh.update_adjacency();
  return mesh;
}

}  // namespace dehomo
