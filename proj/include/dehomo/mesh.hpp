#pragma once

#include "dehomo/streamlines.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace dehomo {

/// Counter-clockwise boundary loops of the field domain with collinear vertices merged.
std::vector<std::vector<Vec2>> domain_boundary(const DirectionField& field);

double polygon_area(std::span<const Vec2> poly);
/// Strict interior test; points within `tol` of an edge count as outside.
bool point_in_polygon(const Vec2& p, std::span<const Vec2> poly, double tol = 1e-9);

enum class EdgeKind { U, V, Boundary, Split };

const char* edge_kind_name(EdgeKind k);

struct GraphEdge {
  int a = -1;
  int b = -1;
  EdgeKind kind = EdgeKind::U;
};

/// Streamline graph: crossings, boundary endpoints, domain corners and separatrix origins,
/// joined by straight chords.
struct StreamGraph {
  std::vector<Vec2> nodes;
  std::vector<std::vector<int>> adjacency;
  std::vector<GraphEdge> edges;
  std::vector<std::uint8_t> on_boundary;
  int components = 0;
  std::vector<std::string> warnings;

  [[nodiscard]] int find_edge(int a, int b) const;
  [[nodiscard]] std::size_t degree(int n) const { return adjacency[n].size(); }
};

struct GraphOptions {
  /// Endpoints within this distance of the boundary count as boundary endpoints.
  double boundary_tolerance = 1e-6;
  /// Nodes closer than this are merged (T-junctions, shared separatrix origins).
  double snap_tolerance = 1e-6;
  /// Split interior faces with more than four nodes by diagonals.
  bool split_faces = true;
};

/// Nodes are crossings plus boundary endpoints, corners and separatrix origins; edges chord
/// consecutive nodes along each line plus the boundary arcs between boundary nodes. Dangling
/// chains are pruned. Chords that cross between nodes get a node at the crossing. A
/// DisconnectedGraph warning is recorded for more than one component.
StreamGraph build_graph(std::span<const Streamline> lines, std::span<const Vec2> crossings,
                        const std::vector<std::vector<Vec2>>& boundary,
                        const GraphOptions& options = {});

/// Graph made only of the given nodes and edges (used for tests and re-meshing).
StreamGraph make_graph(std::vector<Vec2> nodes, std::span<const GraphEdge> edges);

/// Interior faces of the planar embedding, counter-clockwise.
std::vector<std::vector<int>> graph_faces(const StreamGraph& graph);

struct QuadDominantMesh {
  std::vector<Vec2> nodes;
  std::vector<GraphEdge> edges;
  std::vector<int> valence;
  std::vector<std::vector<int>> cells;
  /// Up to two cells per edge, -1 when absent.
  std::vector<std::array<int, 2>> edge_cells;
  /// (neighbour, edge id) per node.
  std::vector<std::vector<std::pair<int, int>>> incidence;
  std::vector<std::string> warnings;

  [[nodiscard]] int triangles() const;
  [[nodiscard]] int quads() const;
  [[nodiscard]] double cell_area(int c) const;
  [[nodiscard]] std::vector<Vec2> cell_polygon(int c) const;
  [[nodiscard]] int find_edge(int a, int b) const;
  /// Edge id of the cell side from node k to node k + 1.
  [[nodiscard]] int cell_edge(int c, int k) const;
  /// Recomputes valence and edge_cells from the cells.
  void update_adjacency();
};

/// Edge-valence sweep closing triangles and quads around each edge. Throws NonManifold when a
/// valid cell would give an edge a third cell.
QuadDominantMesh extract_cells(const StreamGraph& graph);

/// Reorders every cell counter-clockwise; cells with |area| < 1e-9 are removed with a warning.
void orient_cells(QuadDominantMesh& mesh);

struct MeshReport {
  int triangles = 0;
  int quads = 0;
  std::map<int, int> valence_histogram;
  double covered_fraction = 0.0;
  int overlap_probes = 0;
  int probes = 0;
  std::vector<int> dangling_edges;
  bool all_ccw = true;
  /// Domain boundary edges carry exactly one cell and all others exactly two.
  bool valence_ok = true;

  [[nodiscard]] bool passes(double min_coverage = 0.98) const {
    return all_ccw && valence_ok && overlap_probes == 0 && covered_fraction >= min_coverage;
  }
};

/// Sampling-based coverage and overlap check on roughly `probes` points over the domain.
MeshReport validate_mesh(const QuadDominantMesh& mesh, const DirectionField& field,
                         int probes = 100000);

/// "v x y 0" rows then 1-based "f" rows.
void write_obj(const std::filesystem::path& file, const QuadDominantMesh& mesh);
QuadDominantMesh read_obj(const std::filesystem::path& file);

}  // namespace dehomo
