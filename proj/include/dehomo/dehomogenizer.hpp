#pragma once

#include "dehomo/mesh.hpp"
#include "dehomo/topopt.hpp"

#include <filesystem>

namespace dehomo {

enum class CellClass { Void, Solid, Lattice };

const char* cell_class_name(CellClass c);

struct ElementBudget {
  double v_star = 0.0;
  /// Unnormalized sums of (1 - alpha_x) and (1 - alpha_y) over the samples.
  double phi1_raw = 0.0;
  double phi2_raw = 0.0;
  double phi1 = 1.0;
  double phi2 = 1.0;
  Vec2 u_dir = Vec2::UnitX();
  Vec2 v_dir = Vec2::UnitY();
  /// Circular variance of the u samples as lines: 1 - |mean of the doubled-angle vectors|.
  double direction_variance = 0.0;
  CellClass classification = CellClass::Lattice;
};

/// Design fields on the element grid, resampled bilinearly from the element centroids over
/// active elements only.
class DesignSampler {
 public:
  DesignSampler(const ProblemDefinition& problem, const DesignField& design);

  struct Sample {
    double density, alpha_x, alpha_y;
    Vec2 u_dir;
  };
  /// Directions are interpolated through the doubled angle, so u and -u agree.
  [[nodiscard]] Sample at(const Vec2& p) const;

 private:
  const ProblemDefinition& problem_;
  const DesignField& design_;
};

struct BudgetOptions {
  /// Samples per axis.
  int q = 8;
  double void_threshold = 0.05;
  double solid_threshold = 0.95;
};

CellClass classify(double v_star, const BudgetOptions& options = {});

/// Area-weighted Q x Q sampling of the cell through its bilinear map (triangles as collapsed
/// quads).
ElementBudget element_budget(std::span<const Vec2> cell, const DesignSampler& sampler,
                             const BudgetOptions& options = {});

/// Edge weights: edges more aligned with U get phi1, others phi2. Quads pair opposite edges
/// and decide on the pair's mean direction; triangles are quads collapsed at their widest
/// angle.
std::vector<double> edge_weights(std::span<const Vec2> cell, const ElementBudget& budget);

/// Fraction of the cell within t_j of edge j, from the inward offsets of the edges. Convex
/// cells are exact; non-convex ones fall back to a quadrature of the distance rule. Throws
/// DegeneratePolygon for |area| < 1e-12.
double band_area(std::span<const Vec2> cell, std::span<const double> thickness);

/// Same coverage by sampling about `samples` points inside the cell, one uniform point per
/// stratum of a grid over the bounding box. A point is covered when within t_j of edge segment j.
double band_area_sampled(std::span<const Vec2> cell, std::span<const double> thickness,
                         int samples, std::uint64_t seed);

struct EdgeThicknessSolution {
  std::vector<double> thickness;
  double achieved = 0.0;
  int k = 0;
  bool below_floor = false;
  bool saturated = false;
};

/// Smallest k with band_area(t0 + w k delta) >= v_star.
EdgeThicknessSolution thicken(std::span<const Vec2> cell, std::span<const double> weights,
                              double v_star, double t0, double delta);

/// Midpoint split into four children (quads around the centroid, triangles at mid-edges)
/// when the direction variance exceeds `threshold`; otherwise the cell itself.
std::vector<std::vector<Vec2>> subdivide_if_needed(std::span<const Vec2> cell,
                                                   const ElementBudget& budget,
                                                   double threshold = 0.2);
std::vector<std::vector<Vec2>> split_cell(std::span<const Vec2> cell);

struct DehomogenizationOptions {
  BudgetOptions budget;
  /// Raster resolution; the pixel size also scales t0 and delta.
  int nx = 0;
  int ny = 0;
  /// In fine-pixel widths.
  double t0 = 0.2;
  double delta = 0.1;
  double variance_threshold = 0.2;
  bool subdivide = true;
};

/// Working cells after optional subdivision, with their budgets and edge solutions.
struct LatticeCell {
  std::vector<Vec2> polygon;
  /// Mesh node id per polygon vertex, -1 for subdivision points.
  std::vector<int> nodes;
  /// Mesh cell the polygon came from.
  int parent = -1;
  ElementBudget budget;
  std::vector<double> weights;
  std::vector<double> thickness;
  double achieved = 0.0;
  int k = 0;
  bool below_floor = false;
};

struct LatticeDesign {
  std::vector<LatticeCell> cells;
  int below_floor = 0;
  int subdivided = 0;
  std::vector<std::string> warnings;
};

LatticeDesign dehomogenize(const QuadDominantMesh& mesh, const ProblemDefinition& problem,
                           const DesignField& design, const DehomogenizationOptions& options);

struct BinaryLayout {
  int nx = 0;
  int ny = 0;
  /// Row-major from the bottom row; 1 solid.
  std::vector<std::uint8_t> pixels;
  /// Working cell per pixel, -1 outside every cell.
  std::vector<int> cell;
  /// Pixels inside the domain.
  std::vector<std::uint8_t> inside;

  [[nodiscard]] std::uint8_t at(int i, int j) const { return pixels[std::size_t(j) * nx + i]; }
  /// Solid share of the pixels inside the domain.
  [[nodiscard]] double volume_fraction() const;
};

/// Pixel centres over the domain box [lo, hi]; a lattice pixel is solid when within t_j of
/// one of its cell's edges.
BinaryLayout rasterize(const LatticeDesign& design, Vec2 lo, Vec2 hi, int nx, int ny,
                       const ProblemDefinition* coarse = nullptr);

/// Coarse problem mapped onto a grid `factor` times finer: supports cover their coarse node's
/// boundary tributary length, loads are spread with the coarse hat function along it.
ProblemDefinition refine_problem(const ProblemDefinition& coarse, int factor);

/// Makes the active pixels around every loaded node solid, so no load acts on void. Returns
/// the number of pixels changed.
int pad_loads(BinaryLayout& layout, const ProblemDefinition& fine);

struct BinaryEvaluation {
  double compliance = 0.0;
  double volume = 0.0;
  /// Solid pixels in pieces that share no node chain with a support.
  int floating_pixels = 0;
  SolveStats stats;
};

/// Solid E for 1-pixels, ersatz stiffness for 0-pixels. Auto solver settings mean a direct solve. Solid pieces that touch no support are
/// suspended in void and get the ersatz stiffness too, which keeps the solve well conditioned.
BinaryEvaluation evaluate_binary(const ProblemDefinition& fine, const BinaryLayout& layout,
                                 const SolverOptions& solver = {});

/// P2 (ascii) or P5 (binary) graymap, top row first; 0 void, 255 solid.
void write_pgm(const std::filesystem::path& file, const BinaryLayout& layout, bool binary = true);
BinaryLayout read_pgm(const std::filesystem::path& file);

/// cell,node_a,node_b,ax,ay,bx,by,thickness,weight rows per lattice-cell edge; node ids are
/// mesh nodes or -1 for subdivision points.
void write_edge_thickness(const std::filesystem::path& file, const LatticeDesign& design);

}  // namespace dehomo
