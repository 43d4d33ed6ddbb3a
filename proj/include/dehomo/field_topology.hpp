#pragma once

#include "dehomo/fea.hpp"

#include <filesystem>

namespace dehomo {

enum class Family { U, V };

inline const char* family_name(Family f) { return f == Family::U ? "u" : "v"; }

struct PrincipalStress {
  double s1 = 0.0;
  double s2 = 0.0;
  Vec2 dir1 = Vec2::UnitX();
  Vec2 dir2 = Vec2::UnitY();
  /// Line angle of dir1 in (-pi/2, pi/2].
  double angle1 = 0.0;
  bool degenerate = false;
};

/// Closed-form eigen decomposition, s1 >= s2.
PrincipalStress principal_decompose(const StressTensor2D& s);

/// Tensor field sampled on a regular lattice and interpolated bilinearly. The u family follows
/// the major principal direction, v the minor one.
class DirectionField {
 public:
  DirectionField() = default;
  /// Lattice with `ni` x `nj` nodes at origin + (i, j) * spacing; the domain is the lattice
  /// bounding box.
  DirectionField(Vec2 origin, double spacing, int ni, int nj, std::vector<StressTensor2D> samples);

  /// Samples at element centroids; the domain is the union of active elements. Inactive
  /// samples are filled from their active neighbours so interpolation near cut-outs stays
  /// on the active stress state.
  static DirectionField from_elements(const GridShape& grid, std::span<const std::uint8_t> active,
                                      std::span<const StressTensor2D> stresses);

  [[nodiscard]] Vec2 origin() const { return origin_; }
  [[nodiscard]] double spacing() const { return h_; }
  [[nodiscard]] int ni() const { return ni_; }
  [[nodiscard]] int nj() const { return nj_; }
  [[nodiscard]] const StressTensor2D& sample(int i, int j) const { return samples_[j * ni_ + i]; }
  [[nodiscard]] Vec2 node_position(int i, int j) const {
    return origin_ + h_ * Vec2(double(i), double(j));
  }

  [[nodiscard]] Vec2 domain_min() const { return lo_; }
  [[nodiscard]] Vec2 domain_max() const { return hi_; }
  /// Domain cells (element grid) when the field comes from elements; empty otherwise.
  [[nodiscard]] const GridShape& cells() const { return cells_; }
  [[nodiscard]] bool cell_active(int i, int j) const;
  [[nodiscard]] bool inside(const Vec2& p, double tol = 1e-12) const;

  /// Bilinear tensor interpolation, lattice coordinates clamped to the sampled box.
  [[nodiscard]] StressTensor2D tensor_at(const Vec2& p) const;

  /// Deviatoric part (a, b) = ((sxx - syy) / 2, txy) and its spatial gradient at `p`.
  void deviator_at(const Vec2& p, double& a, double& b, Eigen::Matrix2d* grad = nullptr) const;

  /// Largest deviatoric magnitude over the samples.
  [[nodiscard]] double scale() const { return scale_; }

 private:
  Vec2 origin_ = Vec2::Zero();
  double h_ = 1.0;
  int ni_ = 0;
  int nj_ = 0;
  std::vector<StressTensor2D> samples_;
  Vec2 lo_ = Vec2::Zero();
  Vec2 hi_ = Vec2::Zero();
  GridShape cells_;
  std::vector<std::uint8_t> active_;
  double scale_ = 0.0;

  void update_scale();
};

struct DirectionSample {
  Vec2 dir = Vec2::UnitX();
  bool degenerate = false;
};

/// Throws OutOfDomain outside the field's domain.
DirectionSample interpolate_direction(const DirectionField& field, const Vec2& p, Family family);

struct DegeneratePoint {
  enum class Kind { Trisector, Wedge };
  Vec2 position = Vec2::Zero();
  Kind kind = Kind::Wedge;
  /// Rays (radians, [0, 2pi)) along which the u family is radial; the v family is radial on
  /// the opposite rays.
  std::vector<double> separatrix_angles;
  double delta = 0.0;
  /// (a_x, a_y, b_x, b_y) of the deviator at the point.
  Eigen::Vector4d partials = Eigen::Vector4d::Zero();
  /// False for higher-order points and points within one lattice cell of the boundary; such
  /// points, and points where the stress gradient is negligible against the field scale, are
  /// reported but never seed separatrices.
  bool seedable = true;
};

/// Roots of the bilinear deviator in every lattice cell where both components change sign.
std::vector<DegeneratePoint> find_degenerate_points(const DirectionField& field);

/// Separatrix rays of a first-order degenerate point. Throws IllConditioned when the linear
/// part is rank deficient.
std::vector<double> separatrix_directions(const Eigen::Vector4d& partials);

void write_degenerate_points(const std::filesystem::path& file,
                             std::span<const DegeneratePoint> points);

}  // namespace dehomo
