#pragma once

#include "dehomo/common.hpp"

#include <filesystem>
#include <optional>

namespace dehomo {

/// Rectangular-hole unit cell: `alpha_x` thins the bar running along the cell x axis,
/// `alpha_y` the bar running along y. The hole spans alpha_y by alpha_x.
struct OrthotropicCell {
  double alpha_x = 0.0;
  double alpha_y = 0.0;
  double theta = 0.0;
};

inline double cell_density(double alpha_x, double alpha_y) { return 1.0 - alpha_x * alpha_y; }

/// Voigt strain-rotation matrix for engineering shear.
template <typename Scalar>
Matrix3<Scalar> strain_rotation(Scalar theta) {
  using std::cos;
  using std::sin;
  const Scalar c = cos(theta), s = sin(theta);
  Matrix3<Scalar> R;
  R << c * c, s * s, c * s,
       s * s, c * c, -c * s,
       -2 * c * s, 2 * c * s, c * c - s * s;
  return R;
}

/// R(theta)^T C R(theta): the tensor of a cell whose axes are rotated by theta.
template <typename Derived>
Matrix3<typename Derived::Scalar> rotate_tensor(const Eigen::MatrixBase<Derived>& C,
                                                typename Derived::Scalar theta) {
  const auto R = strain_rotation(theta);
  return R.transpose() * C * R;
}

/// Effective tensor of the periodic cell by energy-based homogenization on a
/// `resolution` x `resolution` grid of bilinear elements.
ElasticityTensor homogenize_cell(double alpha_x, double alpha_y, double youngs_modulus,
                                 double poisson_ratio, int resolution = 60);

struct CHInterpolation {
  ElasticityTensor C;
  ElasticityTensor dC_dax;
  ElasticityTensor dC_day;
};

/// Samples of C^H on a uniform n x n grid over [0,1]^2, row-major in alpha_x.
class CHLookupTable {
 public:
  CHLookupTable() = default;
  CHLookupTable(double youngs_modulus, double poisson_ratio, int samples, int resolution,
                std::vector<ElasticityTensor> entries);

  [[nodiscard]] int samples() const { return samples_; }
  [[nodiscard]] int resolution() const { return resolution_; }
  [[nodiscard]] double youngs_modulus() const { return E_; }
  [[nodiscard]] double poisson_ratio() const { return nu_; }
  [[nodiscard]] double sample_alpha(int k) const { return double(k) / (samples_ - 1); }
  [[nodiscard]] const ElasticityTensor& at(int ix, int iy) const {
    return entries_[ix * samples_ + iy];
  }

  /// Bilinear interpolation with its exact partial derivatives. On interior sample lines the
  /// lower cell supplies the derivative.
  [[nodiscard]] CHInterpolation interpolate(double alpha_x, double alpha_y) const;

  void save(const std::filesystem::path& file) const;
  static CHLookupTable load(const std::filesystem::path& file);

 private:
  double E_ = 1.0;
  double nu_ = 0.3;
  int samples_ = 0;
  int resolution_ = 0;
  std::vector<ElasticityTensor> entries_;
};

inline CHInterpolation interpolate_CH(const CHLookupTable& table, double alpha_x,
                                      double alpha_y) {
  return table.interpolate(alpha_x, alpha_y);
}

CHLookupTable build_lookup(double youngs_modulus, double poisson_ratio, int samples = 21,
                           int resolution = 60);

/// Loads a matching table from `cache_dir` or builds and stores it there.
CHLookupTable cached_lookup(const std::filesystem::path& cache_dir, double youngs_modulus,
                            double poisson_ratio, int samples = 21, int resolution = 60);

}  // namespace dehomo
