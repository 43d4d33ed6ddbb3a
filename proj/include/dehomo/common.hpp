#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace dehomo {

template <typename Scalar>
using Vector2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec8 = Eigen::Matrix<double, 8, 1>;
using Mat8 = Eigen::Matrix<double, 8, 8>;

/// Plane-stress elasticity tensor in Voigt order (xx, yy, xy) with engineering shear.
using ElasticityTensor = Mat3;

inline constexpr double kPi = std::numbers::pi;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define DEHOMO_DEFINE_ERROR(Name)              \
  class Name : public Error {                  \
   public:                                     \
    using Error::Error;                        \
  }

DEHOMO_DEFINE_ERROR(InvalidArgument);
DEHOMO_DEFINE_ERROR(SingularSystem);
DEHOMO_DEFINE_ERROR(SolverDivergence);
DEHOMO_DEFINE_ERROR(OutOfBounds);
DEHOMO_DEFINE_ERROR(BisectionFailure);
DEHOMO_DEFINE_ERROR(IllConditioned);
DEHOMO_DEFINE_ERROR(OutOfDomain);
DEHOMO_DEFINE_ERROR(SeedRejected);
DEHOMO_DEFINE_ERROR(EmptyField);
DEHOMO_DEFINE_ERROR(NonManifold);
DEHOMO_DEFINE_ERROR(DegeneratePolygon);
DEHOMO_DEFINE_ERROR(UnknownProblem);
DEHOMO_DEFINE_ERROR(FormatError);

#undef DEHOMO_DEFINE_ERROR

/// Wraps an angle to the half-open interval (-pi/2, pi/2], i.e. an unoriented line angle.
inline double wrap_line_angle(double a) {
  a = std::remainder(a, kPi);  // [-pi/2, pi/2]
  if (a <= -kPi / 2) a += kPi;
  return a;
}

/// Angle in [0, pi/2] between two unoriented lines given by unit vectors.
inline double line_angle_between(const Vec2& a, const Vec2& b) {
  const double c = std::abs(a.dot(b)) / (a.norm() * b.norm());
  return std::acos(std::min(1.0, c));
}

inline Vec2 direction_of(double angle) { return {std::cos(angle), std::sin(angle)}; }

/// Structured element grid: element (i, j) occupies [i, i+1] x [j, j+1] in element units.
struct GridShape {
  int nx = 0;
  int ny = 0;

  [[nodiscard]] int elements() const { return nx * ny; }
  [[nodiscard]] int nodes() const { return (nx + 1) * (ny + 1); }
  [[nodiscard]] int dofs() const { return 2 * nodes(); }
  [[nodiscard]] int element(int i, int j) const { return j * nx + i; }
  [[nodiscard]] int node(int i, int j) const { return j * (nx + 1) + i; }
  [[nodiscard]] Vec2 node_position(int n) const {
    return {double(n % (nx + 1)), double(n / (nx + 1))};
  }
  [[nodiscard]] Vec2 centroid(int e) const { return {e % nx + 0.5, e / nx + 0.5}; }

  /// Node indices of an element, counter-clockwise from the lower-left corner.
  [[nodiscard]] std::array<int, 4> element_nodes(int e) const {
    const int i = e % nx, j = e / nx;
    return {node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)};
  }
  [[nodiscard]] std::array<int, 8> element_dofs(int e) const {
    const auto n = element_nodes(e);
    return {2 * n[0], 2 * n[0] + 1, 2 * n[1], 2 * n[1] + 1,
            2 * n[2], 2 * n[2] + 1, 2 * n[3], 2 * n[3] + 1};
  }
  bool operator==(const GridShape&) const = default;
};

/// Number of worker threads requested through DEHOMO_NUM_THREADS (0 = library default).
int requested_threads();

}  // namespace dehomo
