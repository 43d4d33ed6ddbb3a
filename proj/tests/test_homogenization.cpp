#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dehomo/fea.hpp"
#include "dehomo/homogenization.hpp"

#include <Eigen/Eigenvalues>

#include <filesystem>
#include <fstream>
#include <random>

using namespace dehomo;

namespace {

double max_rel_diff(const Mat3& a, const Mat3& b) {
  return (a - b).cwiseAbs().maxCoeff() / b.cwiseAbs().maxCoeff();
}

Mat3 random_spd(std::mt19937& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Mat3 A;
  for (int i = 0; i < 9; ++i) A(i) = u(rng);
  return A * A.transpose() + Mat3::Identity() * 0.1;
}

const CHLookupTable& small_table() {
  static const CHLookupTable t = build_lookup(1.0, 0.3, 11, 30);
  return t;
}

}  // namespace

TEST_CASE("solid cell reproduces the base material") {
  const Mat3 C = homogenize_cell(0.0, 0.0, 1.0, 0.3, 20);
  const Mat3 iso = isotropic_tensor(1.0, 0.3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(std::abs(C(i, j) - iso(i, j)) <= 0.01 * iso(0, 0));
}

TEST_CASE("fully void cell is at ersatz stiffness") {
  const Mat3 C = homogenize_cell(1.0, 1.0, 1.0, 0.3, 20);
  CHECK(C.cwiseAbs().maxCoeff() <= 1e-5);
}

TEST_CASE("homogenized tensor is orthotropic and symmetric") {
  const Mat3 C = homogenize_cell(0.3, 0.7, 2.0, 0.3, 30);
  CHECK(std::abs(C(0, 2)) <= 1e-8 * 2.0);
  CHECK(std::abs(C(1, 2)) <= 1e-8 * 2.0);
  CHECK((C - C.transpose()).norm() == 0.0);
  Eigen::SelfAdjointEigenSolver<Mat3> es(C);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("hole alpha_x weakens the x-aligned bar") {
  const Mat3 C = homogenize_cell(0.8, 0.2, 1.0, 0.3, 40);
  // Horizontal bars carry thickness 1 - alpha_x, vertical bars 1 - alpha_y.
  CHECK(C(0, 0) < C(1, 1));
}

TEST_CASE("self-convergence between resolutions 40 and 80") {
  const Mat3 a = homogenize_cell(0.5, 0.5, 1.0, 0.3, 40);
  const Mat3 b = homogenize_cell(0.5, 0.5, 1.0, 0.3, 80);
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) {
      if (std::abs(b(i, j)) < 1e-9) continue;
      CHECK(std::abs(a(i, j) - b(i, j)) / std::abs(b(i, j)) <= 0.03);
    }
}

TEST_CASE("Hill bound: diagonal entries below density-scaled base") {
  const Mat3 iso = isotropic_tensor(1.0, 0.3);
  for (double ax : {0.0, 0.25, 0.5, 0.9}) {
    for (double ay : {0.1, 0.4, 0.75, 1.0}) {
      const Mat3 C = homogenize_cell(ax, ay, 1.0, 0.3, 40);
      // Voxelized hole area replaces alpha_x * alpha_y in the bound.
      int voids = 0;
      for (int j = 0; j < 40; ++j)
        for (int i = 0; i < 40; ++i)
          voids += std::abs((i + 0.5) / 40 - 0.5) < ay / 2 && std::abs((j + 0.5) / 40 - 0.5) < ax / 2;
      const double rho = 1.0 - voids / 1600.0 * (1.0 - kVoidStiffnessRatio);
      for (int k = 0; k < 3; ++k) CHECK(C(k, k) <= rho * iso(k, k) + 1e-8);
    }
  }
}

TEST_CASE("axis swap equals a quarter-turn rotation") {
  for (auto [ax, ay] : {std::pair{0.2, 0.6}, std::pair{0.7, 0.3}, std::pair{0.5, 0.9}}) {
    const Mat3 a = homogenize_cell(ax, ay, 1.0, 0.3, 40);
    const Mat3 b = rotate_tensor(homogenize_cell(ay, ax, 1.0, 0.3, 40), kPi / 2);
    CHECK(max_rel_diff(b, a) <= 0.03);
  }
}

TEST_CASE("cell density") {
  CHECK(cell_density(0.0, 0.0) == 1.0);
  CHECK(cell_density(1.0, 1.0) == 0.0);
  CHECK(cell_density(0.5, 0.5) == 0.75);
}

TEST_CASE("rotation of tensors") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> ang(-kPi, kPi), u(-1.0, 1.0);

  SUBCASE("identity at zero") {
    const Mat3 C = random_spd(rng);
    CHECK((rotate_tensor(C, 0.0) - C).norm() == 0.0);
  }
  SUBCASE("quarter turn swaps the normal stiffnesses") {
    Mat3 C;
    C << 3.0, 0.7, 0.0, 0.7, 1.5, 0.0, 0.0, 0.0, 0.4;
    const Mat3 R = rotate_tensor(C, kPi / 2);
    // Oracle: R(pi/2) = [[0,1,0],[1,0,0],[0,0,-1]].
    Mat3 P;
    P << 0, 1, 0, 1, 0, 0, 0, 0, -1;
    const Mat3 expect = P.transpose() * C * P;
    CHECK((R - expect).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(R(0, 0) == doctest::Approx(1.5));
    CHECK(R(1, 1) == doctest::Approx(3.0));
    CHECK(R(2, 2) == doctest::Approx(0.4));
    CHECK(R(0, 1) == doctest::Approx(0.7));
  }
  SUBCASE("isotropic tensors are invariant") {
    const Mat3 iso = isotropic_tensor(2.5, 0.3);
    for (int k = 0; k < 50; ++k)
      CHECK((rotate_tensor(iso, ang(rng)) - iso).cwiseAbs().maxCoeff() <= 1e-12 * iso.norm());
  }
  SUBCASE("strain energy is invariant") {
    for (int k = 0; k < 200; ++k) {
      const Mat3 C = random_spd(rng);
      const double t = ang(rng);
      const Vec3 eps(u(rng), u(rng), u(rng));
      // Rotate the physical strain tensor into the cell frame directly.
      const double c = std::cos(t), s = std::sin(t);
      Eigen::Matrix2d E;
      E << eps[0], eps[2] / 2, eps[2] / 2, eps[1];
      Eigen::Matrix2d Q;
      Q << c, s, -s, c;
      const Eigen::Matrix2d El = Q * E * Q.transpose();
      const Vec3 eps_local(El(0, 0), El(1, 1), 2 * El(0, 1));
      const double lhs = eps.dot(rotate_tensor(C, t) * eps);
      const double rhs = eps_local.dot(C * eps_local);
      CHECK(std::abs(lhs - rhs) <= 1e-10 * std::abs(rhs));
    }
  }
  SUBCASE("composition adds angles") {
    for (int k = 0; k < 100; ++k) {
      const Mat3 C = random_spd(rng);
      const double a = ang(rng), b = ang(rng);
      const Mat3 lhs = rotate_tensor(rotate_tensor(C, a), b);
      const Mat3 rhs = rotate_tensor(C, a + b);
      CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-10 * C.norm());
    }
  }
  SUBCASE("templated on the scalar type") {
    const Matrix3<float> C = isotropic_tensor(1.0, 0.3).cast<float>();
    const Matrix3<float> R = rotate_tensor(C, 0.3f);
    CHECK((R - C).cwiseAbs().maxCoeff() < 1e-6f);
  }
}

TEST_CASE("lookup table samples and interpolation") {
  const auto& t = small_table();
  CHECK(t.samples() == 11);
  const Mat3 iso = isotropic_tensor(1.0, 0.3);
  CHECK((t.at(0, 0) - iso).cwiseAbs().maxCoeff() <= 0.01 * iso(0, 0));
  CHECK(t.at(10, 10).cwiseAbs().maxCoeff() <= 1e-5);

  SUBCASE("reproduces nodes") {
    for (int i = 0; i < 11; ++i)
      for (int j = 0; j < 11; ++j) {
        const auto r = t.interpolate(t.sample_alpha(i), t.sample_alpha(j));
        CHECK((r.C - t.at(i, j)).cwiseAbs().maxCoeff() <= 1e-15);
      }
  }
  SUBCASE("lower cell supplies the derivative on sample lines") {
    const auto r = t.interpolate(0.5, 0.3 + 0.05);
    const double fy = 0.5;
    const Mat3 expect =
        10.0 * ((1 - fy) * (t.at(5, 3) - t.at(4, 3)) + fy * (t.at(5, 4) - t.at(4, 4)));
    CHECK((r.dC_dax - expect).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("derivatives match central differences inside a cell") {
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double h = 1e-6;
    for (int k = 0; k < 50; ++k) {
      // Keep the stencil inside one interpolant cell.
      const double ax = (int(u(rng) * 10) + 0.1 + 0.8 * u(rng)) / 10;
      const double ay = (int(u(rng) * 10) + 0.1 + 0.8 * u(rng)) / 10;
      const auto r = t.interpolate(ax, ay);
      const Mat3 fdx = (t.interpolate(ax + h, ay).C - t.interpolate(ax - h, ay).C) / (2 * h);
      const Mat3 fdy = (t.interpolate(ax, ay + h).C - t.interpolate(ax, ay - h).C) / (2 * h);
      CHECK((fdx - r.dC_dax).cwiseAbs().maxCoeff() <= 1e-6 * (1 + r.dC_dax.norm()));
      CHECK((fdy - r.dC_day).cwiseAbs().maxCoeff() <= 1e-6 * (1 + r.dC_day.norm()));
    }
  }
  SUBCASE("bounds") {
    CHECK_NOTHROW((void)t.interpolate(1.0 + 1e-13, -1e-13));
    CHECK_THROWS_AS((void)t.interpolate(1.0 + 1e-9, 0.5), OutOfBounds);
    CHECK_THROWS_AS((void)t.interpolate(0.5, -0.01), OutOfBounds);
    CHECK(t.interpolate(1.0, 1.0).C.cwiseAbs().maxCoeff() <= 1e-5);
  }
  SUBCASE("entries are monotone in each hole size") {
    for (int i = 0; i < 11; ++i) {
      for (int j = 0; j < 11; ++j) {
        for (auto [r, c] : {std::pair{0, 0}, std::pair{1, 1}, std::pair{2, 2}, std::pair{0, 1}}) {
          if (i + 1 < 11) CHECK(t.at(i + 1, j)(r, c) <= t.at(i, j)(r, c) + 1e-10);
          if (j + 1 < 11) CHECK(t.at(i, j + 1)(r, c) <= t.at(i, j)(r, c) + 1e-10);
        }
      }
    }
  }
}

TEST_CASE("default table interpolates within 5 percent of direct evaluation") {
  const auto dir = std::filesystem::temp_directory_path() / "dehomo_test_cache";
  const auto t = cached_lookup(dir, 1.0, 0.3, 21, 60);
  CHECK(t.samples() == 21);
  const Mat3 direct = homogenize_cell(0.25, 0.25, 1.0, 0.3, 60);
  const Mat3 interp = t.interpolate(0.25, 0.25).C;
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) {
      if (std::abs(direct(i, j)) < 1e-9) continue;
      CHECK(std::abs(interp(i, j) - direct(i, j)) / std::abs(direct(i, j)) <= 0.05);
    }
}

TEST_CASE("table cache round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "dehomo_test_roundtrip";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto& t = small_table();
  t.save(dir / "t.txt");
  const auto r = CHLookupTable::load(dir / "t.txt");
  CHECK(r.samples() == t.samples());
  CHECK(r.resolution() == t.resolution());
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) CHECK((r.at(i, j) - t.at(i, j)).norm() == 0.0);

  {
    std::ofstream bad(dir / "bad.txt");
    bad << "something else\n";
  }
  CHECK_THROWS_AS(CHLookupTable::load(dir / "bad.txt"), FormatError);
  std::filesystem::remove_all(dir);
}
