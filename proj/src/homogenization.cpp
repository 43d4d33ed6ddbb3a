#include "dehomo/homogenization.hpp"

#include "dehomo/fea.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace dehomo {

namespace {

constexpr const char* kTableMagic = "DEHOMO-CH-TABLE v1";

bool is_hole(double xc, double yc, double alpha_x, double alpha_y) {
  return std::abs(xc - 0.5) < alpha_y / 2.0 && std::abs(yc - 0.5) < alpha_x / 2.0;
}

}  // namespace

ElasticityTensor homogenize_cell(double alpha_x, double alpha_y, double E, double nu,
                                 int resolution) {
  if (!(alpha_x >= 0.0 && alpha_x <= 1.0 && alpha_y >= 0.0 && alpha_y <= 1.0))
    throw OutOfBounds("hole sizes must lie in [0, 1]");
  if (resolution < 2) throw InvalidArgument("cell resolution must be at least 2");

  const int n = resolution;
  const double h = 1.0 / n;
  const Mat8 K_solid = element_stiffness(isotropic_tensor(E, nu));
  const Mat8 K_void = K_solid * kVoidStiffnessRatio;

  std::vector<std::uint8_t> hole(n * n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) hole[j * n + i] = is_hole((i + 0.5) * h, (j + 0.5) * h, alpha_x, alpha_y);

  // Periodic dof map; node 0 is pinned to remove the translation null space.
  auto periodic_dofs = [n](int i, int j) {
    std::array<int, 8> d;
    const std::array<std::pair<int, int>, 4> corners = {
        std::pair{i, j}, std::pair{i + 1, j}, std::pair{i + 1, j + 1}, std::pair{i, j + 1}};
    for (int k = 0; k < 4; ++k) {
      const int node = (corners[k].second % n) * n + corners[k].first % n;
      d[2 * k] = 2 * node - 2;
      d[2 * k + 1] = 2 * node - 1;
    }
    return d;
  };
  auto affine = [h](int i, int j, int load) {
    Vec8 u;
    const std::array<std::pair<int, int>, 4> corners = {
        std::pair{i, j}, std::pair{i + 1, j}, std::pair{i + 1, j + 1}, std::pair{i, j + 1}};
    for (int k = 0; k < 4; ++k) {
      const double x = corners[k].first * h, y = corners[k].second * h;
      switch (load) {
        case 0: u.segment<2>(2 * k) << x, 0.0; break;
        case 1: u.segment<2>(2 * k) << 0.0, y; break;
        default: u.segment<2>(2 * k) << y / 2.0, x / 2.0; break;
      }
    }
    return u;
  };

  const int ndof = 2 * n * n - 2;
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(std::size_t(n) * n * 64);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(ndof, 3);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const Mat8& Ke = hole[j * n + i] ? K_void : K_solid;
      const auto d = periodic_dofs(i, j);
      for (int a = 0; a < 8; ++a) {
        if (d[a] < 0) continue;
        for (int b = 0; b < 8; ++b)
          if (d[b] >= 0) triplets.emplace_back(d[a], d[b], Ke(a, b));
      }
      for (int load = 0; load < 3; ++load) {
        const Vec8 f = Ke * affine(i, j, load);
        for (int a = 0; a < 8; ++a)
          if (d[a] >= 0) rhs(d[a], load) -= f[a];
      }
    }
  }
  Eigen::SparseMatrix<double> K(ndof, ndof);
  K.setFromTriplets(triplets.begin(), triplets.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(K);
  if (ldlt.info() != Eigen::Success) throw SingularSystem("periodic cell system is singular");
  const Eigen::MatrixXd chi = ldlt.solve(rhs);

  ElasticityTensor CH = ElasticityTensor::Zero();
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const Mat8& Ke = hole[j * n + i] ? K_void : K_solid;
      const auto d = periodic_dofs(i, j);
      Eigen::Matrix<double, 8, 3> ue;
      for (int load = 0; load < 3; ++load) {
        ue.col(load) = affine(i, j, load);
        for (int a = 0; a < 8; ++a)
          if (d[a] >= 0) ue(a, load) += chi(d[a], load);
      }
      CH.noalias() += ue.transpose() * Ke * ue;
    }
  }
  return 0.5 * (CH + CH.transpose());
}

// ---------------------------------------------------------------------------
// Lookup table
// ---------------------------------------------------------------------------

CHLookupTable::CHLookupTable(double E, double nu, int samples, int resolution,
                             std::vector<ElasticityTensor> entries)
    : E_(E), nu_(nu), samples_(samples), resolution_(resolution), entries_(std::move(entries)) {
  if (samples_ < 2 || int(entries_.size()) != samples_ * samples_)
    throw InvalidArgument("lookup table needs samples^2 entries");
}

CHInterpolation CHLookupTable::interpolate(double alpha_x, double alpha_y) const {
  constexpr double kSlack = 1e-12;
  if (alpha_x < -kSlack || alpha_x > 1.0 + kSlack || alpha_y < -kSlack || alpha_y > 1.0 + kSlack ||
      std::isnan(alpha_x) || std::isnan(alpha_y))
    throw OutOfBounds("hole size outside [0, 1]");
  const int cells = samples_ - 1;
  auto locate = [cells](double a, int& k, double& f) {
    const double t = std::clamp(a, 0.0, 1.0) * cells;
    k = std::clamp(int(std::ceil(t)) - 1, 0, cells - 1);
    f = t - k;
  };
  int i, j;
  double fx, fy;
  locate(alpha_x, i, fx);
  locate(alpha_y, j, fy);
  const auto& c00 = at(i, j);
  const auto& c10 = at(i + 1, j);
  const auto& c01 = at(i, j + 1);
  const auto& c11 = at(i + 1, j + 1);
  CHInterpolation r;
  r.C = (1 - fx) * (1 - fy) * c00 + fx * (1 - fy) * c10 + (1 - fx) * fy * c01 + fx * fy * c11;
  r.dC_dax = cells * ((1 - fy) * (c10 - c00) + fy * (c11 - c01));
  r.dC_day = cells * ((1 - fx) * (c01 - c00) + fx * (c11 - c10));
  return r;
}

void CHLookupTable::save(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw FormatError("cannot write " + file.string());
  out << kTableMagic << '\n' << std::setprecision(17);
  out << E_ << ' ' << nu_ << ' ' << samples_ << ' ' << resolution_ << '\n';
  for (int ix = 0; ix < samples_; ++ix) {
    for (int iy = 0; iy < samples_; ++iy) {
      const auto& C = at(ix, iy);
      out << C(0, 0) << ' ' << C(0, 1) << ' ' << C(0, 2) << ' ' << C(1, 1) << ' ' << C(1, 2)
          << ' ' << C(2, 2) << '\n';
    }
  }
  if (!out) throw FormatError("failed writing " + file.string());
}

CHLookupTable CHLookupTable::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("cannot open " + file.string());
  std::string magic;
  std::getline(in, magic);
  if (magic != kTableMagic) throw FormatError("not a C^H table: " + file.string());
  double E, nu;
  int samples, resolution;
  if (!(in >> E >> nu >> samples >> resolution) || samples < 2)
    throw FormatError("bad C^H table header");
  std::vector<ElasticityTensor> entries(std::size_t(samples) * samples);
  for (auto& C : entries) {
    double c00, c01, c02, c11, c12, c22;
    if (!(in >> c00 >> c01 >> c02 >> c11 >> c12 >> c22)) throw FormatError("truncated C^H table");
    C << c00, c01, c02, c01, c11, c12, c02, c12, c22;
  }
  return {E, nu, samples, resolution, std::move(entries)};
}

CHLookupTable build_lookup(double E, double nu, int samples, int resolution) {
  if (samples < 2) throw InvalidArgument("lookup table needs at least 2 samples per axis");
  std::vector<ElasticityTensor> entries(std::size_t(samples) * samples);
  const int total = samples * samples;
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < total; ++k) {
    const double ax = double(k / samples) / (samples - 1);
    const double ay = double(k % samples) / (samples - 1);
    entries[k] = homogenize_cell(ax, ay, E, nu, resolution);
  }
  return {E, nu, samples, resolution, std::move(entries)};
}

CHLookupTable cached_lookup(const std::filesystem::path& cache_dir, double E, double nu,
                            int samples, int resolution) {
  char name[128];
  std::snprintf(name, sizeof name, "ch_E%.6g_nu%.6g_n%d_r%d.txt", E, nu, samples, resolution);
  const auto file = cache_dir / name;
  if (std::filesystem::exists(file)) {
    try {
      auto t = CHLookupTable::load(file);
      if (t.youngs_modulus() == E && t.poisson_ratio() == nu && t.samples() == samples &&
          t.resolution() == resolution)
        return t;
    } catch (const FormatError&) {
    }
  }
  auto table = build_lookup(E, nu, samples, resolution);
  std::error_code ec;
  std::filesystem::create_directories(cache_dir, ec);
  if (!ec) {
    const auto tmp = file.string() + ".tmp";
    table.save(tmp);
    std::filesystem::rename(tmp, file, ec);
  }
  return table;
}

}  // namespace dehomo
