#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dehomo/topopt.hpp"

#include <filesystem>
#include <random>

using namespace dehomo;

namespace {

const CHLookupTable& table() {
  static const CHLookupTable t = cached_lookup(
      std::filesystem::temp_directory_path() / "dehomo_test_cache", 1.0, 0.3, 11, 30);
  return t;
}

ProblemDefinition cantilever(int nx, int ny, double volfrac = 0.5) {
  ProblemDefinition p;
  p.grid = {nx, ny};
  p.volume_fraction = volfrac;
  for (int j = 0; j <= ny; ++j) p.supports.push_back({p.grid.node(0, j), true, true});
  p.loads.push_back({p.grid.node(nx, ny / 2), {0.0, -1.0}});
  return p;
}

SolverOptions direct() {
  SolverOptions s;
  s.preconditioner = Preconditioner::Direct;
  return s;
}

/// True if every filtered value keeps `gap` away from the interpolant's sample lines.
bool clear_of_sample_lines(const Eigen::VectorXd& v, int cells, double gap) {
  for (double a : v) {
    const double t = a * cells;
    if (std::abs(t - std::round(t)) < gap * cells) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("principal angles") {
  CHECK(principal_angle({2.0, 0.0, 0.0}, 0.4) == 0.0);
  CHECK(principal_angle({0.0, 0.0, 1.0}, 0.0) == doctest::Approx(kPi / 4));
  CHECK(principal_angle({0.0, 0.0, -1.0}, 0.0) == doctest::Approx(-kPi / 4));
  CHECK(principal_angle({0.0, 3.0, 0.0}, 0.0) == doctest::Approx(kPi / 2));
  CHECK(principal_angle({1.5, 1.5, 0.0}, 0.3) == 0.3);
  CHECK(principal_angle({0.0, 0.0, 0.0}, -0.2) == -0.2);
  // Algebraically larger principal stress, even under compression.
  CHECK(principal_angle({-5.0, -1.0, 0.0}, 0.0) == doctest::Approx(kPi / 2));

  std::vector<StressTensor2D> s = {{1, 0, 0}, {0, 0, 1}, {2, 2, 0}};
  std::vector<double> prev = {0.1, 0.1, 0.7};
  const auto t = update_angles(s, prev);
  CHECK(t[0] == 0.0);
  CHECK(t[1] == doctest::Approx(kPi / 4));
  CHECK(t[2] == 0.7);

  SUBCASE("angle matches the eigenvector of the largest eigenvalue") {
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int k = 0; k < 200; ++k) {
      const StressTensor2D st{u(rng), u(rng), u(rng)};
      const double th = principal_angle(st, 0.0);
      Eigen::Matrix2d S;
      S << st.sxx, st.txy, st.txy, st.syy;
      const Vec2 d = direction_of(th);
      const double lmax = 0.5 * (st.sxx + st.syy) +
                          std::hypot(0.5 * (st.sxx - st.syy), st.txy);
      CHECK((S * d - lmax * d).norm() < 1e-12);
      CHECK(th > -kPi / 2);
      CHECK(th <= kPi / 2);
    }
  }
}

TEST_CASE("density filter") {
  ProblemDefinition p = cantilever(9, 9);

  SUBCASE("uniform field unchanged") {
    const Eigen::VectorXd x = Eigen::VectorXd::Constant(81, 0.37);
    CHECK((density_filter(p, x, 2.5) - x).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("spike spreads with cone weights") {
    Eigen::VectorXd x = Eigen::VectorXd::Constant(81, 0.2);
    const int c = p.grid.element(4, 4);
    x[c] = 1.2;
    const double r = 2.5;
    const Eigen::VectorXd f = density_filter(p, x, r);
    // Oracle: interior rows share the same weight sum.
    double wsum = 0.0;
    for (int dj = -3; dj <= 3; ++dj)
      for (int di = -3; di <= 3; ++di) wsum += std::max(0.0, r - std::sqrt(di * di + dj * dj));
    for (int j = 2; j <= 6; ++j) {
      for (int i = 2; i <= 6; ++i) {
        const double w = std::max(0.0, r - std::hypot(i - 4.0, j - 4.0));
        CHECK(f[p.grid.element(i, j)] == doctest::Approx(0.2 + w / wsum).epsilon(1e-12));
      }
    }
    CHECK((f.array() - 0.2).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("sub-element radius is the identity") {
    std::mt19937 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::VectorXd x(81);
    for (auto& v : x) v = u(rng);
    CHECK((density_filter(p, x, 0.9) - x).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("transpose is the adjoint") {
    std::mt19937 rng(2);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::VectorXd x(81), y(81);
    for (auto& v : x) v = u(rng);
    for (auto& v : y) v = u(rng);
    const DensityFilter F(p, 2.5);
    CHECK(y.dot(F.apply(x)) == doctest::Approx(x.dot(F.apply_transpose(y))).epsilon(1e-13));
  }
  SUBCASE("masked elements are excluded") {
    ProblemDefinition q = p;
    q.active.assign(81, 1);
    q.active[p.grid.element(5, 4)] = 0;
    Eigen::VectorXd x = Eigen::VectorXd::Constant(81, 0.5);
    x[p.grid.element(5, 4)] = 100.0;
    const Eigen::VectorXd f = density_filter(q, x, 2.5);
    CHECK(f[p.grid.element(4, 4)] == doctest::Approx(0.5));
  }
}

TEST_CASE("sensitivities match central differences") {
  ProblemDefinition p = cantilever(4, 3);
  p.supports = {{p.grid.node(0, 0)}, {p.grid.node(0, 3)}};
  p.loads = {{p.grid.node(4, 1), {0.3, -1.0}}};
  const DensityFilter filter(p, 1.5);
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(0.15, 0.85), ang(-1.5, 1.5);
  Eigen::VectorXd ax(12), ay(12);
  std::vector<double> theta(12);
  do {
    for (int e = 0; e < 12; ++e) ax[e] = u(rng), ay[e] = u(rng), theta[e] = ang(rng);
  } while (!clear_of_sample_lines(filter.apply(ax), 10, 1e-3) ||
           !clear_of_sample_lines(filter.apply(ay), 10, 1e-3));

  const auto g = compliance_gradient(p, table(), filter, ax, ay, theta, direct());
  const double h = 1e-5;
  double worst = 0.0;
  for (int e = 0; e < 12; ++e) {
    for (int which = 0; which < 2; ++which) {
      Eigen::VectorXd xp = which ? ay : ax, xm = xp;
      xp[e] += h;
      xm[e] -= h;
      const double cp = which ? compliance_gradient(p, table(), filter, ax, xp, theta, direct()).compliance
                              : compliance_gradient(p, table(), filter, xp, ay, theta, direct()).compliance;
      const double cm = which ? compliance_gradient(p, table(), filter, ax, xm, theta, direct()).compliance
                              : compliance_gradient(p, table(), filter, xm, ay, theta, direct()).compliance;
      const double fd = (cp - cm) / (2 * h);
      const double an = which ? g.dc_day[e] : g.dc_dax[e];
      worst = std::max(worst, std::abs(fd - an) / std::abs(an));
    }
  }
  CHECK(worst <= 1e-3);
}

TEST_CASE("sensitivity properties") {
  ProblemDefinition p = cantilever(20, 10);
  const auto d = DesignField::uniform(p, 0.6, 0.5, 0.3);
  const auto a = analyze(p, table(), d, direct());
  const auto s = sensitivities(p, a.u, d, table());

  SUBCASE("sign") {
    int ok = 0;
    for (int e = 0; e < 200; ++e) ok += (s.dc_dax[e] >= -1e-12) && (s.dc_day[e] >= -1e-12);
    CHECK(ok >= 198);
  }
  SUBCASE("quadratic in the load") {
    ProblemDefinition q = p;
    q.loads[0].force *= 2.0;
    const auto b = analyze(q, table(), d, direct());
    const auto s2 = sensitivities(q, b.u, d, table());
    CHECK((s2.dc_dax - 4.0 * s.dc_dax).cwiseAbs().maxCoeff() <= 1e-9 * s.dc_dax.cwiseAbs().maxCoeff());
    CHECK((s2.dc_day - 4.0 * s.dc_day).cwiseAbs().maxCoeff() <= 1e-9 * s.dc_day.cwiseAbs().maxCoeff());
  }
  SUBCASE("void element without strain has no sensitivity") {
    ProblemDefinition q = p;
    q.supports.push_back({q.grid.node(1, 0)});
    q.supports.push_back({q.grid.node(1, 1)});
    auto v = d;
    const int e = q.grid.element(0, 0);
    v.alpha_x[e] = v.alpha_y[e] = 1.0;
    const auto b = analyze(q, table(), v, direct());
    const auto sv = sensitivities(q, b.u, v, table());
    CHECK(sv.dc_dax[e] == 0.0);
    CHECK(sv.dc_day[e] == 0.0);
  }
}

TEST_CASE("dual update") {
  ProblemDefinition p = cantilever(4, 3);
  const DensityFilter filter(p, 1.5);
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> u(0.3, 0.8), g(0.0, 2.0);
  Eigen::VectorXd ax(12), ay(12), gx(12), gy(12);
  for (int e = 0; e < 12; ++e) ax[e] = u(rng), ay[e] = u(rng), gx[e] = g(rng), gy[e] = g(rng);

  auto volume_of = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    const Eigen::VectorXd fx = filter.apply(x), fy = filter.apply(y);
    return (1.0 - fx.array() * fy.array()).mean();
  };

  SUBCASE("volume target met and move limit respected") {
    const double v0 = volume_of(ax, ay);
    const double target = v0 - 0.005;
    const auto r = dual_update(p, filter, ax, ay, gx, gy, target, 0.01);
    CHECK(volume_of(r.alpha_x, r.alpha_y) == doctest::Approx(target).epsilon(1e-4));
    CHECK(std::abs(r.volume - target) <= 1e-4);
    CHECK((r.alpha_x - ax).cwiseAbs().maxCoeff() <= 0.01 + 1e-15);
    CHECK((r.alpha_y - ay).cwiseAbs().maxCoeff() <= 0.01 + 1e-15);
  }
  SUBCASE("matches an independent bisection") {
    const double target = volume_of(ax, ay);
    const auto r = dual_update(p, filter, ax, ay, gx, gy, target, 0.05);
    // Oracle: widths s = 1 - alpha scaled by sqrt(g / (lambda * dV)), linear bisection on lambda.
    const Eigen::VectorXd fx = filter.apply(ax), fy = filter.apply(ay);
    const Eigen::VectorXd dvx = filter.apply_transpose(fy / 12.0);
    const Eigen::VectorXd dvy = filter.apply_transpose(fx / 12.0);
    auto update = [&](double lambda, Eigen::VectorXd& nx, Eigen::VectorXd& ny) {
      nx = ax;
      ny = ay;
      for (int e = 0; e < 12; ++e) {
        const double sx = 1 - ax[e], sy = 1 - ay[e];
        const double tx = std::clamp(std::max(sx, 1e-3) * std::sqrt(gx[e] / (lambda * dvx[e])),
                                     std::max(0.0, sx - 0.05), std::min(1.0, sx + 0.05));
        const double ty = std::clamp(std::max(sy, 1e-3) * std::sqrt(gy[e] / (lambda * dvy[e])),
                                     std::max(0.0, sy - 0.05), std::min(1.0, sy + 0.05));
        nx[e] = 1 - tx;
        ny[e] = 1 - ty;
      }
    };
    double lo = 1e-8, hi = 1e8;
    Eigen::VectorXd nx, ny;
    for (int it = 0; it < 300; ++it) {
      const double mid = 0.5 * (lo + hi);
      update(mid, nx, ny);
      (volume_of(nx, ny) > target ? lo : hi) = mid;
    }
    update(hi, nx, ny);
    CHECK((nx - r.alpha_x).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((ny - r.alpha_y).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("zero sensitivities only project onto the volume") {
    const Eigen::VectorXd z = Eigen::VectorXd::Zero(12);
    const auto same = dual_update(p, filter, ax, ay, z, z, volume_of(ax, ay), 0.01);
    CHECK((same.alpha_x - ax).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((same.alpha_y - ay).cwiseAbs().maxCoeff() < 1e-12);
    const double target = volume_of(ax, ay) - 0.004;
    const auto proj = dual_update(p, filter, ax, ay, z, z, target, 0.01);
    CHECK(proj.volume == doctest::Approx(target).epsilon(1e-6));
    // Common scaling of the widths.
    const Eigen::ArrayXd ratio = (1.0 - proj.alpha_x.array()) / (1.0 - ax.array());
    CHECK(ratio.maxCoeff() - ratio.minCoeff() < 1e-10);
  }
  SUBCASE("slack constraint takes the unconstrained step") {
    const auto r = dual_update(p, filter, ax, ay, gx, gy, 1.0, 0.01);
    CHECK(r.multiplier == 0.0);
    CHECK(((ax - r.alpha_x).array() >= 0.01 - 1e-15 || r.alpha_x.array() == 0.0).all());
  }
  SUBCASE("tied variables stay equal") {
    const auto r = dual_update(p, filter, ax, ax, gx, gy, volume_of(ax, ax) - 0.003, 0.01, true);
    CHECK((r.alpha_x - r.alpha_y).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("non-finite sensitivities are rejected") {
    Eigen::VectorXd bad = gx;
    bad[3] = std::nan("");
    CHECK_THROWS_AS(dual_update(p, filter, ax, ay, bad, gy, 0.5, 0.01), BisectionFailure);
  }
}

TEST_CASE("optimizer on a small cantilever") {
  const ProblemDefinition p = cantilever(40, 20);
  OptimizerOptions o;
  o.iterations = 200;
  int calls = 0;
  o.progress = [&](const IterationRecord&) { ++calls; };
  const auto r = optimize(p, table(), o);
  CHECK(calls == 200);
  CHECK(r.history.size() == 200);
  CHECK(std::abs(r.design.mean_density(p) - 0.5) <= 1e-3);
  CHECK(r.history[199].compliance <= r.history[9].compliance);
  for (const auto& h : r.history) {
    CHECK(h.volume <= 0.5 + 1e-6);
    CHECK(h.change <= 0.01 + 1e-12);
  }
  for (std::size_t e = 0; e < r.design.size(); ++e) {
    CHECK(r.design.alpha_x[e] >= 0.0);
    CHECK(r.design.alpha_x[e] <= 1.0);
    CHECK(r.design.alpha_y[e] >= 0.0);
    CHECK(r.design.alpha_y[e] <= 1.0);
  }
  // Stored angles are the principal directions of the last analysed stress state.
  for (std::size_t e = 0; e < r.design.size(); ++e) {
    const auto& s = r.stresses[e];
    const double a = 0.5 * (s.sxx - s.syy);
    const double rad = std::hypot(a, s.txy);
    const double scale = std::abs(0.5 * (s.sxx + s.syy)) + rad;
    if (2 * rad <= 1e-6 * scale) continue;
    const double th = 0.5 * std::atan2(s.txy, a);
    CHECK(std::abs(wrap_line_angle(th - r.design.theta[e])) <= 1e-6);
  }

  SUBCASE("snapshot round trip is exact") {
    const auto file = std::filesystem::temp_directory_path() / "dehomo_design_rt.csv";
    write_design(file, r.design);
    const auto back = read_design(file);
    CHECK(back.alpha_x == r.design.alpha_x);
    CHECK(back.alpha_y == r.design.alpha_y);
    CHECK(back.theta == r.design.theta);
    std::filesystem::remove(file);
  }
}

TEST_CASE("full volume budget converges to solid") {
  const ProblemDefinition p = cantilever(12, 6, 1.0);
  OptimizerOptions o;
  o.iterations = 20;
  const auto r = optimize(p, table(), o);
  for (std::size_t e = 0; e < r.design.size(); ++e) {
    CHECK(r.design.alpha_x[e] == 0.0);
    CHECK(r.design.alpha_y[e] == 0.0);
  }
  std::vector<ElasticityTensor> solid(72, isotropic_tensor(1.0, 0.3));
  const double c0 = compliance(p.load_vector(), assemble_solve(p, solid));
  CHECK(r.compliance == doctest::Approx(c0).epsilon(1e-3));
}

TEST_CASE("extracted fields") {
  ProblemDefinition p = cantilever(3, 2);
  auto d = DesignField::uniform(p, 0.0, 0.0, 0.0);
  d.theta = {0.0, 0.3, -1.2, kPi / 2, 1e-3, -0.7};
  d.alpha_x[1] = 0.5;
  d.alpha_y[1] = 0.5;
  const auto f = extract_fields(d);
  CHECK(f.density[0] == 1.0);
  CHECK(f.density[1] == 0.75);
  CHECK(f.u_dir[0] == Vec2(1, 0));
  CHECK(f.v_dir[0] == Vec2(0, 1));
  for (int e = 0; e < 6; ++e) {
    CHECK(std::abs(f.u_dir[e].dot(f.v_dir[e])) < 1e-15);
    CHECK(f.u_dir[e].norm() == doctest::Approx(1.0));
  }
}
