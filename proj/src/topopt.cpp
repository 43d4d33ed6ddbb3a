#include "dehomo/topopt.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace dehomo {

double DesignField::mean_density(const ProblemDefinition& problem) const {
  double sum = 0.0;
  int n = 0;
  for (int e = 0; e < int(size()); ++e) {
    if (!problem.is_active(e)) continue;
    sum += density(e);
    ++n;
  }
  return n > 0 ? sum / n : 0.0;
}

DesignField DesignField::uniform(const ProblemDefinition& problem, double ax, double ay,
                                 double theta) {
  const int n = problem.grid.elements();
  DesignField d{std::vector<double>(n, ax), std::vector<double>(n, ay),
                std::vector<double>(n, theta)};
  for (int e = 0; e < n; ++e) {
    if (problem.is_active(e)) continue;
    d.alpha_x[e] = d.alpha_y[e] = 1.0;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Filter
// ---------------------------------------------------------------------------

DensityFilter::DensityFilter(const ProblemDefinition& problem, double radius) {
  const auto& g = problem.grid;
  const int n = g.elements();
  const int reach = std::max(0, int(std::ceil(radius)) - 1);
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(std::size_t(n) * (2 * reach + 1) * (2 * reach + 1));
  for (int e = 0; e < n; ++e) {
    if (!problem.is_active(e)) {
      triplets.emplace_back(e, e, 1.0);
      continue;
    }
    const int i = e % g.nx, j = e / g.nx;
    std::vector<std::pair<int, double>> row;
    double total = 0.0;
    for (int dj = -reach; dj <= reach; ++dj) {
      for (int di = -reach; di <= reach; ++di) {
        const int ii = i + di, jj = j + dj;
        if (ii < 0 || jj < 0 || ii >= g.nx || jj >= g.ny) continue;
        const int f = g.element(ii, jj);
        if (!problem.is_active(f)) continue;
        const double w = std::max(0.0, radius - std::hypot(double(di), double(dj)));
        if (w <= 0.0) continue;
        row.emplace_back(f, w);
        total += w;
      }
    }
    if (total <= 0.0) {
      // Radius below one element: identity.
      triplets.emplace_back(e, e, 1.0);
      continue;
    }
    for (auto [f, w] : row) triplets.emplace_back(e, f, w / total);
  }
  H_.resize(n, n);
  H_.setFromTriplets(triplets.begin(), triplets.end());
}

Eigen::VectorXd density_filter(const ProblemDefinition& problem, const Eigen::VectorXd& field,
                               double radius) {
  return DensityFilter(problem, radius).apply(field);
}

// ---------------------------------------------------------------------------
// Angles, tensors, sensitivities
// ---------------------------------------------------------------------------

double principal_angle(const StressTensor2D& s, double previous) {
  const double a = 0.5 * (s.sxx - s.syy);
  const double r = std::hypot(a, s.txy);
  const double mean = 0.5 * (s.sxx + s.syy);
  const double scale = std::max(std::abs(mean + r), std::abs(mean - r));
  if (2.0 * r <= 1e-9 * scale || !(r > 0.0)) return previous;
  return wrap_line_angle(0.5 * std::atan2(s.txy, a));
}

std::vector<double> update_angles(std::span<const StressTensor2D> stresses,
                                  std::span<const double> previous) {
  if (stresses.size() != previous.size()) throw InvalidArgument("angle field size mismatch");
  std::vector<double> theta(stresses.size());
  for (std::size_t e = 0; e < stresses.size(); ++e)
    theta[e] = principal_angle(stresses[e], previous[e]);
  return theta;
}

std::vector<ElasticityTensor> element_tensors(const ProblemDefinition& problem,
                                              const CHLookupTable& table,
                                              const DesignField& design) {
  const int n = problem.grid.elements();
  if (int(design.size()) != n) throw InvalidArgument("design size does not match the grid");
  std::vector<ElasticityTensor> C(n, ElasticityTensor::Zero());
#pragma omp parallel for schedule(static)
  for (int e = 0; e < n; ++e) {
    if (!problem.is_active(e)) continue;
    const auto r = table.interpolate(design.alpha_x[e], design.alpha_y[e]);
    C[e] = rotate_tensor(r.C, design.theta[e]);
  }
  return C;
}

namespace {

/// Strains at the four Gauss points; u_e^T K_e(D) u_e = 1/4 sum eps^T D eps.
Eigen::Matrix<double, 3, 4> gauss_strains(const Vec8& ue) {
  static const std::array<Eigen::Matrix<double, 3, 8>, 4> kB = [] {
    const double g = 1.0 / std::sqrt(3.0);
    return std::array<Eigen::Matrix<double, 3, 8>, 4>{
        strain_displacement(-g, -g), strain_displacement(g, -g), strain_displacement(g, g),
        strain_displacement(-g, g)};
  }();
  Eigen::Matrix<double, 3, 4> eps;
  for (int k = 0; k < 4; ++k) eps.col(k) = kB[k] * ue;
  return eps;
}

double energy(const Eigen::Matrix<double, 3, 4>& eps, const ElasticityTensor& D) {
  return 0.25 * (eps.transpose() * D * eps).trace();
}

}  // namespace

Sensitivities sensitivities(const ProblemDefinition& problem, const Eigen::VectorXd& u,
                            const DesignField& design, const CHLookupTable& table) {
  const auto& g = problem.grid;
  const int n = g.elements();
  Sensitivities s{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
#pragma omp parallel for schedule(static)
  for (int e = 0; e < n; ++e) {
    if (!problem.is_active(e)) continue;
    Vec8 ue;
    const auto dofs = g.element_dofs(e);
    for (int k = 0; k < 8; ++k) ue[k] = u[dofs[k]];
    const auto eps = gauss_strains(ue);
    const auto r = table.interpolate(design.alpha_x[e], design.alpha_y[e]);
    s.dc_dax[e] = -0.5 * energy(eps, rotate_tensor(r.dC_dax, design.theta[e]));
    s.dc_day[e] = -0.5 * energy(eps, rotate_tensor(r.dC_day, design.theta[e]));
  }
  return s;
}

AnalysisResult analyze(const ProblemDefinition& problem, const CHLookupTable& table,
                       const DesignField& design, const SolverOptions& solver,
                       const Eigen::VectorXd* warm_start) {
  const auto C = element_tensors(problem, table, design);
  const auto materials = ElementMaterials::from_tensors(problem, C);
  AnalysisResult r;
  r.u = solve_displacements(problem, materials, solver, &r.stats, warm_start);
  r.compliance = compliance(problem.load_vector(), r.u);
  const int n = problem.grid.elements();
  r.stresses.assign(n, {});
#pragma omp parallel for schedule(static)
  for (int e = 0; e < n; ++e)
    if (problem.is_active(e)) r.stresses[e] = element_stress(problem.grid, r.u, C[e], e);
  return r;
}

namespace {

DesignField physical_design(const DensityFilter& filter, const Eigen::VectorXd& ax,
                            const Eigen::VectorXd& ay, std::span<const double> theta) {
  const Eigen::VectorXd fx = filter.apply(ax), fy = filter.apply(ay);
  DesignField d;
  d.alpha_x.resize(fx.size());
  d.alpha_y.resize(fy.size());
  for (Eigen::Index e = 0; e < fx.size(); ++e) {
    d.alpha_x[e] = std::clamp(fx[e], 0.0, 1.0);
    d.alpha_y[e] = std::clamp(fy[e], 0.0, 1.0);
  }
  d.theta.assign(theta.begin(), theta.end());
  return d;
}

}  // namespace

ComplianceGradient compliance_gradient(const ProblemDefinition& problem,
                                       const CHLookupTable& table, const DensityFilter& filter,
                                       const Eigen::VectorXd& alpha_x,
                                       const Eigen::VectorXd& alpha_y,
                                       std::span<const double> theta,
                                       const SolverOptions& solver) {
  const auto phys = physical_design(filter, alpha_x, alpha_y, theta);
  const auto a = analyze(problem, table, phys, solver);
  const auto s = sensitivities(problem, a.u, phys, table);
  return {a.compliance, filter.apply_transpose(s.dc_dax), filter.apply_transpose(s.dc_day)};
}

// ---------------------------------------------------------------------------
// Optimality-criteria update
// ---------------------------------------------------------------------------

DualUpdateResult dual_update(const ProblemDefinition& problem, const DensityFilter& filter,
                             const Eigen::VectorXd& alpha_x, const Eigen::VectorXd& alpha_y,
                             const Eigen::VectorXd& dc_dax, const Eigen::VectorXd& dc_day,
                             double volume_fraction, double move_limit, bool tied) {
  const int n = problem.grid.elements();
  const int n_active = problem.active_count();
  if (!dc_dax.allFinite() || !dc_day.allFinite())
    throw BisectionFailure("non-finite sensitivities");

  auto volume = [&](const Eigen::VectorXd& ax, const Eigen::VectorXd& ay) {
    const Eigen::VectorXd fx = filter.apply(ax), fy = filter.apply(ay);
    double v = 0.0;
    for (int e = 0; e < n; ++e)
      if (problem.is_active(e))
        v += 1.0 - std::clamp(fx[e], 0.0, 1.0) * std::clamp(fy[e], 0.0, 1.0);
    return v / n_active;
  };

  // Volume gradient with respect to the design variables (chained through the filter).
  Eigen::VectorXd fx = filter.apply(alpha_x), fy = filter.apply(alpha_y);
  Eigen::VectorXd gvx(n), gvy(n);
  for (int e = 0; e < n; ++e) {
    const bool on = problem.is_active(e);
    gvx[e] = on ? std::clamp(fy[e], 0.0, 1.0) / n_active : 0.0;
    gvy[e] = on ? std::clamp(fx[e], 0.0, 1.0) / n_active : 0.0;
  }
  // -dV/dalpha >= 0
  const Eigen::VectorXd dvx = filter.apply_transpose(gvx), dvy = filter.apply_transpose(gvy);

  Eigen::VectorXd gx = dc_dax, gy = dc_day, vx = dvx, vy = dvy;
  if (tied) {
    gx = dc_dax + dc_day;
    vx = dvx + dvy;
  }

  // Without any sensitivity the step only projects onto the volume constraint by a common
  // scaling of the widths; lambda then plays the role of 1 / scale^2.
  const bool projection = gx.cwiseAbs().maxCoeff() == 0.0 && gy.cwiseAbs().maxCoeff() == 0.0;

  constexpr double kFloor = 1e-3;
  auto step = [&](const Eigen::VectorXd& alpha, const Eigen::VectorXd& g,
                  const Eigen::VectorXd& dv, double lambda, Eigen::VectorXd& out) {
    out = alpha;
    for (int e = 0; e < n; ++e) {
      if (!problem.is_active(e)) continue;
      const double s = 1.0 - alpha[e];
      const double lo = std::max(0.0, s - move_limit), hi = std::min(1.0, s + move_limit);
      double s_new;
      const double num = std::max(g[e], 0.0);
      if (projection) {
        s_new = lambda <= 0.0 ? hi : std::isinf(lambda) ? lo : s / std::sqrt(lambda);
      } else if (dv[e] <= 1e-300) {
        s_new = num > 0.0 ? hi : s;
      } else if (std::isinf(lambda)) {
        s_new = lo;
      } else if (lambda <= 0.0) {
        s_new = num > 0.0 ? hi : lo;
      } else {
        s_new = std::max(s, kFloor) * std::sqrt(num / (lambda * dv[e]));
      }
      out[e] = 1.0 - std::clamp(s_new, lo, hi);
    }
  };

  Eigen::VectorXd nx, ny;
  auto evaluate = [&](double lambda) {
    step(alpha_x, gx, vx, lambda, nx);
    if (tied) {
      ny = nx;
    } else {
      step(alpha_y, gy, vy, lambda, ny);
    }
    return volume(nx, ny);
  };

  DualUpdateResult r;
  auto finish = [&](double lambda) {
    r.volume = evaluate(lambda);
    r.multiplier = lambda;
    r.alpha_x = nx;
    r.alpha_y = ny;
    return r;
  };

  if (evaluate(0.0) <= volume_fraction) return finish(0.0);
  const double inf = std::numeric_limits<double>::infinity();
  if (evaluate(inf) >= volume_fraction) return finish(inf);

  // Initial scale from the mean sensitivity ratio, then expand to a bracket.
  const double num = gx.cwiseMax(0.0).sum() + (tied ? 0.0 : gy.cwiseMax(0.0).sum());
  const double den = vx.sum() + (tied ? 0.0 : vy.sum());
  double guess = (!projection && num > 0.0 && den > 0.0) ? num / den : 1.0;
  double lo = guess, hi = guess;
  int expand = 0;
  while (evaluate(lo) < volume_fraction) {
    lo *= 0.1;
    if (++expand > 400 || lo == 0.0) throw BisectionFailure("cannot bracket the multiplier");
  }
  while (evaluate(hi) > volume_fraction) {
    hi *= 10.0;
    if (++expand > 400 || std::isinf(hi)) throw BisectionFailure("cannot bracket the multiplier");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-14 * (hi + lo); ++it) {
    const double mid = std::sqrt(lo * hi);
    if (evaluate(mid) > volume_fraction) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return finish(hi);
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

OptimizationResult optimize(const ProblemDefinition& problem, const CHLookupTable& table,
                            const OptimizerOptions& options) {
  if (options.iterations < 1) throw InvalidArgument("at least one iteration is required");
  problem.validate();
  const int n = problem.grid.elements();
  const DensityFilter filter(problem, options.filter_radius);

  const double a0 = std::sqrt(1.0 - problem.volume_fraction);
  Eigen::VectorXd ax = Eigen::VectorXd::Constant(n, a0), ay = ax;
  for (int e = 0; e < n; ++e)
    if (!problem.is_active(e)) ax[e] = ay[e] = 1.0;
  std::vector<double> theta(n, 0.0);

  OptimizationResult result;
  Eigen::VectorXd u;
  for (int it = 1; it <= options.iterations; ++it) {
    const auto phys = physical_design(filter, ax, ay, theta);
    auto a = analyze(problem, table, phys, options.solver, u.size() ? &u : nullptr);
    u = std::move(a.u);
    const auto s = sensitivities(problem, u, phys, table);
    if (!options.density_baseline) theta = update_angles(a.stresses, theta);
    result.stresses = std::move(a.stresses);

    auto upd = dual_update(problem, filter, ax, ay, filter.apply_transpose(s.dc_dax),
                           filter.apply_transpose(s.dc_day), problem.volume_fraction,
                           options.move_limit, options.density_baseline);
    const double change = std::max((upd.alpha_x - ax).cwiseAbs().maxCoeff(),
                                   (upd.alpha_y - ay).cwiseAbs().maxCoeff());
    ax = std::move(upd.alpha_x);
    ay = std::move(upd.alpha_y);
    IterationRecord rec{it, a.compliance, upd.volume, change};
    result.history.push_back(rec);
    if (options.progress) options.progress(rec);
  }

  result.design = physical_design(filter, ax, ay, theta);
  for (int e = 0; e < n; ++e)
    if (!problem.is_active(e)) result.design.alpha_x[e] = result.design.alpha_y[e] = 1.0;
  // No warm start: a resumed run re-analyses the snapshot and must agree bit for bit.
  auto closing = analyze(problem, table, result.design, options.solver);
  result.compliance = closing.compliance;
  result.final_stresses = std::move(closing.stresses);
  return result;
}

ExtractedFields extract_fields(const DesignField& design) {
  ExtractedFields f;
  const auto n = design.size();
  f.density.resize(n);
  f.u_dir.resize(n);
  f.v_dir.resize(n);
  for (std::size_t e = 0; e < n; ++e) {
    f.density[e] = design.density(int(e));
    const double c = std::cos(design.theta[e]), s = std::sin(design.theta[e]);
    f.u_dir[e] = {c, s};
    f.v_dir[e] = {-s, c};
  }
  return f;
}

// ---------------------------------------------------------------------------
// Text exports
// ---------------------------------------------------------------------------

void write_history(const std::filesystem::path& file, const OptimizationHistory& history) {
  std::ofstream out(file);
  if (!out) throw FormatError("cannot write " + file.string());
  out << "iteration,compliance,volume,change\n";
  char line[160];
  for (const auto& r : history) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g\n", r.iteration, r.compliance,
                  r.volume, r.change);
    out << line;
  }
}

void write_design(const std::filesystem::path& file, const DesignField& design) {
  std::ofstream out(file);
  if (!out) throw FormatError("cannot write " + file.string());
  out << "element,alpha_x,alpha_y,theta,density\n";
  char line[200];
  for (std::size_t e = 0; e < design.size(); ++e) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g\n", e, design.alpha_x[e],
                  design.alpha_y[e], design.theta[e], design.density(int(e)));
    out << line;
  }
}

DesignField read_design(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("cannot open " + file.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("element,alpha_x,alpha_y,theta", 0) != 0)
    throw FormatError("not a design snapshot: " + file.string());
  DesignField d;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    std::vector<double> v;
    while (std::getline(ss, field, ',')) v.push_back(std::strtod(field.c_str(), nullptr));
    if (v.size() < 4 || std::size_t(v[0]) != d.size())
      throw FormatError("malformed design row: " + line);
    d.alpha_x.push_back(v[1]);
    d.alpha_y.push_back(v[2]);
    d.theta.push_back(v[3]);
  }
  return d;
}

}  // namespace dehomo
