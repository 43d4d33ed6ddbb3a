#pragma once

#include "dehomo/fea.hpp"
#include "dehomo/homogenization.hpp"

#include <Eigen/Sparse>

#include <filesystem>
#include <functional>

namespace dehomo {

/// Per-element hole sizes and cell rotation. Inactive elements carry alpha = 1.
struct DesignField {
  std::vector<double> alpha_x;
  std::vector<double> alpha_y;
  std::vector<double> theta;

  [[nodiscard]] std::size_t size() const { return alpha_x.size(); }
  [[nodiscard]] double density(int e) const { return cell_density(alpha_x[e], alpha_y[e]); }
  /// Mean density over the active elements of `problem`.
  [[nodiscard]] double mean_density(const ProblemDefinition& problem) const;

  static DesignField uniform(const ProblemDefinition& problem, double alpha_x, double alpha_y,
                             double theta = 0.0);
};

struct IterationRecord {
  int iteration = 0;
  double compliance = 0.0;
  double volume = 0.0;
  double change = 0.0;
};

using OptimizationHistory = std::vector<IterationRecord>;

/// Cone-weighted neighbourhood average over active elements, stored as a row-normalized
/// sparse operator: filtered = H x, chain rule through H^T g.
class DensityFilter {
 public:
  DensityFilter() = default;
  DensityFilter(const ProblemDefinition& problem, double radius);

  [[nodiscard]] Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return H_ * x; }
  [[nodiscard]] Eigen::VectorXd apply_transpose(const Eigen::VectorXd& g) const {
    return H_.transpose() * g;
  }
  [[nodiscard]] const Eigen::SparseMatrix<double, Eigen::RowMajor>& matrix() const { return H_; }

 private:
  Eigen::SparseMatrix<double, Eigen::RowMajor> H_;
};

Eigen::VectorXd density_filter(const ProblemDefinition& problem, const Eigen::VectorXd& field,
                               double radius);

/// Major principal stress orientation per element; keeps `previous` where the stress is
/// (near) hydrostatic.
std::vector<double> update_angles(std::span<const StressTensor2D> stresses,
                                  std::span<const double> previous);
double principal_angle(const StressTensor2D& s, double previous);

/// Per-element rotated tensors C(alpha_x, alpha_y, theta); inactive elements get zero.
std::vector<ElasticityTensor> element_tensors(const ProblemDefinition& problem,
                                              const CHLookupTable& table,
                                              const DesignField& design);

struct Sensitivities {
  Eigen::VectorXd dc_dax;
  Eigen::VectorXd dc_day;
};

/// dc/dalpha of the physical fields with theta held fixed, -1/2 u_e^T dK_e u_e.
Sensitivities sensitivities(const ProblemDefinition& problem, const Eigen::VectorXd& u,
                            const DesignField& design, const CHLookupTable& table);

struct AnalysisResult {
  double compliance = 0.0;
  Eigen::VectorXd u;
  std::vector<StressTensor2D> stresses;
  SolveStats stats;
};

AnalysisResult analyze(const ProblemDefinition& problem, const CHLookupTable& table,
                       const DesignField& design, const SolverOptions& solver = {},
                       const Eigen::VectorXd* warm_start = nullptr);

struct ComplianceGradient {
  double compliance = 0.0;
  Eigen::VectorXd dc_dax;
  Eigen::VectorXd dc_day;
};

/// Compliance and its gradient with respect to the unfiltered design variables.
ComplianceGradient compliance_gradient(const ProblemDefinition& problem,
                                       const CHLookupTable& table, const DensityFilter& filter,
                                       const Eigen::VectorXd& alpha_x,
                                       const Eigen::VectorXd& alpha_y,
                                       std::span<const double> theta,
                                       const SolverOptions& solver = {});

struct DualUpdateResult {
  Eigen::VectorXd alpha_x;
  Eigen::VectorXd alpha_y;
  double multiplier = 0.0;
  double volume = 0.0;
};

/// Optimality-criteria step on the material widths 1 - alpha with the volume multiplier found
/// by bisection. Volumes are evaluated on the filtered fields. When `tied`, alpha_y follows
/// alpha_x and the summed sensitivity drives the single variable.
DualUpdateResult dual_update(const ProblemDefinition& problem, const DensityFilter& filter,
                             const Eigen::VectorXd& alpha_x, const Eigen::VectorXd& alpha_y,
                             const Eigen::VectorXd& dc_dax, const Eigen::VectorXd& dc_day,
                             double volume_fraction, double move_limit, bool tied = false);

struct OptimizerOptions {
  int iterations = 200;
  double filter_radius = 2.5;
  double move_limit = 0.01;
  /// Single hole-size variable with fixed axes: the plain density baseline.
  bool density_baseline = false;
  SolverOptions solver;
  std::function<void(const IterationRecord&)> progress;
};

struct OptimizationResult {
  /// Physical (filtered) design of the final iterate.
  DesignField design;
  OptimizationHistory history;
  /// Stresses of the last in-loop analysis, from which the final angles were taken.
  std::vector<StressTensor2D> stresses;
  /// Compliance and stresses of `design` from a closing analysis.
  double compliance = 0.0;
  std::vector<StressTensor2D> final_stresses;
};

OptimizationResult optimize(const ProblemDefinition& problem, const CHLookupTable& table,
                            const OptimizerOptions& options = {});

struct ExtractedFields {
  std::vector<double> density;
  std::vector<Vec2> u_dir;
  std::vector<Vec2> v_dir;
};

ExtractedFields extract_fields(const DesignField& design);

void write_history(const std::filesystem::path& file, const OptimizationHistory& history);
void write_design(const std::filesystem::path& file, const DesignField& design);
DesignField read_design(const std::filesystem::path& file);

}  // namespace dehomo
