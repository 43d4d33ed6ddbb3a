#pragma once

#include "dehomo/common.hpp"

#include <Eigen/Sparse>

#include <memory>
#include <span>

namespace dehomo {

struct NodalLoad {
  int node = 0;
  Vec2 force = Vec2::Zero();
};

struct NodalSupport {
  int node = 0;
  bool fix_x = true;
  bool fix_y = true;
};

/// Boundary-value problem on a grid of unit-size bilinear quadrilaterals.
struct ProblemDefinition {
  GridShape grid;
  /// One flag per element; empty means every element is active.
  std::vector<std::uint8_t> active;
  std::vector<NodalLoad> loads;
  std::vector<NodalSupport> supports;
  double youngs_modulus = 1.0;
  double poisson_ratio = 0.3;
  double volume_fraction = 0.5;

  [[nodiscard]] bool is_active(int e) const { return active.empty() || active[e] != 0; }
  [[nodiscard]] int active_count() const;
  /// True if the node touches at least one active element.
  [[nodiscard]] bool node_in_domain(int node) const;

  /// Throws InvalidArgument on malformed data and SingularSystem when the supports cannot
  /// prevent rigid motion or (with `require_load`) no nonzero load exists.
  void validate(bool require_load = true) const;

  [[nodiscard]] Eigen::VectorXd load_vector() const;
  /// Per-dof flag, 1 for constrained dofs.
  [[nodiscard]] std::vector<std::uint8_t> constrained_dofs() const;
};

struct StressTensor2D {
  double sxx = 0.0;
  double syy = 0.0;
  double txy = 0.0;

  [[nodiscard]] Vec3 voigt() const { return {sxx, syy, txy}; }
};

/// Ratio between the void and solid Young's modulus of the ersatz material.
inline constexpr double kVoidStiffnessRatio = 1e-6;

ElasticityTensor isotropic_tensor(double youngs_modulus, double poisson_ratio);

/// Strain-displacement matrix of the unit square element at natural coordinates (xi, eta).
Eigen::Matrix<double, 3, 8> strain_displacement(double xi, double eta);

/// 8x8 stiffness of the unit square element, 2x2 Gauss quadrature.
Mat8 element_stiffness(const ElasticityTensor& C);

/// Centroid stress of element `e` for the displacement field `u`.
StressTensor2D element_stress(const GridShape& grid, const Eigen::VectorXd& u,
                              const ElasticityTensor& C, int e);

/// Half the work of the external loads, 1/2 F^T u.
double compliance(const Eigen::VectorXd& F, const Eigen::VectorXd& u);

/// Element stiffness assignment: `index[e]` selects a matrix of `table`, -1 marks no material.
struct ElementMaterials {
  std::vector<Mat8> table;
  std::vector<std::int32_t> index;

  static ElementMaterials from_tensors(const ProblemDefinition& problem,
                                       std::span<const ElasticityTensor> per_element);
};

/// Auto: sparse LDLT up to 150k dofs, multigrid-preconditioned CG above.
enum class Preconditioner { Auto, Jacobi, Multigrid, Direct };

struct SolverOptions {
  double tolerance = 1e-8;
  /// 0 selects 10 * ndof.
  int max_iterations = 0;
  Preconditioner preconditioner = Preconditioner::Auto;
};

struct SolveStats {
  int iterations = 0;
  double relative_residual = 0.0;
  Preconditioner used = Preconditioner::Auto;
};

Eigen::SparseMatrix<double> assemble_stiffness(const ProblemDefinition& problem,
                                               const ElementMaterials& materials);

/// Solves K u = F with constrained dofs eliminated. Warm start through `initial_guess`.
Eigen::VectorXd solve_displacements(const ProblemDefinition& problem,
                                    const ElementMaterials& materials,
                                    const SolverOptions& options = {},
                                    SolveStats* stats = nullptr,
                                    const Eigen::VectorXd* initial_guess = nullptr);

Eigen::VectorXd assemble_solve(const ProblemDefinition& problem,
                               std::span<const ElasticityTensor> per_element_C,
                               const SolverOptions& options = {},
                               SolveStats* stats = nullptr);

}  // namespace dehomo
