#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <memory>
#include <string>
#include <vector>

#include "thinlayer/discrete.hpp"

namespace thinlayer {

struct SolveReport {
  bool converged = false;
  int iterations = 0;
  double initial_residual = 0.0;  // ||b||
  double residual = 0.0;          // final ||b - A x||
  double relative() const { return initial_residual > 0.0 ? residual / initial_residual : residual; }
};

struct SolverOptions {
  double tol = 1e-10;
  int max_iter = 20000;
};

/// Constants on groups of unknowns spanning the nullspace of a singular
/// symmetric operator (one group per connected Neumann/periodic component).
/// group[i] < 0 leaves unknown i outside every group.
struct NullSpace {
  std::vector<int> group;
  int num_groups = 0;

  static NullSpace constants(Index n);
  bool empty() const { return num_groups == 0; }
  /// Removes the per-group mean.
  void project(Eigen::VectorXd& v) const;
};

/// Sorted, in-range CSR structure; optional sampled symmetry check.
void validate_sparse(const SparseMatrix& A, bool expect_symmetric = false, double rel_tol = 1e-12);

/// Jacobi-preconditioned CG on a symmetric positive (semi-)definite system.
/// With a nullspace the right-hand side and every iterate are projected, so
/// the returned x has zero mean on each group. On failure the best iterate is
/// kept in x and report.converged is false.
SolveReport solve_spd(const SparseMatrix& A, const Eigen::VectorXd& b, Eigen::VectorXd& x,
                      const SolverOptions& opts = {}, const NullSpace* null = nullptr);

/// Same as solve_spd but throws NoConvergence on failure.
SolveReport solve_spd_or_throw(const SparseMatrix& A, const Eigen::VectorXd& b, Eigen::VectorXd& x,
                               const SolverOptions& opts = {}, const NullSpace* null = nullptr);

/// Diagonally preconditioned BiCGSTAB for the nonsymmetric transport systems.
SolveReport solve_general(const SparseMatrix& A, const Eigen::VectorXd& b, Eigen::VectorXd& x,
                          const SolverOptions& opts = {});

enum class InnerSolver { direct, cg };

struct SaddleOptions {
  double tol = 1e-10;        // relative divergence/Schur residual
  int max_outer = 5000;
  InnerSolver inner = InnerSolver::direct;
  double inner_tol = 1e-13;  // relative, used by the CG inner solver
  bool pressure_nullspace = false;
};

struct SaddleReport {
  bool converged = false;
  int outer_iterations = 0;
  long inner_iterations = 0;
  double divergence_residual = 0.0;  // ||B u - g|| / max(||g||, ||B A^{-1} f||)
  double momentum_residual = 0.0;    // ||A u - B^T p - f|| / ||f||
};

/// A^{-1} for the velocity block: sparse Cholesky factored once, or Jacobi CG
/// per call. Copies share the factorisation and solve() is safe to call from
/// several threads. A default-constructed solver holds no matrix.
class VelocitySolver {
 public:
  VelocitySolver() = default;
  VelocitySolver(const SparseMatrix& A, const SaddleOptions& opts);
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs, long& iterations) const;
  Index size() const { return A_.rows(); }

 private:
  SparseMatrix A_;
  SaddleOptions opts_;
  std::shared_ptr<const Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> chol_;
};

/// Solves A u - B^T p = f, B u = g by preconditioned CG on the pressure Schur
/// complement B A^{-1} B^T (diagonal `pressure_mass` preconditioner).
/// With pressure_nullspace, p is returned mean-zero and sum(g) must vanish.
/// A p of size B.rows() on entry is used as the initial pressure.
SaddleReport solve_saddle(const SparseMatrix& A, const SparseMatrix& B, const Eigen::VectorXd& f,
                          const Eigen::VectorXd& g, const Eigen::VectorXd& pressure_mass, Eigen::VectorXd& u,
                          Eigen::VectorXd& p, const SaddleOptions& opts = {});
/// Same with a prepared velocity solver for A, reused across right-hand sides.
SaddleReport solve_saddle(const VelocitySolver& velocity, const SparseMatrix& A, const SparseMatrix& B,
                          const Eigen::VectorXd& f, const Eigen::VectorXd& g, const Eigen::VectorXd& pressure_mass,
                          Eigen::VectorXd& u, Eigen::VectorXd& p, const SaddleOptions& opts = {});

}  // namespace thinlayer
