#include "thinlayer/linsolve.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <limits>

#include "thinlayer/error.hpp"

namespace thinlayer {

NullSpace NullSpace::constants(Index n) {
  NullSpace ns;
  ns.group.assign(std::size_t(n), 0);
  ns.num_groups = n > 0 ? 1 : 0;
  return ns;
}

void NullSpace::project(Eigen::VectorXd& v) const {
  if (num_groups == 0) return;
  std::vector<double> sum(std::size_t(num_groups), 0.0);
  std::vector<double> count(std::size_t(num_groups), 0.0);
  for (Index i = 0; i < v.size(); ++i) {
    const int g = group[std::size_t(i)];
    if (g < 0) continue;
    sum[std::size_t(g)] += v[i];
    count[std::size_t(g)] += 1.0;
  }
  for (std::size_t g = 0; g < sum.size(); ++g)
    if (count[g] > 0) sum[g] /= count[g];
  for (Index i = 0; i < v.size(); ++i) {
    const int g = group[std::size_t(i)];
    if (g >= 0) v[i] -= sum[std::size_t(g)];
  }
}

void validate_sparse(const SparseMatrix& A, bool expect_symmetric, double rel_tol) {
  if (!A.isCompressed()) throw Error(ErrorCode::StructureViolation, "sparse matrix is not compressed");
  const int* outer = A.outerIndexPtr();
  const int* inner = A.innerIndexPtr();
  for (Index r = 0; r < A.rows(); ++r) {
    for (int k = outer[r]; k < outer[r + 1]; ++k) {
      if (inner[k] < 0 || inner[k] >= A.cols()) throw Error(ErrorCode::StructureViolation, "column index out of range");
      if (k > outer[r] && inner[k] <= inner[k - 1]) throw Error(ErrorCode::StructureViolation, "unsorted row");
    }
  }
  if (!expect_symmetric) return;
  if (A.rows() != A.cols()) throw Error(ErrorCode::DimensionMismatch, "symmetric matrix must be square");
  const double scale = A.nonZeros() ? Eigen::VectorXd::Map(A.valuePtr(), A.nonZeros()).cwiseAbs().maxCoeff() : 0.0;
  const Index stride = std::max<Index>(1, A.rows() / 997);
  for (Index r = 0; r < A.rows(); r += stride) {
    for (SparseMatrix::InnerIterator it(A, r); it; ++it) {
      if (std::abs(it.value() - A.coeff(it.col(), r)) > rel_tol * scale) {
        throw Error(ErrorCode::StructureViolation, "matrix flagged symmetric is not");
      }
    }
  }
}

SolveReport solve_spd(const SparseMatrix& A, const Eigen::VectorXd& b_in, Eigen::VectorXd& x,
                      const SolverOptions& opts, const NullSpace* null) {
  const Index n = A.rows();
  if (A.cols() != n || b_in.size() != n) throw Error(ErrorCode::DimensionMismatch, "solve_spd: size mismatch");
  const bool project = null && !null->empty();
  Eigen::VectorXd b = b_in;
  if (project) null->project(b);
  if (x.size() != n) x = Eigen::VectorXd::Zero(n);
  if (project) null->project(x);

  SolveReport rep;
  rep.initial_residual = b.norm();
  if (rep.initial_residual == 0.0) {
    x.setZero();
    rep.converged = true;
    return rep;
  }
  Eigen::VectorXd inv_diag = A.diagonal();
  for (Index i = 0; i < n; ++i) inv_diag[i] = inv_diag[i] > 0.0 ? 1.0 / inv_diag[i] : 1.0;

  Eigen::VectorXd r = b - A * x;
  if (project) null->project(r);
  Eigen::VectorXd z = inv_diag.cwiseProduct(r);
  if (project) null->project(z);
  Eigen::VectorXd d = z;
  Eigen::VectorXd q(n);
  double rz = r.dot(z);
  const double target = opts.tol * rep.initial_residual;
  double rnorm = r.norm();
  Eigen::VectorXd best = x;
  double best_norm = rnorm;
  int it = 0;
  while (rnorm > target && it < opts.max_iter) {
    q.noalias() = A * d;
    if (project) null->project(q);
    const double dq = d.dot(q);
    if (!(dq > 0.0)) break;
    const double step = rz / dq;
    x += step * d;
    r -= step * q;
    rnorm = r.norm();
    ++it;
    if (rnorm < best_norm) {
      best_norm = rnorm;
      best = x;
    }
    z = inv_diag.cwiseProduct(r);
    if (project) null->project(z);
    const double rz_new = r.dot(z);
    d = z + (rz_new / rz) * d;
    rz = rz_new;
  }
  x = best;
  Eigen::VectorXd res = b - A * x;
  if (project) null->project(res);
  rep.iterations = it;
  rep.residual = res.norm();
  // Recurrence and true residual may differ by rounding; accept a small margin.
  rep.converged = rep.residual <= 10.0 * target;
  return rep;
}

SolveReport solve_spd_or_throw(const SparseMatrix& A, const Eigen::VectorXd& b, Eigen::VectorXd& x,
                               const SolverOptions& opts, const NullSpace* null) {
  SolveReport rep = solve_spd(A, b, x, opts, null);
  if (!rep.converged) {
    throw Error(ErrorCode::NoConvergence, "CG stopped after " + std::to_string(rep.iterations) +
                                              " iterations at relative residual " + std::to_string(rep.relative()));
  }
  return rep;
}

SolveReport solve_general(const SparseMatrix& A, const Eigen::VectorXd& b, Eigen::VectorXd& x,
                          const SolverOptions& opts) {
  if (A.rows() != A.cols() || b.size() != A.rows()) throw Error(ErrorCode::DimensionMismatch, "solve_general: size mismatch");
  SolveReport rep;
  rep.initial_residual = b.norm();
  if (rep.initial_residual == 0.0) {
    x = Eigen::VectorXd::Zero(b.size());
    rep.converged = true;
    return rep;
  }
  Eigen::BiCGSTAB<SparseMatrix, Eigen::DiagonalPreconditioner<double>> solver;
  solver.setTolerance(opts.tol);
  solver.setMaxIterations(opts.max_iter);
  solver.compute(A);
  if (x.size() != b.size()) x = Eigen::VectorXd::Zero(b.size());
  x = solver.solveWithGuess(b, x);
  rep.iterations = int(solver.iterations());
  rep.residual = (b - A * x).norm();
  rep.converged = solver.info() == Eigen::Success || rep.residual <= 10.0 * opts.tol * rep.initial_residual;
  return rep;
}

VelocitySolver::VelocitySolver(const SparseMatrix& A, const SaddleOptions& opts) : A_(A), opts_(opts) {
  if (opts.inner == InnerSolver::direct) {
    auto chol = std::make_shared<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>();
    chol->compute(Eigen::SparseMatrix<double>(A));
    if (chol->info() != Eigen::Success) {
      throw Error(ErrorCode::NoConvergence, "velocity block factorisation failed (matrix not positive definite)");
    }
    chol_ = std::move(chol);
  }
}

Eigen::VectorXd VelocitySolver::solve(const Eigen::VectorXd& rhs, long& iterations) const {
  if (rhs.size() != A_.rows()) throw Error(ErrorCode::DimensionMismatch, "velocity solve: size mismatch");
  if (chol_) return chol_->solve(rhs);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(rhs.size());
  const SolveReport rep = solve_spd(A_, rhs, x, {opts_.inner_tol, 100000});
  iterations += rep.iterations;
  if (!rep.converged && rep.relative() > 1e3 * opts_.inner_tol) {
    throw Error(ErrorCode::NoConvergence, "inner velocity solve did not converge");
  }
  return x;
}

namespace {

void remove_mean(Eigen::VectorXd& v) {
  if (v.size()) v.array() -= v.mean();
}

}  // namespace

SaddleReport solve_saddle(const SparseMatrix& A, const SparseMatrix& B, const Eigen::VectorXd& f,
                          const Eigen::VectorXd& g, const Eigen::VectorXd& pressure_mass, Eigen::VectorXd& u,
                          Eigen::VectorXd& p, const SaddleOptions& opts) {
  if (A.rows() != A.cols() || f.size() != A.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "solve_saddle: block sizes do not match");
  }
  if (f.norm() == 0.0 && g.norm() == 0.0) return solve_saddle(VelocitySolver(), A, B, f, g, pressure_mass, u, p, opts);
  return solve_saddle(VelocitySolver(A, opts), A, B, f, g, pressure_mass, u, p, opts);
}

SaddleReport solve_saddle(const VelocitySolver& velocity, const SparseMatrix& A, const SparseMatrix& B,
                          const Eigen::VectorXd& f, const Eigen::VectorXd& g, const Eigen::VectorXd& pressure_mass,
                          Eigen::VectorXd& u, Eigen::VectorXd& p, const SaddleOptions& opts) {
  const Index nu = A.rows();
  const Index np = B.rows();
  const bool sizes_ok = A.cols() == nu && B.cols() == nu && f.size() == nu && g.size() == np && pressure_mass.size() == np;
  if (!sizes_ok || (velocity.size() != nu && velocity.size() != 0)) {
    throw Error(ErrorCode::DimensionMismatch, "solve_saddle: block sizes do not match");
  }
  SaddleReport rep;
  if (opts.pressure_nullspace) {
    const double total = g.sum();
    const double scale = g.cwiseAbs().sum() + 1e-300;
    if (std::abs(total) > 1e-12 * scale && std::abs(total) > 1e-14) {
      throw Error(ErrorCode::IncompatibleRHS, "divergence data does not integrate to zero on a periodic cell");
    }
  }
  if (f.norm() == 0.0 && g.norm() == 0.0) {
    u = Eigen::VectorXd::Zero(nu);
    p = Eigen::VectorXd::Zero(np);
    rep.converged = true;
    return rep;
  }

  const Eigen::VectorXd inv_mass = pressure_mass.cwiseInverse();
  // A pressure of the right size on entry is the initial guess.
  if (p.size() != np) p = Eigen::VectorXd::Zero(np);
  u = velocity.solve(f + B.transpose() * p, rep.inner_iterations);

  Eigen::VectorXd r = g - B * u;
  if (opts.pressure_nullspace) remove_mean(r);
  // Rounding floor of the discrete divergence: when A^{-1} f is already
  // solenoidal to machine precision the relative target would chase noise.
  const double cancel_scale = (B.cwiseAbs() * u.cwiseAbs()).norm();
  const double floor = 1e3 * std::numeric_limits<double>::epsilon() * cancel_scale / opts.tol;
  const double ref = std::max({g.norm(), (B * u).norm(), floor, 1e-300});
  Eigen::VectorXd z = inv_mass.cwiseProduct(r);
  if (opts.pressure_nullspace) remove_mean(z);
  Eigen::VectorXd d = z;
  double rz = r.dot(z);
  double rnorm = r.norm();
  const double target = opts.tol * ref;
  int it = 0;
  while (rnorm > target && it < opts.max_outer) {
    const Eigen::VectorXd y = velocity.solve(B.transpose() * d, rep.inner_iterations);
    Eigen::VectorXd sd = B * y;
    if (opts.pressure_nullspace) remove_mean(sd);
    const double dsd = d.dot(sd);
    if (!(dsd > 0.0)) break;
    const double step = rz / dsd;
    p += step * d;
    u += step * y;
    r -= step * sd;
    rnorm = r.norm();
    ++it;
    z = inv_mass.cwiseProduct(r);
    if (opts.pressure_nullspace) remove_mean(z);
    const double rz_new = r.dot(z);
    d = z + (rz_new / rz) * d;
    rz = rz_new;
  }
  if (opts.pressure_nullspace) remove_mean(p);
  rep.outer_iterations = it;
  Eigen::VectorXd div = B * u - g;
  if (opts.pressure_nullspace) remove_mean(div);
  rep.divergence_residual = div.norm() / ref;
  const Eigen::VectorXd bp = B.transpose() * p;
  const double fref = std::max({f.norm(), bp.norm(), 1e-300});
  rep.momentum_residual = (A * u - bp - f).norm() / fref;
  rep.converged = rep.divergence_residual <= 10.0 * opts.tol;
  if (!rep.converged) {
    throw Error(ErrorCode::NoConvergence, "Schur CG stopped after " + std::to_string(it) +
                                              " iterations at relative divergence " +
                                              std::to_string(rep.divergence_residual));
  }
  return rep;
}

}  // namespace thinlayer
