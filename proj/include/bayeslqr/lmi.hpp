#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace bayeslqr {

// Dense semidefinite program over scalar decision variables x:
//   minimize  c' x
//   s.t.      F0_b + sum_j x_j Fj_b  >= 0   (PSD, one per block b)
// Matrix variables (symmetric or rectangular) are registered as
// contiguous ranges of scalar variables; symmetric variables store the
// upper triangle (n(n+1)/2 scalars holding the matrix entries).

enum class SdpStatus { optimal, infeasible, numerical_failure };

struct VarHandle {
  std::string name;
  int offset = -1;
  int rows = 0;
  int cols = 0;
  bool symmetric = false;

  int count() const {
    return symmetric ? rows * (rows + 1) / 2 : rows * cols;
  }
  // scalar index of entry (i, j); for symmetric handles order-free
  int index(int i, int j) const;
  Eigen::MatrixXd extract(const Eigen::VectorXd& x) const;
  void pack(const Eigen::MatrixXd& value, Eigen::VectorXd& x) const;
};

struct SdpSolution {
  Eigen::VectorXd x;
  double objective_value = 0.0;
  SdpStatus status = SdpStatus::numerical_failure;
  double primal_residual = 0.0;  // most negative block eigenvalue, clamped at 0
  double gap = 0.0;              // relative optimality gap estimate
  int iterations = 0;
  std::vector<Eigen::MatrixXd> dual_blocks;  // multiplier per block
  std::string message;
};

struct SolveOptions {
  double feas_tol = 1e-7;
  double gap_tol = 1e-7;
  int max_iters = 200;
};

class BlockBuilder;

class SdpProblem {
 public:
  VarHandle register_symmetric_variable(const std::string& name, int n);
  VarHandle register_rectangular_variable(const std::string& name, int rows,
                                          int cols);

  int num_vars() const { return n_vars_; }
  int num_blocks() const { return static_cast<int>(blocks_.size()); }

  // adds scale * <V, W> to the objective (Frobenius inner product)
  void add_cost_inner(const VarHandle& v, const Eigen::MatrixXd& w,
                      double scale = 1.0);
  void add_cost_entry(const VarHandle& v, int i, int j, double w);
  const Eigen::VectorXd& objective() const { return objective_; }

  void add_psd_block(BlockBuilder&& builder);

  // value of block b at x
  Eigen::MatrixXd eval_block(int b, const Eigen::VectorXd& x) const;
  int block_size(int b) const;

  // sparse text dump: "block var row col value" (var -1 is the constant)
  void dump(std::ostream& os) const;

  SdpSolution solve(const SolveOptions& opts = {}) const;

 private:
  friend class BlockBuilder;
  friend class IpmSolver;

  struct Block {
    int size = 0;
    Eigen::MatrixXd f0;
    std::vector<std::pair<int, Eigen::MatrixXd>> coeffs;  // var -> symmetric F_j
  };

  VarHandle register_var(const std::string& name, int rows, int cols,
                         bool symmetric);

  int n_vars_ = 0;
  Eigen::VectorXd objective_;
  std::vector<VarHandle> vars_;
  std::vector<Block> blocks_;
};

// Assembles one affine PSD block from matrix-variable placements.
// Off-diagonal placements are mirrored automatically so the block stays
// symmetric; diagonal placements are symmetrized.
class BlockBuilder {
 public:
  explicit BlockBuilder(int size);

  // adds M into the block at (r0, c0)
  void constant(int r0, int c0, const Eigen::MatrixXd& m);
  // adds P * V * Q' at (r0, c0), V the matrix variable behind the handle
  void term(int r0, int c0, const Eigen::MatrixXd& p, const VarHandle& v,
            const Eigen::MatrixXd& q);
  // adds scale * V at (r0, c0)
  void variable(int r0, int c0, const VarHandle& v, double scale = 1.0);

 private:
  friend class SdpProblem;
  void place(int r0, int c0, const Eigen::MatrixXd& m, Eigen::MatrixXd& into) const;
  void accumulate(int var, int r0, int c0, const Eigen::MatrixXd& m);

  int size_ = 0;
  Eigen::MatrixXd f0_;
  std::vector<std::pair<int, Eigen::MatrixXd>> coeffs_;
  std::vector<int> coeff_index_;  // var -> position in coeffs_, -1 if absent
};

// Thread-safe counters over every solve in the process; used by the
// acceptance suite to re-verify the solver contract post hoc.
struct SolveStats {
  long solves_optimal = 0;
  long solves_other = 0;
  double max_rel_residual = 0.0;  // -min eig / (1 + |block|), worst case
  double max_rel_gap = 0.0;
};

SolveStats solve_stats_snapshot();
void solve_stats_reset();

// Independent re-verification of a returned solution against its problem:
// recomputes block eigenvalues, dual feasibility and the duality gap from
// scratch. Returns true when the optimal-status contract holds.
bool verify_solution(const SdpProblem& problem, const SdpSolution& sol,
                     double feas_tol, double gap_tol,
                     std::string* why = nullptr);

}  // namespace bayeslqr
