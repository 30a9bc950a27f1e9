#include "bayeslqr/lmi.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "bayeslqr/errors.hpp"

namespace bayeslqr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::mutex g_stats_mutex;
SolveStats g_stats;

void record_stats(const SdpSolution& sol) {
  std::lock_guard<std::mutex> lock(g_stats_mutex);
  if (sol.status == SdpStatus::optimal) {
    ++g_stats.solves_optimal;
    g_stats.max_rel_gap = std::max(g_stats.max_rel_gap, sol.gap);
  } else {
    ++g_stats.solves_other;
  }
}

void record_residual(double rel) {
  std::lock_guard<std::mutex> lock(g_stats_mutex);
  g_stats.max_rel_residual = std::max(g_stats.max_rel_residual, rel);
}

inline MatrixXd sym(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

double min_eigenvalue(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace

SolveStats solve_stats_snapshot() {
  std::lock_guard<std::mutex> lock(g_stats_mutex);
  return g_stats;
}

void solve_stats_reset() {
  std::lock_guard<std::mutex> lock(g_stats_mutex);
  g_stats = SolveStats{};
}

int VarHandle::index(int i, int j) const {
  if (symmetric) {
    if (i > j) std::swap(i, j);
    if (i < 0 || j >= rows) throw DimensionError("VarHandle::index: range");
    // upper triangle, column-major: (0,0),(0,1),(1,1),(0,2),...
    return offset + j * (j + 1) / 2 + i;
  }
  if (i < 0 || i >= rows || j < 0 || j >= cols)
    throw DimensionError("VarHandle::index: range");
  return offset + j * rows + i;
}

MatrixXd VarHandle::extract(const VectorXd& x) const {
  MatrixXd m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = x[index(i, j)];
  return m;
}

void VarHandle::pack(const MatrixXd& value, VectorXd& x) const {
  if (value.rows() != rows || value.cols() != cols)
    throw DimensionError("VarHandle::pack: shape mismatch");
  for (int j = 0; j < cols; ++j)
    for (int i = symmetric ? j : 0; i < rows; ++i) x[index(i, j)] = value(i, j);
}

VarHandle SdpProblem::register_var(const std::string& name, int rows, int cols,
                                   bool symmetric) {
  if (rows < 1 || cols < 1)
    throw DimensionError("register variable: dimensions < 1");
  for (const auto& v : vars_)
    if (v.name == name)
      throw DimensionError("register variable: duplicate name '" + name + "'");
  VarHandle h;
  h.name = name;
  h.offset = n_vars_;
  h.rows = rows;
  h.cols = cols;
  h.symmetric = symmetric;
  n_vars_ += h.count();
  objective_.conservativeResize(n_vars_);
  objective_.tail(h.count()).setZero();
  vars_.push_back(h);
  return h;
}

VarHandle SdpProblem::register_symmetric_variable(const std::string& name,
                                                  int n) {
  return register_var(name, n, n, true);
}

VarHandle SdpProblem::register_rectangular_variable(const std::string& name,
                                                    int rows, int cols) {
  return register_var(name, rows, cols, false);
}

void SdpProblem::add_cost_inner(const VarHandle& v, const MatrixXd& w,
                                double scale) {
  if (w.rows() != v.rows || w.cols() != v.cols)
    throw DimensionError("add_cost_inner: weight shape mismatch");
  for (int j = 0; j < v.cols; ++j) {
    for (int i = v.symmetric ? j : 0; i < v.rows; ++i) {
      double coeff = w(i, j);
      if (v.symmetric && i != j) coeff += w(j, i);
      objective_[v.index(i, j)] += scale * coeff;
    }
  }
}

void SdpProblem::add_cost_entry(const VarHandle& v, int i, int j, double w) {
  objective_[v.index(i, j)] += w;
}

BlockBuilder::BlockBuilder(int size) : size_(size) {
  if (size < 1) throw DimensionError("BlockBuilder: size < 1");
  f0_ = MatrixXd::Zero(size, size);
}

void BlockBuilder::place(int r0, int c0, const MatrixXd& m,
                         MatrixXd& into) const {
  if (r0 < 0 || c0 < 0 || r0 + m.rows() > size_ || c0 + m.cols() > size_)
    throw DimensionError("BlockBuilder: placement out of range");
  if (r0 == c0) {
    into.block(r0, c0, m.rows(), m.cols()) += sym(m);
  } else {
    into.block(r0, c0, m.rows(), m.cols()) += m;
    into.block(c0, r0, m.cols(), m.rows()) += m.transpose();
  }
}

void BlockBuilder::accumulate(int var, int r0, int c0, const MatrixXd& m) {
  if (var >= static_cast<int>(coeff_index_.size()))
    coeff_index_.resize(var + 1, -1);
  int pos = coeff_index_[var];
  if (pos < 0) {
    pos = static_cast<int>(coeffs_.size());
    coeff_index_[var] = pos;
    coeffs_.emplace_back(var, MatrixXd::Zero(size_, size_));
  }
  place(r0, c0, m, coeffs_[pos].second);
}

void BlockBuilder::constant(int r0, int c0, const MatrixXd& m) {
  place(r0, c0, m, f0_);
}

void BlockBuilder::term(int r0, int c0, const MatrixXd& p, const VarHandle& v,
                        const MatrixXd& q) {
  if (v.offset < 0) throw DimensionError("BlockBuilder: unregistered variable");
  if (p.cols() != v.rows || q.cols() != v.cols)
    throw DimensionError("BlockBuilder: term shape mismatch");
  if (v.symmetric) {
    for (int j = 0; j < v.rows; ++j) {
      for (int i = 0; i <= j; ++i) {
        // basis e_i e_j' + e_j e_i' (i < j), e_j e_j' on the diagonal
        MatrixXd contrib = p.col(i) * q.col(j).transpose();
        if (i != j) contrib += p.col(j) * q.col(i).transpose();
        accumulate(v.index(i, j), r0, c0, contrib);
      }
    }
  } else {
    for (int j = 0; j < v.cols; ++j)
      for (int i = 0; i < v.rows; ++i)
        accumulate(v.index(i, j), r0, c0,
                   p.col(i) * q.col(j).transpose());
  }
}

void BlockBuilder::variable(int r0, int c0, const VarHandle& v, double scale) {
  term(r0, c0, scale * MatrixXd::Identity(v.rows, v.rows), v,
       MatrixXd::Identity(v.cols, v.cols));
}

void SdpProblem::add_psd_block(BlockBuilder&& builder) {
  Block b;
  b.size = builder.size_;
  b.f0 = sym(builder.f0_);
  b.coeffs = std::move(builder.coeffs_);
  for (auto& [var, f] : b.coeffs) {
    if (var >= n_vars_)
      throw DimensionError("add_psd_block: unregistered variable reference");
    f = sym(f);
  }
  std::sort(b.coeffs.begin(), b.coeffs.end(),
            [](const auto& a, const auto& c) { return a.first < c.first; });
  blocks_.push_back(std::move(b));
}

MatrixXd SdpProblem::eval_block(int bi, const VectorXd& x) const {
  const Block& b = blocks_.at(bi);
  MatrixXd m = b.f0;
  for (const auto& [var, f] : b.coeffs) m += x[var] * f;
  return m;
}

int SdpProblem::block_size(int bi) const { return blocks_.at(bi).size; }

void SdpProblem::dump(std::ostream& os) const {
  os << "nvars " << n_vars_ << " nblocks " << blocks_.size() << "\n";
  for (int j = 0; j < n_vars_; ++j)
    if (objective_[j] != 0.0) os << "obj " << j << " " << objective_[j] << "\n";
  for (size_t bi = 0; bi < blocks_.size(); ++bi) {
    const Block& b = blocks_[bi];
    for (int r = 0; r < b.size; ++r)
      for (int c = r; c < b.size; ++c)
        if (b.f0(r, c) != 0.0)
          os << bi << " -1 " << r << " " << c << " " << b.f0(r, c) << "\n";
    for (const auto& [var, f] : b.coeffs)
      for (int r = 0; r < b.size; ++r)
        for (int c = r; c < b.size; ++c)
          if (f(r, c) != 0.0)
            os << bi << " " << var << " " << r << " " << c << " " << f(r, c)
               << "\n";
  }
}

// ---------------------------------------------------------------------------
// Primal-dual interior-point solver (HKM direction, Mehrotra
// predictor-corrector) for the block form above. The Schur complement is
// eliminated cluster-first: variables appearing in a single block form
// per-block clusters, everything else is a shared border.
// ---------------------------------------------------------------------------

class IpmSolver {
 public:
  IpmSolver(const SdpProblem& p, const SolveOptions& opts)
      : prob_(p), opts_(opts) {}

  SdpSolution run();

 private:
  struct LocalBlock {
    int size = 0;
    MatrixXd f0;
    std::vector<int> vars;      // global scaled-var ids, ascending
    std::vector<MatrixXd> f;    // scaled coefficients
    std::vector<int> dest;      // per var: cluster-local index (>=0) or
    std::vector<bool> border;   //   border position, flagged separately
    int cluster_size = 0;
  };

  void build_scaled();
  void partition();
  bool factor_schur();
  VectorXd solve_schur(const VectorXd& rhs) const;
  double max_step(const std::vector<Eigen::LLT<MatrixXd>>& llt,
                  const std::vector<MatrixXd>& delta) const;

  const SdpProblem& prob_;
  SolveOptions opts_;

  int n_ = 0;                      // number of scalar variables
  double ntot_ = 0.0;              // total PSD dimension
  VectorXd c_;                     // scaled objective
  VectorXd varscale_;              // x_user = x_scaled / varscale
  std::vector<LocalBlock> blocks_;
  std::vector<int> border_vars_;   // global ids in border order
  std::vector<int> border_pos_;    // global id -> border position or -1
  std::vector<std::vector<int>> cluster_vars_;  // per block

  // iteration workspace
  std::vector<MatrixXd> local_m_;                 // per-block Schur part
  std::vector<Eigen::LLT<MatrixXd>> cluster_llt_;
  std::vector<MatrixXd> cluster_u_;               // cluster x border(active)
  std::vector<std::vector<int>> border_active_;   // per block
  Eigen::LDLT<MatrixXd> corner_ldlt_;
  std::vector<MatrixXd> w_, s_, rd_, r1_;
  std::vector<Eigen::LLT<MatrixXd>> s_llt_;
};

void IpmSolver::build_scaled() {
  n_ = prob_.num_vars();
  varscale_ = VectorXd::Zero(n_);
  for (const auto& b : prob_.blocks_)
    for (const auto& [var, f] : b.coeffs)
      varscale_[var] = std::max(varscale_[var], f.norm());
  for (int j = 0; j < n_; ++j) {
    if (varscale_[j] <= 0.0)
      throw DimensionError(
          "solve: variable not referenced by any PSD block");
    varscale_[j] = 1.0 / varscale_[j];
  }
  c_ = prob_.objective_.cwiseProduct(varscale_);

  blocks_.resize(prob_.blocks_.size());
  ntot_ = 0.0;
  for (size_t bi = 0; bi < prob_.blocks_.size(); ++bi) {
    const auto& src = prob_.blocks_[bi];
    LocalBlock& b = blocks_[bi];
    b.size = src.size;
    ntot_ += src.size;
    b.f0 = src.f0;
    b.vars.reserve(src.coeffs.size());
    b.f.reserve(src.coeffs.size());
    for (const auto& [var, f] : src.coeffs) {
      b.vars.push_back(var);
      b.f.push_back(f * varscale_[var]);
    }
  }
}

void IpmSolver::partition() {
  std::vector<int> count(n_, 0);
  for (const auto& b : blocks_)
    for (int v : b.vars) ++count[v];

  border_pos_.assign(n_, -1);
  for (int j = 0; j < n_; ++j) {
    if (count[j] >= 2) {
      border_pos_[j] = static_cast<int>(border_vars_.size());
      border_vars_.push_back(j);
    }
  }
  cluster_vars_.resize(blocks_.size());
  for (size_t bi = 0; bi < blocks_.size(); ++bi) {
    LocalBlock& b = blocks_[bi];
    b.dest.resize(b.vars.size());
    b.border.resize(b.vars.size());
    for (size_t k = 0; k < b.vars.size(); ++k) {
      int v = b.vars[k];
      if (border_pos_[v] >= 0) {
        b.border[k] = true;
        b.dest[k] = border_pos_[v];
      } else {
        b.border[k] = false;
        b.dest[k] = static_cast<int>(cluster_vars_[bi].size());
        cluster_vars_[bi].push_back(v);
      }
    }
    b.cluster_size = static_cast<int>(cluster_vars_[bi].size());
  }
  local_m_.resize(blocks_.size());
  cluster_llt_.resize(blocks_.size());
  cluster_u_.resize(blocks_.size());
  border_active_.resize(blocks_.size());
  for (size_t bi = 0; bi < blocks_.size(); ++bi) {
    border_active_[bi].clear();
    for (size_t k = 0; k < blocks_[bi].vars.size(); ++k)
      if (blocks_[bi].border[k])
        border_active_[bi].push_back(blocks_[bi].dest[k]);
  }
}

bool IpmSolver::factor_schur() {
  const int nb = static_cast<int>(border_vars_.size());
  MatrixXd corner = MatrixXd::Zero(nb, nb);

  for (size_t bi = 0; bi < blocks_.size(); ++bi) {
    const LocalBlock& b = blocks_[bi];
    const MatrixXd& m = local_m_[bi];
    const int nc = b.cluster_size;
    MatrixXd d = MatrixXd::Zero(nc, nc);
    MatrixXd u = MatrixXd::Zero(nc, border_active_[bi].size());
    int ucol = 0;
    std::vector<int> ucols(b.vars.size(), -1);
    for (size_t k = 0; k < b.vars.size(); ++k)
      if (b.border[k]) ucols[k] = ucol++;

    for (size_t k = 0; k < b.vars.size(); ++k) {
      for (size_t l = 0; l < b.vars.size(); ++l) {
        double val = m(k, l);
        if (!b.border[k] && !b.border[l]) {
          d(b.dest[k], b.dest[l]) = val;
        } else if (!b.border[k] && b.border[l]) {
          u(b.dest[k], ucols[l]) = val;
        } else if (b.border[k] && b.border[l]) {
          if (l >= k) corner(b.dest[k], b.dest[l]) += val;
          if (l > k) corner(b.dest[l], b.dest[k]) += val;
        }
      }
    }
    if (nc > 0) {
      cluster_llt_[bi].compute(d);
      if (cluster_llt_[bi].info() != Eigen::Success) {
        d.diagonal().array() += 1e-12 * (1.0 + d.diagonal().maxCoeff());
        cluster_llt_[bi].compute(d);
        if (cluster_llt_[bi].info() != Eigen::Success) return false;
      }
      cluster_u_[bi] = u;
      MatrixXd dinv_u = cluster_llt_[bi].solve(u);
      MatrixXd delta = u.transpose() * dinv_u;
      const auto& act = border_active_[bi];
      for (size_t a = 0; a < act.size(); ++a)
        for (size_t b2 = 0; b2 < act.size(); ++b2)
          corner(act[a], act[b2]) -= delta(a, b2);
    } else {
      cluster_u_[bi] = u;
    }
  }
  corner = sym(corner);
  corner_ldlt_.compute(corner);
  return corner_ldlt_.info() == Eigen::Success;
}

VectorXd IpmSolver::solve_schur(const VectorXd& rhs) const {
  const int nb = static_cast<int>(border_vars_.size());
  VectorXd rb(nb);
  for (int i = 0; i < nb; ++i) rb[i] = rhs[border_vars_[i]];

  std::vector<VectorXd> t(blocks_.size());
  for (size_t bi = 0; bi < blocks_.size(); ++bi) {
    const int nc = blocks_[bi].cluster_size;
    if (nc == 0) continue;
    VectorXd rc(nc);
    for (int i = 0; i < nc; ++i) rc[i] = rhs[cluster_vars_[bi][i]];
    t[bi] = cluster_llt_[bi].solve(rc);
    VectorXd contrib = cluster_u_[bi].transpose() * t[bi];
    const auto& act = border_active_[bi];
    for (size_t a = 0; a < act.size(); ++a) rb[act[a]] -= contrib[a];
  }
  VectorXd xb = corner_ldlt_.solve(rb);

  VectorXd x = VectorXd::Zero(n_);
  for (int i = 0; i < nb; ++i) x[border_vars_[i]] = xb[i];
  for (size_t bi = 0; bi < blocks_.size(); ++bi) {
    const int nc = blocks_[bi].cluster_size;
    if (nc == 0) continue;
    const auto& act = border_active_[bi];
    VectorXd xb_act(act.size());
    for (size_t a = 0; a < act.size(); ++a) xb_act[a] = xb[act[a]];
    VectorXd xc =
        t[bi] - cluster_llt_[bi].solve(cluster_u_[bi] * xb_act);
    for (int i = 0; i < nc; ++i) x[cluster_vars_[bi][i]] = xc[i];
  }
  return x;
}

double IpmSolver::max_step(const std::vector<Eigen::LLT<MatrixXd>>& llt,
                           const std::vector<MatrixXd>& delta) const {
  double alpha = std::numeric_limits<double>::infinity();
  for (size_t bi = 0; bi < blocks_.size(); ++bi) {
    const auto& L = llt[bi].matrixL();
    MatrixXd t = L.solve(delta[bi]);
    t = L.solve(MatrixXd(t.transpose()));
    double lmin = min_eigenvalue(sym(t));
    if (lmin < -1e-14) alpha = std::min(alpha, -1.0 / lmin);
  }
  return alpha;
}

SdpSolution IpmSolver::run() {
  build_scaled();
  partition();

  const int nblocks = static_cast<int>(blocks_.size());
  w_.resize(nblocks);
  s_.resize(nblocks);
  rd_.resize(nblocks);
  r1_.resize(nblocks);
  s_llt_.resize(nblocks);
  std::vector<Eigen::LLT<MatrixXd>> w_llt(nblocks);

  VectorXd x = VectorXd::Zero(n_);
  double cmax = 0.0;
  for (int j = 0; j < n_; ++j) cmax = std::max(cmax, std::abs(c_[j]));
  for (int bi = 0; bi < nblocks; ++bi) {
    const LocalBlock& b = blocks_[bi];
    double fmax = 0.0;
    for (const auto& f : b.f) fmax = std::max(fmax, f.norm());
    double eta = std::max({10.0, 2.0 * b.f0.norm(), 2.0 * fmax});
    double xi = std::max({10.0, std::sqrt(static_cast<double>(b.size)),
                          b.size * cmax / (1.0 + fmax)});
    s_[bi] = eta * MatrixXd::Identity(b.size, b.size);
    w_[bi] = xi * MatrixXd::Identity(b.size, b.size);
  }

  SdpSolution sol;
  double f0max = 0.0;
  for (const auto& b : blocks_) f0max = std::max(f0max, b.f0.norm());

  VectorXd rd_vec(n_);
  double mu = 0.0;
  int stall = 0;
  double last_mu = std::numeric_limits<double>::infinity();

  auto finish = [&](SdpStatus st, const std::string& msg, int iters) {
    sol.status = st;
    sol.message = msg;
    sol.iterations = iters;
    sol.x = x.cwiseProduct(varscale_);
    sol.objective_value = prob_.objective_.dot(sol.x);
    sol.dual_blocks.assign(w_.begin(), w_.end());
    // independent re-evaluation of the returned point
    double worst = 0.0;
    double worst_rel = 0.0;
    for (int bi = 0; bi < nblocks; ++bi) {
      MatrixXd val = prob_.eval_block(bi, sol.x);
      double lmin = min_eigenvalue(val);
      worst = std::min(worst, lmin);
      double rel = std::max(0.0, -lmin) / (1.0 + val.norm());
      worst_rel = std::max(worst_rel, rel);
    }
    sol.primal_residual = std::max(0.0, -worst);
    double pobj = sol.objective_value;
    double dobj = 0.0;
    for (int bi = 0; bi < nblocks; ++bi)
      dobj -= (w_[bi].cwiseProduct(blocks_[bi].f0)).sum();
    sol.gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
    if (sol.status == SdpStatus::optimal) {
      if (worst_rel > opts_.feas_tol || sol.gap > opts_.gap_tol) {
        sol.status = SdpStatus::numerical_failure;
        sol.message = "post-solve verification failed (residual " +
                      std::to_string(worst_rel) + ", gap " +
                      std::to_string(sol.gap) + ")";
      }
      record_residual(worst_rel);
    }
    record_stats(sol);
    return sol;
  };

  for (int iter = 0; iter < opts_.max_iters; ++iter) {
    // residuals
    for (int bi = 0; bi < nblocks; ++bi) {
      const LocalBlock& b = blocks_[bi];
      MatrixXd fx = b.f0;
      for (size_t k = 0; k < b.vars.size(); ++k) fx += x[b.vars[k]] * b.f[k];
      rd_[bi] = fx - s_[bi];
    }
    rd_vec = c_;
    for (int bi = 0; bi < nblocks; ++bi) {
      const LocalBlock& b = blocks_[bi];
      for (size_t k = 0; k < b.vars.size(); ++k)
        rd_vec[b.vars[k]] -= (w_[bi].cwiseProduct(b.f[k])).sum();
    }

    double compl_sum = 0.0;
    for (int bi = 0; bi < nblocks; ++bi)
      compl_sum += (w_[bi].cwiseProduct(s_[bi])).sum();
    mu = compl_sum / ntot_;

    double pobj = c_.dot(x);
    double dobj = 0.0;
    double wnorm = 0.0;
    for (int bi = 0; bi < nblocks; ++bi) {
      dobj -= (w_[bi].cwiseProduct(blocks_[bi].f0)).sum();
      wnorm += w_[bi].norm();
    }
    double denom = 1.0 + std::abs(pobj) + std::abs(dobj);
    double rel_gap = std::abs(pobj - dobj) / denom;
    double rel_compl = compl_sum / denom;
    double prim_inf = 0.0;
    for (int bi = 0; bi < nblocks; ++bi)
      prim_inf = std::max(prim_inf,
                          rd_[bi].norm() / (1.0 + blocks_[bi].f0.norm()));
    double dual_inf = rd_vec.cwiseAbs().maxCoeff() / (1.0 + cmax);

    if (prim_inf <= 0.5 * opts_.feas_tol && dual_inf <= 0.5 * opts_.feas_tol &&
        std::max(rel_gap, rel_compl) <= 0.8 * opts_.gap_tol) {
      return finish(SdpStatus::optimal, "optimal", iter);
    }

    // Farkas-style infeasibility test: normalized W with A*(W) ~ 0 and
    // positive dual objective is an improving ray, i.e. the user problem
    // admits no feasible point.
    if (wnorm > 1e5) {
      double anorm = (c_ - rd_vec).cwiseAbs().maxCoeff();
      if (anorm / wnorm < 1e-9 && dobj / wnorm > 1e-9 * (1.0 + f0max)) {
        return finish(SdpStatus::infeasible,
                      "infeasibility certificate: improving dual ray", iter);
      }
    }
    if (mu > 0.99 * last_mu && prim_inf > opts_.feas_tol) {
      if (++stall > 10)
        return finish(SdpStatus::numerical_failure,
                      "stalled (mu " + std::to_string(mu) + ", prim_inf " +
                          std::to_string(prim_inf) + ")",
                      iter);
    } else {
      stall = 0;
    }
    last_mu = mu;

    // factorizations
    bool chol_ok = true;
    for (int bi = 0; bi < nblocks && chol_ok; ++bi) {
      s_llt_[bi].compute(s_[bi]);
      w_llt[bi].compute(w_[bi]);
      if (s_llt_[bi].info() != Eigen::Success ||
          w_llt[bi].info() != Eigen::Success)
        chol_ok = false;
    }
    if (!chol_ok)
      return finish(SdpStatus::numerical_failure,
                    "iterate left the PSD cone", iter);

    // Schur complement  M_jk = sum_b <F_j, H(W F_k S^{-1})>
    std::vector<std::vector<MatrixXd>> hmats(nblocks);
    for (int bi = 0; bi < nblocks; ++bi) {
      const LocalBlock& b = blocks_[bi];
      const size_t nk = b.vars.size();
      MatrixXd& m = local_m_[bi];
      m.resize(nk, nk);
      hmats[bi].resize(nk);
      for (size_t k = 0; k < nk; ++k) {
        MatrixXd v = s_llt_[bi].solve(b.f[k]);          // S^{-1} F_k
        MatrixXd u = w_[bi] * v.transpose();            // W F_k S^{-1}
        hmats[bi][k] = 0.5 * (u + u.transpose());
        for (size_t j = 0; j <= k; ++j) {
          double val = (b.f[j].cwiseProduct(hmats[bi][k])).sum();
          m(j, k) = val;
          m(k, j) = val;
        }
      }
    }
    if (!factor_schur())
      return finish(SdpStatus::numerical_failure,
                    "Schur complement factorization failed", iter);

    auto direction = [&](double sigma_mu, const std::vector<MatrixXd>* corr,
                         VectorXd& dx, std::vector<MatrixXd>& ds,
                         std::vector<MatrixXd>& dw) {
      VectorXd rhs = -rd_vec;
      for (int bi = 0; bi < nblocks; ++bi) {
        const LocalBlock& b = blocks_[bi];
        MatrixXd sinv_rd = s_llt_[bi].solve(rd_[bi]);
        MatrixXd wr = w_[bi] * sinv_rd.transpose();  // W Rd S^{-1}
        r1_[bi] = -w_[bi] - 0.5 * (wr + wr.transpose());
        if (sigma_mu > 0.0)
          r1_[bi] += sigma_mu * s_llt_[bi].solve(
                                    MatrixXd::Identity(b.size, b.size));
        if (corr) r1_[bi] -= (*corr)[bi];
        for (size_t k = 0; k < b.vars.size(); ++k)
          rhs[b.vars[k]] += (b.f[k].cwiseProduct(r1_[bi])).sum();
      }
      dx = solve_schur(rhs);
      ds.resize(nblocks);
      dw.resize(nblocks);
      for (int bi = 0; bi < nblocks; ++bi) {
        const LocalBlock& b = blocks_[bi];
        MatrixXd a_dx = rd_[bi];
        for (size_t k = 0; k < b.vars.size(); ++k)
          a_dx += dx[b.vars[k]] * b.f[k];
        ds[bi] = a_dx;
        MatrixXd wd = w_[bi] * s_llt_[bi].solve(a_dx).transpose();
        dw[bi] = r1_[bi] - 0.5 * (wd + wd.transpose());
      }
    };

    VectorXd dx_a;
    std::vector<MatrixXd> ds_a, dw_a;
    direction(0.0, nullptr, dx_a, ds_a, dw_a);
    double as_a = std::min(1.0, max_step(s_llt_, ds_a));
    double aw_a = std::min(1.0, max_step(w_llt, dw_a));
    double mu_aff = 0.0;
    for (int bi = 0; bi < nblocks; ++bi)
      mu_aff += ((w_[bi] + aw_a * dw_a[bi])
                     .cwiseProduct(s_[bi] + as_a * ds_a[bi]))
                    .sum();
    mu_aff = std::max(mu_aff / ntot_, 0.0);
    double sigma = std::pow(mu_aff / std::max(mu, 1e-300), 3.0);
    sigma = std::clamp(sigma, 1e-8, 0.99);

    std::vector<MatrixXd> corr(nblocks);
    for (int bi = 0; bi < nblocks; ++bi) {
      MatrixXd t = dw_a[bi] * s_llt_[bi].solve(ds_a[bi]).transpose();
      corr[bi] = 0.5 * (t + t.transpose());
    }
    VectorXd dx;
    std::vector<MatrixXd> ds, dw;
    direction(sigma * mu, &corr, dx, ds, dw);

    const double tau = 0.97;
    double as = std::min(1.0, tau * max_step(s_llt_, ds));
    double aw = std::min(1.0, tau * max_step(w_llt, dw));

    // keep both matrix iterates strictly PSD (backtrack on LLT failure)
    for (int tries = 0; tries < 20; ++tries) {
      bool ok = true;
      for (int bi = 0; bi < nblocks && ok; ++bi) {
        if (Eigen::LLT<MatrixXd>(sym(s_[bi] + as * ds[bi])).info() !=
            Eigen::Success)
          ok = false;
        if (ok && Eigen::LLT<MatrixXd>(sym(w_[bi] + aw * dw[bi])).info() !=
                      Eigen::Success)
          ok = false;
      }
      if (ok) break;
      as *= 0.8;
      aw *= 0.8;
      if (tries == 19)
        return finish(SdpStatus::numerical_failure,
                      "line search failed to preserve the cone", iter);
    }

    x += as * dx;
    for (int bi = 0; bi < nblocks; ++bi) {
      s_[bi] = sym(s_[bi] + as * ds[bi]);
      w_[bi] = sym(w_[bi] + aw * dw[bi]);
    }
  }

  std::ostringstream msg;
  msg << "max iterations (" << opts_.max_iters << ") reached, mu=" << mu;
  return finish(SdpStatus::numerical_failure, msg.str(), opts_.max_iters);
}

SdpSolution SdpProblem::solve(const SolveOptions& opts) const {
  if (n_vars_ < 1) throw DimensionError("solve: no variables");
  if (blocks_.empty()) throw DimensionError("solve: no PSD blocks");
  IpmSolver solver(*this, opts);
  return solver.run();
}

bool verify_solution(const SdpProblem& problem, const SdpSolution& sol,
                     double feas_tol, double gap_tol, std::string* why) {
  if (sol.status != SdpStatus::optimal) {
    if (why) *why = "status not optimal";
    return false;
  }
  for (int bi = 0; bi < problem.num_blocks(); ++bi) {
    MatrixXd val = problem.eval_block(bi, sol.x);
    double lmin = min_eigenvalue(val);
    if (lmin < -feas_tol * (1.0 + val.norm())) {
      if (why)
        *why = "block " + std::to_string(bi) + " min eigenvalue " +
               std::to_string(lmin);
      return false;
    }
  }
  if (static_cast<int>(sol.dual_blocks.size()) != problem.num_blocks()) {
    if (why) *why = "missing dual blocks";
    return false;
  }
  double pobj = problem.objective().dot(sol.x);
  double dobj = 0.0;
  for (int bi = 0; bi < problem.num_blocks(); ++bi) {
    const MatrixXd& w = sol.dual_blocks[bi];
    double lmin = min_eigenvalue(w);
    if (lmin < -feas_tol * (1.0 + w.norm())) {
      if (why) *why = "dual block " + std::to_string(bi) + " not PSD";
      return false;
    }
    dobj -= (w.cwiseProduct(problem.eval_block(bi, VectorXd::Zero(
                                problem.num_vars()))))
                .sum();
  }
  double gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
  if (gap > gap_tol) {
    if (why) *why = "gap " + std::to_string(gap);
    return false;
  }
  return true;
}

}  // namespace bayeslqr
