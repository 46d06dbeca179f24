#include "gtmpc/game.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>

#include "gtmpc/qp.hpp"
#include "gtmpc/rng.hpp"

namespace gtmpc::game {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool finite_bound(double b) { return std::abs(b) < kUnbounded; }

VectorXd safe_u_prev(const AgentCost& cost, int nu) {
  if (cost.u_prev.size() == nu) return cost.u_prev;
  return VectorXd::Zero(nu);
}

enum class Mode { Game, Potential, Single, Restoration };

enum class RowKind { InputLo, InputHi, RateLo, RateHi, StateLo, StateHi, Extra, Coupled };

struct RowMeta {
  RowKind kind;
  int agent;  // game agent index (coupled rows: -1)
  int k;
  int comp;
};

// Condensed (single-shooting) SQP over input sequences. One engine serves the
// stacked-KKT game iteration, the potential NLP, single-agent best-response
// subproblems, and the slack-minimizing feasibility restoration.
class Engine {
 public:
  Engine(const GameSpec& game, const SolverOptions& opt, Mode mode, std::vector<int> blocks,
         const std::array<MatrixXd, 2>* frozen = nullptr)
      : game_(game), opt_(opt), mode_(mode), blocks_(std::move(blocks)) {
    n_ = 0;
    for (int b : blocks_) {
      offset_.push_back(n_);
      n_ += game_.model[b].nu * game_.horizon;
    }
    if (frozen) frozen_ = *frozen;
    enumerate_rows();
  }

  int n() const { return n_; }
  int m() const { return static_cast<int>(rows_.size()); }

  VectorXd pack(const std::array<MatrixXd, 2>& u) const {
    VectorXd x(n_);
    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
      const int a = blocks_[bi];
      const auto& m = u[a];
      for (int k = 0; k < game_.horizon; ++k)
        x.segment(offset_[bi] + k * game_.model[a].nu, game_.model[a].nu) = m.col(k);
    }
    return x;
  }

  std::array<MatrixXd, 2> unpack(const VectorXd& x) const {
    std::array<MatrixXd, 2> u;
    for (int a = 0; a < 2; ++a) u[a] = MatrixXd::Zero(game_.model[a].nu, game_.horizon);
    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
      const int a = blocks_[bi];
      for (int k = 0; k < game_.horizon; ++k)
        u[a].col(k) = x.segment(offset_[bi] + k * game_.model[a].nu, game_.model[a].nu);
    }
    return u;
  }

  struct Eval {
    std::array<MatrixXd, 2> z;  // trajectories for all agents (frozen ones copied)
    VectorXd F;
    MatrixXd H;
    VectorXd c;
    MatrixXd A;
    double max_violation = 0.0;
    double objective = 0.0;      // sum of participating agents' own cost parts
    double violation_l1 = 0.0;   // sum of positive constraint values
    // position-difference Jacobians of coupled rows, keyed by constraint row;
    // the row's exact curvature is -2 D^T D (concave ball-exterior constraint)
    std::vector<std::pair<int, MatrixXd>> coupled_D;
  };

  // Throws dynamics::DynamicsError when a rollout leaves the model's domain;
  // the line search treats that as an unacceptable trial point.
  Eval evaluate(const VectorXd& x) const {
    Eval ev;
    const int N = game_.horizon;
    std::array<MatrixXd, 2> u = unpack(x);
    std::array<MatrixXd, 2> S;  // sensitivities for participating blocks
    std::array<std::vector<MatrixXd>, 2> Ak, Bk;

    for (int a = 0; a < 2; ++a) {
      if (!participating(a)) {
        ev.z[a] = frozen_[a];
        continue;
      }
      const auto& model = game_.model[a];
      ev.z[a] = MatrixXd::Zero(model.nz, N + 1);
      ev.z[a].col(0) = game_.z0[a];
      Ak[a].resize(N);
      Bk[a].resize(N);
      VectorXd z_next(model.nz);
      for (int k = 0; k < N; ++k) {
        MatrixXd A(model.nz, model.nz), B(model.nz, model.nu);
        model.step(k, ev.z[a].col(k), u[a].col(k), z_next, A, B);
        ev.z[a].col(k + 1) = z_next;
        Ak[a][k] = A;
        Bk[a][k] = B;
      }
      // S: rows (k-1)*nz .. for z_k, k = 1..N; cols j*nu for u_j
      MatrixXd& Sa = S[a];
      Sa = MatrixXd::Zero(model.nz * N, model.nu * N);
      for (int k = 1; k <= N; ++k) {
        auto rows = Sa.middleRows((k - 1) * model.nz, model.nz);
        if (k > 1)
          rows.leftCols(model.nu * (k - 1)) =
              Ak[a][k - 1] * Sa.middleRows((k - 2) * model.nz, model.nz).leftCols(model.nu * (k - 1));
        rows.middleCols(model.nu * (k - 1), model.nu) = Bk[a][k - 1];
      }
    }

    build_constraints(ev, u, S);
    for (int j = 0; j < m(); ++j) ev.violation_l1 += std::max(0.0, ev.c[j]);

    ev.F = VectorXd::Zero(n_);
    ev.H = MatrixXd::Zero(n_, n_);
    if (mode_ == Mode::Restoration) {
      for (int j = 0; j < m(); ++j) {
        if (ev.c[j] > 0.0) {
          ev.objective += ev.c[j] * ev.c[j];  // squared slack
          ev.F += 2.0 * ev.c[j] * ev.A.row(j).transpose();
          ev.H += 2.0 * ev.A.row(j).transpose() * ev.A.row(j);
        }
      }
      return ev;
    }
    // merit objective: the function whose gradient is F. For separable costs
    // this is the potential; Single mode adds the frozen-opponent coupling.
    for (int a : blocks_) {
      const auto& cost = game_.cost[a];
      const int N = game_.horizon;
      const bool has_q = cost.Q.size() > 0 && cost.Q.norm() > 0.0;
      if (has_q) {
        for (int k = 1; k <= N; ++k) {
          VectorXd ref = cost.z_ref ? cost.z_ref(k, ev.z[a].col(k))
                                    : VectorXd::Zero(game_.model[a].nz);
          const VectorXd e = ev.z[a].col(k) - ref;
          ev.objective += e.dot(cost.Q * e);
        }
      }
      const VectorXd u_prev = safe_u_prev(cost, game_.model[a].nu);
      for (int k = 0; k < N; ++k) {
        const VectorXd uk = u[a].col(k);
        ev.objective += uk.dot(cost.R1 * uk);
        const VectorXd du = uk - (k == 0 ? u_prev : VectorXd(u[a].col(k - 1)));
        ev.objective += du.dot(cost.R2 * du);
      }
      if (cost.q_term.size() == ev.z[a].rows()) ev.objective += cost.q_term.dot(ev.z[a].col(N));
      if (mode_ == Mode::Single && cost.P_cross.size() > 0)
        ev.objective += ev.z[a].col(N).dot(cost.P_cross * ev.z[1 - a].col(N));
    }

    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
      const int a = blocks_[bi];
      const int opp = 1 - a;
      const auto& model = game_.model[a];
      const auto& cost = game_.cost[a];
      const int nu = model.nu, nz = model.nz;
      const int nb = nu * N;
      auto Fb = ev.F.segment(offset_[bi], nb);
      auto Hb = ev.H.block(offset_[bi], offset_[bi], nb, nb);

      // stage tracking gradient stack over z_1..z_N
      VectorXd Gz = VectorXd::Zero(nz * N);
      const bool has_q = cost.Q.size() > 0 && cost.Q.norm() > 0.0;
      if (has_q) {
        for (int k = 1; k <= N; ++k) {
          VectorXd ref = cost.z_ref ? cost.z_ref(k, ev.z[a].col(k)) : VectorXd::Zero(nz);
          VectorXd g = 2.0 * cost.Q * (ev.z[a].col(k) - ref);
          if (cost.z_ref_jac) {
            const MatrixXd Jr = cost.z_ref_jac(k, ev.z[a].col(k));
            g -= Jr.transpose() * g;
          }
          Gz.segment((k - 1) * nz, nz) = g;
        }
      }
      if (cost.q_term.size() == nz) Gz.segment((N - 1) * nz, nz) += cost.q_term;
      const bool has_p = cost.P_cross.size() > 0 && cost.P_cross.norm() > 0.0;
      if (has_p) Gz.segment((N - 1) * nz, nz) += cost.P_cross * ev.z[opp].col(N);

      Fb += S[a].transpose() * Gz;
      if (has_q) Hb += 2.0 * S[a].transpose() * kron_q(cost.Q, N) * S[a];

      // input and rate terms
      const VectorXd u_prev = safe_u_prev(cost, nu);
      for (int k = 0; k < N; ++k) {
        const VectorXd uk = u[a].col(k);
        const VectorXd du = uk - (k == 0 ? u_prev : VectorXd(u[a].col(k - 1)));
        Fb.segment(k * nu, nu) += 2.0 * cost.R1 * uk + 2.0 * cost.R2 * du;
        if (k + 1 < N)
          Fb.segment(k * nu, nu) -= 2.0 * cost.R2 * (u[a].col(k + 1) - uk);
        Hb.block(k * nu, k * nu, nu, nu) += 2.0 * cost.R1 + 2.0 * cost.R2;
        if (k + 1 < N) {
          Hb.block(k * nu, k * nu, nu, nu) += 2.0 * cost.R2;
          Hb.block(k * nu, (k + 1) * nu, nu, nu) -= 2.0 * cost.R2;
          Hb.block((k + 1) * nu, k * nu, nu, nu) -= 2.0 * cost.R2;
        }
      }

      // terminal bilinear coupling: cross block of the pseudo-gradient Jacobian
      if (has_p && mode_ == Mode::Game && participating(opp)) {
        const int obi = block_index(opp);
        const int nob = game_.model[opp].nu * N;
        ev.H.block(offset_[bi], offset_[obi], nb, nob) +=
            S[a].bottomRows(nz).transpose() * cost.P_cross *
            S[opp].bottomRows(game_.model[opp].nz);
      }
    }
    return ev;
  }

  double stationarity_norm(const Eval& ev, const VectorXd& lambda) const {
    if (mode_ == Mode::Restoration) return ev.F.lpNorm<Eigen::Infinity>();
    return (ev.F + ev.A.transpose() * lambda).lpNorm<Eigen::Infinity>();
  }

  double kkt_residual(const Eval& ev, const VectorXd& lambda) const {
    // restoration terminates at stationarity of the slack objective; residual
    // violation there means the constraints cannot be met
    if (mode_ == Mode::Restoration) return ev.F.lpNorm<Eigen::Infinity>();
    double res = stationarity_norm(ev, lambda);
    for (int j = 0; j < m(); ++j) {
      res = std::max(res, std::abs(std::min(lambda[j], -ev.c[j])));
    }
    res = std::max(res, ev.max_violation);
    return res;
  }

  struct SolveResult {
    VectorXd x;
    VectorXd lambda;
    SolveStatus status = SolveStatus::MaxIterations;
    double residual = 0.0;
    int iterations = 0;
  };

  SolveResult run(VectorXd x, int max_iterations, double tol) {
    SolveResult out;
    VectorXd lambda = VectorXd::Zero(m());
    Eval ev;
    bool started = false;
    for (int attempt = 0; attempt < 3 && !started; ++attempt) {
      try {
        ev = evaluate(x);
        started = true;
      } catch (const dynamics::DynamicsError&) {
        if (attempt == 0)
          x = policy_start();
        else
          x.setZero();
      }
    }
    if (!started) {
      out.x = x;
      out.lambda = lambda;
      out.residual = std::numeric_limits<double>::infinity();
      return out;
    }

    if (mode_ == Mode::Restoration) {
      out = restoration_newton(std::move(x), std::move(ev), max_iterations, tol);
      return out;
    }

    // Augmented Lagrangian: smooth inner Newton over the penalized problem,
    // classical outer multiplier updates. Shared coupled rows carry one
    // multiplier, which realizes the normalized equilibrium in Game mode.
    double mu = 10.0;
    double eta = 0.1;  // feasibility gate for multiplier updates
    double res = kkt_residual(ev, lambda);
    int total_inner = 0;
    double best_res = std::numeric_limits<double>::infinity();
    int diverging = 0;
    const int max_outer = 60;
    for (int outer = 0; outer < max_outer && total_inner < max_iterations; ++outer) {
      if (res < tol && ev.max_violation <= 1e-6) break;
      const double omega = std::max(0.3 * tol, 1e-3 * std::pow(0.2, outer));
      double nu_reg = opt_.reg_floor;
      double best_gnorm = std::numeric_limits<double>::infinity();
      double last_merit = std::numeric_limits<double>::infinity();
      int stalled = 0;
      int rejected = 0;
      for (int inner = 0; inner < 80 && total_inner < max_iterations; ++inner) {
        // gradient and Hessian of the augmented Lagrangian
        VectorXd lam_hat = VectorXd::Zero(m());
        for (int j = 0; j < m(); ++j) lam_hat[j] = std::max(0.0, lambda[j] + mu * ev.c[j]);
        VectorXd grad = ev.F;
        MatrixXd H = ev.H;
        for (int j = 0; j < m(); ++j) {
          if (lam_hat[j] <= 0.0) continue;
          grad.noalias() += lam_hat[j] * ev.A.row(j).transpose();
          if (ev.A.row(j).lpNorm<Eigen::Infinity>() > 1e-14)
            H.noalias() += mu * ev.A.row(j).transpose() * ev.A.row(j);
        }
        for (const auto& [j, D] : ev.coupled_D) {
          if (lam_hat[j] > 0.0) H.noalias() -= 2.0 * lam_hat[j] * D.transpose() * D;
        }
        const double gnorm = grad.lpNorm<Eigen::Infinity>();
        if (gnorm < omega) break;
        // stop polishing only when neither the gradient norm nor the merit is
        // moving; the near-linear objectives move for many steps at flat gnorm
        const double cur_merit = aug_value(ev, lambda, mu);
        const bool merit_moved =
            cur_merit < last_merit - std::max(1e-9, 1e-7 * std::abs(cur_merit));
        last_merit = cur_merit;
        if (gnorm < 0.9 * best_gnorm) best_gnorm = gnorm;
        if (gnorm < 0.9 * best_gnorm || merit_moved) {
          stalled = 0;
        } else if (++stalled >= 4) {
          break;
        }

        VectorXd dx;
        bool have_dir = false;
        for (int bump = 0; bump < 10 && !have_dir; ++bump) {
          // LU: the exact coupled-row curvature can leave H indefinite, where
          // LDLT without pivoting is not reliable
          const MatrixXd Hreg = H + nu_reg * MatrixXd::Identity(n_, n_);
          dx = Eigen::PartialPivLU<MatrixXd>(Hreg).solve(-grad);
          if (dx.allFinite() && grad.dot(dx) < 0.0)
            have_dir = true;
          else
            nu_reg = std::max(nu_reg * 10.0, 1e-6);
        }
        if (!have_dir) break;
        ++total_inner;

        // Potential/Single minimize the augmented value; Game mode has no
        // joint objective when costs couple, so it contracts the stationarity
        // norm of the (smooth) penalized pseudo-gradient system instead.
        const bool residual_merit = mode_ == Mode::Game && has_cost_coupling();
        const double merit0 =
            residual_merit ? 0.5 * grad.squaredNorm() : aug_value(ev, lambda, mu);
        const double slope = residual_merit ? -2.0 * merit0 : grad.dot(dx);
        double alpha = 1.0;
        bool accepted = false;
        while (alpha >= opt_.min_step) {
          const VectorXd x_try = x + alpha * dx;
          Eval ev_try;
          try {
            ev_try = evaluate(x_try);
          } catch (const dynamics::DynamicsError&) {
            alpha *= opt_.backtrack_factor;
            continue;
          }
          double merit_try;
          if (residual_merit) {
            VectorXd lam_try = VectorXd::Zero(m());
            for (int j = 0; j < m(); ++j)
              lam_try[j] = std::max(0.0, lambda[j] + mu * ev_try.c[j]);
            VectorXd grad_try = ev_try.F;
            for (int j = 0; j < m(); ++j)
              if (lam_try[j] > 0.0) grad_try.noalias() += lam_try[j] * ev_try.A.row(j).transpose();
            merit_try = 0.5 * grad_try.squaredNorm();
          } else {
            merit_try = aug_value(ev_try, lambda, mu);
          }
          if (merit_try <= merit0 + 1e-4 * alpha * slope) {
            x = x_try;
            ev = std::move(ev_try);
            accepted = true;
            break;
          }
          alpha *= opt_.backtrack_factor;
        }
        if (!accepted) {
          nu_reg = std::max(nu_reg * 10.0, 1e-6);
          if (nu_reg > 1e9 || ++rejected >= 3) break;
        } else {
          rejected = 0;
          nu_reg = std::max(opt_.reg_floor, nu_reg / 5.0);
        }
        if (opt_.trace)
          std::fprintf(stderr,
                       "outer %2d inner %3d mu %.1e |gLA| %.3e obj %.6e viol %.2e acc %d\n",
                       outer, inner, mu, gnorm, ev.objective, ev.max_violation, accepted);
      }
      // safeguarded update: advance the multipliers only when the inner
      // minimization made the iterate sufficiently feasible
      if (ev.max_violation <= eta) {
        for (int j = 0; j < m(); ++j) lambda[j] = std::max(0.0, lambda[j] + mu * ev.c[j]);
        eta = std::max(0.25 * eta, 1e-9);
      } else {
        mu = std::min(mu * 4.0, 1e6);
      }
      res = kkt_residual(ev, lambda);
      if (opt_.trace)
        std::fprintf(stderr, "outer %2d done: res %.3e viol %.3e mu %.1e eta %.1e\n", outer,
                     res, ev.max_violation, mu, eta);
      best_res = std::min(best_res, res);
      if (res > std::max(10.0 * best_res, 1.0)) {
        if (++diverging >= 4) break;
      } else {
        diverging = 0;
      }
    }
    if (res < tol && ev.max_violation <= 1e-6) out.status = SolveStatus::Converged;
    out.x = x;
    out.lambda = lambda;
    out.residual = res;
    out.iterations = total_inner;
    return out;
  }

  bool has_cost_coupling() const {
    for (int a = 0; a < 2; ++a)
      if (game_.cost[a].P_cross.size() > 0 && game_.cost[a].P_cross.norm() > 0.0) return true;
    return false;
  }

  // augmented Lagrangian value
  double aug_value(const Eval& ev, const VectorXd& lambda, double mu) const {
    double val = ev.objective;
    for (int j = 0; j < m(); ++j) {
      const double t = std::max(0.0, lambda[j] + mu * ev.c[j]);
      val += (t * t - lambda[j] * lambda[j]) / (2.0 * mu);
    }
    return val;
  }

  // plain Newton on the squared-slack objective (restoration mode)
  SolveResult restoration_newton(VectorXd x, Eval ev, int max_iterations, double tol) {
    SolveResult out;
    out.lambda = VectorXd::Zero(m());
    double nu_reg = opt_.reg_floor;
    int iter = 0;
    while (iter < max_iterations) {
      const double gnorm = ev.F.lpNorm<Eigen::Infinity>();
      if (gnorm < tol) {
        out.status = SolveStatus::Converged;
        break;
      }
      ++iter;
      const MatrixXd Hreg = ev.H + nu_reg * MatrixXd::Identity(n_, n_);
      VectorXd dx = Eigen::LDLT<MatrixXd>(Hreg).solve(-ev.F);
      if (!dx.allFinite() || ev.F.dot(dx) >= 0.0) {
        nu_reg = std::max(nu_reg * 10.0, 1e-6);
        if (nu_reg > 1e9) break;
        continue;
      }
      const double slope = ev.F.dot(dx);
      double alpha = 1.0;
      bool accepted = false;
      while (alpha >= opt_.min_step) {
        const VectorXd x_try = x + alpha * dx;
        Eval ev_try;
        try {
          ev_try = evaluate(x_try);
        } catch (const dynamics::DynamicsError&) {
          alpha *= opt_.backtrack_factor;
          continue;
        }
        if (ev_try.objective <= ev.objective + 1e-4 * alpha * slope) {
          x = x_try;
          ev = std::move(ev_try);
          accepted = true;
          break;
        }
        alpha *= opt_.backtrack_factor;
      }
      if (!accepted) {
        nu_reg = std::max(nu_reg * 10.0, 1e-6);
        if (nu_reg > 1e9) break;
      } else {
        nu_reg = std::max(opt_.reg_floor, nu_reg / 5.0);
      }
    }
    out.x = x;
    out.residual = ev.F.lpNorm<Eigen::Infinity>();
    out.iterations = iter;
    return out;
  }

  // ground-truth violation measure used by restoration and reporting
  double max_violation(const VectorXd& x) const {
    return evaluate(x).max_violation;
  }

  std::array<MatrixXd, 2> trajectories(const VectorXd& x) const { return evaluate(x).z; }

  // diagnostic trajectories for failed solves: freeze states past a step that
  // leaves the model domain
  std::array<MatrixXd, 2> safe_trajectories(const VectorXd& x) const {
    std::array<MatrixXd, 2> z;
    const auto u = unpack(x);
    for (int a = 0; a < 2; ++a) {
      if (!participating(a)) {
        z[a] = frozen_[a];
        continue;
      }
      const auto& model = game_.model[a];
      z[a] = MatrixXd::Zero(model.nz, game_.horizon + 1);
      z[a].col(0) = game_.z0[a];
      VectorXd z_next(model.nz);
      MatrixXd A(model.nz, model.nz), B(model.nz, model.nu);
      for (int k = 0; k < game_.horizon; ++k) {
        try {
          model.step(k, z[a].col(k), u[a].col(k), z_next, A, B);
          z[a].col(k + 1) = z_next;
        } catch (const dynamics::DynamicsError&) {
          for (int j = k; j < game_.horizon; ++j) z[a].col(j + 1) = z[a].col(j);
          break;
        }
      }
    }
    return z;
  }

  // start sequence from the per-agent stabilizing policies where provided
  VectorXd policy_start() const {
    VectorXd x = VectorXd::Zero(n_);
    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
      const int a = blocks_[bi];
      if (!game_.start_policy[a]) continue;
      const auto& model = game_.model[a];
      VectorXd z = game_.z0[a];
      VectorXd z_next(model.nz);
      MatrixXd A(model.nz, model.nz), B(model.nz, model.nu);
      for (int k = 0; k < game_.horizon; ++k) {
        VectorXd u = game_.start_policy[a](k, z);
        try {
          model.step(k, z, u, z_next, A, B);
          z = z_next;
        } catch (const dynamics::DynamicsError&) {
          u.setZero();
        }
        x.segment(offset_[bi] + k * model.nu, model.nu) = u;
      }
    }
    return x;
  }

 private:
  bool participating(int agent) const {
    return std::find(blocks_.begin(), blocks_.end(), agent) != blocks_.end();
  }
  int block_index(int agent) const {
    for (std::size_t bi = 0; bi < blocks_.size(); ++bi)
      if (blocks_[bi] == agent) return static_cast<int>(bi);
    return -1;
  }

  static MatrixXd kron_q(const MatrixXd& Q, int N) {
    const int nz = static_cast<int>(Q.rows());
    MatrixXd out = MatrixXd::Zero(nz * N, nz * N);
    for (int k = 0; k < N; ++k) out.block(k * nz, k * nz, nz, nz) = Q;
    return out;
  }

  void enumerate_rows() {
    const int N = game_.horizon;
    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
      const int a = blocks_[bi];
      const auto& b = game_.bounds[a];
      const int nu = game_.model[a].nu;
      const int nz = game_.model[a].nz;
      for (int k = 0; k < N; ++k) {
        for (int c = 0; c < nu; ++c) {
          if (b.u_lb.size() == nu && finite_bound(b.u_lb[c]))
            rows_.push_back({RowKind::InputLo, a, k, c});
          if (b.u_ub.size() == nu && finite_bound(b.u_ub[c]))
            rows_.push_back({RowKind::InputHi, a, k, c});
          if (b.du_lb.size() == nu && finite_bound(b.du_lb[c]))
            rows_.push_back({RowKind::RateLo, a, k, c});
          if (b.du_ub.size() == nu && finite_bound(b.du_ub[c]))
            rows_.push_back({RowKind::RateHi, a, k, c});
        }
      }
      for (int k = 1; k <= N; ++k) {
        for (int c = 0; c < nz; ++c) {
          if (b.z_lb.size() == nz && finite_bound(b.z_lb[c]))
            rows_.push_back({RowKind::StateLo, a, k, c});
          if (b.z_ub.size() == nz && finite_bound(b.z_ub[c]))
            rows_.push_back({RowKind::StateHi, a, k, c});
        }
      }
      if (game_.extra[a].count > 0) {
        for (int k = 0; k < N; ++k)
          for (int c = 0; c < game_.extra[a].count; ++c)
            rows_.push_back({RowKind::Extra, a, k, c});
      }
    }
    if (game_.d_min > 0.0) {
      for (int k = 0; k <= N; ++k) rows_.push_back({RowKind::Coupled, -1, k, 0});
    }
  }

  void build_constraints(Eval& ev, const std::array<MatrixXd, 2>& u,
                         const std::array<MatrixXd, 2>& S) const {
    const int N = game_.horizon;
    ev.c = VectorXd::Zero(m());
    ev.A = MatrixXd::Zero(m(), n_);
    ev.max_violation = 0.0;

    // cached extra-constraint evaluations
    std::array<std::vector<VectorXd>, 2> gx;
    std::array<std::vector<MatrixXd>, 2> gxz, gxu;
    for (int a = 0; a < 2; ++a) {
      if (!participating(a) || game_.extra[a].count == 0) continue;
      gx[a].resize(N);
      gxz[a].resize(N);
      gxu[a].resize(N);
      for (int k = 0; k < N; ++k) {
        gx[a][k].resize(game_.extra[a].count);
        gxz[a][k].resize(game_.extra[a].count, game_.model[a].nz);
        gxu[a][k].resize(game_.extra[a].count, game_.model[a].nu);
        game_.extra[a].eval(k, ev.z[a].col(k), u[a].col(k), gx[a][k], gxz[a][k], gxu[a][k]);
      }
    }

    for (int j = 0; j < m(); ++j) {
      const RowMeta& row = rows_[j];
      double value = 0.0;
      if (row.kind == RowKind::Coupled) {
        Vector2d p0, p1;
        MatrixXd Jp0(2, game_.model[0].nz), Jp1(2, game_.model[1].nz);
        game_.model[0].position(ev.z[0].col(row.k), p0, Jp0);
        game_.model[1].position(ev.z[1].col(row.k), p1, Jp1);
        const Vector2d dp = p0 - p1;
        value = game_.d_min * game_.d_min - dp.squaredNorm();
        if (row.k > 0) {
          MatrixXd D = MatrixXd::Zero(2, n_);  // d(p0 - p1)/dU
          if (participating(0)) {
            const int bi = block_index(0);
            const int nz = game_.model[0].nz, nup = game_.model[0].nu;
            D.block(0, offset_[bi], 2, nup * N) =
                Jp0 * S[0].middleRows((row.k - 1) * nz, nz);
          }
          if (participating(1)) {
            const int bi = block_index(1);
            const int nz = game_.model[1].nz, nup = game_.model[1].nu;
            D.block(0, offset_[bi], 2, nup * N) -=
                Jp1 * S[1].middleRows((row.k - 1) * nz, nz);
          }
          ev.A.row(j) = -2.0 * dp.transpose() * D;
          ev.coupled_D.emplace_back(j, std::move(D));
        }
      } else {
        const int a = row.agent;
        const int bi = block_index(a);
        const int nu = game_.model[a].nu;
        const int nz = game_.model[a].nz;
        const auto& b = game_.bounds[a];
        switch (row.kind) {
          case RowKind::InputLo:
            value = b.u_lb[row.comp] - u[a](row.comp, row.k);
            ev.A(j, offset_[bi] + row.k * nu + row.comp) = -1.0;
            break;
          case RowKind::InputHi:
            value = u[a](row.comp, row.k) - b.u_ub[row.comp];
            ev.A(j, offset_[bi] + row.k * nu + row.comp) = 1.0;
            break;
          case RowKind::RateLo:
          case RowKind::RateHi: {
            const VectorXd u_prev = safe_u_prev(game_.cost[a], nu);
            const double prev = row.k == 0 ? u_prev[row.comp] : u[a](row.comp, row.k - 1);
            const double du = u[a](row.comp, row.k) - prev;
            const double sign = row.kind == RowKind::RateHi ? 1.0 : -1.0;
            value = sign * du - (row.kind == RowKind::RateHi ? b.du_ub[row.comp]
                                                             : -b.du_lb[row.comp]);
            ev.A(j, offset_[bi] + row.k * nu + row.comp) = sign;
            if (row.k > 0) ev.A(j, offset_[bi] + (row.k - 1) * nu + row.comp) = -sign;
            break;
          }
          case RowKind::StateLo:
          case RowKind::StateHi: {
            const double zc = ev.z[a](row.comp, row.k);
            const double sign = row.kind == RowKind::StateHi ? 1.0 : -1.0;
            value = sign * zc - (row.kind == RowKind::StateHi ? b.z_ub[row.comp]
                                                              : -b.z_lb[row.comp]);
            ev.A.block(j, offset_[bi], 1, nu * N) =
                sign * S[a].row((row.k - 1) * nz + row.comp);
            break;
          }
          case RowKind::Extra: {
            value = gx[a][row.k][row.comp];
            MatrixXd grad =
                gxu[a][row.k].row(row.comp);  // direct input dependence
            ev.A.block(j, offset_[bi] + row.k * nu, 1, nu) += grad;
            if (row.k > 0) {
              ev.A.block(j, offset_[bi], 1, nu * N) +=
                  gxz[a][row.k].row(row.comp) * S[a].middleRows((row.k - 1) * nz, nz);
            }
            break;
          }
          default:
            break;
        }
      }
      ev.c[j] = value;
      ev.max_violation = std::max(ev.max_violation, value);
    }
  }

  bool direction(const Eval& ev, const VectorXd& lambda, double nu_reg, VectorXd& dx,
                 VectorXd& lambda_new) const {
    const int mm = m();
    lambda_new = VectorXd::Zero(mm);
    if (mode_ == Mode::Restoration || mm == 0) {
      Eigen::LDLT<MatrixXd> ldlt(ev.H + nu_reg * MatrixXd::Identity(n_, n_));
      dx = ldlt.solve(-ev.F);
      return dx.allFinite();
    }
    auto step = detail::working_set_direction(ev.H, ev.F, ev.A, ev.c, lambda, nu_reg,
                                              opt_.active_tol, opt_.max_working_set_updates);
    if (!step.ok) return false;
    dx = step.dx;
    lambda_new = step.lambda;
    return true;
  }

  const GameSpec& game_;
  const SolverOptions& opt_;
  Mode mode_;
  std::vector<int> blocks_;
  int n_ = 0;
  std::vector<int> offset_;
  std::vector<RowMeta> rows_;
  std::array<MatrixXd, 2> frozen_;
};

GneSolution finish_solution(const GameSpec& game, const Engine& engine,
                            const Engine::SolveResult& res, double elapsed) {
  GneSolution sol;
  sol.u = engine.unpack(res.x);
  const auto z = engine.safe_trajectories(res.x);
  sol.z = z;
  sol.status = res.status;
  sol.kkt_residual = res.residual;
  sol.iterations = res.iterations;
  sol.solve_time = elapsed;
  for (int a = 0; a < 2; ++a) sol.cost[a] = agent_cost(game, a, z[a], sol.u[a], z[1 - a]);
  sol.potential = potential_value(game, sol.z, sol.u);
  return sol;
}

// feasibility restoration: minimize the squared constraint slack
bool restoration(const GameSpec& game, const SolverOptions& options, VectorXd& x_out,
                 double* slack_out) {
  Engine rest(game, options, Mode::Restoration, {0, 1});
  VectorXd x0 = rest.policy_start();
  auto res = rest.run(x0, options.max_iterations, 1e-10);
  const double slack = rest.max_violation(res.x);
  if (slack_out) *slack_out = slack;
  x_out = res.x;
  return slack <= 1e-4;
}

}  // namespace

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxIterations: return "max_iterations";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::NonConvergent: return "non_convergent";
  }
  return "unknown";
}

MatrixXd rollout(const GameSpec& game, int agent, const MatrixXd& u) {
  const auto& model = game.model[agent];
  MatrixXd z(model.nz, game.horizon + 1);
  z.col(0) = game.z0[agent];
  VectorXd z_next(model.nz);
  MatrixXd A(model.nz, model.nz), B(model.nz, model.nu);
  for (int k = 0; k < game.horizon; ++k) {
    model.step(k, z.col(k), u.col(k), z_next, A, B);
    z.col(k + 1) = z_next;
  }
  return z;
}

double agent_cost(const GameSpec& game, int agent, const MatrixXd& z_own, const MatrixXd& u_own,
                  const MatrixXd& z_opp) {
  const auto& cost = game.cost[agent];
  const int N = game.horizon;
  double total = 0.0;
  const bool has_q = cost.Q.size() > 0 && cost.Q.norm() > 0.0;
  for (int k = 1; k <= N; ++k) {
    if (has_q) {
      VectorXd ref = cost.z_ref ? cost.z_ref(k, z_own.col(k))
                                : VectorXd::Zero(game.model[agent].nz);
      const VectorXd e = z_own.col(k) - ref;
      total += e.dot(cost.Q * e);
    }
  }
  const VectorXd u_prev = safe_u_prev(cost, game.model[agent].nu);
  for (int k = 0; k < N; ++k) {
    const VectorXd uk = u_own.col(k);
    total += uk.dot(cost.R1 * uk);
    const VectorXd du = uk - (k == 0 ? u_prev : VectorXd(u_own.col(k - 1)));
    total += du.dot(cost.R2 * du);
  }
  if (cost.q_term.size() == z_own.rows()) total += cost.q_term.dot(z_own.col(N));
  if (cost.P_cross.size() > 0) total += z_own.col(N).dot(cost.P_cross * z_opp.col(N));
  if (cost.r_cross.size() == z_opp.rows()) total += cost.r_cross.dot(z_opp.col(N));
  return total;
}

double potential_value(const GameSpec& game, const std::array<MatrixXd, 2>& z,
                       const std::array<MatrixXd, 2>& u) {
  double phi = 0.0;
  for (int a = 0; a < 2; ++a) {
    const auto& cost = game.cost[a];
    const int N = game.horizon;
    const bool has_q = cost.Q.size() > 0 && cost.Q.norm() > 0.0;
    if (has_q) {
      for (int k = 1; k <= N; ++k) {
        VectorXd ref = cost.z_ref ? cost.z_ref(k, z[a].col(k))
                                  : VectorXd::Zero(game.model[a].nz);
        const VectorXd e = z[a].col(k) - ref;
        phi += e.dot(cost.Q * e);
      }
    }
    const VectorXd u_prev = safe_u_prev(cost, game.model[a].nu);
    for (int k = 0; k < N; ++k) {
      const VectorXd uk = u[a].col(k);
      phi += uk.dot(cost.R1 * uk);
      const VectorXd du = uk - (k == 0 ? u_prev : VectorXd(u[a].col(k - 1)));
      phi += du.dot(cost.R2 * du);
    }
    if (cost.q_term.size() == z[a].rows()) phi += cost.q_term.dot(z[a].col(N));
  }
  return phi;
}

namespace {

GneSolution solve_joint(const GameSpec& game, const SolverOptions& options, Mode mode,
                        const std::optional<std::array<MatrixXd, 2>>& warm_start) {
  const auto t0 = Clock::now();
  Engine engine(game, options, mode, {0, 1});
  VectorXd x0 = VectorXd::Zero(engine.n());
  bool have_start = false;
  if (warm_start) {
    x0 = engine.pack(*warm_start);
    try {
      if (engine.max_violation(x0) <= 1e-4) have_start = true;
    } catch (const dynamics::DynamicsError&) {
      have_start = false;
    }
  }
  const bool needs_restoration =
      game.d_min > 0.0 || game.extra[0].count > 0 || game.extra[1].count > 0;
  if (!have_start && needs_restoration) {
    double slack = 0.0;
    VectorXd x_feas;
    if (!restoration(game, options, x_feas, &slack)) {
      Engine::SolveResult res;
      res.x = x_feas;
      res.status = SolveStatus::Infeasible;
      res.residual = slack;
      GneSolution sol = finish_solution(game, engine, res, seconds_since(t0));
      sol.status = SolveStatus::Infeasible;
      return sol;
    }
    x0 = x_feas;
  }
  auto res = engine.run(x0, options.max_iterations, options.kkt_tolerance);
  return finish_solution(game, engine, res, seconds_since(t0));
}

}  // namespace

GneSolution solve_gne_sqp(const GameSpec& game, const SolverOptions& options,
                          const std::optional<std::array<MatrixXd, 2>>& warm_start) {
  return solve_joint(game, options, Mode::Game, warm_start);
}

GneSolution solve_potential_nlp(const GameSpec& game, const SolverOptions& options,
                                const std::optional<std::array<MatrixXd, 2>>& warm_start) {
  for (int a = 0; a < 2; ++a) {
    if (game.cost[a].P_cross.size() > 0 && game.cost[a].P_cross.norm() > 0.0)
      throw std::invalid_argument("potential form requires separable costs (P_cross = 0)");
  }
  return solve_joint(game, options, Mode::Potential, warm_start);
}

GneSolution iterated_best_response(const GameSpec& game, const SolverOptions& options) {
  const auto t0 = Clock::now();
  std::array<MatrixXd, 2> u;
  std::array<MatrixXd, 2> z;
  for (int a = 0; a < 2; ++a) {
    u[a] = MatrixXd::Zero(game.model[a].nu, game.horizon);
    z[a] = rollout(game, a, u[a]);
  }
  GneSolution sol;
  std::deque<double> history;
  SolveStatus status = SolveStatus::MaxIterations;
  int sweeps = 0;
  for (; sweeps < options.max_sweeps; ++sweeps) {
    double change = 0.0;
    for (int a = 0; a < 2; ++a) {
      Engine single(game, options, Mode::Single, {a}, &z);
      const VectorXd x0 = single.pack(u);
      auto res = single.run(x0, options.max_iterations, options.kkt_tolerance);
      const auto u_new = single.unpack(res.x);
      change = std::max(change, (u_new[a] - u[a]).lpNorm<Eigen::Infinity>());
      u[a] = u_new[a];
      z[a] = rollout(game, a, u[a]);
    }
    history.push_back(change);
    if (change < options.ibr_tolerance) {
      status = SolveStatus::Converged;
      ++sweeps;
      break;
    }
    if (history.size() > 6) {
      const double old = history[history.size() - 7];
      if (change > 100.0 * options.ibr_tolerance && change >= 0.5 * old) {
        status = SolveStatus::NonConvergent;
        ++sweeps;
        break;
      }
    }
  }
  sol.u = u;
  sol.z = z;
  sol.status = status;
  sol.iterations = sweeps;
  sol.solve_time = seconds_since(t0);
  for (int a = 0; a < 2; ++a) sol.cost[a] = agent_cost(game, a, z[a], u[a], z[1 - a]);
  sol.potential = potential_value(game, z, u);
  // GNE stationarity residual at the fixed point, for reporting
  Engine probe(game, options, Mode::Game, {0, 1});
  auto res = probe.run(probe.pack(u), 0, options.kkt_tolerance);
  sol.kkt_residual = res.residual;
  if (sol.status == SolveStatus::Converged && probe.max_violation(probe.pack(u)) > 1e-4)
    sol.status = SolveStatus::Infeasible;
  return sol;
}

FeasibilityReport verify_solution(const GameSpec& game, const GneSolution& sol, double dyn_tol,
                                  double con_tol) {
  FeasibilityReport rep;
  const int N = game.horizon;
  for (int a = 0; a < 2; ++a) {
    const auto& model = game.model[a];
    VectorXd z_next(model.nz);
    MatrixXd A(model.nz, model.nz), B(model.nz, model.nu);
    rep.max_dynamics_defect = std::max(
        rep.max_dynamics_defect, (sol.z[a].col(0) - game.z0[a]).lpNorm<Eigen::Infinity>());
    for (int k = 0; k < N; ++k) {
      model.step(k, sol.z[a].col(k), sol.u[a].col(k), z_next, A, B);
      rep.max_dynamics_defect = std::max(
          rep.max_dynamics_defect, (sol.z[a].col(k + 1) - z_next).lpNorm<Eigen::Infinity>());
    }
    const auto& b = game.bounds[a];
    auto acc = [&rep](double v) { rep.max_bound_violation = std::max(rep.max_bound_violation, v); };
    for (int k = 0; k < N; ++k) {
      for (int c = 0; c < model.nu; ++c) {
        if (b.u_lb.size() == model.nu && finite_bound(b.u_lb[c])) acc(b.u_lb[c] - sol.u[a](c, k));
        if (b.u_ub.size() == model.nu && finite_bound(b.u_ub[c])) acc(sol.u[a](c, k) - b.u_ub[c]);
        const double prev = k == 0 ? safe_u_prev(game.cost[a], model.nu)[c] : sol.u[a](c, k - 1);
        const double du = sol.u[a](c, k) - prev;
        if (b.du_lb.size() == model.nu && finite_bound(b.du_lb[c])) acc(b.du_lb[c] - du);
        if (b.du_ub.size() == model.nu && finite_bound(b.du_ub[c])) acc(du - b.du_ub[c]);
      }
    }
    for (int k = 1; k <= N; ++k) {
      for (int c = 0; c < model.nz; ++c) {
        if (b.z_lb.size() == model.nz && finite_bound(b.z_lb[c]))
          acc(b.z_lb[c] - sol.z[a](c, k));
        if (b.z_ub.size() == model.nz && finite_bound(b.z_ub[c]))
          acc(sol.z[a](c, k) - b.z_ub[c]);
      }
    }
    if (game.extra[a].count > 0) {
      VectorXd g(game.extra[a].count);
      MatrixXd Gz(game.extra[a].count, model.nz), Gu(game.extra[a].count, model.nu);
      for (int k = 0; k < N; ++k) {
        game.extra[a].eval(k, sol.z[a].col(k), sol.u[a].col(k), g, Gz, Gu);
        rep.max_extra_violation = std::max(rep.max_extra_violation, g.maxCoeff());
      }
    }
  }
  if (game.d_min > 0.0) {
    for (int k = 0; k <= N; ++k) {
      Vector2d p0, p1;
      MatrixXd J0(2, game.model[0].nz), J1(2, game.model[1].nz);
      game.model[0].position(sol.z[0].col(k), p0, J0);
      game.model[1].position(sol.z[1].col(k), p1, J1);
      rep.max_coupled_violation = std::max(
          rep.max_coupled_violation, game.d_min * game.d_min - (p0 - p1).squaredNorm());
    }
  }
  rep.ok = rep.max_dynamics_defect <= dyn_tol &&
           std::max({rep.max_bound_violation, rep.max_coupled_violation,
                     rep.max_extra_violation}) <= con_tol;
  return rep;
}

namespace {

// clip a perturbed input sequence into the box and rate sets
MatrixXd project_inputs(const GameSpec& game, int agent, MatrixXd u) {
  const auto& b = game.bounds[agent];
  const int nu = game.model[agent].nu;
  const VectorXd u_prev = safe_u_prev(game.cost[agent], nu);
  for (int pass = 0; pass < 2; ++pass) {
    for (int k = 0; k < game.horizon; ++k) {
      for (int c = 0; c < nu; ++c) {
        double v = u(c, k);
        if (b.u_lb.size() == nu && finite_bound(b.u_lb[c])) v = std::max(v, b.u_lb[c]);
        if (b.u_ub.size() == nu && finite_bound(b.u_ub[c])) v = std::min(v, b.u_ub[c]);
        const double prev = k == 0 ? u_prev[c] : u(c, k - 1);
        if (b.du_lb.size() == nu && finite_bound(b.du_lb[c])) v = std::max(v, prev + b.du_lb[c]);
        if (b.du_ub.size() == nu && finite_bound(b.du_ub[c])) v = std::min(v, prev + b.du_ub[c]);
        u(c, k) = v;
      }
    }
  }
  return u;
}

bool unilateral_feasible(const GameSpec& game, int agent, const MatrixXd& z_own,
                         const MatrixXd& u_own, const MatrixXd& z_opp, double tol) {
  const auto& model = game.model[agent];
  const auto& b = game.bounds[agent];
  for (int k = 1; k <= game.horizon; ++k) {
    for (int c = 0; c < model.nz; ++c) {
      if (b.z_lb.size() == model.nz && finite_bound(b.z_lb[c]) &&
          z_own(c, k) < b.z_lb[c] - tol)
        return false;
      if (b.z_ub.size() == model.nz && finite_bound(b.z_ub[c]) &&
          z_own(c, k) > b.z_ub[c] + tol)
        return false;
    }
  }
  if (game.extra[agent].count > 0) {
    VectorXd g(game.extra[agent].count);
    MatrixXd Gz(game.extra[agent].count, model.nz), Gu(game.extra[agent].count, model.nu);
    for (int k = 0; k < game.horizon; ++k) {
      game.extra[agent].eval(k, z_own.col(k), u_own.col(k), g, Gz, Gu);
      if (g.maxCoeff() > tol) return false;
    }
  }
  if (game.d_min > 0.0) {
    for (int k = 0; k <= game.horizon; ++k) {
      Vector2d p0, p1;
      MatrixXd J0(2, model.nz), J1(2, game.model[1 - agent].nz);
      game.model[agent].position(z_own.col(k), p0, J0);
      game.model[1 - agent].position(z_opp.col(k), p1, J1);
      if ((p0 - p1).norm() < game.d_min - tol) return false;
    }
  }
  return true;
}

}  // namespace

GneCheckReport check_gne(const GameSpec& game, const GneSolution& candidate,
                         int n_perturbations, double epsilon, std::uint64_t seed) {
  GneCheckReport rep;
  Rng rng(seed);
  for (int agent = 0; agent < 2; ++agent) {
    const int nu = game.model[agent].nu;
    const auto& b = game.bounds[agent];
    VectorXd scale(nu);
    for (int c = 0; c < nu; ++c) {
      double range = 1.0;
      if (b.u_lb.size() == nu && b.u_ub.size() == nu && finite_bound(b.u_lb[c]) &&
          finite_bound(b.u_ub[c]))
        range = b.u_ub[c] - b.u_lb[c];
      scale[c] = 0.1 * range;
    }
    const double base = agent_cost(game, agent, candidate.z[agent], candidate.u[agent],
                                   candidate.z[1 - agent]);
    int produced = 0;
    int attempts = 0;
    while (produced < n_perturbations && attempts < 60 * n_perturbations) {
      ++attempts;
      const double shrink = attempts > 20 * n_perturbations ? 0.2 : 1.0;
      MatrixXd u_try = candidate.u[agent];
      for (int k = 0; k < game.horizon; ++k)
        for (int c = 0; c < nu; ++c) u_try(c, k) += shrink * scale[c] * rng.normal();
      u_try = project_inputs(game, agent, u_try);
      MatrixXd z_try;
      try {
        z_try = rollout(game, agent, u_try);
      } catch (const dynamics::DynamicsError&) {
        continue;
      }
      if (!unilateral_feasible(game, agent, z_try, u_try, candidate.z[1 - agent], 1e-9))
        continue;
      ++produced;
      ++rep.tested;
      const double cost_try =
          agent_cost(game, agent, z_try, u_try, candidate.z[1 - agent]);
      const double improvement = base - cost_try;
      if (improvement > epsilon) {
        ++rep.improving;
        rep.worst_improvement = std::max(rep.worst_improvement, improvement);
      }
    }
  }
  rep.pass = rep.improving == 0 && rep.tested > 0;
  return rep;
}

// ---------------------------------------------------------------------------
// Model builders

AgentModel vehicle_model(const geometry::PathSpec& path, const dynamics::VehicleParams& params,
                         double dt) {
  AgentModel m;
  m.nz = 4;
  m.nu = 2;
  m.step = [&path, params, dt](int, const VectorXd& z, const VectorXd& u, VectorXd& z_next,
                               MatrixXd& A, MatrixXd& B) {
    Eigen::Vector4d zn;
    Eigen::Matrix4d Ad;
    Eigen::Matrix<double, 4, 2> Bd;
    dynamics::step_with_jacobian(z.head<4>(), u.head<2>(), path, dt, params, zn, Ad, Bd);
    z_next = zn;
    A = Ad;
    B = Bd;
  };
  m.position = [&path](const VectorXd& z, Vector2d& p, MatrixXd& Jp) {
    const double s = z[dynamics::kIdxS];
    const double e_y = z[dynamics::kIdxEy];
    const geometry::Pose ref = geometry::pose_at(path, s);
    const double kappa = geometry::curvature_at(path, s);
    p = {ref.x - e_y * std::sin(ref.psi), ref.y + e_y * std::cos(ref.psi)};
    Jp.setZero(2, 4);
    const double factor = 1.0 - kappa * e_y;
    Jp(0, dynamics::kIdxS) = factor * std::cos(ref.psi);
    Jp(1, dynamics::kIdxS) = factor * std::sin(ref.psi);
    Jp(0, dynamics::kIdxEy) = -std::sin(ref.psi);
    Jp(1, dynamics::kIdxEy) = std::cos(ref.psi);
  };
  return m;
}

AgentModel longitudinal_model(const geometry::PathSpec& path, double dt) {
  AgentModel m;
  m.nz = 2;  // [s, v]
  m.nu = 1;  // [a]
  m.step = [dt](int, const VectorXd& z, const VectorXd& u, VectorXd& z_next, MatrixXd& A,
                MatrixXd& B) {
    z_next.resize(2);
    z_next[0] = z[0] + z[1] * dt + 0.5 * u[0] * dt * dt;
    z_next[1] = z[1] + u[0] * dt;
    A.resize(2, 2);
    A << 1.0, dt, 0.0, 1.0;
    B.resize(2, 1);
    B << 0.5 * dt * dt, dt;
  };
  m.position = [&path](const VectorXd& z, Vector2d& p, MatrixXd& Jp) {
    const geometry::Pose ref = geometry::pose_at(path, z[0]);
    p = {ref.x, ref.y};
    Jp.setZero(2, 2);
    Jp(0, 0) = std::cos(ref.psi);
    Jp(1, 0) = std::sin(ref.psi);
  };
  return m;
}

StageConstraintFn friction_constraint(const dynamics::VehicleParams& params) {
  StageConstraintFn fn;
  fn.count = 2;
  const double limit = params.mu * params.gravity;
  const double wb = params.wheelbase;
  fn.eval = [limit, wb](int, const VectorXd& z, const VectorXd& u, VectorXd& g, MatrixXd& Gz,
                        MatrixXd& Gu) {
    const double v = z[dynamics::kIdxV];
    const double delta = u[1];
    const double tan_d = std::tan(delta);
    const double sec2 = 1.0 + tan_d * tan_d;
    const double lat = v * v * tan_d / (2.0 * wb);
    g.resize(2);
    g[0] = lat - limit;
    g[1] = -lat - limit;
    Gz.setZero(2, z.size());
    Gu.setZero(2, u.size());
    Gz(0, dynamics::kIdxV) = v * tan_d / wb;
    Gz(1, dynamics::kIdxV) = -v * tan_d / wb;
    Gu(0, 1) = v * v * sec2 / (2.0 * wb);
    Gu(1, 1) = -v * v * sec2 / (2.0 * wb);
  };
  return fn;
}

}  // namespace gtmpc::game
