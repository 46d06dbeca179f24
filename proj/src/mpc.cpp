#include "gtmpc/mpc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "gtmpc/qp.hpp"

namespace gtmpc::mpc {

using Eigen::Matrix4d;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TerminalSelector selector_from_string(const std::string& s) {
  if (s == "gt" || s == "GT") return TerminalSelector::GT;
  if (s == "mp" || s == "MP") return TerminalSelector::MP;
  throw std::invalid_argument("unknown terminal selector: " + s);
}

std::string to_string(TerminalSelector s) {
  return s == TerminalSelector::GT ? "gt" : "mp";
}

FhocpProblem build_fhocp(const Vector4d& z_meas, const Forecast& forecast,
                         const ReferenceSpec& ref, const MpcConfig& cfg,
                         const valuefn::TrainedValueFn* vf, dataset::Family family,
                         const std::optional<std::pair<int, int>>& scenario_codes,
                         const Vector2d& u_prev) {
  if (cfg.N < 1) throw std::invalid_argument("horizon must be >= 1");
  if (forecast.states.cols() != cfg.N + 1 || forecast.positions.cols() != cfg.N + 1)
    throw std::invalid_argument("forecast length must be N+1");
  if (ref.path == nullptr) throw std::invalid_argument("reference path missing");
  if (cfg.selector == TerminalSelector::GT && vf == nullptr)
    throw std::invalid_argument("GT terminal cost needs a trained model");
  if (family == dataset::Family::Intersection && cfg.selector == TerminalSelector::GT &&
      !scenario_codes)
    throw std::invalid_argument("intersection GT terminal cost needs scenario encodings");
  FhocpProblem p;
  p.family = family;
  p.z_meas = z_meas;
  p.forecast = forecast;
  p.ref = ref;
  p.cfg = cfg;
  p.vf = vf;
  p.scenario_codes = scenario_codes;
  p.u_prev = u_prev;
  return p;
}

namespace {

dynamics::JointState joint_from_frenet(const Vector4d& z_own, const Vector4d& z_opp) {
  dynamics::JointState js;
  js.agents[0].v = z_own[dynamics::kIdxV];
  js.agents[0].e_psi = z_own[dynamics::kIdxEpsi];
  js.agents[0].s = z_own[dynamics::kIdxS];
  js.agents[0].e_y = z_own[dynamics::kIdxEy];
  js.agents[1].v = z_opp[dynamics::kIdxV];
  js.agents[1].e_psi = z_opp[dynamics::kIdxEpsi];
  js.agents[1].s = z_opp[dynamics::kIdxS];
  js.agents[1].e_y = z_opp[dynamics::kIdxEy];
  return js;
}

// value and gradient of the terminal cost-to-go at z_N
double terminal_value_grad(const FhocpProblem& p, const Vector4d& z_n, Vector4d& grad) {
  grad.setZero();
  const Vector4d z_opp = p.forecast.states.col(p.cfg.N);
  if (p.cfg.selector == TerminalSelector::MP) {
    grad[dynamics::kIdxS] = -1.0;
    const double s_opp = z_opp[dynamics::kIdxS];
    const double s_own = z_n[dynamics::kIdxS];
    return p.family == dataset::Family::Racing ? -(s_own - s_opp) : -(s_own + s_opp);
  }
  const dynamics::JointState js = joint_from_frenet(z_n, z_opp);
  std::optional<std::pair<int, int>> codes;
  const geometry::PathSpec* racing_path = nullptr;
  if (p.family == dataset::Family::Intersection) {
    codes = p.scenario_codes;
  } else {
    racing_path = p.ref.path;
  }
  const Eigen::VectorXd x = dataset::build_features(js, 1, codes, racing_path);
  Eigen::VectorXd gx;
  const double value = valuefn::forward_with_grad(*p.vf, x, gx);
  if (p.family == dataset::Family::Racing) {
    // x = [z_opp, z - z_opp]; the own-state block is the difference part
    grad[dynamics::kIdxV] = -gx[4];
    grad[dynamics::kIdxEpsi] = -gx[5];
    grad[dynamics::kIdxS] = -gx[6];
    grad[dynamics::kIdxEy] = -gx[7];
  } else {
    // x = [s_opp, v_opp, sc_opp, s - s_opp, v - v_opp, dsc]
    grad[dynamics::kIdxS] = -gx[3];
    grad[dynamics::kIdxV] = -gx[4];
  }
  return -value;
}

enum class RowKind { InputLo, InputHi, RateLo, RateHi, StateLo, StateHi, Collision, Friction };

struct RowMeta {
  RowKind kind;
  int k;
  int comp;
};

class FhocpSolver {
 public:
  FhocpSolver(const FhocpProblem& p, const game::SolverOptions& opt) : p_(p), opt_(opt) {
    const auto& vp = p_.cfg.vp;
    const int N = p_.cfg.N;
    z_lb_ = Vector4d(vp.v_min, -vp.e_psi_max, -game::kUnbounded, -vp.e_y_max);
    z_ub_ = Vector4d(vp.v_max, vp.e_psi_max, game::kUnbounded, vp.e_y_max);
    u_lb_ = Vector2d(vp.a_min, vp.delta_min);
    u_ub_ = Vector2d(vp.a_max, vp.delta_max);
    du_ = Vector2d(vp.da_max, vp.ddelta_max);
    for (int k = 0; k < N; ++k)
      for (int c = 0; c < 2; ++c) {
        rows_.push_back({RowKind::InputLo, k, c});
        rows_.push_back({RowKind::InputHi, k, c});
        rows_.push_back({RowKind::RateLo, k, c});
        rows_.push_back({RowKind::RateHi, k, c});
      }
    for (int k = 1; k <= N; ++k)
      for (int c = 0; c < 4; ++c) {
        if (c == dynamics::kIdxS) continue;
        rows_.push_back({RowKind::StateLo, k, c});
        rows_.push_back({RowKind::StateHi, k, c});
      }
    for (int k = 0; k <= N; ++k) rows_.push_back({RowKind::Collision, k, 0});
    if (p_.cfg.friction_on)
      for (int k = 0; k < N; ++k)
        for (int c = 0; c < 2; ++c) rows_.push_back({RowKind::Friction, k, c});
    n_ = 2 * N;
    b_term_.setZero();
    if (p_.cfg.selector == TerminalSelector::GT) b_term_ = 1e-2 * Matrix4d::Identity();
  }

  struct Eval {
    Matrix4Xd z;
    MatrixXd S;
    double J = 0.0;
    VectorXd gradJ;
    MatrixXd H;
    VectorXd c;
    MatrixXd A;
    double viol = 0.0;
    Vector4d g_term;
    double term_value = 0.0;
  };

  Eval evaluate(const VectorXd& x) const {
    const int N = p_.cfg.N;
    Eval ev;
    ev.z.resize(4, N + 1);
    ev.z.col(0) = p_.z_meas;
    ev.S = MatrixXd::Zero(4 * N, n_);
    Vector4d z_next;
    Matrix4d A;
    Eigen::Matrix<double, 4, 2> B;
    for (int k = 0; k < N; ++k) {
      dynamics::step_with_jacobian(ev.z.col(k), x.segment<2>(2 * k), *p_.ref.path, p_.cfg.dt,
                                   p_.cfg.vp, z_next, A, B);
      ev.z.col(k + 1) = z_next;
      auto rows = ev.S.middleRows(4 * k, 4);
      if (k > 0) rows.leftCols(2 * k) = A * ev.S.middleRows(4 * (k - 1), 4).leftCols(2 * k);
      rows.middleCols(2 * k, 2) = B;
    }

    // objective
    ev.gradJ = VectorXd::Zero(n_);
    ev.H = MatrixXd::Zero(n_, n_);
    const Vector4d q = p_.cfg.q_diag;
    const Vector2d r1 = p_.cfg.r1_diag;
    const Vector2d r2 = p_.cfg.r2_diag;
    VectorXd Gz = VectorXd::Zero(4 * N);
    double J = 0.0;
    for (int k = 1; k <= N; ++k) {
      Vector4d ref = Vector4d::Zero();
      ref[dynamics::kIdxV] = p_.ref.v_profile ? p_.ref.v_profile->at(ev.z(dynamics::kIdxS, k))
                                              : p_.ref.v_ref_const;
      const Vector4d e = ev.z.col(k) - ref;
      J += e.dot(q.asDiagonal() * e);
      Gz.segment<4>(4 * (k - 1)) = 2.0 * q.asDiagonal() * e;
    }
    for (int k = 0; k < N; ++k) {
      const Vector2d uk = x.segment<2>(2 * k);
      const Vector2d du = uk - (k == 0 ? p_.u_prev : Vector2d(x.segment<2>(2 * (k - 1))));
      J += uk.dot(r1.asDiagonal() * uk) + du.dot(r2.asDiagonal() * du);
      ev.gradJ.segment<2>(2 * k) += 2.0 * r1.asDiagonal() * uk + 2.0 * r2.asDiagonal() * du;
      if (k + 1 < N)
        ev.gradJ.segment<2>(2 * k) -=
            2.0 * r2.asDiagonal() * (x.segment<2>(2 * (k + 1)) - uk);
      ev.H.block<2, 2>(2 * k, 2 * k) += 2.0 * (r1 + r2).asDiagonal();
      if (k + 1 < N) {
        ev.H.block<2, 2>(2 * k, 2 * k) += 2.0 * r2.asDiagonal();
        ev.H.block<2, 2>(2 * k, 2 * (k + 1)) -= 2.0 * r2.asDiagonal();
        ev.H.block<2, 2>(2 * (k + 1), 2 * k) -= 2.0 * r2.asDiagonal();
      }
    }
    ev.term_value = terminal_value_grad(p_, ev.z.col(N), ev.g_term);
    J += p_.cfg.terminal_weight * ev.term_value;
    Gz.segment<4>(4 * (N - 1)) += p_.cfg.terminal_weight * ev.g_term;
    ev.gradJ += ev.S.transpose() * Gz;
    // Gauss-Newton stage curvature + BFGS terminal block
    MatrixXd QS = MatrixXd::Zero(4 * N, n_);
    for (int k = 0; k < N; ++k)
      QS.middleRows(4 * k, 4) = 2.0 * q.asDiagonal() * ev.S.middleRows(4 * k, 4);
    ev.H += ev.S.transpose() * QS;
    const auto S_n = ev.S.bottomRows(4);
    ev.H += p_.cfg.terminal_weight * S_n.transpose() * b_term_ * S_n;
    ev.J = J;

    build_constraints(ev, x);
    return ev;
  }

  MpcSolution solve(const std::optional<Matrix2Xd>& warm) {
    const auto t0 = std::chrono::steady_clock::now();
    const int N = p_.cfg.N;
    MpcSolution sol;
    VectorXd x = VectorXd::Zero(n_);
    if (warm && warm->cols() == N) {
      for (int k = 0; k < N; ++k) x.segment<2>(2 * k) = warm->col(k);
    }
    VectorXd lambda = VectorXd::Zero(m());

    Eval ev;
    try {
      ev = evaluate(x);
    } catch (const std::exception&) {
      x.setZero();
      ev = evaluate(x);
    }
    // constant violated rows (collision at k=0) cannot be repaired
    for (int j = 0; j < m(); ++j) {
      if (ev.c[j] > 1e-4 && ev.A.row(j).lpNorm<Eigen::Infinity>() < 1e-14) {
        sol.status = SolveStatus::Infeasible;
        fill(sol, ev, x, 0, t0);
        return sol;
      }
    }
    if (ev.viol > 1e-4 && !restore(x, ev)) {
      sol.status = SolveStatus::Infeasible;
      fill(sol, ev, x, 0, t0);
      return sol;
    }

    double nu_reg = opt_.reg_floor;
    double rho = 1.0;
    double res = kkt_residual(ev, lambda);
    int iter = 0;
    SolveStatus status = SolveStatus::MaxIterations;
    while (iter < opt_.max_iterations) {
      if (res < opt_.kkt_tolerance) {
        status = SolveStatus::Converged;
        break;
      }
      ++iter;
      auto step = detail::working_set_direction(ev.H, ev.gradJ, ev.A, ev.c, lambda, nu_reg,
                                                opt_.active_tol, opt_.max_working_set_updates);
      if (!step.ok) {
        nu_reg = std::max(nu_reg * 10.0, 1e-6);
        if (nu_reg > 1e8) break;
        continue;
      }
      detail::polish_multipliers(ev.H, ev.gradJ, ev.A, ev.c, step.dx, step.lambda,
                                 opt_.active_tol);
      if (step.dx.lpNorm<Eigen::Infinity>() < 1e-12) {
        // already at the subproblem's solution: take the multipliers as-is
        lambda = step.lambda;
        res = kkt_residual(ev, lambda);
        continue;
      }
      rho = std::max({rho, 1.5 * step.lambda.lpNorm<Eigen::Infinity>(), 1.0});
      const double viol0 = total_violation(ev);
      const double merit0 = ev.J + rho * viol0;
      const double descent = ev.gradJ.dot(step.dx) - rho * viol0;
      // terminal-state trust clamp
      double alpha = 1.0;
      const double dz_n = (ev.S.bottomRows(4) * step.dx).norm();
      if (dz_n > 0.5) alpha = 0.5 / dz_n;
      bool accepted = false;
      while (alpha >= opt_.min_step) {
        const VectorXd x_try = x + alpha * step.dx;
        Eval ev_try;
        try {
          ev_try = evaluate(x_try);
        } catch (const std::exception&) {
          alpha *= opt_.backtrack_factor;
          continue;
        }
        const double merit_try = ev_try.J + rho * total_violation(ev_try);
        const bool armijo = descent < 0.0
                                ? merit_try <= merit0 + 1e-4 * alpha * descent
                                : merit_try < merit0 - 1e-12;
        if (armijo) {
          update_bfgs(ev, ev_try, x_try - x);
          x = x_try;
          lambda = lambda + alpha * (step.lambda - lambda);
          ev = std::move(ev_try);
          accepted = true;
          break;
        }
        alpha *= opt_.backtrack_factor;
      }
      if (!accepted) {
        nu_reg = std::max(nu_reg * 10.0, 1e-6);
        if (nu_reg > 1e8) break;
      } else {
        nu_reg = std::max(opt_.reg_floor, nu_reg / 3.0);
        res = kkt_residual(ev, lambda);
      }
      if (opt_.trace)
        std::fprintf(stderr,
                     "mpc iter %3d res %.3e obj %.6e viol %.2e |dx| %.2e nu %.1e acc %d\n",
                     iter, res, ev.J, ev.viol, step.dx.lpNorm<Eigen::Infinity>(), nu_reg,
                     accepted ? 1 : 0);
    }
    if (res < opt_.kkt_tolerance) status = SolveStatus::Converged;
    // a non-converged iterate that is still infeasible means the safety layer
    // must take over
    if (status != SolveStatus::Converged && ev.viol > 1e-4) status = SolveStatus::Infeasible;
    sol.status = status;
    sol.kkt_residual = res;
    fill(sol, ev, x, iter, t0);
    return sol;
  }

  int m() const { return static_cast<int>(rows_.size()); }

 private:
  void fill(MpcSolution& sol, const Eval& ev, const VectorXd& x, int iter,
            std::chrono::steady_clock::time_point t0) const {
    const int N = p_.cfg.N;
    sol.u.resize(2, N);
    for (int k = 0; k < N; ++k) sol.u.col(k) = x.segment<2>(2 * k);
    sol.z = ev.z;
    sol.objective = ev.J;
    sol.iterations = iter;
    sol.solve_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  static double total_violation(const Eval& ev) {
    double sum = 0.0;
    for (int j = 0; j < ev.c.size(); ++j) sum += std::max(0.0, ev.c[j]);
    return sum;
  }

  double kkt_residual(const Eval& ev, const VectorXd& lambda) const {
    double res = (ev.gradJ + ev.A.transpose() * lambda).lpNorm<Eigen::Infinity>();
    for (int j = 0; j < m(); ++j)
      res = std::max(res, std::abs(std::min(lambda[j], -ev.c[j])));
    res = std::max(res, ev.viol);
    return res;
  }

  void update_bfgs(const Eval& before, const Eval& after, const VectorXd& dx) {
    if (p_.cfg.selector != TerminalSelector::GT) return;
    (void)dx;
    const Vector4d s = after.z.col(p_.cfg.N) - before.z.col(p_.cfg.N);
    const Vector4d y = p_.cfg.terminal_weight * (after.g_term - before.g_term);
    const double sn = s.norm();
    if (sn < 1e-10) return;
    const Vector4d Bs = b_term_ * s;
    const double sBs = s.dot(Bs);
    double sy = s.dot(y);
    Vector4d y_eff = y;
    if (sy < 0.2 * sBs) {  // Powell damping keeps the block positive definite
      const double theta = 0.8 * sBs / (sBs - sy);
      y_eff = theta * y + (1.0 - theta) * Bs;
      sy = s.dot(y_eff);
    }
    if (sy < 1e-12 || sBs < 1e-12) return;
    b_term_ += (y_eff * y_eff.transpose()) / sy - (Bs * Bs.transpose()) / sBs;
  }

  void build_constraints(Eval& ev, const VectorXd& x) const {
    const int N = p_.cfg.N;
    ev.c = VectorXd::Zero(m());
    ev.A = MatrixXd::Zero(m(), n_);
    ev.viol = 0.0;
    for (int j = 0; j < m(); ++j) {
      const RowMeta& row = rows_[j];
      double value = 0.0;
      switch (row.kind) {
        case RowKind::InputLo:
          value = u_lb_[row.comp] - x[2 * row.k + row.comp];
          ev.A(j, 2 * row.k + row.comp) = -1.0;
          break;
        case RowKind::InputHi:
          value = x[2 * row.k + row.comp] - u_ub_[row.comp];
          ev.A(j, 2 * row.k + row.comp) = 1.0;
          break;
        case RowKind::RateLo:
        case RowKind::RateHi: {
          const double prev =
              row.k == 0 ? p_.u_prev[row.comp] : x[2 * (row.k - 1) + row.comp];
          const double du = x[2 * row.k + row.comp] - prev;
          const double sign = row.kind == RowKind::RateHi ? 1.0 : -1.0;
          value = sign * du - du_[row.comp];
          ev.A(j, 2 * row.k + row.comp) = sign;
          if (row.k > 0) ev.A(j, 2 * (row.k - 1) + row.comp) = -sign;
          break;
        }
        case RowKind::StateLo:
        case RowKind::StateHi: {
          const double zc = ev.z(row.comp, row.k);
          const double sign = row.kind == RowKind::StateHi ? 1.0 : -1.0;
          value = sign * zc -
                  (row.kind == RowKind::StateHi ? z_ub_[row.comp] : -z_lb_[row.comp]);
          ev.A.row(j) = sign * ev.S.row(4 * (row.k - 1) + row.comp);
          break;
        }
        case RowKind::Collision: {
          const Vector4d z_k = ev.z.col(row.k);
          const geometry::Pose ref = geometry::pose_at(*p_.ref.path, z_k[dynamics::kIdxS]);
          const double kappa = geometry::curvature_at(*p_.ref.path, z_k[dynamics::kIdxS]);
          const double e_y = z_k[dynamics::kIdxEy];
          const Vector2d pos(ref.x - e_y * std::sin(ref.psi), ref.y + e_y * std::cos(ref.psi));
          const Vector2d dp = pos - p_.forecast.positions.col(row.k);
          value = p_.cfg.d_min * p_.cfg.d_min - dp.squaredNorm();
          if (row.k > 0) {
            Eigen::Matrix<double, 2, 4> Jp = Eigen::Matrix<double, 2, 4>::Zero();
            const double factor = 1.0 - kappa * e_y;
            Jp(0, dynamics::kIdxS) = factor * std::cos(ref.psi);
            Jp(1, dynamics::kIdxS) = factor * std::sin(ref.psi);
            Jp(0, dynamics::kIdxEy) = -std::sin(ref.psi);
            Jp(1, dynamics::kIdxEy) = std::cos(ref.psi);
            ev.A.row(j) = -2.0 * dp.transpose() * Jp * ev.S.middleRows(4 * (row.k - 1), 4);
          }
          break;
        }
        case RowKind::Friction: {
          const double v = ev.z(dynamics::kIdxV, row.k);
          const double delta = x[2 * row.k + 1];
          const double tan_d = std::tan(delta);
          const double limit = p_.cfg.vp.mu * p_.cfg.vp.gravity;
          const double wb = p_.cfg.vp.wheelbase;
          const double sign = row.comp == 0 ? 1.0 : -1.0;
          value = sign * v * v * tan_d / (2.0 * wb) - limit;
          ev.A(j, 2 * row.k + 1) = sign * v * v * (1.0 + tan_d * tan_d) / (2.0 * wb);
          if (row.k > 0) {
            ev.A.row(j) +=
                sign * v * tan_d / wb * ev.S.row(4 * (row.k - 1) + dynamics::kIdxV);
          }
          break;
        }
      }
      ev.c[j] = value;
      ev.viol = std::max(ev.viol, value);
    }
  }

  // slack minimization from a braking profile, then from the given start
  bool restore(VectorXd& x, Eval& ev) const {
    const int N = p_.cfg.N;
    auto run_from = [&](VectorXd x0) -> std::pair<double, VectorXd> {
      for (int it = 0; it < 80; ++it) {
        Eval e;
        try {
          e = evaluate(x0);
        } catch (const std::exception&) {
          return {std::numeric_limits<double>::infinity(), x0};
        }
        VectorXd F = VectorXd::Zero(n_);
        MatrixXd H = 1e-8 * MatrixXd::Identity(n_, n_);
        for (int j = 0; j < m(); ++j) {
          if (e.c[j] > 0.0) {
            F += 2.0 * e.c[j] * e.A.row(j).transpose();
            H += 2.0 * e.A.row(j).transpose() * e.A.row(j);
          }
        }
        if (F.lpNorm<Eigen::Infinity>() < 1e-10) return {e.viol, x0};
        VectorXd dx = Eigen::LDLT<MatrixXd>(H).solve(-F);
        auto hinge_sq = [this](const Eval& eval) {
          double sum = 0.0;
          for (int j = 0; j < m(); ++j)
            if (eval.c[j] > 0.0) sum += eval.c[j] * eval.c[j];
          return sum;
        };
        const double sum0 = hinge_sq(e);
        double alpha = 1.0;
        double best = e.viol;
        VectorXd x_best = x0;
        bool moved = false;
        while (alpha > 1e-8) {
          VectorXd x_try = x0 + alpha * dx;
          try {
            const Eval e_try = evaluate(x_try);
            if (hinge_sq(e_try) < sum0 * (1.0 - 1e-4 * alpha)) {
              x_best = x_try;
              best = e_try.viol;
              moved = true;
              break;
            }
          } catch (const std::exception&) {
          }
          alpha *= 0.5;
        }
        if (!moved) return {e.viol, x0};
        x0 = x_best;
        if (best <= 1e-6) return {best, x0};
      }
      try {
        Eval e = evaluate(x0);
        return {e.viol, x0};
      } catch (const std::exception&) {
        return {std::numeric_limits<double>::infinity(), x0};
      }
    };

    // braking start: ramp down to a_min within the rate limit
    VectorXd x_brake = VectorXd::Zero(n_);
    double a = p_.u_prev[0];
    double d = p_.u_prev[1];
    for (int k = 0; k < N; ++k) {
      a = std::max(p_.cfg.vp.a_min, a - p_.cfg.vp.da_max);
      d = d > 0 ? std::max(0.0, d - p_.cfg.vp.ddelta_max)
                : std::min(0.0, d + p_.cfg.vp.ddelta_max);
      x_brake[2 * k] = a;
      x_brake[2 * k + 1] = d;
    }
    auto [viol_brake, xb] = run_from(x_brake);
    if (viol_brake <= 1e-4) {
      x = xb;
      ev = evaluate(x);
      return true;
    }
    auto [viol_cur, xc] = run_from(x);
    if (viol_cur <= 1e-4) {
      x = xc;
      ev = evaluate(x);
      return true;
    }
    return false;
  }

  const FhocpProblem& p_;
  const game::SolverOptions& opt_;
  std::vector<RowMeta> rows_;
  int n_ = 0;
  Vector4d z_lb_, z_ub_;
  Vector2d u_lb_, u_ub_, du_;
  Matrix4d b_term_;
};

}  // namespace

double terminal_cost(TerminalSelector selector, const Vector4d& z_terminal,
                     const Vector4d& z_opp_terminal, const valuefn::TrainedValueFn* vf,
                     dataset::Family family,
                     const std::optional<std::pair<int, int>>& scenario_codes,
                     const geometry::PathSpec* racing_path) {
  if (selector == TerminalSelector::MP) {
    const double s = z_terminal[dynamics::kIdxS];
    const double s_opp = z_opp_terminal[dynamics::kIdxS];
    return family == dataset::Family::Racing ? -(s - s_opp) : -(s + s_opp);
  }
  if (vf == nullptr) throw std::invalid_argument("GT terminal cost needs a trained model");
  const dynamics::JointState js = joint_from_frenet(z_terminal, z_opp_terminal);
  std::optional<std::pair<int, int>> codes;
  if (family == dataset::Family::Intersection) {
    if (!scenario_codes)
      throw std::invalid_argument("intersection GT terminal cost needs scenario encodings");
    codes = scenario_codes;
  }
  const Eigen::VectorXd x = dataset::build_features(
      js, 1, codes, family == dataset::Family::Racing ? racing_path : nullptr);
  return -valuefn::forward(*vf, x);
}

MpcSolution solve_fhocp(const FhocpProblem& p, const game::SolverOptions& options,
                        const std::optional<Matrix2Xd>& warm_start) {
  FhocpSolver solver(p, options);
  return solver.solve(warm_start);
}

dynamics::AgentInput safety_brake(const dynamics::AgentState& state,
                                  const dynamics::VehicleParams& params,
                                  const dynamics::AgentInput& prev_input,
                                  double path_curvature) {
  dynamics::AgentInput out;
  double a = params.a_min;
  a = std::max(a, -state.v / 0.1);  // keep v nonnegative at the nominal step
  a = std::clamp(a, prev_input.a - params.da_max, prev_input.a + params.da_max);
  a = std::clamp(a, params.a_min, params.a_max);
  // curvature feedforward plus proportional lateral/heading correction
  double delta = std::atan(path_curvature * params.wheelbase) - 0.4 * state.e_y -
                 1.0 * state.e_psi;
  delta = std::clamp(delta, prev_input.delta - params.ddelta_max,
                     prev_input.delta + params.ddelta_max);
  delta = std::clamp(delta, params.delta_min, params.delta_max);
  out.a = a;
  out.delta = delta;
  return out;
}

PolicyOutcome policy_step(PolicyState& state, const FhocpProblem& problem,
                          const game::SolverOptions& options) {
  PolicyOutcome out;
  std::optional<Matrix2Xd> warm;
  if (state.has_prev && state.prev.u.cols() == problem.cfg.N) {
    Matrix2Xd shifted(2, problem.cfg.N);
    shifted.leftCols(problem.cfg.N - 1) = state.prev.u.rightCols(problem.cfg.N - 1);
    shifted.col(problem.cfg.N - 1) = state.prev.u.col(problem.cfg.N - 1);
    warm = shifted;
  }
  out.solution = solve_fhocp(problem, options, warm);
  const bool optimal = out.solution.status == SolveStatus::Converged;
  state.has_prev = optimal;
  if (optimal) state.prev = out.solution;

  bool use_mpc = optimal;
  if (state.in_safety) {
    state.feasible_streak = optimal ? state.feasible_streak + 1 : 0;
    if (state.feasible_streak >= 2)
      state.in_safety = false;
    else
      use_mpc = false;
  } else if (!optimal) {
    state.in_safety = true;
    state.feasible_streak = 0;
  }

  if (use_mpc) {
    out.input.a = out.solution.u(0, 0);
    out.input.delta = out.solution.u(1, 0);
    out.safety_applied = false;
  } else {
    dynamics::AgentState st;
    st.v = problem.z_meas[dynamics::kIdxV];
    st.e_psi = problem.z_meas[dynamics::kIdxEpsi];
    st.s = problem.z_meas[dynamics::kIdxS];
    st.e_y = problem.z_meas[dynamics::kIdxEy];
    dynamics::AgentInput prev{state.last_applied[0], state.last_applied[1]};
    out.input = safety_brake(st, problem.cfg.vp, prev,
                             geometry::curvature_at(*problem.ref.path, st.s));
    out.safety_applied = true;
  }
  state.last_applied = Vector2d(out.input.a, out.input.delta);
  return out;
}

game::FeasibilityReport verify_mpc_solution(const FhocpProblem& p, const MpcSolution& sol,
                                            double dyn_tol, double con_tol) {
  game::FeasibilityReport rep;
  const int N = p.cfg.N;
  const auto& vp = p.cfg.vp;
  Vector4d z_next;
  Matrix4d A;
  Eigen::Matrix<double, 4, 2> B;
  rep.max_dynamics_defect = (sol.z.col(0) - p.z_meas).lpNorm<Eigen::Infinity>();
  for (int k = 0; k < N; ++k) {
    dynamics::step_with_jacobian(sol.z.col(k), sol.u.col(k), *p.ref.path, p.cfg.dt, vp,
                                 z_next, A, B);
    rep.max_dynamics_defect =
        std::max(rep.max_dynamics_defect, (sol.z.col(k + 1) - z_next).lpNorm<Eigen::Infinity>());
  }
  auto acc = [&rep](double v) { rep.max_bound_violation = std::max(rep.max_bound_violation, v); };
  for (int k = 0; k < N; ++k) {
    acc(vp.a_min - sol.u(0, k));
    acc(sol.u(0, k) - vp.a_max);
    acc(vp.delta_min - sol.u(1, k));
    acc(sol.u(1, k) - vp.delta_max);
    const Vector2d prev = k == 0 ? p.u_prev : Vector2d(sol.u.col(k - 1));
    acc(std::abs(sol.u(0, k) - prev[0]) - vp.da_max);
    acc(std::abs(sol.u(1, k) - prev[1]) - vp.ddelta_max);
  }
  for (int k = 1; k <= N; ++k) {
    acc(vp.v_min - sol.z(dynamics::kIdxV, k));
    acc(sol.z(dynamics::kIdxV, k) - vp.v_max);
    acc(std::abs(sol.z(dynamics::kIdxEpsi, k)) - vp.e_psi_max);
    acc(std::abs(sol.z(dynamics::kIdxEy, k)) - vp.e_y_max);
  }
  for (int k = 0; k <= N; ++k) {
    const geometry::Pose ref = geometry::pose_at(*p.ref.path, sol.z(dynamics::kIdxS, k));
    const double e_y = sol.z(dynamics::kIdxEy, k);
    const Vector2d pos(ref.x - e_y * std::sin(ref.psi), ref.y + e_y * std::cos(ref.psi));
    rep.max_coupled_violation =
        std::max(rep.max_coupled_violation,
                 p.cfg.d_min - (pos - Vector2d(p.forecast.positions.col(k))).norm());
  }
  if (p.cfg.friction_on) {
    for (int k = 0; k < N; ++k) {
      const auto [af, ar] = dynamics::lateral_accels(sol.z(dynamics::kIdxV, k), sol.u(1, k),
                                                     vp);
      rep.max_extra_violation =
          std::max({rep.max_extra_violation, af - vp.mu * vp.gravity, ar - vp.mu * vp.gravity});
    }
  }
  rep.ok = rep.max_dynamics_defect <= dyn_tol &&
           std::max({rep.max_bound_violation, rep.max_coupled_violation,
                     rep.max_extra_violation}) <= con_tol;
  return rep;
}

}  // namespace gtmpc::mpc
