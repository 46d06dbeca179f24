#pragma once

#include <Eigen/Dense>

#include <optional>

#include "gtmpc/dataset.hpp"
#include "gtmpc/dynamics.hpp"
#include "gtmpc/game.hpp"
#include "gtmpc/geometry.hpp"
#include "gtmpc/valuefn.hpp"

namespace gtmpc::mpc {

using Eigen::Matrix2Xd;
using Eigen::Matrix4Xd;
using Eigen::Vector2d;
using Eigen::Vector4d;

enum class TerminalSelector { GT, MP };

TerminalSelector selector_from_string(const std::string& s);
std::string to_string(TerminalSelector s);

struct MpcConfig {
  int N = 10;
  double dt = 0.1;
  Vector4d q_diag{0.5, 2.0, 0.0, 2.0};  // tracking weights on [v, e_psi, s, e_y]
  Vector2d r1_diag{0.05, 1.0};
  Vector2d r2_diag{0.1, 2.0};
  double d_min = 3.0;
  TerminalSelector selector = TerminalSelector::MP;
  bool friction_on = false;
  double terminal_weight = 1.0;
  dynamics::VehicleParams vp;
};

// opponent prediction over the horizon: Frenet states in the opponent's own
// frame plus global positions for the collision constraint
struct Forecast {
  Matrix4Xd states;     // 4 x (N+1)
  Matrix2Xd positions;  // 2 x (N+1)
};

struct ReferenceSpec {
  const geometry::PathSpec* path = nullptr;             // the agent's frame path
  const geometry::VelocityProfile* v_profile = nullptr;  // null: constant v_ref
  double v_ref_const = 5.0;
};

struct FhocpProblem {
  dataset::Family family = dataset::Family::Intersection;
  Vector4d z_meas;
  Forecast forecast;
  ReferenceSpec ref;
  MpcConfig cfg;
  const valuefn::TrainedValueFn* vf = nullptr;
  std::optional<std::pair<int, int>> scenario_codes;  // (sc_own, sc_opp)
  Vector2d u_prev{0.0, 0.0};
};

using SolveStatus = game::SolveStatus;  // Converged plays the role of Optimal

struct MpcSolution {
  Matrix2Xd u;  // 2 x N
  Matrix4Xd z;  // 4 x (N+1)
  SolveStatus status = SolveStatus::MaxIterations;
  double objective = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
  double solve_time = 0.0;
};

// Assembles and validates the horizon problem. Throws std::invalid_argument on
// inconsistent shapes or a missing model for the GT selector.
FhocpProblem build_fhocp(const Vector4d& z_meas, const Forecast& forecast,
                         const ReferenceSpec& ref, const MpcConfig& cfg,
                         const valuefn::TrainedValueFn* vf, dataset::Family family,
                         const std::optional<std::pair<int, int>>& scenario_codes,
                         const Vector2d& u_prev);

// Terminal cost-to-go: MP racing -(s - s_opp), MP intersection -(s + s_opp),
// GT -forward(vf, features).
double terminal_cost(TerminalSelector selector, const Vector4d& z_terminal,
                     const Vector4d& z_opp_terminal, const valuefn::TrainedValueFn* vf,
                     dataset::Family family,
                     const std::optional<std::pair<int, int>>& scenario_codes,
                     const geometry::PathSpec* racing_path);

// SQP with exact dynamics linearization, Gauss-Newton stage Hessian, damped
// BFGS curvature for the learned terminal block, and hard constraints with a
// restoration-based infeasibility test.
MpcSolution solve_fhocp(const FhocpProblem& p, const game::SolverOptions& options,
                        const std::optional<Matrix2Xd>& warm_start = {});

// maximum braking clipped so v stays nonnegative, steering by a proportional
// law toward e_y -> 0; both respect the box and rate sets w.r.t. prev_input
dynamics::AgentInput safety_brake(const dynamics::AgentState& state,
                                  const dynamics::VehicleParams& params,
                                  const dynamics::AgentInput& prev_input,
                                  double path_curvature);

struct PolicyState {
  MpcSolution prev;
  bool has_prev = false;
  Vector2d last_applied{0.0, 0.0};
  bool in_safety = false;
  int feasible_streak = 0;
};

struct PolicyOutcome {
  dynamics::AgentInput input;
  MpcSolution solution;
  bool safety_applied = false;
};

// One closed-loop policy tick: warm-started FHOCP solve, first input on
// success, safety braking otherwise. Safety persists until the FHOCP is
// feasible for 2 consecutive ticks.
PolicyOutcome policy_step(PolicyState& state, const FhocpProblem& problem,
                          const game::SolverOptions& options);

// independent verifier for Optimal solutions (dynamics defect, boxes, rate,
// collision distance, friction)
game::FeasibilityReport verify_mpc_solution(const FhocpProblem& p, const MpcSolution& sol,
                                            double dyn_tol = 1e-8, double con_tol = 1e-6);

}  // namespace gtmpc::mpc
