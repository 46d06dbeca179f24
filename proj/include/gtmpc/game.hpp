#pragma once

#include <Eigen/Dense>

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gtmpc/dynamics.hpp"
#include "gtmpc/geometry.hpp"

namespace gtmpc::game {

using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::VectorXd;

// Discrete-time agent model with exact Jacobians. Kept as callbacks so test
// games (scalar LQ) and vehicle games share one solver.
struct AgentModel {
  int nz = 0;
  int nu = 0;
  std::function<void(int k, const VectorXd& z, const VectorXd& u, VectorXd& z_next,
                     MatrixXd& A, MatrixXd& B)>
      step;
  // Cartesian projection P(z) for coupled distance constraints; 2 x nz Jacobian.
  // Leave empty when the game has no coupled constraints.
  std::function<void(const VectorXd& z, Vector2d& p, MatrixXd& Jp)> position;
};

// Quadratic tracking + input + input-rate stage costs, linear own terminal
// progress term, optional bilinear terminal coupling:
//   J^i = sum_k (z_k - ref_k)' Q (z_k - ref_k) + u_k' R1 u_k + du_k' R2 du_k
//         + q_term' z_N + z_N' P_cross z_N^opp + r_cross' z_N^opp
struct AgentCost {
  MatrixXd Q;
  std::function<VectorXd(int k, const VectorXd& z)> z_ref;  // refreshed each iterate
  // d z_ref / d z for state-dependent references (exact gradients need it)
  std::function<MatrixXd(int k, const VectorXd& z)> z_ref_jac;
  MatrixXd R1;
  MatrixXd R2;
  VectorXd u_prev;
  VectorXd q_term;
  MatrixXd P_cross;  // 0x0 when absent
  VectorXd r_cross;  // 0 when absent; constant under own deviations
};

// Box bounds; +-kUnbounded entries are skipped.
constexpr double kUnbounded = 1e30;

struct AgentBounds {
  VectorXd z_lb, z_ub;
  VectorXd u_lb, u_ub;
  VectorXd du_lb, du_ub;
};

// Additional per-stage inequality constraints g(z_k, u_k) <= 0 (e.g. friction).
struct StageConstraintFn {
  int count = 0;
  std::function<void(int k, const VectorXd& z, const VectorXd& u, VectorXd& g,
                     MatrixXd& Gz, MatrixXd& Gu)>
      eval;
};

struct GameSpec {
  int horizon = 1;
  double dt = 0.1;
  std::array<AgentModel, 2> model;
  std::array<AgentCost, 2> cost;
  std::array<AgentBounds, 2> bounds;
  std::array<VectorXd, 2> z0;
  double d_min = 0.0;  // coupled distance constraint active when > 0
  std::array<StageConstraintFn, 2> extra;
  // optional stabilizing feedback used to build evaluable start sequences
  // (zero inputs can leave the model domain, e.g. coasting off a corner)
  std::array<std::function<VectorXd(int k, const VectorXd& z)>, 2> start_policy;
};

enum class SolveStatus { Converged, MaxIterations, Infeasible, NonConvergent };

std::string to_string(SolveStatus s);

struct GneSolution {
  std::array<MatrixXd, 2> u;  // nu x N
  std::array<MatrixXd, 2> z;  // nz x (N+1)
  SolveStatus status = SolveStatus::MaxIterations;
  double kkt_residual = 0.0;
  int iterations = 0;
  double solve_time = 0.0;
  std::array<double, 2> cost{0.0, 0.0};
  double potential = 0.0;  // sum of own cost parts
};

struct SolverOptions {
  int max_iterations = 400;
  double kkt_tolerance = 1e-8;
  double merit_penalty = 10.0;
  double backtrack_factor = 0.5;
  double min_step = 1e-12;
  double reg_floor = 1e-8;
  double active_tol = 1e-9;
  int max_working_set_updates = 60;
  // iterated best response
  int max_sweeps = 120;
  double ibr_tolerance = 1e-10;
  // per-iteration residual trace on stderr
  bool trace = false;
};

// Newton-type SQP on the stacked first-order conditions of both agents'
// problems; shared constraints carry one multiplier (normalized equilibrium).
GneSolution solve_gne_sqp(const GameSpec& game, const SolverOptions& options,
                          const std::optional<std::array<MatrixXd, 2>>& warm_start = {});

// Single-NLP path for potential games (costs must be separable: P_cross = 0).
GneSolution solve_potential_nlp(const GameSpec& game, const SolverOptions& options,
                                const std::optional<std::array<MatrixXd, 2>>& warm_start = {});

// Gauss-Seidel best-response sweeps; reports NonConvergent on oscillation.
GneSolution iterated_best_response(const GameSpec& game, const SolverOptions& options);

// Rolls agent i's inputs through its model from z0.
MatrixXd rollout(const GameSpec& game, int agent, const MatrixXd& u);

// Full cost of agent i given both trajectories (includes coupling terms).
double agent_cost(const GameSpec& game, int agent, const MatrixXd& z_own,
                  const MatrixXd& u_own, const MatrixXd& z_opp);

// Sum of both agents' separable cost parts (the potential for P_cross = 0).
double potential_value(const GameSpec& game, const std::array<MatrixXd, 2>& z,
                       const std::array<MatrixXd, 2>& u);

struct FeasibilityReport {
  bool ok = false;
  double max_dynamics_defect = 0.0;
  double max_bound_violation = 0.0;
  double max_coupled_violation = 0.0;
  double max_extra_violation = 0.0;
};

// Standalone verifier, independent of solver bookkeeping.
FeasibilityReport verify_solution(const GameSpec& game, const GneSolution& sol,
                                  double dyn_tol = 1e-8, double con_tol = 1e-6);

struct GneCheckReport {
  bool pass = false;
  int tested = 0;
  int improving = 0;
  double worst_improvement = 0.0;  // largest cost decrease found
};

// Random feasible unilateral input perturbations; fails when any perturbation
// lowers that agent's cost by more than epsilon.
GneCheckReport check_gne(const GameSpec& game, const GneSolution& candidate,
                         int n_perturbations, double epsilon, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Model builders

// Frenet kinematic bicycle on a path (racing games, MPC).
AgentModel vehicle_model(const geometry::PathSpec& path, const dynamics::VehicleParams& params,
                         double dt);

// Longitudinal double integrator along a route: z = [s, v], u = [a]. Vehicles
// hold the centerline, so steering is implied by the path and the coupled
// constraint sees positions through the route geometry.
AgentModel longitudinal_model(const geometry::PathSpec& path, double dt);

// friction constraint rows a_f, a_r <= mu*g for the vehicle model
StageConstraintFn friction_constraint(const dynamics::VehicleParams& params);

}  // namespace gtmpc::game
