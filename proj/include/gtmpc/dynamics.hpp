#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

#include "gtmpc/geometry.hpp"

namespace gtmpc::dynamics {

using Eigen::Matrix;
using Eigen::Matrix4d;
using Eigen::Vector2d;
using Eigen::Vector4d;

// state vector order used everywhere: [v, e_psi, s, e_y]
constexpr int kIdxV = 0;
constexpr int kIdxEpsi = 1;
constexpr int kIdxS = 2;
constexpr int kIdxEy = 3;

struct DynamicsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct VehicleParams {
  double wheelbase = 1.5;
  double car_length = 2.0;
  double v_min = 0.0;
  double v_max = 5.0;
  double e_y_max = 1.7;     // symmetric bound, +-half width minus margin
  double e_psi_max = 0.6;   // symmetric bound
  double a_min = -3.0;
  double a_max = 3.0;
  double delta_min = -0.5;
  double delta_max = 0.5;
  double da_max = 1.5;      // |a_k - a_{k-1}| per step
  double ddelta_max = 0.2;  // |delta_k - delta_{k-1}| per step
  double mu = 0.9;
  double gravity = 9.81;

  static VehicleParams intersection_defaults();
  static VehicleParams racing_defaults();
  void validate() const;
};

struct AgentState {
  double v = 0.0;
  double e_psi = 0.0;
  double s = 0.0;
  double e_y = 0.0;
  // global pose, re-derived from the path after every step
  double x = 0.0;
  double y = 0.0;
  double psi = 0.0;

  Vector4d frenet() const { return {v, e_psi, s, e_y}; }
  static AgentState from_frenet(const Vector4d& z, const geometry::PathSpec& path);
};

struct AgentInput {
  double a = 0.0;
  double delta = 0.0;

  Vector2d vec() const { return {a, delta}; }
};

struct JointState {
  std::array<AgentState, 2> agents;
};

// One RK4 step of the Frenet-frame kinematic bicycle. Throws DynamicsError
// when 1 - kappa*e_y drops to zero (state past the center of curvature).
AgentState step(const AgentState& state, const AgentInput& input,
                const geometry::PathSpec& path, double dt, const VehicleParams& params);

// Frenet-only step with exact RK4 tangent propagation, for solvers.
void step_with_jacobian(const Vector4d& z, const Vector2d& u, const geometry::PathSpec& path,
                        double dt, const VehicleParams& params, Vector4d& z_next,
                        Matrix4d& A, Matrix<double, 4, 2>& B);

// Front/rear lateral-acceleration surrogates used in the friction constraint
// a_f, a_r <= mu*g. With l_f = l_r = wheelbase/2 both reduce to
// v^2 * tan(|delta|) / (2 * wheelbase).
std::pair<double, double> lateral_accels(const AgentState& state, const AgentInput& input,
                                         const VehicleParams& params);
std::pair<double, double> lateral_accels(double v, double delta, const VehicleParams& params);

struct BoundViolation {
  std::string name;
  double value = 0.0;
  double bound = 0.0;
  double margin = 0.0;  // positive = amount outside the bound
};

struct BoundsReport {
  bool ok = true;
  std::vector<BoundViolation> violations;
};

// state box, input box, and input-rate box membership (closed sets).
BoundsReport in_bounds(const AgentState& state, const AgentInput& input,
                       const AgentInput& prev_input, const VehicleParams& params);

}  // namespace gtmpc::dynamics
