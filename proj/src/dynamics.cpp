#include "gtmpc/dynamics.hpp"

#include <cmath>

namespace gtmpc::dynamics {

VehicleParams VehicleParams::intersection_defaults() { return VehicleParams{}; }

VehicleParams VehicleParams::racing_defaults() {
  VehicleParams p;
  p.v_max = 15.0;
  p.e_y_max = 2.5;
  return p;
}

void VehicleParams::validate() const {
  if (wheelbase <= 0 || car_length <= 0) throw DynamicsError("vehicle lengths must be positive");
  if (!(v_min < v_max) || !(a_min < a_max) || !(delta_min < delta_max))
    throw DynamicsError("lower bounds must be below upper bounds");
  if (e_y_max <= 0 || e_psi_max <= 0 || da_max <= 0 || ddelta_max <= 0)
    throw DynamicsError("box half-widths must be positive");
  if (mu <= 0 || gravity <= 0) throw DynamicsError("mu and g must be positive");
}

AgentState AgentState::from_frenet(const Vector4d& z, const geometry::PathSpec& path) {
  AgentState st;
  st.v = z[kIdxV];
  st.e_psi = z[kIdxEpsi];
  st.s = z[kIdxS];
  st.e_y = z[kIdxEy];
  const geometry::Pose ref = geometry::pose_at(path, st.s);
  st.x = ref.x - st.e_y * std::sin(ref.psi);
  st.y = ref.y + st.e_y * std::cos(ref.psi);
  st.psi = geometry::wrap_angle(ref.psi + st.e_psi);
  return st;
}

namespace {

// continuous-time Frenet bicycle: zdot = f(z, u) with z = [v, e_psi, s, e_y]
inline Vector4d ode(const Vector4d& z, const Vector2d& u, double kappa, double wheelbase) {
  const double v = z[kIdxV];
  const double e_psi = z[kIdxEpsi];
  const double e_y = z[kIdxEy];
  const double denom = 1.0 - kappa * e_y;
  if (denom <= 1e-6) throw DynamicsError("1 - kappa*e_y <= 0: state beyond center of curvature");
  const double s_dot = v * std::cos(e_psi) / denom;
  Vector4d dz;
  dz[kIdxV] = u[0];
  dz[kIdxEpsi] = v * std::tan(u[1]) / wheelbase - kappa * s_dot;
  dz[kIdxS] = s_dot;
  dz[kIdxEy] = v * std::sin(e_psi);
  return dz;
}

// continuous Jacobians; kappa treated as locally constant within the step
inline void ode_jacobian(const Vector4d& z, const Vector2d& u, double kappa, double wheelbase,
                         Matrix4d& Jz, Matrix<double, 4, 2>& Ju) {
  const double v = z[kIdxV];
  const double e_psi = z[kIdxEpsi];
  const double e_y = z[kIdxEy];
  const double denom = 1.0 - kappa * e_y;
  if (denom <= 1e-6) throw DynamicsError("1 - kappa*e_y <= 0: state beyond center of curvature");
  const double cos_ep = std::cos(e_psi);
  const double sin_ep = std::sin(e_psi);
  const double tan_d = std::tan(u[1]);
  const double sdot_v = cos_ep / denom;
  const double sdot_epsi = -v * sin_ep / denom;
  const double sdot_ey = v * cos_ep * kappa / (denom * denom);
  Jz.setZero();
  Ju.setZero();
  // v row: dv/dt = a
  Ju(kIdxV, 0) = 1.0;
  // e_psi row
  Jz(kIdxEpsi, kIdxV) = tan_d / wheelbase - kappa * sdot_v;
  Jz(kIdxEpsi, kIdxEpsi) = -kappa * sdot_epsi;
  Jz(kIdxEpsi, kIdxEy) = -kappa * sdot_ey;
  Ju(kIdxEpsi, 1) = v / (wheelbase * std::cos(u[1]) * std::cos(u[1]));
  // s row
  Jz(kIdxS, kIdxV) = sdot_v;
  Jz(kIdxS, kIdxEpsi) = sdot_epsi;
  Jz(kIdxS, kIdxEy) = sdot_ey;
  // e_y row
  Jz(kIdxEy, kIdxV) = sin_ep;
  Jz(kIdxEy, kIdxEpsi) = v * cos_ep;
}

}  // namespace

namespace {

// substeps keep the defect against a fine-step oracle below 1e-6 per step at
// racing speeds
inline int substeps_for(double dt) {
  return std::max(1, static_cast<int>(std::ceil(dt / 0.05 - 1e-12)));
}

inline Vector4d rk4_once(const Vector4d& z, const Vector2d& u, double kappa, double wb,
                         double h) {
  const Vector4d k1 = ode(z, u, kappa, wb);
  const Vector4d k2 = ode(z + 0.5 * h * k1, u, kappa, wb);
  const Vector4d k3 = ode(z + 0.5 * h * k2, u, kappa, wb);
  const Vector4d k4 = ode(z + h * k3, u, kappa, wb);
  return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline void rk4_once_jac(const Vector4d& z, const Vector2d& u, double kappa, double wb,
                         double h, Vector4d& z_next, Matrix4d& A, Matrix<double, 4, 2>& B) {
  Matrix4d J1, J2, J3, J4;
  Matrix<double, 4, 2> G1, G2, G3, G4;
  const Vector4d k1 = ode(z, u, kappa, wb);
  ode_jacobian(z, u, kappa, wb, J1, G1);
  const Vector4d z2 = z + 0.5 * h * k1;
  const Vector4d k2 = ode(z2, u, kappa, wb);
  ode_jacobian(z2, u, kappa, wb, J2, G2);
  const Vector4d z3 = z + 0.5 * h * k2;
  const Vector4d k3 = ode(z3, u, kappa, wb);
  ode_jacobian(z3, u, kappa, wb, J3, G3);
  const Vector4d z4 = z + h * k3;
  const Vector4d k4 = ode(z4, u, kappa, wb);
  ode_jacobian(z4, u, kappa, wb, J4, G4);

  const Matrix4d I = Matrix4d::Identity();
  const Matrix4d D1 = J1;
  const Matrix<double, 4, 2> E1 = G1;
  const Matrix4d D2 = J2 * (I + 0.5 * h * D1);
  const Matrix<double, 4, 2> E2 = G2 + J2 * (0.5 * h * E1);
  const Matrix4d D3 = J3 * (I + 0.5 * h * D2);
  const Matrix<double, 4, 2> E3 = G3 + J3 * (0.5 * h * E2);
  const Matrix4d D4 = J4 * (I + h * D3);
  const Matrix<double, 4, 2> E4 = G4 + J4 * (h * E3);

  z_next = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  A = I + (h / 6.0) * (D1 + 2.0 * D2 + 2.0 * D3 + D4);
  B = (h / 6.0) * (E1 + 2.0 * E2 + 2.0 * E3 + E4);
}

}  // namespace

AgentState step(const AgentState& state, const AgentInput& input,
                const geometry::PathSpec& path, double dt, const VehicleParams& params) {
  if (dt <= 0) throw DynamicsError("dt must be positive");
  Vector4d z = state.frenet();
  const Vector2d u = input.vec();
  const int nsub = substeps_for(dt);
  const double h = dt / nsub;
  for (int i = 0; i < nsub; ++i) {
    const double kappa = geometry::curvature_at(path, z[kIdxS]);
    z = rk4_once(z, u, kappa, params.wheelbase, h);
  }
  if (z[kIdxV] < 0.0) z[kIdxV] = 0.0;  // no reverse gear
  return AgentState::from_frenet(z, path);
}

void step_with_jacobian(const Vector4d& z, const Vector2d& u, const geometry::PathSpec& path,
                        double dt, const VehicleParams& params, Vector4d& z_next,
                        Matrix4d& A, Matrix<double, 4, 2>& B) {
  const int nsub = substeps_for(dt);
  const double h = dt / nsub;
  Vector4d cur = z;
  A.setIdentity();
  B.setZero();
  for (int i = 0; i < nsub; ++i) {
    const double kappa = geometry::curvature_at(path, cur[kIdxS]);
    Vector4d nxt;
    Matrix4d Ai;
    Matrix<double, 4, 2> Bi;
    rk4_once_jac(cur, u, kappa, params.wheelbase, h, nxt, Ai, Bi);
    A = Ai * A;
    B = Ai * B + Bi;
    cur = nxt;
  }
  z_next = cur;
}

std::pair<double, double> lateral_accels(double v, double delta, const VehicleParams& params) {
  // kinematic surrogate: yaw rate * v split over the axles, l_f = l_r = wb/2
  const double base = v * v * std::abs(std::tan(delta)) / params.wheelbase;
  return {0.5 * base, 0.5 * base};
}

std::pair<double, double> lateral_accels(const AgentState& state, const AgentInput& input,
                                         const VehicleParams& params) {
  return lateral_accels(state.v, input.delta, params);
}

BoundsReport in_bounds(const AgentState& state, const AgentInput& input,
                       const AgentInput& prev_input, const VehicleParams& params) {
  BoundsReport report;
  auto check = [&report](const char* name, double value, double lo, double hi) {
    if (value < lo) report.violations.push_back({name, value, lo, lo - value});
    if (value > hi) report.violations.push_back({name, value, hi, value - hi});
  };
  check("v", state.v, params.v_min, params.v_max);
  check("e_psi", state.e_psi, -params.e_psi_max, params.e_psi_max);
  check("e_y", state.e_y, -params.e_y_max, params.e_y_max);
  check("a", input.a, params.a_min, params.a_max);
  check("delta", input.delta, params.delta_min, params.delta_max);
  check("da", input.a - prev_input.a, -params.da_max, params.da_max);
  check("ddelta", input.delta - prev_input.delta, -params.ddelta_max, params.ddelta_max);
  report.ok = report.violations.empty();
  return report;
}

}  // namespace gtmpc::dynamics
