#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gtmpc/dynamics.hpp"
#include "gtmpc/geometry.hpp"
#include "gtmpc/rng.hpp"

using namespace gtmpc;
using namespace gtmpc::dynamics;
using Eigen::Vector2d;
using Eigen::Vector4d;

namespace {

geometry::PathSpec straight_path() {
  geometry::Segment seg;
  seg.kind = geometry::SegmentKind::Line;
  seg.length = 500.0;
  seg.start = {0.0, 0.0, 0.0};
  return geometry::make_path({seg}, 4.0);
}

geometry::PathSpec arc_path(double radius = 12.0) {
  geometry::Segment seg;
  seg.kind = geometry::SegmentKind::Arc;
  seg.curvature = 1.0 / radius;
  seg.length = radius * M_PI;  // half circle
  seg.start = {0.0, 0.0, 0.0};
  return geometry::make_path({seg}, 3.0);
}

// independent fine-step oracle: explicit midpoint rule, written directly from
// the continuous equations
Vector4d euler_fine(const Vector4d& z0, const Vector2d& u, const geometry::PathSpec& path,
                    double dt, const VehicleParams& p, double h = 1e-5) {
  auto f = [&](const Vector4d& z) {
    const double kappa = geometry::curvature_at(path, z[kIdxS]);
    const double denom = 1.0 - kappa * z[kIdxEy];
    const double s_dot = z[kIdxV] * std::cos(z[kIdxEpsi]) / denom;
    Vector4d dz;
    dz[kIdxV] = u[0];
    dz[kIdxEpsi] = z[kIdxV] * std::tan(u[1]) / p.wheelbase - kappa * s_dot;
    dz[kIdxS] = s_dot;
    dz[kIdxEy] = z[kIdxV] * std::sin(z[kIdxEpsi]);
    return dz;
  };
  Vector4d z = z0;
  const int n = static_cast<int>(std::round(dt / h));
  for (int i = 0; i < n; ++i) {
    const Vector4d mid = z + 0.5 * h * f(z);
    z += h * f(mid);
  }
  return z;
}

}  // namespace

TEST_CASE("rest state with zero input is a fixed point") {
  const auto path = straight_path();
  VehicleParams p = VehicleParams::racing_defaults();
  AgentState st = AgentState::from_frenet(Vector4d(0.0, 0.0, 10.0, 0.5), path);
  const AgentState next = step(st, {0.0, 0.0}, path, 0.1, p);
  CHECK(next.v == 0.0);
  CHECK(next.s == doctest::Approx(10.0).epsilon(1e-15));
  CHECK(next.e_y == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("constant velocity straight motion advances s exactly") {
  const auto path = straight_path();
  VehicleParams p = VehicleParams::racing_defaults();
  AgentState st = AgentState::from_frenet(Vector4d(1.0, 0.0, 0.0, 0.0), path);
  const AgentState next = step(st, {0.0, 0.0}, path, 0.1, p);
  CHECK(next.s == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(next.v == 1.0);
}

TEST_CASE("RK4 step matches the fine Euler oracle") {
  const auto path = arc_path();
  VehicleParams p = VehicleParams::racing_defaults();
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    Vector4d z;
    z[kIdxV] = rng.uniform(1.0, 10.0);
    z[kIdxEpsi] = rng.uniform(-0.3, 0.3);
    z[kIdxS] = rng.uniform(1.0, 30.0);
    z[kIdxEy] = rng.uniform(-2.0, 2.0);
    const Vector2d u(rng.uniform(-2.0, 2.0), rng.uniform(-0.3, 0.3));
    const AgentState st = AgentState::from_frenet(z, path);
    const AgentState next = step(st, {u[0], u[1]}, path, 0.1, p);
    const Vector4d oracle = euler_fine(z, u, path, 0.1, p);
    CHECK((next.frenet() - oracle).lpNorm<Eigen::Infinity>() < 1e-6);
  }
}

TEST_CASE("halving dt shrinks the defect against the oracle") {
  const auto path = arc_path();
  VehicleParams p = VehicleParams::racing_defaults();
  const Vector4d z(6.0, 0.1, 5.0, 0.8);
  const Vector2d u(1.0, 0.2);
  const AgentState st = AgentState::from_frenet(z, path);
  double prev_err = 1e9;
  for (double dt : {0.2, 0.1, 0.05, 0.025}) {
    const AgentState next = step(st, {u[0], u[1]}, path, dt, p);
    const Vector4d oracle = euler_fine(z, u, path, dt, p);
    const double err = (next.frenet() - oracle).lpNorm<Eigen::Infinity>();
    CHECK(err < prev_err);
    prev_err = err;
  }
}

TEST_CASE("dynamics jacobians match finite differences") {
  const auto path = arc_path();
  VehicleParams p = VehicleParams::racing_defaults();
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Vector4d z;
    z[kIdxV] = rng.uniform(1.0, 10.0);
    z[kIdxEpsi] = rng.uniform(-0.3, 0.3);
    z[kIdxS] = rng.uniform(1.0, 30.0);
    z[kIdxEy] = rng.uniform(-2.0, 2.0);
    const Vector2d u(rng.uniform(-2.0, 2.0), rng.uniform(-0.3, 0.3));
    Vector4d z_next;
    Eigen::Matrix4d A;
    Eigen::Matrix<double, 4, 2> B;
    step_with_jacobian(z, u, path, 0.1, p, z_next, A, B);
    const double h = 1e-7;
    for (int c = 0; c < 4; ++c) {
      Vector4d zp = z, zm = z;
      zp[c] += h;
      zm[c] -= h;
      Vector4d fp, fm;
      Eigen::Matrix4d tmpA;
      Eigen::Matrix<double, 4, 2> tmpB;
      step_with_jacobian(zp, u, path, 0.1, p, fp, tmpA, tmpB);
      step_with_jacobian(zm, u, path, 0.1, p, fm, tmpA, tmpB);
      CHECK((A.col(c) - (fp - fm) / (2.0 * h)).lpNorm<Eigen::Infinity>() < 1e-6);
    }
    for (int c = 0; c < 2; ++c) {
      Vector2d up = u, um = u;
      up[c] += h;
      um[c] -= h;
      Vector4d fp, fm;
      Eigen::Matrix4d tmpA;
      Eigen::Matrix<double, 4, 2> tmpB;
      step_with_jacobian(z, up, path, 0.1, p, fp, tmpA, tmpB);
      step_with_jacobian(z, um, path, 0.1, p, fm, tmpA, tmpB);
      CHECK((B.col(c) - (fp - fm) / (2.0 * h)).lpNorm<Eigen::Infinity>() < 1e-6);
    }
  }
}

TEST_CASE("singularity beyond the center of curvature throws") {
  const auto path = arc_path(5.0);
  VehicleParams p = VehicleParams::racing_defaults();
  p.e_y_max = 10.0;
  const AgentState st = AgentState::from_frenet(Vector4d(2.0, 0.0, 3.0, 4.999), path);
  CHECK_THROWS_AS(step(st, {0.0, 0.0}, path, 0.1, p), DynamicsError);
}

TEST_CASE("lateral acceleration surrogates") {
  VehicleParams p = VehicleParams::racing_defaults();
  auto [af0, ar0] = lateral_accels(10.0, 0.0, p);
  CHECK(af0 == 0.0);
  CHECK(ar0 == 0.0);

  // boundary by construction: a_f = mu g at tan(delta) = 2 wb mu g / v^2
  const double v = 10.0;
  const double delta = std::atan(2.0 * p.wheelbase * p.mu * p.gravity / (v * v));
  auto [af, ar] = lateral_accels(v, delta, p);
  CHECK(af == doctest::Approx(p.mu * p.gravity).epsilon(1e-12));
  CHECK(ar == doctest::Approx(p.mu * p.gravity).epsilon(1e-12));

  // monotone in |delta| and v over a grid
  double prev = -1.0;
  for (double d = 0.0; d <= 0.5; d += 0.05) {
    auto [a, _] = lateral_accels(8.0, d, p);
    CHECK(a >= prev);
    prev = a;
  }
  prev = -1.0;
  for (double vv = 0.0; vv <= 15.0; vv += 1.0) {
    auto [a, _] = lateral_accels(vv, 0.3, p);
    CHECK(a >= prev);
    prev = a;
  }
}

TEST_CASE("in_bounds reports named violations and closed-set boundaries") {
  VehicleParams p = VehicleParams::intersection_defaults();
  AgentState st;
  st.v = 2.5;
  const AgentInput input{0.0, 0.0};
  const AgentInput prev{0.0, 0.0};
  CHECK(in_bounds(st, input, prev, p).ok);

  AgentState fast = st;
  fast.v = p.v_max + 0.1;
  const auto rep = in_bounds(fast, input, prev, p);
  CHECK(!rep.ok);
  REQUIRE(rep.violations.size() == 1);
  CHECK(rep.violations[0].name == "v");
  CHECK(rep.violations[0].margin == doctest::Approx(0.1));

  // rate exactly at the bound is inside the closed set
  const AgentInput at_bound{p.da_max, 0.0};
  CHECK(in_bounds(st, at_bound, prev, p).ok);
}

TEST_CASE("step is deterministic and keeps the global pose consistent") {
  const auto path = arc_path();
  VehicleParams p = VehicleParams::racing_defaults();
  AgentState a = AgentState::from_frenet(Vector4d(5.0, 0.05, 2.0, 0.5), path);
  AgentState b = a;
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    const AgentInput u{rng.uniform(-1.0, 1.0), rng.uniform(-0.2, 0.2)};
    a = step(a, u, path, 0.1, p);
    b = step(b, u, path, 0.1, p);
    CHECK(a.frenet() == b.frenet());
    if (a.s <= path.total_length) {
      const geometry::Pose pose = geometry::frenet_to_cartesian(path, a.s, a.e_y, a.e_psi);
      CHECK(std::abs(pose.x - a.x) < 1e-9);
      CHECK(std::abs(pose.y - a.y) < 1e-9);
      CHECK(std::abs(geometry::wrap_angle(pose.psi - a.psi)) < 1e-9);
    }
  }
}
