#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gtmpc/dataset.hpp"
#include "gtmpc/game.hpp"
#include "gtmpc/rng.hpp"

using namespace gtmpc;
using namespace gtmpc::game;
using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::VectorXd;

namespace {

// 1-step scalar game: z1 = z0 + u, J^i = z1^2 + u^2 + c * z1 * z1_opp.
// Stationarity: 2(z0+u) + 2u + c(z0_opp + u_opp) = 0 for each agent, a 2x2
// linear system solved exactly as the oracle.
GameSpec scalar_game(double z0_1, double z0_2, double coupling) {
  GameSpec g;
  g.horizon = 1;
  g.dt = 1.0;
  for (int a = 0; a < 2; ++a) {
    AgentModel m;
    m.nz = 1;
    m.nu = 1;
    m.step = [](int, const VectorXd& z, const VectorXd& u, VectorXd& z_next, MatrixXd& A,
                MatrixXd& B) {
      z_next = z + u;
      A = MatrixXd::Identity(1, 1);
      B = MatrixXd::Identity(1, 1);
    };
    g.model[a] = m;
    AgentCost cost;
    cost.Q = MatrixXd::Identity(1, 1);
    cost.R1 = MatrixXd::Identity(1, 1);
    cost.R2 = MatrixXd::Zero(1, 1);
    cost.u_prev = VectorXd::Zero(1);
    cost.P_cross = MatrixXd::Constant(1, 1, coupling);
    g.cost[a] = cost;
    AgentBounds b;
    b.z_lb = VectorXd::Constant(1, -kUnbounded);
    b.z_ub = VectorXd::Constant(1, kUnbounded);
    b.u_lb = VectorXd::Constant(1, -kUnbounded);
    b.u_ub = VectorXd::Constant(1, kUnbounded);
    b.du_lb = VectorXd::Constant(1, -kUnbounded);
    b.du_ub = VectorXd::Constant(1, kUnbounded);
    g.bounds[a] = b;
    g.z0[a] = VectorXd::Constant(1, a == 0 ? z0_1 : z0_2);
  }
  return g;
}

// analytic Nash of the scalar game
Vector2d scalar_game_nash(double z0_1, double z0_2, double c) {
  Eigen::Matrix2d M;
  M << 4.0, c, c, 4.0;
  const Vector2d rhs(-2.0 * z0_1 - c * z0_2, -2.0 * z0_2 - c * z0_1);
  return M.colPivHouseholderQr().solve(rhs);
}

}  // namespace

TEST_CASE("scalar coupled game matches the analytic Nash") {
  const GameSpec g = scalar_game(1.0, 1.0, 1.0);
  SolverOptions opt;
  const GneSolution sol = solve_gne_sqp(g, opt);
  REQUIRE(sol.status == SolveStatus::Converged);
  const Vector2d star = scalar_game_nash(1.0, 1.0, 1.0);
  CHECK(sol.u[0](0, 0) == doctest::Approx(star[0]).epsilon(1e-8));
  CHECK(sol.u[1](0, 0) == doctest::Approx(star[1]).epsilon(1e-8));
  CHECK(sol.kkt_residual < opt.kkt_tolerance);
}

TEST_CASE("randomized scalar games: SQP and best response match the oracle") {
  Rng rng(123);
  SolverOptions opt;
  for (int trial = 0; trial < 25; ++trial) {
    const double z1 = rng.uniform(-2.0, 2.0);
    const double z2 = rng.uniform(-2.0, 2.0);
    const double c = rng.uniform(-1.5, 1.5);
    const GameSpec g = scalar_game(z1, z2, c);
    const Vector2d star = scalar_game_nash(z1, z2, c);

    const GneSolution sqp = solve_gne_sqp(g, opt);
    REQUIRE(sqp.status == SolveStatus::Converged);
    CHECK(std::abs(sqp.u[0](0, 0) - star[0]) < 1e-6);
    CHECK(std::abs(sqp.u[1](0, 0) - star[1]) < 1e-6);

    const GneSolution ibr = iterated_best_response(g, opt);
    REQUIRE(ibr.status == SolveStatus::Converged);
    CHECK(std::abs(ibr.u[0](0, 0) - star[0]) < 1e-6);
    CHECK(std::abs(ibr.u[1](0, 0) - star[1]) < 1e-6);
  }
}

TEST_CASE("decoupled game equals the independent optima") {
  // no cross terms: each agent minimizes z1^2 + u^2 alone; analytic optimum
  // u = -z0/2
  const GameSpec g = scalar_game(1.5, -0.7, 0.0);
  SolverOptions opt;
  const GneSolution sol = solve_gne_sqp(g, opt);
  REQUIRE(sol.status == SolveStatus::Converged);
  CHECK(sol.u[0](0, 0) == doctest::Approx(-0.75).epsilon(1e-8));
  CHECK(sol.u[1](0, 0) == doctest::Approx(0.35).epsilon(1e-8));

  const GneSolution ibr = iterated_best_response(g, opt);
  CHECK(ibr.status == SolveStatus::Converged);
  CHECK(ibr.iterations <= 3);  // decoupled: converges after one refining sweep
  CHECK(sol.potential == doctest::Approx(ibr.potential).epsilon(1e-8));
}

TEST_CASE("best response oscillation is reported, not mislabeled") {
  // strong coupling |c| > 2 makes the best-response map expansive
  const GameSpec g = scalar_game(1.0, -1.0, 3.5);
  SolverOptions opt;
  opt.max_sweeps = 40;
  const GneSolution sol = iterated_best_response(g, opt);
  CHECK(sol.status != SolveStatus::Converged);
}

TEST_CASE("warm start with the solution converges immediately") {
  const GameSpec g = scalar_game(1.0, 0.5, 0.8);
  SolverOptions opt;
  const GneSolution first = solve_gne_sqp(g, opt);
  REQUIRE(first.status == SolveStatus::Converged);
  const GneSolution again = solve_gne_sqp(g, opt, first.u);
  CHECK(again.status == SolveStatus::Converged);
  CHECK(again.iterations <= 2);
}

TEST_CASE("check_gne validates equilibria and rejects non-equilibria") {
  const GameSpec g = scalar_game(1.0, 1.0, 1.0);
  SolverOptions opt;
  const GneSolution sol = solve_gne_sqp(g, opt);
  REQUIRE(sol.status == SolveStatus::Converged);
  const auto ok = check_gne(g, sol, 100, 1e-4, 7);
  CHECK(ok.pass);
  CHECK(ok.tested >= 200);

  GneSolution wrong = sol;
  wrong.u[0].setZero();
  wrong.z[0] = rollout(g, 0, wrong.u[0]);
  const auto bad = check_gne(g, wrong, 100, 1e-4, 7);
  CHECK(!bad.pass);
  CHECK(bad.worst_improvement > 1e-4);
}

// ---------------------------------------------------------------------------
// intersection potential games

namespace {

struct IntersectionFixture {
  dataset::IntersectionWorld world;
  IntersectionFixture() {
    world = dataset::make_intersection_world(geometry::IntersectionConfig{},
                                             dynamics::VehicleParams::intersection_defaults(),
                                             dataset::GameWeights{});
  }
};

}  // namespace

TEST_CASE("intersection potential game: crossing scenario resolves an order") {
  IntersectionFixture fx;
  const auto& sn = geometry::find_route(fx.world.routes, "SN");
  const auto& es = geometry::find_route(fx.world.routes, "ES");
  const std::array<Eigen::Vector2d, 2> z0 = {Eigen::Vector2d(4.0, 0.0),
                                             Eigen::Vector2d(3.0, 0.0)};
  const auto spec = dataset::make_intersection_game(fx.world, sn, es, z0, 60, 0.1);
  SolverOptions opt;
  const GneSolution sol = solve_potential_nlp(spec, opt);
  REQUIRE(sol.status == SolveStatus::Converged);

  // solver bookkeeping aside, the solution satisfies dynamics and constraints
  const auto rep = verify_solution(spec, sol);
  CHECK(rep.ok);

  // some progress happened and the collision constraint was respected
  CHECK(sol.z[0](0, 60) > z0[0][0] + 1.0);
  CHECK(sol.z[1](0, 60) > z0[1][0] + 1.0);

  // intersection-entry times differ (one vehicle yields)
  auto entry_step = [&](int agent, double s_int) {
    for (int k = 0; k <= 60; ++k)
      if (sol.z[agent](0, k) >= s_int) return k;
    return 61;
  };
  CHECK(entry_step(0, sn.s_int) != entry_step(1, es.s_int));

  // converged equilibria pass the unilateral-deviation check
  const auto check = check_gne(spec, sol, 50, 1e-4, 99);
  CHECK(check.pass);
}

TEST_CASE("gne sqp and potential nlp agree on potential games") {
  IntersectionFixture fx;
  Rng rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    const auto ic = dataset::sample_intersection_ic(fx.world, 6, rng.next_u64());
    const std::array<Eigen::Vector2d, 2> z0 = {Eigen::Vector2d(ic.s0[0], 0.0),
                                               Eigen::Vector2d(ic.s0[1], 0.0)};
    const auto spec =
        dataset::make_intersection_game(fx.world, *ic.route[0], *ic.route[1], z0, 40, 0.1);
    SolverOptions opt;
    const GneSolution a = solve_gne_sqp(spec, opt);
    const GneSolution b = solve_potential_nlp(spec, opt);
    REQUIRE(a.status == SolveStatus::Converged);
    REQUIRE(b.status == SolveStatus::Converged);
    CHECK(std::abs(a.potential - b.potential) < 1e-5);
  }
}

TEST_CASE("overlapping initial condition is infeasible") {
  IntersectionFixture fx;
  const auto& sn = geometry::find_route(fx.world.routes, "SN");
  const auto& es = geometry::find_route(fx.world.routes, "ES");
  // both at the conflict point where SN crosses the ES arc inside the box:
  // SN hits x=2 on the ES circle at y = -4 + sqrt(32), i.e. s_SN = 20.657,
  // s_ES = 15 + 6*(atan2(sqrt(32),-2) - pi/2) = 17.044
  const std::array<Eigen::Vector2d, 2> z0 = {Eigen::Vector2d(20.657, 0.0),
                                             Eigen::Vector2d(17.044, 0.0)};
  const auto spec = dataset::make_intersection_game(fx.world, sn, es, z0, 20, 0.1);
  SolverOptions opt;
  const GneSolution sol = solve_gne_sqp(spec, opt);
  CHECK(sol.status == SolveStatus::Infeasible);
}

TEST_CASE("single-agent degenerate game reduces to optimal tracking") {
  IntersectionFixture fx;
  const auto& sn = geometry::find_route(fx.world.routes, "SN");
  const auto& we = geometry::find_route(fx.world.routes, "WE");
  // agent 2 frozen: zero progress incentive, fully decoupled
  std::array<Eigen::Vector2d, 2> z0 = {Eigen::Vector2d(5.0, 0.0),
                                       Eigen::Vector2d(0.0, 0.0)};
  auto spec = dataset::make_intersection_game(fx.world, sn, we, z0, 30, 0.1);
  spec.cost[1].q_term.setZero();
  spec.d_min = 0.0;
  SolverOptions opt;
  const GneSolution joint = solve_potential_nlp(spec, opt);
  REQUIRE(joint.status == SolveStatus::Converged);
  // agent 2 has only input costs: staying at rest is optimal
  CHECK(joint.u[1].lpNorm<Eigen::Infinity>() < 1e-6);
  // agent 1 accelerates toward the progress reward: rate-limited first step,
  // then the acceleration box
  CHECK(joint.u[0](0, 0) == doctest::Approx(fx.world.params.da_max).epsilon(1e-6));
  // subsequent steps climb toward the box, traded against the rate cost
  CHECK(joint.u[0](0, 1) > joint.u[0](0, 0));
  CHECK(joint.u[0](0, 1) <= fx.world.params.a_max + 1e-9);
}

TEST_CASE("converged racing game satisfies constraints and beats deviations") {
  const auto world = dataset::make_racing_world(
      geometry::LTrackConfig{}, dynamics::VehicleParams::racing_defaults(),
      dataset::GameWeights{});
  const auto ic = dataset::sample_racing_ic(world, 2024);
  const std::array<Eigen::Vector4d, 2> z0 = {ic.agents[0].frenet(), ic.agents[1].frenet()};
  const auto spec = dataset::make_racing_game(world, z0, 15, 0.1);
  SolverOptions opt;
  opt.kkt_tolerance = 1e-6;
  const GneSolution sol = solve_gne_sqp(spec, opt);
  if (sol.status == SolveStatus::Converged) {
    const auto rep = verify_solution(spec, sol, 1e-8, 1e-5);
    CHECK(rep.max_dynamics_defect < 1e-8);
    CHECK(rep.max_bound_violation < 1e-5);
    CHECK(rep.max_coupled_violation < 1e-5);
    const auto check = check_gne(spec, sol, 30, 1e-3, 11);
    CHECK(check.pass);
  } else {
    CHECK(sol.status == SolveStatus::Infeasible);  // overlapping draw is legitimate
  }
}
