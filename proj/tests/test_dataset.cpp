#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "gtmpc/dataset.hpp"
#include "gtmpc/rng.hpp"

using namespace gtmpc;
using namespace gtmpc::dataset;

namespace {

RacingWorld racing_world() {
  return make_racing_world(geometry::LTrackConfig{},
                           dynamics::VehicleParams::racing_defaults(), GameWeights{});
}

IntersectionWorld intersection_world() {
  return make_intersection_world(geometry::IntersectionConfig{},
                                 dynamics::VehicleParams::intersection_defaults(),
                                 GameWeights{});
}

std::string tmp_file(const char* name) {
  return std::string("/tmp/gtmpc_test_") + name;
}

}  // namespace

TEST_CASE("racing IC sampling stays in bounds and inside the window") {
  const auto world = racing_world();
  int inside = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto ic = sample_racing_ic(world, 100 + i);
    const double ds = geometry::signed_s_diff(world.raceline.path, ic.agents[0].s,
                                              ic.agents[1].s);
    CHECK(std::abs(ds) <= world.l_int + 1e-9);
    for (int a = 0; a < 2; ++a) {
      const auto rep = dynamics::in_bounds(ic.agents[a], {}, {}, world.params);
      CHECK(rep.ok);
    }
    if (std::abs(ds) <= world.l_int) ++inside;
  }
  CHECK(inside == 1000);
}

TEST_CASE("racing IC marginal of s1 is roughly uniform") {
  // coarse chi-square-style check against the sampler's own spec
  const auto world = racing_world();
  const int n = 2000, bins = 10;
  std::vector<int> counts(bins, 0);
  for (int i = 0; i < n; ++i) {
    const auto ic = sample_racing_ic(world, 5000 + i);
    const double frac = geometry::wrap_s(world.raceline.path, ic.agents[0].s) /
                        world.raceline.path.total_length;
    counts[std::min(bins - 1, static_cast<int>(frac * bins))]++;
  }
  for (int b = 0; b < bins; ++b) {
    CHECK(counts[b] > n / bins / 2);
    CHECK(counts[b] < n / bins * 2);
  }
}

TEST_CASE("intersection IC sampling follows the scenario table") {
  const auto world = intersection_world();
  for (int i = 0; i < 200; ++i) {
    const auto ic = sample_intersection_ic(world, 6, 40 + i);
    const auto enc = geometry::scenario_encoding(*ic.route[0], *ic.route[1]);
    REQUIRE(enc.has_value());
    CHECK(enc->m == 6);
    CHECK(ic.enc.sc_i == 6);
    CHECK(ic.v0[0] == 0.0);
    CHECK(ic.v0[1] == 0.0);
    CHECK(ic.s0[0] >= 0.0);
    CHECK(ic.s0[0] <= ic.route[0]->s_int / 2.0);
    CHECK(ic.s0[1] >= 0.0);
    CHECK(ic.s0[1] <= ic.route[1]->s_int / 2.0 + 2e-3);
  }
}

TEST_CASE("reward formulas") {
  dynamics::JointState z;
  z.agents[0].s = 12.3;
  z.agents[1].s = 10.1;
  CHECK(compute_reward_racing(z, 1) == doctest::Approx(2.2));
  CHECK(compute_reward_racing(z, 2) == doctest::Approx(-2.2));
  z.agents[1].s = 12.3;
  CHECK(compute_reward_racing(z, 1) == 0.0);

  dynamics::JointState w;
  w.agents[0].s = 20.0;
  w.agents[1].s = 25.0;
  CHECK(compute_reward_intersection(w, 1) == doctest::Approx(45.0));
  CHECK(compute_reward_intersection(w, 2) == doctest::Approx(45.0));
  w.agents[0].s = 0.0;
  w.agents[1].s = 0.0;
  CHECK(compute_reward_intersection(w, 1) == 0.0);
}

TEST_CASE("feature construction matches the defining layout") {
  // racing: [z_opp, z_i - z_opp] over [v, e_psi, s, e_y]
  geometry::Segment seg;
  seg.kind = geometry::SegmentKind::Line;
  seg.length = 100.0;
  seg.start = {0, 0, 0};
  const auto path = geometry::make_path({seg}, 4.0);
  dynamics::JointState z;
  z.agents[0].v = 1.0;
  z.agents[0].e_psi = 0.0;
  z.agents[0].s = 5.0;
  z.agents[0].e_y = 0.2;
  z.agents[1].v = 2.0;
  z.agents[1].e_psi = 0.0;
  z.agents[1].s = 4.0;
  z.agents[1].e_y = -0.1;
  const auto x1 = build_features(z, 1, std::nullopt, &path);
  REQUIRE(x1.size() == 8);
  CHECK(x1[0] == 2.0);
  CHECK(x1[1] == 0.0);
  CHECK(x1[2] == 4.0);
  CHECK(x1[3] == -0.1);
  CHECK(x1[4] == -1.0);
  CHECK(x1[5] == 0.0);
  CHECK(x1[6] == 1.0);
  CHECK(x1[7] == doctest::Approx(0.3));

  // intersection: [zt_opp, zt_i - zt_opp] with zt = [s, v, sc]
  dynamics::JointState w;
  w.agents[0].s = 3.0;
  w.agents[0].v = 0.0;
  w.agents[1].s = 5.0;
  w.agents[1].v = 0.0;
  const auto x2 = build_features(w, 2, std::make_pair(6, -6), nullptr);
  REQUIRE(x2.size() == 6);
  CHECK(x2[0] == 3.0);
  CHECK(x2[1] == 0.0);
  CHECK(x2[2] == 6.0);
  CHECK(x2[3] == 2.0);
  CHECK(x2[4] == 0.0);
  CHECK(x2[5] == -12.0);

  // i=1 and i=2 views are the documented swap of one another
  const auto a = build_features(z, 1, std::nullopt, &path);
  const auto b = build_features(z, 2, std::nullopt, &path);
  for (int c = 0; c < 4; ++c) {
    CHECK(a[c] + a[4 + c] == doctest::Approx(b[c]));
    CHECK(b[4 + c] == doctest::Approx(-a[4 + c]));
  }

  CHECK_THROWS(build_features(w, 1, std::nullopt, nullptr));
}

TEST_CASE("intersection dataset generation: reward equality and determinism") {
  const auto world = intersection_world();
  GenerationConfig cfg;
  cfg.family = Family::Intersection;
  cfg.scenario = 6;
  cfg.n_games = 6;
  cfg.horizon = 50;
  cfg.seed = 77;
  cfg.threads = 1;
  cfg.solver.kkt_tolerance = 1e-5;
  GenerationStats stats;
  const Dataset d = generate_dataset(cfg, nullptr, &world, &stats);
  CHECK(d.meta.n_x == 6);
  CHECK(d.samples.size() == static_cast<std::size_t>(2 * (stats.converged + stats.infeasible)));
  for (std::size_t i = 0; i + 1 < d.samples.size(); i += 2) {
    CHECK(d.samples[i].target == d.samples[i + 1].target);  // collective reward
    CHECK(d.samples[i].agent_perspective == 1);
    CHECK(d.samples[i + 1].agent_perspective == 2);
    CHECK(d.samples[i].scenario == -d.samples[i + 1].scenario);
    if (!d.samples[i].feasible) CHECK(d.samples[i].target == d.meta.low_reward);
  }

  const Dataset d2 = generate_dataset(cfg, nullptr, &world, nullptr);
  REQUIRE(d.samples.size() == d2.samples.size());
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    CHECK(d.samples[i].target == d2.samples[i].target);
    CHECK(d.samples[i].features == d2.samples[i].features);
  }
}

TEST_CASE("racing dataset generation: reward antisymmetry") {
  const auto world = racing_world();
  GenerationConfig cfg;
  cfg.family = Family::Racing;
  cfg.n_games = 6;
  cfg.horizon = 15;
  cfg.seed = 3;
  cfg.threads = 1;
  cfg.solver.kkt_tolerance = 1e-5;
  GenerationStats stats;
  const Dataset d = generate_dataset(cfg, &world, nullptr, &stats);
  CHECK(d.meta.n_x == 8);
  CHECK(d.meta.low_reward == doctest::Approx(-(15 * 0.1 * world.params.v_max)));
  for (std::size_t i = 0; i + 1 < d.samples.size(); i += 2) {
    if (d.samples[i].feasible) {
      CHECK(d.samples[i].target == doctest::Approx(-d.samples[i + 1].target).epsilon(1e-12));
    } else {
      CHECK(d.samples[i].target == d.meta.low_reward);
      CHECK(d.samples[i + 1].target == d.meta.low_reward);
    }
  }
}

TEST_CASE("dataset save/load round trip is lossless") {
  const auto world = intersection_world();
  GenerationConfig cfg;
  cfg.family = Family::Intersection;
  cfg.scenario = 3;
  cfg.n_games = 4;
  cfg.horizon = 40;
  cfg.seed = 11;
  cfg.threads = 1;
  cfg.solver.kkt_tolerance = 1e-5;
  const Dataset d = generate_dataset(cfg, nullptr, &world, nullptr);
  REQUIRE(!d.samples.empty());
  const std::string path = tmp_file("roundtrip.csv");
  save_dataset(d, path);
  const Dataset loaded = load_dataset(path);
  CHECK(loaded.meta.family == d.meta.family);
  CHECK(loaded.meta.n_x == d.meta.n_x);
  REQUIRE(loaded.samples.size() == d.samples.size());
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    CHECK(loaded.samples[i].target == d.samples[i].target);  // bitwise
    CHECK(loaded.samples[i].features == d.samples[i].features);
    CHECK(loaded.samples[i].source_seed == d.samples[i].source_seed);
  }

  // save twice -> identical bytes
  const std::string path2 = tmp_file("roundtrip2.csv");
  save_dataset(d, path2);
  std::ifstream f1(path), f2(path2);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
}

TEST_CASE("truncated dataset file is rejected with a line number") {
  const auto world = intersection_world();
  GenerationConfig cfg;
  cfg.family = Family::Intersection;
  cfg.scenario = 3;
  cfg.n_games = 3;
  cfg.horizon = 40;
  cfg.seed = 12;
  cfg.threads = 1;
  cfg.solver.kkt_tolerance = 1e-5;
  const Dataset d = generate_dataset(cfg, nullptr, &world, nullptr);
  REQUIRE(d.samples.size() >= 2);
  const std::string path = tmp_file("truncated.csv");
  save_dataset(d, path);
  // chop off the tail of the last line
  std::ifstream in(path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  std::ofstream out(path);
  out << content.substr(0, content.size() - 30);
  out.close();
  CHECK_THROWS_AS(load_dataset(path), ParseError);
}

TEST_CASE("feasible targets are reproducible from stored GNE inputs") {
  // re-simulate the solved inputs through the dynamics and re-apply the reward
  const auto world = intersection_world();
  Rng rng(9);
  for (int trial = 0; trial < 3; ++trial) {
    const auto ic = sample_intersection_ic(world, 6, rng.next_u64());
    std::array<Eigen::Vector2d, 2> z0 = {Eigen::Vector2d(ic.s0[0], 0.0),
                                         Eigen::Vector2d(ic.s0[1], 0.0)};
    game::SolverOptions opt;
    opt.kkt_tolerance = 1e-5;
    const auto sol =
        solve_intersection_game(world, *ic.route[0], *ic.route[1], z0, 50, 0.1, opt);
    if (sol.status != game::SolveStatus::Converged) continue;
    const auto spec =
        make_intersection_game(world, *ic.route[0], *ic.route[1], z0, 50, 0.1);
    for (int a = 0; a < 2; ++a) {
      const auto replay = game::rollout(spec, a, sol.u[a]);
      CHECK((replay - sol.z[a]).lpNorm<Eigen::Infinity>() < 1e-9);
    }
    dynamics::JointState zf;
    zf.agents[0].s = sol.z[0](0, 50);
    zf.agents[1].s = sol.z[1](0, 50);
    const double r = compute_reward_intersection(zf, 1);
    CHECK(r == doctest::Approx(sol.z[0](0, 50) + sol.z[1](0, 50)));
  }
}
