#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "gtmpc/geometry.hpp"
#include "gtmpc/rng.hpp"

using namespace gtmpc;
using namespace gtmpc::geometry;

namespace {

PathSpec straight_path(double length = 100.0, double half_width = 4.0) {
  Segment seg;
  seg.kind = SegmentKind::Line;
  seg.length = length;
  seg.start = {0.0, 0.0, 0.0};
  return make_path({seg}, half_width);
}

PathSpec quarter_arc(double radius = 10.0) {
  Segment seg;
  seg.kind = SegmentKind::Arc;
  seg.curvature = 1.0 / radius;
  seg.length = radius * M_PI / 2.0;
  seg.start = {0.0, 0.0, 0.0};
  return make_path({seg}, 2.0);
}

}  // namespace

TEST_CASE("frenet_to_cartesian on a straight path") {
  const PathSpec path = straight_path();
  const Pose p = frenet_to_cartesian(path, 5.0, 0.0, 0.0);
  CHECK(p.x == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(p.y == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(p.psi == doctest::Approx(0.0));

  const Pose q = frenet_to_cartesian(path, 5.0, 1.0, 0.0);
  CHECK(q.x == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(q.y == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("frenet_to_cartesian quarter arc matches the analytic circle") {
  // analytic parameterization: center (0, r), p(s) = c + r (sin(s/r), -cos(s/r))
  const double r = 10.0;
  const PathSpec path = quarter_arc(r);
  const double s = 5.0 * M_PI;  // 90 degrees
  const Pose p = frenet_to_cartesian(path, s, 0.0, 0.0);
  CHECK(p.x == doctest::Approx(r * std::sin(s / r)).epsilon(1e-12));
  CHECK(p.y == doctest::Approx(r - r * std::cos(s / r)).epsilon(1e-12));
  CHECK(p.psi == doctest::Approx(M_PI / 2.0).epsilon(1e-12));
}

TEST_CASE("frenet_to_cartesian rejects out-of-range s on open paths") {
  const PathSpec path = straight_path(10.0);
  CHECK_THROWS_AS(frenet_to_cartesian(path, 11.0, 0.0, 0.0), GeometryError);
  CHECK_THROWS_AS(frenet_to_cartesian(path, -1.0, 0.0, 0.0), GeometryError);
}

TEST_CASE("cartesian_to_frenet identity and degenerate cases") {
  const PathSpec path = straight_path();
  const FrenetCoord f = cartesian_to_frenet(path, 5.0, 0.0, 0.0);
  CHECK(f.s == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(f.e_y == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(f.e_psi == doctest::Approx(0.0));

  const PathSpec arc = quarter_arc(10.0);
  // arc center: projection undefined
  CHECK_THROWS_AS(cartesian_to_frenet(arc, 0.0, 10.0, 0.0), GeometryError);
}

TEST_CASE("round trip over random in-bounds states") {
  LTrackConfig cfg;
  const PathSpec track = build_l_track(cfg);
  Rng rng(42);
  for (int i = 0; i < 1000; ++i) {
    const double s = rng.uniform(0.0, track.total_length);
    const double e_y = rng.uniform(-cfg.half_width, cfg.half_width);
    const double e_psi = rng.uniform(-0.5, 0.5);
    const Pose p = frenet_to_cartesian(track, s, e_y, e_psi);
    const FrenetCoord f = cartesian_to_frenet(track, p.x, p.y, p.psi);
    CHECK(std::abs(signed_s_diff(track, f.s, s)) < 1e-9);
    CHECK(f.e_y == doctest::Approx(e_y).epsilon(1e-9));
    CHECK(std::abs(wrap_angle(f.e_psi - e_psi)) < 1e-9);
  }
}

TEST_CASE("arc-length parameterization matches polyline integration") {
  LTrackConfig cfg;
  const PathSpec track = build_l_track(cfg);
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const double a = rng.uniform(0.0, track.total_length / 2.0);
    const double b = a + rng.uniform(5.0, track.total_length / 2.0);
    double poly = 0.0;
    const double ds = 1e-3;
    Pose prev = pose_at(track, a);
    for (double s = a + ds; s <= b + 1e-12; s += ds) {
      const Pose p = pose_at(track, std::min(s, b));
      poly += std::hypot(p.x - prev.x, p.y - prev.y);
      prev = p;
    }
    CHECK(poly == doctest::Approx(b - a).epsilon(1e-3));
  }
}

TEST_CASE("L track construction") {
  LTrackConfig cfg;
  const PathSpec track = build_l_track(cfg);
  CHECK(track.closed);
  double sum = 0.0;
  for (const auto& seg : track.segments) {
    sum += seg.length;
    if (seg.kind == SegmentKind::Line) CHECK(seg.curvature == 0.0);
    if (seg.kind == SegmentKind::Arc)
      CHECK(std::abs(seg.curvature) == doctest::Approx(1.0 / cfg.corner_radius));
  }
  CHECK(track.total_length == doctest::Approx(sum).epsilon(1e-12));
  // 6 corners: 5 left, 1 right
  int lefts = 0, rights = 0;
  for (const auto& seg : track.segments) {
    if (seg.kind != SegmentKind::Arc) continue;
    (seg.curvature > 0 ? lefts : rights)++;
  }
  CHECK(lefts == 5);
  CHECK(rights == 1);
  CHECK_THROWS_AS(build_l_track([] {
                    LTrackConfig bad;
                    bad.leg_a = -1.0;
                    return bad;
                  }()),
                  GeometryError);
}

TEST_CASE("raceline stays inside the corner-cut band and slows for corners") {
  LTrackConfig cfg;
  const PathSpec center = build_l_track(cfg);
  const Raceline rl = build_raceline(cfg);
  CHECK(rl.path.closed);
  double max_offset = 0.0;
  for (double s = 0.0; s < rl.path.total_length; s += 1.0) {
    const Pose p = pose_at(rl.path, s);
    const FrenetCoord f = cartesian_to_frenet(center, p.x, p.y, p.psi);
    max_offset = std::max(max_offset, std::abs(f.e_y));
  }
  CHECK(max_offset <= cfg.corner_cut * cfg.half_width + 1e-6);
  CHECK(max_offset > 0.5 * cfg.corner_cut * cfg.half_width);

  // profile obeys the friction cap on corners and the acceleration limits
  const auto& prof = rl.profile;
  for (std::size_t i = 0; i < prof.v.size(); ++i) {
    const double kappa = std::abs(curvature_at(rl.path, i * prof.ds));
    if (kappa > 1e-9)
      CHECK(prof.v[i] <= std::sqrt(cfg.mu * cfg.gravity / kappa) + 1e-9);
    CHECK(prof.v[i] <= cfg.v_max + 1e-12);
  }
  for (std::size_t i = 0; i + 1 < prof.v.size(); ++i) {
    const double dv2 = prof.v[i + 1] * prof.v[i + 1] - prof.v[i] * prof.v[i];
    CHECK(dv2 <= 2.0 * cfg.a_accel * prof.ds + 1e-9);
    CHECK(-dv2 <= 2.0 * cfg.a_decel * prof.ds + 1e-9);
  }
}

TEST_CASE("intersection routes") {
  IntersectionConfig cfg;
  const auto routes = build_intersection(cfg);
  CHECK(routes.size() == 12);
  const auto& wn = find_route(routes, "WN");
  const auto& we = find_route(routes, "WE");
  // WN is a left turn (arc), WE is straight through the box
  bool wn_has_arc = false;
  for (const auto& seg : wn.path.segments)
    if (seg.kind == SegmentKind::Arc) {
      wn_has_arc = true;
      CHECK(seg.curvature > 0.0);
    }
  CHECK(wn_has_arc);
  for (const auto& seg : we.path.segments) CHECK(seg.kind == SegmentKind::Line);
  for (const auto& r : routes) {
    CHECK(r.s_int == doctest::Approx(cfg.approach_length));
    CHECK(r.s_int > 0.0);
    CHECK(r.s_int < r.path.total_length);
    // approach segment is always a line
    CHECK(r.path.segments.front().kind == SegmentKind::Line);
    CHECK(r.path.segments.front().curvature == 0.0);
  }
}

TEST_CASE("scenario encoding matches the route table") {
  IntersectionConfig cfg;
  const auto routes = build_intersection(cfg);
  const auto sn_es = scenario_encoding(find_route(routes, "SN"), find_route(routes, "ES"));
  REQUIRE(sn_es.has_value());
  CHECK(sn_es->m == 6);
  CHECK(sn_es->sc_i == 6);
  CHECK(sn_es->sc_j == -6);

  const auto we_ne = scenario_encoding(find_route(routes, "WE"), find_route(routes, "NE"));
  REQUIRE(we_ne.has_value());
  CHECK(we_ne->m == 1);
  CHECK(we_ne->sc_i == 1);
  CHECK(we_ne->sc_j == -1);

  // two right-turning routes with disjoint paths do not interact
  const auto nw_se = scenario_encoding(find_route(routes, "NW"), find_route(routes, "SE"));
  CHECK(!nw_se.has_value());

  CHECK_THROWS_AS(scenario_encoding(find_route(routes, "SN"), find_route(routes, "SN")),
                  GeometryError);
}

TEST_CASE("scenario table rotational invariance and antisymmetry") {
  const auto& table = ScenarioTable::instance();
  CHECK(table.entries.size() == 32);
  for (const auto& e : table.entries) {
    const auto rotated = scenario_encoding(rotate90(e.start_i), rotate90(e.end_i),
                                           rotate90(e.start_j), rotate90(e.end_j));
    REQUIRE(rotated.has_value());
    CHECK(rotated->m == e.m);
    CHECK(rotated->sc_i == e.m);
    CHECK(rotated->sc_j == -e.m);

    const auto fwd = scenario_encoding(e.start_i, e.end_i, e.start_j, e.end_j);
    const auto rev = scenario_encoding(e.start_j, e.end_j, e.start_i, e.end_i);
    REQUIRE(fwd.has_value());
    REQUIRE(rev.has_value());
    CHECK(fwd->m == rev->m);
    // symmetric scenarios store both orders; there the stored-order convention
    // (+ for the first argument) takes precedence over sign antisymmetry
    bool reversed_is_stored = false;
    for (const auto& o : table.entries)
      if (o.start_i == e.start_j && o.end_i == e.end_j && o.start_j == e.start_i &&
          o.end_j == e.end_i)
        reversed_is_stored = true;
    if (reversed_is_stored) {
      CHECK(rev->sc_i == e.m);
      CHECK(rev->sc_j == -e.m);
    } else {
      CHECK(fwd->sc_i == rev->sc_j);
      CHECK(fwd->sc_j == rev->sc_i);
    }
  }
}

TEST_CASE("csv export emits the documented columns") {
  const PathSpec path = straight_path(10.0);
  std::ostringstream os;
  export_path_csv(path, os, 1.0);
  std::istringstream is(os.str());
  std::string header;
  std::getline(is, header);
  CHECK(header == "s,x,y,psi,kappa");
  int lines = 0;
  std::string row;
  while (std::getline(is, row)) ++lines;
  CHECK(lines == 11);
}
