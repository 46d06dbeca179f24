#include "gtmpc/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>

namespace gtmpc::geometry {

namespace {

constexpr double kJointTol = 1e-9;
constexpr double kPi = 3.141592653589793238462643383279502884;

using Eigen::Vector2d;

Vector2d unit(double heading) { return {std::cos(heading), std::sin(heading)}; }

Pose segment_end(const Segment& seg) {
  Pose p;
  if (seg.kind == SegmentKind::Line) {
    p.x = seg.start.x + seg.length * std::cos(seg.start.psi);
    p.y = seg.start.y + seg.length * std::sin(seg.start.psi);
    p.psi = seg.start.psi;
  } else {
    const double h0 = seg.start.psi;
    const double h1 = h0 + seg.curvature * seg.length;
    p.x = seg.start.x + (std::sin(h1) - std::sin(h0)) / seg.curvature;
    p.y = seg.start.y - (std::cos(h1) - std::cos(h0)) / seg.curvature;
    p.psi = h1;
  }
  return p;
}

Pose segment_pose(const Segment& seg, double u) {
  Pose p;
  if (seg.kind == SegmentKind::Line) {
    p.x = seg.start.x + u * std::cos(seg.start.psi);
    p.y = seg.start.y + u * std::sin(seg.start.psi);
    p.psi = seg.start.psi;
  } else {
    const double h0 = seg.start.psi;
    const double h = h0 + seg.curvature * u;
    p.x = seg.start.x + (std::sin(h) - std::sin(h0)) / seg.curvature;
    p.y = seg.start.y - (std::cos(h) - std::cos(h0)) / seg.curvature;
    p.psi = h;
  }
  return p;
}

struct Projection {
  double dist = std::numeric_limits<double>::infinity();
  double u = 0.0;
  double e_y = 0.0;
  bool interior = false;
  bool degenerate = false;
};

Projection project_on_segment(const Segment& seg, double qx, double qy) {
  Projection out;
  if (seg.kind == SegmentKind::Line) {
    const Vector2d d = unit(seg.start.psi);
    const Vector2d r(qx - seg.start.x, qy - seg.start.y);
    double u = d.dot(r);
    out.interior = (u > -kJointTol && u < seg.length + kJointTol);
    u = std::clamp(u, 0.0, seg.length);
    const Vector2d foot(seg.start.x + u * d.x(), seg.start.y + u * d.y());
    const Vector2d off(qx - foot.x(), qy - foot.y());
    out.u = u;
    out.e_y = d.x() * off.y() - d.y() * off.x();
    out.dist = off.norm();
  } else {
    const double kappa = seg.curvature;
    const double radius = 1.0 / std::abs(kappa);
    const Vector2d n0(-std::sin(seg.start.psi), std::cos(seg.start.psi));
    const Vector2d center(seg.start.x + n0.x() / kappa, seg.start.y + n0.y() / kappa);
    const Vector2d vec(qx - center.x(), qy - center.y());
    const double rho = vec.norm();
    if (rho < 1e-12) {
      out.degenerate = true;
      return out;
    }
    const double sign = kappa > 0 ? 1.0 : -1.0;
    const double h_q = std::atan2(vec.y(), vec.x()) + sign * kPi / 2.0;
    double u = wrap_angle(h_q - seg.start.psi) / kappa;
    out.interior = (u > -kJointTol && u < seg.length + kJointTol);
    u = std::clamp(u, 0.0, seg.length);
    const Pose foot = segment_pose(seg, u);
    out.u = u;
    if (out.interior) {
      out.e_y = sign * (radius - rho);
      out.dist = std::abs(out.e_y);
    } else {
      const Vector2d off(qx - foot.x, qy - foot.y);
      const Vector2d tang = unit(foot.psi);
      out.e_y = tang.x() * off.y() - tang.y() * off.x();
      out.dist = off.norm();
    }
  }
  return out;
}

int segment_index_at(const PathSpec& path, double s) {
  // s must already be inside [0, total_length]
  const auto it = std::upper_bound(path.s_begin.begin(), path.s_begin.end(), s);
  int idx = static_cast<int>(it - path.s_begin.begin()) - 1;
  idx = std::clamp(idx, 0, static_cast<int>(path.segments.size()) - 1);
  return idx;
}

}  // namespace

double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0.0) a += 2.0 * kPi;
  return a - kPi;
}

PathSpec make_path(std::vector<Segment> segments, double half_width) {
  if (segments.empty()) throw GeometryError("path needs at least one segment");
  if (half_width < 0.0) throw GeometryError("half_width must be nonnegative");
  PathSpec path;
  path.half_width = half_width;
  path.s_begin.reserve(segments.size());
  double s = 0.0;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const Segment& seg = segments[i];
    if (!(seg.length > 0.0)) throw GeometryError("segment length must be positive");
    if (seg.kind == SegmentKind::Line && seg.curvature != 0.0)
      throw GeometryError("line segment must have curvature 0");
    if (seg.kind == SegmentKind::Arc && seg.curvature == 0.0)
      throw GeometryError("arc segment must have nonzero curvature");
    path.s_begin.push_back(s);
    s += seg.length;
    if (i + 1 < segments.size()) {
      const Pose e = segment_end(seg);
      const Pose& n = segments[i + 1].start;
      if (std::abs(e.x - n.x) > kJointTol || std::abs(e.y - n.y) > kJointTol ||
          std::abs(wrap_angle(e.psi - n.psi)) > kJointTol)
        throw GeometryError("segments are not C0-continuous at joint " + std::to_string(i));
    }
  }
  path.total_length = s;
  const Pose e = segment_end(segments.back());
  const Pose& first = segments.front().start;
  path.closed = std::abs(e.x - first.x) <= kJointTol && std::abs(e.y - first.y) <= kJointTol &&
                std::abs(wrap_angle(e.psi - first.psi)) <= kJointTol;
  path.segments = std::move(segments);
  return path;
}

double wrap_s(const PathSpec& path, double s) {
  if (!path.closed) return s;
  s = std::fmod(s, path.total_length);
  if (s < 0.0) s += path.total_length;
  return s;
}

double signed_s_diff(const PathSpec& path, double a, double b) {
  if (!path.closed) return a - b;
  double d = std::fmod(a - b, path.total_length);
  if (d > path.total_length / 2.0) d -= path.total_length;
  if (d < -path.total_length / 2.0) d += path.total_length;
  return d;
}

Pose pose_at(const PathSpec& path, double s) {
  if (path.closed) {
    s = wrap_s(path, s);
  } else if (s < 0.0) {
    const Pose& p0 = path.segments.front().start;
    return {p0.x + s * std::cos(p0.psi), p0.y + s * std::sin(p0.psi), p0.psi};
  } else if (s > path.total_length) {
    const Pose pe = segment_end(path.segments.back());
    const double d = s - path.total_length;
    return {pe.x + d * std::cos(pe.psi), pe.y + d * std::sin(pe.psi), pe.psi};
  }
  const int idx = segment_index_at(path, s);
  return segment_pose(path.segments[idx], s - path.s_begin[idx]);
}

double curvature_at(const PathSpec& path, double s) {
  if (path.closed) {
    s = wrap_s(path, s);
  } else if (s < 0.0 || s > path.total_length) {
    return 0.0;
  }
  const int idx = segment_index_at(path, s);
  return path.segments[idx].curvature;
}

Pose frenet_to_cartesian(const PathSpec& path, double s, double e_y, double e_psi) {
  if (!path.closed && (s < -kJointTol || s > path.total_length + kJointTol))
    throw GeometryError("arc length s out of range");
  const Pose p = pose_at(path, s);
  Pose out;
  out.x = p.x - e_y * std::sin(p.psi);
  out.y = p.y + e_y * std::cos(p.psi);
  out.psi = wrap_angle(p.psi + e_psi);
  return out;
}

FrenetCoord cartesian_to_frenet(const PathSpec& path, double x, double y, double psi) {
  constexpr double kAmbiguityTol = 1e-6;
  double best = std::numeric_limits<double>::infinity();
  int best_idx = -1;
  Projection best_proj;
  std::vector<std::pair<int, Projection>> candidates;
  for (std::size_t i = 0; i < path.segments.size(); ++i) {
    const Projection proj = project_on_segment(path.segments[i], x, y);
    if (proj.degenerate) continue;
    candidates.emplace_back(static_cast<int>(i), proj);
    if (proj.dist < best) {
      best = proj.dist;
      best_idx = static_cast<int>(i);
      best_proj = proj;
    }
  }
  if (best_idx < 0) throw GeometryError("projection degenerate (query at arc center)");
  const double best_s = path.s_begin[best_idx] + best_proj.u;
  for (const auto& [idx, proj] : candidates) {
    if (idx == best_idx) continue;
    if (proj.dist > best + kAmbiguityTol) continue;
    const double s_other = path.s_begin[idx] + proj.u;
    double gap = std::abs(signed_s_diff(path, s_other, best_s));
    if (gap > 1.0) throw GeometryError("ambiguous projection onto separated path regions");
  }
  const Segment& seg = path.segments[best_idx];
  if (seg.kind == SegmentKind::Arc) {
    const double radius = 1.0 / std::abs(seg.curvature);
    if (std::abs(best_proj.e_y) >= radius - 1e-9)
      throw GeometryError("lateral offset reaches arc center; projection invalid");
  }
  const Pose foot = segment_pose(seg, best_proj.u);
  FrenetCoord f;
  f.s = best_s;
  f.e_y = best_proj.e_y;
  f.e_psi = wrap_angle(psi - foot.psi);
  return f;
}

// ---------------------------------------------------------------------------
// L-track

namespace {

struct CornerSkeleton {
  std::vector<Vector2d> vertices;  // counter-clockwise rectilinear polygon
  std::vector<double> radii;
};

PathSpec rounded_polygon_path(const CornerSkeleton& sk, double half_width) {
  const int n = static_cast<int>(sk.vertices.size());
  std::vector<Vector2d> dir(n);      // edge i: vertices[i] -> vertices[i+1]
  std::vector<double> edge_len(n);
  for (int i = 0; i < n; ++i) {
    const Vector2d e = sk.vertices[(i + 1) % n] - sk.vertices[i];
    edge_len[i] = e.norm();
    dir[i] = e / edge_len[i];
  }
  std::vector<Segment> segs;
  for (int i = 0; i < n; ++i) {
    const int j = (i + 1) % n;  // corner at vertex j
    const double r_i = sk.radii[i];
    const double r_j = sk.radii[j];
    const double straight = edge_len[i] - r_i - r_j;
    if (straight < 1e-9)
      throw GeometryError("corner radii too large for edge " + std::to_string(i));
    const Vector2d t_out = sk.vertices[i] + r_i * dir[i];
    Segment line;
    line.kind = SegmentKind::Line;
    line.length = straight;
    line.start = {t_out.x(), t_out.y(), std::atan2(dir[i].y(), dir[i].x())};
    segs.push_back(line);

    const double cross = dir[i].x() * dir[j].y() - dir[i].y() * dir[j].x();
    const Vector2d t_in = sk.vertices[j] - r_j * dir[i];
    Segment arc;
    arc.kind = SegmentKind::Arc;
    arc.curvature = (cross > 0 ? 1.0 : -1.0) / r_j;
    arc.length = (kPi / 2.0) * r_j;
    arc.start = {t_in.x(), t_in.y(), std::atan2(dir[i].y(), dir[i].x())};
    segs.push_back(arc);
  }
  return make_path(std::move(segs), half_width);
}

CornerSkeleton l_track_skeleton(const LTrackConfig& cfg, double radius) {
  if (cfg.leg_a <= 0 || cfg.leg_b <= 0 || cfg.leg_c <= 0 || cfg.leg_d <= 0 ||
      cfg.corner_radius <= 0 || cfg.half_width <= 0)
    throw GeometryError("track dimensions must be positive");
  if (cfg.leg_c >= cfg.leg_a || cfg.leg_b >= cfg.leg_d)
    throw GeometryError("L notch must lie inside the bounding rectangle");
  CornerSkeleton sk;
  sk.vertices = {{0.0, 0.0},         {cfg.leg_a, 0.0},      {cfg.leg_a, cfg.leg_b},
                 {cfg.leg_c, cfg.leg_b}, {cfg.leg_c, cfg.leg_d}, {0.0, cfg.leg_d}};
  sk.radii.assign(6, radius);
  return sk;
}

}  // namespace

PathSpec build_l_track(const LTrackConfig& cfg) {
  return rounded_polygon_path(l_track_skeleton(cfg, cfg.corner_radius), cfg.half_width);
}

Raceline build_raceline(const LTrackConfig& cfg) {
  if (cfg.corner_cut < 0.0 || cfg.corner_cut >= 1.0)
    throw GeometryError("corner_cut must be in [0, 1)");
  // Enlarging a 90-degree corner radius by dr moves its apex outward by
  // (sqrt(2)-1)*dr, so this uses exactly corner_cut*half_width of the lane.
  const double dr = cfg.corner_cut * cfg.half_width * (std::sqrt(2.0) + 1.0);
  Raceline rl;
  rl.path = rounded_polygon_path(l_track_skeleton(cfg, cfg.corner_radius + dr),
                                 cfg.half_width * (1.0 - cfg.corner_cut));
  rl.profile = friction_limited_profile(rl.path, cfg.mu, cfg.gravity, cfg.v_max,
                                        cfg.a_accel, cfg.a_decel, cfg.profile_ds);
  return rl;
}

VelocityProfile friction_limited_profile(const PathSpec& path, double mu, double gravity,
                                         double v_max, double a_accel, double a_decel,
                                         double ds) {
  if (mu <= 0 || gravity <= 0 || v_max <= 0 || a_accel <= 0 || a_decel <= 0 || ds <= 0)
    throw GeometryError("profile parameters must be positive");
  const int m = std::max(2, static_cast<int>(std::ceil(path.total_length / ds)) + 1);
  VelocityProfile prof;
  prof.ds = path.total_length / (m - 1);
  prof.total_length = path.total_length;
  prof.closed = path.closed;
  prof.v.resize(m);
  for (int i = 0; i < m; ++i) {
    const double kappa = std::abs(curvature_at(path, i * prof.ds));
    prof.v[i] = kappa > 1e-12 ? std::min(v_max, std::sqrt(mu * gravity / kappa)) : v_max;
  }
  const int laps = path.closed ? 2 : 1;
  for (int lap = 0; lap < laps; ++lap) {
    for (int i = 1; i < m; ++i) {
      const double reach = std::sqrt(prof.v[i - 1] * prof.v[i - 1] + 2.0 * a_accel * prof.ds);
      prof.v[i] = std::min(prof.v[i], reach);
    }
    if (path.closed) prof.v[0] = std::min(prof.v[0], prof.v[m - 1]);
    for (int i = m - 2; i >= 0; --i) {
      const double reach = std::sqrt(prof.v[i + 1] * prof.v[i + 1] + 2.0 * a_decel * prof.ds);
      prof.v[i] = std::min(prof.v[i], reach);
    }
    if (path.closed) prof.v[m - 1] = std::min(prof.v[m - 1], prof.v[0]);
  }
  return prof;
}

double VelocityProfile::at(double s) const {
  if (v.empty()) return 0.0;
  if (closed) {
    s = std::fmod(s, total_length);
    if (s < 0.0) s += total_length;
  } else {
    s = std::clamp(s, 0.0, total_length);
  }
  const double t = s / ds;
  const int i = std::min(static_cast<int>(t), static_cast<int>(v.size()) - 2);
  const double a = t - i;
  return scale * ((1.0 - a) * v[i] + a * v[i + 1]);
}

// ---------------------------------------------------------------------------
// Intersection

char node_letter(Node n) {
  switch (n) {
    case Node::N: return 'N';
    case Node::W: return 'W';
    case Node::S: return 'S';
    case Node::E: return 'E';
  }
  return '?';
}

Node node_from_letter(char c) {
  switch (c) {
    case 'N': return Node::N;
    case 'W': return Node::W;
    case 'S': return Node::S;
    case 'E': return Node::E;
  }
  throw GeometryError(std::string("unknown node letter: ") + c);
}

Node rotate90(Node n) {
  switch (n) {
    case Node::N: return Node::E;
    case Node::E: return Node::S;
    case Node::S: return Node::W;
    case Node::W: return Node::N;
  }
  return Node::N;
}

std::string RouteSpec::name() const {
  return std::string{node_letter(start_node)} + node_letter(end_node);
}

namespace {

Vector2d node_outward(Node n) {
  switch (n) {
    case Node::N: return {0.0, 1.0};
    case Node::E: return {1.0, 0.0};
    case Node::S: return {0.0, -1.0};
    case Node::W: return {-1.0, 0.0};
  }
  return {0.0, 0.0};
}

Vector2d right_of(const Vector2d& d) { return {d.y(), -d.x()}; }
Vector2d left_of(const Vector2d& d) { return {-d.y(), d.x()}; }

}  // namespace

std::vector<RouteSpec> build_intersection(const IntersectionConfig& cfg) {
  if (cfg.lane_width <= 0 || cfg.approach_length <= 0 || cfg.box_size <= 0)
    throw GeometryError("intersection dimensions must be positive");
  const double hb = cfg.box_size / 2.0;
  const double lo = cfg.lane_width / 2.0;
  const double hw = cfg.lane_width / 2.0;
  std::vector<RouteSpec> routes;
  const std::array<Node, 4> nodes = {Node::N, Node::W, Node::S, Node::E};
  for (Node a : nodes) {
    const Vector2d w_a = node_outward(a);
    const Vector2d d_in = -w_a;
    const Vector2d entry_box = w_a * hb + right_of(d_in) * lo;
    const Vector2d entry_start = entry_box + w_a * cfg.approach_length;
    const double h_in = std::atan2(d_in.y(), d_in.x());
    for (Node b : nodes) {
      if (a == b) continue;
      const Vector2d w_b = node_outward(b);
      const Vector2d exit_box = w_b * hb + right_of(w_b) * lo;
      const double h_out = std::atan2(w_b.y(), w_b.x());

      std::vector<Segment> segs;
      Segment approach;
      approach.kind = SegmentKind::Line;
      approach.length = cfg.approach_length;
      approach.start = {entry_start.x(), entry_start.y(), h_in};
      segs.push_back(approach);

      if ((w_b + w_a).norm() < 1e-12) {  // opposite node: straight through the box
        Segment through;
        through.kind = SegmentKind::Line;
        through.length = cfg.box_size;
        through.start = {entry_box.x(), entry_box.y(), h_in};
        segs.push_back(through);
      } else {
        const bool left_turn = (left_of(d_in) - w_b).norm() < 1e-12;
        const double radius = left_turn ? hb + lo : hb - lo;
        if (radius <= 0) throw GeometryError("lane width too large for right-turn radius");
        Segment arc;
        arc.kind = SegmentKind::Arc;
        arc.curvature = (left_turn ? 1.0 : -1.0) / radius;
        arc.length = (kPi / 2.0) * radius;
        arc.start = {entry_box.x(), entry_box.y(), h_in};
        segs.push_back(arc);
        const Pose arc_end = segment_end(segs.back());
        if (std::abs(arc_end.x - exit_box.x()) > 1e-9 ||
            std::abs(arc_end.y - exit_box.y()) > 1e-9 ||
            std::abs(wrap_angle(arc_end.psi - h_out)) > 1e-9)
          throw GeometryError("turn arc does not meet exit lane");
      }

      Segment exit;
      exit.kind = SegmentKind::Line;
      exit.length = cfg.approach_length;
      exit.start = {exit_box.x(), exit_box.y(), h_out};
      segs.push_back(exit);

      RouteSpec route;
      route.start_node = a;
      route.end_node = b;
      route.s_int = cfg.approach_length;
      route.path = make_path(std::move(segs), hw);
      routes.push_back(std::move(route));
    }
  }
  return routes;
}

const RouteSpec& find_route(const std::vector<RouteSpec>& routes, Node start, Node end) {
  for (const auto& r : routes)
    if (r.start_node == start && r.end_node == end) return r;
  throw GeometryError("route not found");
}

const RouteSpec& find_route(const std::vector<RouteSpec>& routes, const std::string& name) {
  if (name.size() != 2) throw GeometryError("route name must be two letters, e.g. SN");
  return find_route(routes, node_from_letter(name[0]), node_from_letter(name[1]));
}

const ScenarioTable& ScenarioTable::instance() {
  static const ScenarioTable table = [] {
    // 8 scenarios x 4 rotations; first route of each tuple gets the + sign
    static const char* kTuples[8][4][2] = {
        {{"WE", "NE"}, {"NS", "ES"}, {"EW", "SW"}, {"SN", "WN"}},
        {{"WN", "SW"}, {"NE", "WN"}, {"ES", "NE"}, {"SW", "ES"}},
        {{"WE", "NS"}, {"NS", "EW"}, {"EW", "SN"}, {"SN", "WE"}},
        {{"WN", "EN"}, {"NE", "SE"}, {"ES", "WS"}, {"SW", "NW"}},
        {{"WE", "SE"}, {"NS", "WS"}, {"EW", "NW"}, {"SN", "EN"}},
        {{"WE", "SW"}, {"NS", "WN"}, {"EW", "NE"}, {"SN", "ES"}},
        {{"WN", "ES"}, {"NE", "SW"}, {"ES", "WN"}, {"SW", "NE"}},
        {{"WN", "EW"}, {"NE", "SN"}, {"ES", "WE"}, {"SW", "NS"}},
    };
    ScenarioTable t;
    for (int m = 0; m < 8; ++m) {
      for (int k = 0; k < 4; ++k) {
        Entry e;
        e.start_i = node_from_letter(kTuples[m][k][0][0]);
        e.end_i = node_from_letter(kTuples[m][k][0][1]);
        e.start_j = node_from_letter(kTuples[m][k][1][0]);
        e.end_j = node_from_letter(kTuples[m][k][1][1]);
        e.m = m + 1;
        t.entries.push_back(e);
      }
    }
    return t;
  }();
  return table;
}

std::vector<std::pair<std::string, std::string>> ScenarioTable::tuples(int m) const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : entries) {
    if (e.m != m) continue;
    out.emplace_back(std::string{node_letter(e.start_i), node_letter(e.end_i)},
                     std::string{node_letter(e.start_j), node_letter(e.end_j)});
  }
  return out;
}

std::optional<ScenarioEncoding> scenario_encoding(Node start_i, Node end_i, Node start_j,
                                                  Node end_j) {
  if (start_i == start_j && end_i == end_j)
    throw GeometryError("no two vehicles can share identical routes");
  // forward matches win: symmetric scenarios store both orders of a pair
  for (const auto& e : ScenarioTable::instance().entries) {
    if (e.start_i == start_i && e.end_i == end_i && e.start_j == start_j && e.end_j == end_j)
      return ScenarioEncoding{e.m, e.m, -e.m};
  }
  for (const auto& e : ScenarioTable::instance().entries) {
    if (e.start_i == start_j && e.end_i == end_j && e.start_j == start_i && e.end_j == end_i)
      return ScenarioEncoding{e.m, -e.m, e.m};
  }
  return std::nullopt;
}

std::optional<ScenarioEncoding> scenario_encoding(const RouteSpec& route_i,
                                                  const RouteSpec& route_j) {
  return scenario_encoding(route_i.start_node, route_i.end_node, route_j.start_node,
                           route_j.end_node);
}

void export_path_csv(const PathSpec& path, std::ostream& os, double ds) {
  os << "s,x,y,psi,kappa\n";
  char buf[160];
  const int m = std::max(1, static_cast<int>(std::ceil(path.total_length / ds)));
  for (int i = 0; i <= m; ++i) {
    const double s = std::min(path.total_length, i * ds);
    const Pose p = pose_at(path, s);
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g,%.9g\n", s, p.x, p.y, p.psi,
                  curvature_at(path, s));
    os << buf;
    if (s >= path.total_length) break;
  }
}

}  // namespace gtmpc::geometry
