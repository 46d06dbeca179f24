#pragma once

#include <Eigen/Dense>

#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gtmpc::geometry {

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double psi = 0.0;
};

enum class SegmentKind { Line, Arc };

struct Segment {
  SegmentKind kind = SegmentKind::Line;
  double length = 0.0;
  double curvature = 0.0;  // exactly 0 for lines, constant nonzero for arcs
  Pose start;
};

// Arc-length-parameterized reference path made of lines and constant-curvature
// arcs. Joints are C0-continuous; construction validates this.
struct PathSpec {
  std::vector<Segment> segments;
  std::vector<double> s_begin;  // cumulative arc length at each segment start
  double total_length = 0.0;
  double half_width = 0.0;
  bool closed = false;
};

struct FrenetCoord {
  double s = 0.0;
  double e_y = 0.0;
  double e_psi = 0.0;
};

struct GeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Builds the path: fills s_begin / total_length, detects closure, and checks
// the segment invariants (C0 joints, line curvature 0, arc curvature != 0).
PathSpec make_path(std::vector<Segment> segments, double half_width);

double wrap_angle(double a);

// s wrapped into [0, total_length) for closed paths; unchanged otherwise.
double wrap_s(const PathSpec& path, double s);

// Signed progress difference a - b; shortest wrapped representative on closed
// paths, plain difference on open ones.
double signed_s_diff(const PathSpec& path, double a, double b);

// Pose and curvature of the path point at arc length s. Closed paths wrap s;
// open paths extrapolate along the end tangents so s slightly outside
// [0, total_length] stays well defined (used by horizon rollouts that run off
// the end of a route).
Pose pose_at(const PathSpec& path, double s);
double curvature_at(const PathSpec& path, double s);

// Global pose of the point at arc length s, offset e_y along the left normal,
// heading offset e_psi from the tangent. Throws GeometryError when s is
// outside [0, total_length] on an open path beyond extrapolation_slack.
Pose frenet_to_cartesian(const PathSpec& path, double s, double e_y, double e_psi);

// Inverse of frenet_to_cartesian. Throws GeometryError when the projection is
// ambiguous (equidistant to separated path regions) or degenerate (query at an
// arc center).
FrenetCoord cartesian_to_frenet(const PathSpec& path, double x, double y, double psi);

// ---------------------------------------------------------------------------
// Race track

struct LTrackConfig {
  // corner-vertex skeleton of the closed L shape, counter-clockwise
  double leg_a = 70.0;   // bottom edge length
  double leg_b = 30.0;   // right edge height
  double leg_c = 35.0;   // notch x position
  double leg_d = 55.0;   // left edge height
  double corner_radius = 9.0;
  double half_width = 4.0;
  // raceline shaping
  double corner_cut = 0.3;  // fraction of half width used for corner widening
  // velocity profile
  double mu = 0.9;
  double gravity = 9.81;
  double v_max = 15.0;
  double a_accel = 3.0;   // forward pass limit
  double a_decel = 4.0;   // backward pass limit
  double profile_ds = 0.5;
};

struct VelocityProfile {
  double ds = 0.0;
  std::vector<double> v;  // samples at s = 0, ds, 2*ds, ... over one lap
  double total_length = 0.0;
  bool closed = false;
  double scale = 1.0;  // uniform multiplier (slow-vehicle handicap)

  double at(double s) const;
};

struct Raceline {
  PathSpec path;
  VelocityProfile profile;
};

// Closed L-shaped centerline. Throws GeometryError on non-positive dimensions
// or radii too large for the legs.
PathSpec build_l_track(const LTrackConfig& cfg);

// Raceline: the track rebuilt on the same corner skeleton with every corner
// radius enlarged by corner_cut * half_width * (sqrt(2)+1), which shifts each
// apex outward by corner_cut * half_width while keeping exact line/arc
// geometry, plus a friction-limited velocity profile.
Raceline build_raceline(const LTrackConfig& cfg);

// Forward/backward pass velocity profile: v <= sqrt(mu g / |kappa|), capped at
// v_max, accel/decel limited; iterated across the wrap for closed paths.
VelocityProfile friction_limited_profile(const PathSpec& path, double mu, double gravity,
                                         double v_max, double a_accel, double a_decel,
                                         double ds);

// ---------------------------------------------------------------------------
// Intersection

enum class Node { N, W, S, E };

char node_letter(Node n);
Node node_from_letter(char c);
Node rotate90(Node n);  // N -> E -> S -> W -> N

struct RouteSpec {
  Node start_node = Node::N;
  Node end_node = Node::S;
  PathSpec path;
  double s_int = 0.0;  // progress at which the route enters the intersection box

  std::string name() const;
};

struct IntersectionConfig {
  double lane_width = 4.0;
  double approach_length = 15.0;
  double box_size = 8.0;
  double margin = 0.3;  // lateral margin used by state bounds
};

// All 12 directed routes of the four-way intersection. Straight routes run
// through the box as lines, turns as single arcs; every route shares
// s_int = approach_length.
std::vector<RouteSpec> build_intersection(const IntersectionConfig& cfg);

const RouteSpec& find_route(const std::vector<RouteSpec>& routes, Node start, Node end);
const RouteSpec& find_route(const std::vector<RouteSpec>& routes, const std::string& name);

struct ScenarioEncoding {
  int m = 0;     // scenario index, 1..8
  int sc_i = 0;  // signed encoding of route_i, |sc_i| = m
  int sc_j = 0;  // = -sc_i
};

// The 32 ordered route tuples grouped into 8 scenarios; the first route of a
// stored tuple carries the + sign.
struct ScenarioTable {
  struct Entry {
    Node start_i, end_i, start_j, end_j;
    int m;
  };
  std::vector<Entry> entries;

  static const ScenarioTable& instance();
  // tuples of scenario m in stored order
  std::vector<std::pair<std::string, std::string>> tuples(int m) const;
};

// Scenario lookup for an ordered route pair. nullopt = routes do not interact.
// Throws GeometryError for identical routes.
std::optional<ScenarioEncoding> scenario_encoding(const RouteSpec& route_i,
                                                  const RouteSpec& route_j);
std::optional<ScenarioEncoding> scenario_encoding(Node start_i, Node end_i,
                                                  Node start_j, Node end_j);

// CSV polyline export, columns s,x,y,psi,kappa at spacing ds.
void export_path_csv(const PathSpec& path, std::ostream& os, double ds);

}  // namespace gtmpc::geometry
