#include "gtmpc/dataset.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "gtmpc/rng.hpp"

namespace gtmpc::dataset {

using Eigen::Vector2d;
using Eigen::Vector4d;
using Eigen::VectorXd;

std::string to_string(Family f) {
  return f == Family::Racing ? "racing" : "intersection";
}

Family family_from_string(const std::string& s) {
  if (s == "racing") return Family::Racing;
  if (s == "intersection") return Family::Intersection;
  throw ParseError("unknown family: " + s);
}

RacingWorld make_racing_world(const geometry::LTrackConfig& track_cfg,
                              const dynamics::VehicleParams& params,
                              const GameWeights& weights) {
  RacingWorld w;
  w.track_cfg = track_cfg;
  w.centerline = geometry::build_l_track(track_cfg);
  w.raceline = geometry::build_raceline(track_cfg);
  w.params = params;
  w.params.validate();
  w.weights = weights;
  w.d_min = 1.5 * params.car_length;
  w.l_int = 8.0 * params.car_length;
  w.ic_v_max = 0.8 * params.v_max;
  return w;
}

IntersectionWorld make_intersection_world(const geometry::IntersectionConfig& cfg,
                                          const dynamics::VehicleParams& params,
                                          const GameWeights& weights) {
  IntersectionWorld w;
  w.cfg = cfg;
  w.routes = geometry::build_intersection(cfg);
  w.params = params;
  w.params.validate();
  w.weights = weights;
  w.d_min = 1.5 * params.car_length;
  return w;
}

game::GameSpec make_racing_game(const RacingWorld& world,
                                const std::array<Vector4d, 2>& z0, int horizon, double dt) {
  game::GameSpec g;
  g.horizon = horizon;
  g.dt = dt;
  g.d_min = world.d_min;
  const auto& wts = world.weights;
  for (int a = 0; a < 2; ++a) {
    g.model[a] = game::vehicle_model(world.raceline.path, world.params, dt);
    g.z0[a] = z0[a];

    game::AgentCost cost;
    cost.Q = Eigen::Matrix4d::Zero();
    cost.Q(dynamics::kIdxV, dynamics::kIdxV) = wts.q_v;
    cost.Q(dynamics::kIdxEpsi, dynamics::kIdxEpsi) = wts.q_epsi;
    cost.Q(dynamics::kIdxEy, dynamics::kIdxEy) = wts.q_ey;
    const auto* profile = &world.raceline.profile;
    cost.z_ref = [profile](int, const VectorXd& z) {
      VectorXd ref = VectorXd::Zero(4);
      ref[dynamics::kIdxV] = profile->at(z[dynamics::kIdxS]);
      return ref;
    };
    cost.z_ref_jac = [profile](int, const VectorXd& z) {
      Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(4, 4);
      const double h = 0.05;
      const double s = z[dynamics::kIdxS];
      jac(dynamics::kIdxV, dynamics::kIdxS) =
          (profile->at(s + h) - profile->at(s - h)) / (2.0 * h);
      return jac;
    };
    cost.R1 = Eigen::Vector2d(wts.r_a, wts.r_delta).asDiagonal();
    cost.R2 = Eigen::Vector2d(wts.r_da, wts.r_ddelta).asDiagonal();
    cost.u_prev = Eigen::Vector2d::Zero();
    cost.q_term = VectorXd::Zero(4);
    cost.q_term[dynamics::kIdxS] = -wts.w_progress;
    cost.r_cross = VectorXd::Zero(4);
    cost.r_cross[dynamics::kIdxS] = wts.w_progress;  // reported J^i only
    g.cost[a] = cost;

    game::AgentBounds b;
    const auto& p = world.params;
    b.z_lb = VectorXd::Constant(4, -game::kUnbounded);
    b.z_ub = VectorXd::Constant(4, game::kUnbounded);
    b.z_lb[dynamics::kIdxV] = p.v_min;
    b.z_ub[dynamics::kIdxV] = p.v_max;
    b.z_lb[dynamics::kIdxEpsi] = -p.e_psi_max;
    b.z_ub[dynamics::kIdxEpsi] = p.e_psi_max;
    b.z_lb[dynamics::kIdxEy] = -p.e_y_max;
    b.z_ub[dynamics::kIdxEy] = p.e_y_max;
    b.u_lb = Eigen::Vector2d(p.a_min, p.delta_min);
    b.u_ub = Eigen::Vector2d(p.a_max, p.delta_max);
    b.du_lb = Eigen::Vector2d(-p.da_max, -p.ddelta_max);
    b.du_ub = Eigen::Vector2d(p.da_max, p.ddelta_max);
    g.bounds[a] = b;

    g.extra[a] = game::friction_constraint(world.params);

    // stabilizing start: track the raceline at the profile speed (zero inputs
    // can coast off a corner and out of the Frenet chart)
    const auto* path = &world.raceline.path;
    const auto params = world.params;
    g.start_policy[a] = [path, profile, params](int, const VectorXd& z) {
      const double kappa = geometry::curvature_at(*path, z[dynamics::kIdxS]);
      double delta = std::atan(kappa * params.wheelbase) -
                     0.4 * z[dynamics::kIdxEy] - 1.0 * z[dynamics::kIdxEpsi];
      delta = std::clamp(delta, params.delta_min, params.delta_max);
      const double v_ref = 0.9 * profile->at(z[dynamics::kIdxS]);
      double a_cmd = std::clamp(2.0 * (v_ref - z[dynamics::kIdxV]), params.a_min, params.a_max);
      a_cmd = std::max(a_cmd, -z[dynamics::kIdxV] / 0.2);
      return Eigen::Vector2d(a_cmd, delta);
    };
  }
  return g;
}

game::GameSpec make_intersection_game(const IntersectionWorld& world,
                                      const geometry::RouteSpec& route_1,
                                      const geometry::RouteSpec& route_2,
                                      const std::array<Vector2d, 2>& z0, int horizon,
                                      double dt) {
  game::GameSpec g;
  g.horizon = horizon;
  g.dt = dt;
  g.d_min = world.d_min;
  const auto& wts = world.weights;
  const geometry::RouteSpec* routes[2] = {&route_1, &route_2};
  for (int a = 0; a < 2; ++a) {
    g.model[a] = game::longitudinal_model(routes[a]->path, dt);
    g.z0[a] = z0[a];

    game::AgentCost cost;
    cost.Q = Eigen::MatrixXd::Zero(2, 2);
    cost.R1 = Eigen::MatrixXd::Constant(1, 1, wts.r_a);
    cost.R2 = Eigen::MatrixXd::Constant(1, 1, wts.r_da);
    cost.u_prev = VectorXd::Zero(1);
    cost.q_term = VectorXd::Zero(2);
    cost.q_term[0] = -wts.w_progress;  // z = [s, v]
    g.cost[a] = cost;

    game::AgentBounds b;
    const auto& p = world.params;
    b.z_lb = Eigen::Vector2d(-game::kUnbounded, p.v_min);
    b.z_ub = Eigen::Vector2d(game::kUnbounded, p.v_max);
    b.u_lb = VectorXd::Constant(1, p.a_min);
    b.u_ub = VectorXd::Constant(1, p.a_max);
    b.du_lb = VectorXd::Constant(1, -p.da_max);
    b.du_ub = VectorXd::Constant(1, p.da_max);
    g.bounds[a] = b;
  }
  return g;
}

ConflictWindow conflict_window(const geometry::PathSpec& path_1,
                               const geometry::PathSpec& path_2, double d_min, double ds) {
  ConflictWindow w;
  const double margin = 0.25;
  const double limit = d_min + margin;
  double lo1 = 1e30, hi1 = -1e30, lo2 = 1e30, hi2 = -1e30;
  std::vector<Eigen::Vector2d> pts2;
  const int n2 = static_cast<int>(path_2.total_length / ds) + 1;
  pts2.reserve(n2);
  for (int j = 0; j < n2; ++j) {
    const auto p = geometry::pose_at(path_2, j * ds);
    pts2.emplace_back(p.x, p.y);
  }
  const int n1 = static_cast<int>(path_1.total_length / ds) + 1;
  for (int i = 0; i < n1; ++i) {
    const double s1 = i * ds;
    const auto p = geometry::pose_at(path_1, s1);
    const Eigen::Vector2d p1(p.x, p.y);
    for (int j = 0; j < n2; ++j) {
      if ((p1 - pts2[j]).norm() < limit) {
        const double s2 = j * ds;
        lo1 = std::min(lo1, s1);
        hi1 = std::max(hi1, s1);
        lo2 = std::min(lo2, s2);
        hi2 = std::max(hi2, s2);
      }
    }
  }
  if (hi1 >= lo1) {
    w.exists = true;
    w.s_in[0] = lo1;
    w.s_out[0] = hi1;
    w.s_in[1] = lo2;
    w.s_out[1] = hi2;
  }
  return w;
}

namespace {

// constructive warm start for one yield order: the leader tracks v_max, the
// yielder stops short of its conflict entry until the leader has cleared
std::array<Eigen::MatrixXd, 2> order_warm_start(const IntersectionWorld& world,
                                                const ConflictWindow& win, int leader,
                                                const std::array<Eigen::Vector2d, 2>& z0,
                                                int horizon, double dt) {
  const auto& p = world.params;
  std::array<Eigen::MatrixXd, 2> u;
  for (int a = 0; a < 2; ++a) u[a] = Eigen::MatrixXd::Zero(1, horizon);

  auto advance = [dt](double& s, double& v, double a_cmd) {
    s += v * dt + 0.5 * a_cmd * dt * dt;
    v = std::max(0.0, v + a_cmd * dt);
  };

  // leader: full-throttle profile, rate-limited
  int clear_step = horizon;
  {
    double s = z0[leader][0], v = z0[leader][1], prev_a = 0.0;
    for (int k = 0; k < horizon; ++k) {
      double a_cmd = std::clamp((p.v_max - v) / dt, p.a_min, p.a_max);
      a_cmd = std::clamp(a_cmd, prev_a - p.da_max, prev_a + p.da_max);
      u[leader](0, k) = a_cmd;
      prev_a = a_cmd;
      advance(s, v, a_cmd);
      if (win.exists && clear_step == horizon && s >= win.s_out[leader] + 0.5)
        clear_step = k + 1;
    }
    if (!win.exists) clear_step = 0;
  }

  // yielder: approach, hold short of the conflict entry, go after clearance
  {
    const int y = 1 - leader;
    const double stop_s = win.exists ? win.s_in[y] - 0.75 : 1e30;
    double s = z0[y][0], v = z0[y][1], prev_a = 0.0;
    for (int k = 0; k < horizon; ++k) {
      double a_cmd;
      if (k >= clear_step) {
        a_cmd = (p.v_max - v) / dt;
      } else {
        const double brake_dist = v * v / (2.0 * 0.9 * -p.a_min);
        a_cmd = (s + v * dt + brake_dist >= stop_s) ? p.a_min : (p.v_max - v) / dt;
      }
      a_cmd = std::max(a_cmd, -v / dt);  // keep v nonnegative
      a_cmd = std::clamp(a_cmd, p.a_min, p.a_max);
      a_cmd = std::clamp(a_cmd, prev_a - p.da_max, prev_a + p.da_max);
      u[y](0, k) = a_cmd;
      prev_a = a_cmd;
      advance(s, v, a_cmd);
    }
  }
  return u;
}

}  // namespace

game::GneSolution solve_intersection_game(const IntersectionWorld& world,
                                          const geometry::RouteSpec& route_1,
                                          const geometry::RouteSpec& route_2,
                                          const std::array<Eigen::Vector2d, 2>& z0,
                                          int horizon, double dt,
                                          const game::SolverOptions& options) {
  const auto spec = make_intersection_game(world, route_1, route_2, z0, horizon, dt);
  const auto win = conflict_window(route_1.path, route_2.path, world.d_min);
  game::GneSolution best;
  bool have = false;
  const int n_orders = win.exists ? 2 : 1;
  for (int leader = 0; leader < n_orders; ++leader) {
    const auto warm = order_warm_start(world, win, leader, z0, horizon, dt);
    const auto sol = game::solve_potential_nlp(spec, options, warm);
    if (sol.status == game::SolveStatus::Infeasible && !have) best = sol;
    if (sol.status != game::SolveStatus::Converged) continue;
    if (!have || sol.potential < best.potential) {
      best = sol;
      have = true;
    }
  }
  if (!have && best.u[0].size() == 0) {
    // neither hypothesis converged; report the plain cold solve
    best = game::solve_potential_nlp(spec, options);
  }
  return best;
}

dynamics::JointState sample_racing_ic(const RacingWorld& world, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  const auto& path = world.raceline.path;
  const auto& p = world.params;
  dynamics::JointState joint;
  for (int attempt = 0; attempt < 200; ++attempt) {
    const double s1 = rng.uniform(0.0, path.total_length);
    const double ds = rng.uniform(-world.l_int, world.l_int);
    const double s2 = geometry::wrap_s(path, s1 + ds);
    double svals[2] = {s1, s2};
    bool ok = true;
    for (int a = 0; a < 2; ++a) {
      Vector4d z;
      z[dynamics::kIdxV] = rng.uniform(world.ic_v_min, std::min(world.ic_v_max, p.v_max));
      z[dynamics::kIdxEpsi] = rng.uniform(-world.ic_e_psi, world.ic_e_psi);
      z[dynamics::kIdxS] = svals[a];
      z[dynamics::kIdxEy] = rng.uniform(-0.9 * p.e_y_max, 0.9 * p.e_y_max);
      joint.agents[a] = dynamics::AgentState::from_frenet(z, path);
      const auto rep = dynamics::in_bounds(joint.agents[a], {}, {}, p);
      if (!rep.ok) ok = false;
    }
    if (ok) return joint;
  }
  throw std::runtime_error("racing IC sampling failed to produce in-bounds states");
}

IntersectionIc sample_intersection_ic(const IntersectionWorld& world, int scenario_m,
                                      std::uint64_t rng_seed) {
  if (scenario_m < 1 || scenario_m > 8)
    throw std::invalid_argument("scenario index must be 1..8");
  Rng rng(rng_seed);
  const auto tuples = geometry::ScenarioTable::instance().tuples(scenario_m);
  const auto& pick = tuples[static_cast<std::size_t>(rng.uniform_int(0, 3))];
  IntersectionIc ic;
  ic.route[0] = &geometry::find_route(world.routes, pick.first);
  ic.route[1] = &geometry::find_route(world.routes, pick.second);
  const double s_int = ic.route[0]->s_int;
  ic.s0[0] = rng.uniform(0.0, s_int / 2.0);
  ic.s0[1] = rng.uniform(0.0, s_int / 2.0);
  ic.v0[0] = 0.0;
  ic.v0[1] = 0.0;
  if (std::abs(ic.s0[0] - ic.s0[1]) < 1e-3) ic.s0[1] += 1e-3;  // symmetry tie-break
  const auto enc = geometry::scenario_encoding(*ic.route[0], *ic.route[1]);
  if (!enc) throw std::logic_error("scenario table tuple did not encode");
  ic.enc = *enc;
  return ic;
}

double compute_reward_racing(const dynamics::JointState& z_final, int i) {
  const int own = i - 1;
  return z_final.agents[own].s - z_final.agents[1 - own].s;
}

double compute_reward_intersection(const dynamics::JointState& z_final, int) {
  return z_final.agents[0].s + z_final.agents[1].s;
}

Eigen::VectorXd build_features(const dynamics::JointState& z0, int i,
                               const std::optional<std::pair<int, int>>& scenario_codes,
                               const geometry::PathSpec* racing_path) {
  const int own = i - 1;
  const int opp = 1 - own;
  if (scenario_codes) {
    const double sc_own = own == 0 ? scenario_codes->first : scenario_codes->second;
    const double sc_opp = own == 0 ? scenario_codes->second : scenario_codes->first;
    Eigen::VectorXd x(6);
    x << z0.agents[opp].s, z0.agents[opp].v, sc_opp, z0.agents[own].s - z0.agents[opp].s,
        z0.agents[own].v - z0.agents[opp].v, sc_own - sc_opp;
    return x;
  }
  if (!racing_path)
    throw std::invalid_argument("racing features need the reference path for s wrapping");
  const auto& zo = z0.agents[opp];
  const auto& zi = z0.agents[own];
  Eigen::VectorXd x(8);
  x << zo.v, zo.e_psi, geometry::wrap_s(*racing_path, zo.s), zo.e_y, zi.v - zo.v,
      zi.e_psi - zo.e_psi, geometry::signed_s_diff(*racing_path, zi.s, zo.s),
      zi.e_y - zo.e_y;
  return x;
}

namespace {

std::string hash_config(const GenerationConfig& cfg) {
  std::ostringstream os;
  os << to_string(cfg.family) << '|' << cfg.scenario << '|' << cfg.n_games << '|'
     << cfg.horizon << '|' << cfg.dt << '|' << cfg.seed;
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : os.str()) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct GameOutcome {
  bool produced = false;
  bool feasible = true;
  bool skipped = false;
  std::array<Sample, 2> samples;
};

}  // namespace

Dataset generate_dataset(const GenerationConfig& cfg, const RacingWorld* racing,
                         const IntersectionWorld* intersection, GenerationStats* stats) {
  const bool is_race = cfg.family == Family::Racing;
  if (is_race && racing == nullptr) throw std::invalid_argument("racing world missing");
  if (!is_race && intersection == nullptr)
    throw std::invalid_argument("intersection world missing");
  const int horizon = cfg.horizon > 0 ? cfg.horizon : (is_race ? 25 : 200);

  Dataset out;
  out.meta.family = to_string(cfg.family);
  out.meta.scenario_m = is_race ? 0 : cfg.scenario;
  out.meta.n_x = is_race ? 8 : 6;
  out.meta.n_g = horizon;
  out.meta.dt = cfg.dt;
  out.meta.config_hash = hash_config(cfg);
  out.meta.low_reward =
      is_race ? -(horizon * cfg.dt * (racing ? racing->params.v_max : 15.0)) : 0.0;

  std::vector<GameOutcome> slots(cfg.n_games);
  std::atomic<int> next{0};
  const int hw = static_cast<int>(std::thread::hardware_concurrency());
  const int n_threads = std::max(1, cfg.threads > 0 ? cfg.threads : hw);

  auto solve_one = [&](int g) {
    GameOutcome& slot = slots[g];
    const std::uint64_t seed_g = Rng::derive(cfg.seed, static_cast<std::uint64_t>(g));
    try {
      dynamics::JointState ic_state;
      std::optional<std::pair<int, int>> codes;
      game::GneSolution sol;
      if (is_race) {
        ic_state = sample_racing_ic(*racing, seed_g);
        const std::array<Vector4d, 2> z0 = {ic_state.agents[0].frenet(),
                                            ic_state.agents[1].frenet()};
        auto spec = make_racing_game(*racing, z0, horizon, cfg.dt);
        sol = game::solve_gne_sqp(spec, cfg.solver);
      } else {
        const auto ic = sample_intersection_ic(*intersection, cfg.scenario, seed_g);
        codes = std::make_pair(ic.enc.sc_i, ic.enc.sc_j);
        std::array<Vector2d, 2> z0 = {Vector2d(ic.s0[0], ic.v0[0]),
                                      Vector2d(ic.s0[1], ic.v0[1])};
        for (int a = 0; a < 2; ++a) {
          ic_state.agents[a].s = z0[a][0];
          ic_state.agents[a].v = z0[a][1];
        }
        sol = solve_intersection_game(*intersection, *ic.route[0], *ic.route[1], z0, horizon,
                                      cfg.dt, cfg.solver);
      }
      if (sol.status == game::SolveStatus::MaxIterations ||
          sol.status == game::SolveStatus::NonConvergent) {
        slot.skipped = true;
        return;
      }
      const bool feasible = sol.status == game::SolveStatus::Converged;
      dynamics::JointState z_final;
      if (feasible) {
        for (int a = 0; a < 2; ++a) {
          if (is_race) {
            z_final.agents[a].s = sol.z[a](dynamics::kIdxS, horizon);
          } else {
            z_final.agents[a].s = sol.z[a](0, horizon);
          }
        }
      }
      for (int i = 1; i <= 2; ++i) {
        Sample s;
        const Eigen::VectorXd x = build_features(
            ic_state, i, codes, is_race ? &racing->raceline.path : nullptr);
        s.features.assign(x.data(), x.data() + x.size());
        s.agent_perspective = i;
        s.scenario = codes ? (i == 1 ? codes->first : codes->second) : 0;
        s.feasible = feasible;
        s.source_seed = seed_g;
        if (feasible) {
          s.target = is_race ? compute_reward_racing(z_final, i)
                             : compute_reward_intersection(z_final, i);
        } else {
          s.target = out.meta.low_reward;
        }
        slot.samples[i - 1] = std::move(s);
      }
      slot.feasible = feasible;
      slot.produced = true;
    } catch (const std::exception&) {
      slot.skipped = true;  // logged as a skip, never corrupts the dataset
    }
  };

  if (n_threads == 1) {
    for (int g = 0; g < cfg.n_games; ++g) solve_one(g);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t) {
      pool.emplace_back([&] {
        for (int g = next.fetch_add(1); g < cfg.n_games; g = next.fetch_add(1)) solve_one(g);
      });
    }
    for (auto& th : pool) th.join();
  }

  GenerationStats local;
  for (auto& slot : slots) {
    if (slot.skipped || !slot.produced) {
      ++local.skipped;
      continue;
    }
    if (slot.feasible)
      ++local.converged;
    else
      ++local.infeasible;
    out.samples.push_back(std::move(slot.samples[0]));
    out.samples.push_back(std::move(slot.samples[1]));
  }
  if (stats) *stats = local;
  return out;
}

void save_dataset(const Dataset& d, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ParseError("cannot open " + path + " for writing");
  os << "seed,perspective,scenario,feasible";
  for (int i = 0; i < d.meta.n_x; ++i) os << ",f_" << i;
  os << ",target\n";
  char buf[64];
  for (const auto& s : d.samples) {
    os << s.source_seed << ',' << s.agent_perspective << ',' << s.scenario << ','
       << (s.feasible ? 1 : 0);
    for (double f : s.features) {
      std::snprintf(buf, sizeof(buf), ",%.17g", f);
      os << buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.17g\n", s.target);
    os << buf;
  }
  std::ofstream meta(path + ".meta");
  meta << "family=" << d.meta.family << "\n";
  meta << "scenario=" << d.meta.scenario_m << "\n";
  meta << "n_x=" << d.meta.n_x << "\n";
  meta << "n_g=" << d.meta.n_g << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", d.meta.dt);
  meta << "dt=" << buf << "\n";
  meta << "config_hash=" << d.meta.config_hash << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", d.meta.low_reward);
  meta << "low_reward=" << buf << "\n";
  meta << "count=" << d.samples.size() << "\n";
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open " + path);
  Dataset d;

  std::ifstream meta(path + ".meta");
  if (!meta) throw ParseError("missing sidecar " + path + ".meta");
  std::string line;
  std::size_t expected = 0;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "family") d.meta.family = val;
    else if (key == "scenario") d.meta.scenario_m = std::stoi(val);
    else if (key == "n_x") d.meta.n_x = std::stoi(val);
    else if (key == "n_g") d.meta.n_g = std::stoi(val);
    else if (key == "dt") d.meta.dt = std::stod(val);
    else if (key == "config_hash") d.meta.config_hash = val;
    else if (key == "low_reward") d.meta.low_reward = std::stod(val);
    else if (key == "count") expected = std::stoul(val);
  }
  if (d.meta.n_x <= 0) throw ParseError("sidecar missing n_x");

  int line_no = 0;
  if (!std::getline(is, line)) throw ParseError("empty dataset file");
  ++line_no;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (static_cast<int>(cells.size()) != 5 + d.meta.n_x)
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(5 + d.meta.n_x) + " columns, got " +
                       std::to_string(cells.size()));
    try {
      Sample s;
      s.source_seed = std::stoull(cells[0]);
      s.agent_perspective = std::stoi(cells[1]);
      s.scenario = std::stoi(cells[2]);
      s.feasible = std::stoi(cells[3]) != 0;
      for (int i = 0; i < d.meta.n_x; ++i) s.features.push_back(std::stod(cells[4 + i]));
      s.target = std::stod(cells[4 + d.meta.n_x]);
      d.samples.push_back(std::move(s));
    } catch (const std::invalid_argument&) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": malformed number");
    }
  }
  if (expected != 0 && expected != d.samples.size())
    throw ParseError(path + ": truncated (sidecar count " + std::to_string(expected) +
                     ", file has " + std::to_string(d.samples.size()) + ")");
  return d;
}

}  // namespace gtmpc::dataset
