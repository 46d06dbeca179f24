#include "gtmpc/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <thread>

#include <json.hpp>

namespace gtmpc::harness {

using Eigen::Vector2d;
using Eigen::Vector4d;
using json = nlohmann::json;

mpc::Forecast forecast_oracle(const std::optional<mpc::MpcSolution>& opponent_prev_plan,
                              bool opponent_was_safety, const dynamics::AgentState& opponent_now,
                              const geometry::PathSpec& opponent_path,
                              const dynamics::VehicleParams& opponent_params, int N, double dt,
                              const std::array<double, 4>& sigma, Rng& rng) {
  mpc::Forecast f;
  f.states.resize(4, N + 1);
  if (opponent_was_safety || !opponent_prev_plan) {
    // constant braking after a safety tick, constant speed before any plan
    const double decel = opponent_was_safety ? opponent_params.a_min : 0.0;
    double s = opponent_now.s;
    double v = opponent_now.v;
    for (int k = 0; k <= N; ++k) {
      f.states.col(k) = Vector4d(v, opponent_now.e_psi, s, opponent_now.e_y);
      s += v * dt;
      v = std::max(0.0, v + decel * dt);
    }
  } else {
    const auto& plan = opponent_prev_plan->z;  // computed one tick ago
    for (int k = 0; k <= N; ++k) {
      if (k + 1 <= N) {
        f.states.col(k) = plan.col(k + 1);
      } else {
        Vector4d last = plan.col(N);
        last[dynamics::kIdxS] += dt * last[dynamics::kIdxV];
        f.states.col(k) = last;
      }
    }
  }
  bool noisy = false;
  for (double s : sigma) noisy = noisy || s > 0.0;
  if (noisy) {
    for (int k = 0; k <= N; ++k)
      for (int c = 0; c < 4; ++c)
        if (sigma[c] > 0.0) f.states(c, k) += sigma[c] * rng.normal();
    f.states.row(dynamics::kIdxV) = f.states.row(dynamics::kIdxV).cwiseMax(0.0);
  }
  f.positions.resize(2, N + 1);
  for (int k = 0; k <= N; ++k) {
    const geometry::Pose ref = geometry::pose_at(opponent_path, f.states(dynamics::kIdxS, k));
    const double e_y = f.states(dynamics::kIdxEy, k);
    f.positions.col(k) =
        Vector2d(ref.x - e_y * std::sin(ref.psi), ref.y + e_y * std::cos(ref.psi));
  }
  return f;
}

namespace {

struct AgentSetup {
  const geometry::PathSpec* path = nullptr;
  const geometry::VelocityProfile* profile = nullptr;  // racing only
  geometry::VelocityProfile scaled_profile;            // storage for the slow car
  dynamics::VehicleParams vp;
  mpc::TerminalSelector selector = mpc::TerminalSelector::MP;
  const valuefn::TrainedValueFn* model = nullptr;
  std::optional<std::pair<int, int>> codes;  // (sc_own, sc_opp)
  double complete_s = 0.0;                   // progress threshold for completion
  dynamics::AgentState state;
};

}  // namespace

std::pair<SimLog, Metrics> run_closed_loop(const SimConfig& cfg,
                                           const dataset::RacingWorld* racing,
                                           const dataset::IntersectionWorld* intersection) {
  const bool is_race = cfg.family == dataset::Family::Racing;
  if (is_race && !racing) throw std::invalid_argument("racing world missing");
  if (!is_race && !intersection) throw std::invalid_argument("intersection world missing");

  std::array<AgentSetup, 2> agents;
  Rng rng(cfg.seed);
  int fast_agent = 1;

  if (is_race) {
    const auto& world = *racing;
    dynamics::JointState ic;
    for (int attempt = 0;; ++attempt) {
      ic = dataset::sample_racing_ic(world, Rng::derive(cfg.seed, 9000 + attempt));
      const double dx = ic.agents[0].x - ic.agents[1].x;
      const double dy = ic.agents[0].y - ic.agents[1].y;
      if (std::hypot(dx, dy) >= 1.2 * world.d_min) break;
      if (attempt > 200) throw std::runtime_error("no collision-free racing IC found");
    }
    fast_agent = 1 - cfg.racing.slow_agent;
    for (int a = 0; a < 2; ++a) {
      agents[a].path = &world.raceline.path;
      agents[a].vp = world.params;
      agents[a].selector = cfg.racing.selector[a];
      agents[a].model = cfg.racing.model[a];
      agents[a].scaled_profile = world.raceline.profile;
      if (a == cfg.racing.slow_agent) {
        agents[a].scaled_profile.scale = cfg.racing.slow_factor;
        agents[a].vp.v_max *= cfg.racing.slow_factor;
      }
      agents[a].profile = &agents[a].scaled_profile;
      agents[a].complete_s = std::numeric_limits<double>::infinity();
      agents[a].state = ic.agents[a];
    }
  } else {
    const auto& world = *intersection;
    const geometry::RouteSpec* route[2];
    std::array<double, 2> s0;
    if (cfg.intersection.routes) {
      route[0] = &geometry::find_route(world.routes, cfg.intersection.routes->first);
      route[1] = &geometry::find_route(world.routes, cfg.intersection.routes->second);
      if (cfg.intersection.s0) {
        s0 = *cfg.intersection.s0;
      } else {
        s0[0] = rng.uniform(0.0, route[0]->s_int / 2.0);
        s0[1] = rng.uniform(0.0, route[1]->s_int / 2.0);
      }
    } else {
      const auto ic = dataset::sample_intersection_ic(world, cfg.intersection.scenario,
                                                      Rng::derive(cfg.seed, 7731));
      route[0] = ic.route[0];
      route[1] = ic.route[1];
      s0 = {ic.s0[0], ic.s0[1]};
    }
    const auto enc = geometry::scenario_encoding(*route[0], *route[1]);
    if (!enc) throw std::invalid_argument("route pair does not interact");
    for (int a = 0; a < 2; ++a) {
      agents[a].path = &route[a]->path;
      agents[a].vp = world.params;
      agents[a].selector = cfg.intersection.selector[a];
      agents[a].model = cfg.intersection.model[a];
      const int sc_own = a == 0 ? enc->sc_i : enc->sc_j;
      const int sc_opp = a == 0 ? enc->sc_j : enc->sc_i;
      agents[a].codes = std::make_pair(sc_own, sc_opp);
      agents[a].complete_s = route[a]->path.total_length - 0.5;
      Vector4d z(0.0, 0.0, s0[a], 0.0);
      agents[a].state = dynamics::AgentState::from_frenet(z, route[a]->path);
    }
  }

  SimLog log;
  std::array<mpc::PolicyState, 2> policy;
  std::array<std::optional<mpc::MpcSolution>, 2> prev_plan;
  std::array<bool, 2> prev_safety{false, false};

  for (int t = 0; t < cfg.T; ++t) {
    StepRecord rec;
    rec.t = t;
    std::array<mpc::Forecast, 2> forecasts;
    for (int a = 0; a < 2; ++a) {
      const int o = 1 - a;
      const std::array<double, 4> sigma =
          is_race ? cfg.racing.sigma : std::array<double, 4>{0.0, 0.0, 0.0, 0.0};
      forecasts[a] = forecast_oracle(prev_plan[o], prev_safety[o], agents[o].state,
                                     *agents[o].path, agents[o].vp, cfg.mpc.N, cfg.mpc.dt,
                                     sigma, rng);
    }
    std::array<mpc::PolicyOutcome, 2> outcome;
    for (int a = 0; a < 2; ++a) {
      mpc::MpcConfig agent_cfg = cfg.mpc;
      agent_cfg.vp = agents[a].vp;
      agent_cfg.selector = agents[a].selector;
      agent_cfg.friction_on = is_race;
      mpc::ReferenceSpec ref;
      ref.path = agents[a].path;
      ref.v_profile = agents[a].profile;
      ref.v_ref_const = agents[a].vp.v_max;
      const auto problem = mpc::build_fhocp(
          agents[a].state.frenet(), forecasts[a], ref, agent_cfg, agents[a].model,
          cfg.family, agents[a].codes, policy[a].last_applied);
      outcome[a] = mpc::policy_step(policy[a], problem, cfg.solver);
      rec.agent[a].state = agents[a].state;
      rec.agent[a].input = outcome[a].input;
      rec.agent[a].status = outcome[a].solution.status;
      rec.agent[a].safety = outcome[a].safety_applied;
      rec.agent[a].iterations = outcome[a].solution.iterations;
      rec.agent[a].solve_time = outcome[a].solution.solve_time;
    }
    for (int a = 0; a < 2; ++a) {
      agents[a].state =
          dynamics::step(agents[a].state, outcome[a].input, *agents[a].path, cfg.mpc.dt,
                         agents[a].vp);
      prev_plan[a] = outcome[a].solution.status == mpc::SolveStatus::Converged
                         ? std::optional<mpc::MpcSolution>(outcome[a].solution)
                         : std::nullopt;
      prev_safety[a] = outcome[a].safety_applied;
      if (!log.completed[a] && agents[a].state.s >= agents[a].complete_s) {
        log.completed[a] = true;
        log.completion_step[a] = t + 1;
      }
    }
    log.steps.push_back(rec);
    if (is_race && cfg.racing.laps_to_finish > 0) {
      const double lap_len = racing->raceline.path.total_length;
      const double progressed = agents[fast_agent].state.s - log.steps.front()
                                    .agent[fast_agent].state.s;
      if (progressed >= cfg.racing.laps_to_finish * lap_len) break;
    }
    if (!is_race && log.completed[0] && log.completed[1]) break;
  }
  log.final_state = {agents[0].state, agents[1].state};

  const double car_length = is_race ? racing->params.car_length : intersection->params.car_length;
  Metrics metrics = compute_metrics(log, cfg, car_length, fast_agent);
  return {log, metrics};
}

bool detect_gridlock(const SimLog& log, double eps_v, int window) {
  int streak = 0;
  std::array<bool, 2> done{false, false};
  for (const auto& rec : log.steps) {
    for (int a = 0; a < 2; ++a)
      if (log.completion_step[a] >= 0 && rec.t >= log.completion_step[a]) done[a] = true;
    const bool stalled = rec.agent[0].state.v < eps_v && rec.agent[1].state.v < eps_v;
    if (stalled && !done[0] && !done[1]) {
      if (++streak >= window) return true;
    } else {
      streak = 0;
    }
  }
  return false;
}

Metrics compute_metrics(const SimLog& log, const SimConfig& cfg, double car_length,
                        int fast_agent) {
  Metrics m;
  double time_sum = 0.0;
  double iter_sum = 0.0;
  int calls = 0;
  for (const auto& rec : log.steps) {
    for (int a = 0; a < 2; ++a) {
      if (rec.agent[a].safety) m.feasible = false;
      time_sum += rec.agent[a].solve_time;
      iter_sum += rec.agent[a].iterations;
      ++calls;
    }
  }
  m.avg_solve_time = calls > 0 ? time_sum / calls : 0.0;
  m.avg_iterations = calls > 0 ? iter_sum / calls : 0.0;
  m.gridlock = detect_gridlock(log, cfg.gridlock.eps_v, cfg.gridlock.window);
  if (cfg.family == dataset::Family::Racing) {
    const double lead =
        log.final_state[fast_agent].s - log.final_state[1 - fast_agent].s;
    m.lead_car_lengths = lead / car_length;
    m.win = lead > 0.0;
  } else {
    m.both_passed = log.completed[0] && log.completed[1];
    if (m.both_passed)
      m.completion_time = cfg.mpc.dt * std::max(log.completion_step[0], log.completion_step[1]);
  }
  return m;
}

MonteCarloReport monte_carlo(const SimConfig& cfg, int n_runs,
                             const dataset::RacingWorld* racing,
                             const dataset::IntersectionWorld* intersection, int threads) {
  MonteCarloReport report;
  report.n_runs = n_runs;
  report.runs.resize(n_runs);
  if (n_runs == 0) return report;

  std::atomic<int> next{0};
  auto work = [&](int r) {
    SimConfig run_cfg = cfg;
    run_cfg.seed = Rng::derive(cfg.seed, static_cast<std::uint64_t>(r));
    RunResult& slot = report.runs[r];
    try {
      auto [log, metrics] = run_closed_loop(run_cfg, racing, intersection);
      slot.metrics = metrics;
    } catch (const std::exception&) {
      slot.crashed = true;
      slot.metrics.feasible = false;
    }
  };
  const int hw = static_cast<int>(std::thread::hardware_concurrency());
  const int n_threads = std::max(1, threads > 0 ? threads : hw);
  if (n_threads == 1) {
    for (int r = 0; r < n_runs; ++r) work(r);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t)
      pool.emplace_back([&] {
        for (int r = next.fetch_add(1); r < n_runs; r = next.fetch_add(1)) work(r);
      });
    for (auto& th : pool) th.join();
  }

  int feasible = 0, gridlock = 0, wins = 0, passed = 0, completed_runs = 0;
  double lead_sum = 0.0, time_sum = 0.0, iter_sum = 0.0, completion_sum = 0.0;
  for (const auto& run : report.runs) {
    if (run.metrics.feasible) ++feasible;
    if (run.metrics.gridlock) ++gridlock;
    if (run.metrics.win) ++wins;
    if (run.metrics.both_passed) {
      ++passed;
      completion_sum += run.metrics.completion_time;
      ++completed_runs;
    }
    lead_sum += run.metrics.lead_car_lengths;
    time_sum += run.metrics.avg_solve_time;
    iter_sum += run.metrics.avg_iterations;
    if (cfg.family == dataset::Family::Racing) {
      const int bin = static_cast<int>(std::floor(run.metrics.lead_car_lengths));
      report.lead_histogram[bin] += 1;
    }
  }
  const double dn = static_cast<double>(n_runs);
  report.feasibility_pct = 100.0 * feasible / dn;
  report.gridlock_pct = 100.0 * gridlock / dn;
  report.win_rate_pct = 100.0 * wins / dn;
  report.mean_lead = lead_sum / dn;
  report.mean_solve_time = time_sum / dn;
  report.mean_iterations = iter_sum / dn;
  report.both_passed_pct = 100.0 * passed / dn;
  report.mean_completion_time = completed_runs > 0 ? completion_sum / completed_runs : 0.0;
  return report;
}

// ---------------------------------------------------------------------------
// artifact writers

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_simlog_csv(const SimLog& log, std::ostream& os) {
  os << "t";
  for (int a = 1; a <= 2; ++a) {
    os << ",a" << a << "_v,a" << a << "_e_psi,a" << a << "_s,a" << a << "_e_y,a" << a
       << "_x,a" << a << "_y,a" << a << "_psi,a" << a << "_accel,a" << a << "_delta,a" << a
       << "_status,a" << a << "_safety,a" << a << "_iters";
  }
  os << "\n";
  for (const auto& rec : log.steps) {
    os << rec.t;
    for (int a = 0; a < 2; ++a) {
      const auto& ar = rec.agent[a];
      os << ',' << fmt(ar.state.v) << ',' << fmt(ar.state.e_psi) << ',' << fmt(ar.state.s)
         << ',' << fmt(ar.state.e_y) << ',' << fmt(ar.state.x) << ',' << fmt(ar.state.y)
         << ',' << fmt(ar.state.psi) << ',' << fmt(ar.input.a) << ',' << fmt(ar.input.delta)
         << ',' << game::to_string(ar.status) << ',' << (ar.safety ? 1 : 0) << ','
         << ar.iterations;
    }
    os << "\n";
  }
}

void write_metrics_json(const Metrics& m, const SimConfig& cfg, std::ostream& os) {
  json j;
  j["family"] = dataset::to_string(cfg.family);
  j["feasible"] = m.feasible;
  j["gridlock"] = m.gridlock;
  j["avg_iterations"] = m.avg_iterations;
  if (cfg.family == dataset::Family::Racing) {
    j["lead_car_lengths"] = m.lead_car_lengths;
    j["win"] = m.win;
  } else {
    j["both_passed"] = m.both_passed;
    j["completion_time"] = m.completion_time;
  }
  os << j.dump(2) << "\n";
}

void write_report_json(const MonteCarloReport& r, const SimConfig& cfg, std::ostream& os) {
  json j;
  j["family"] = dataset::to_string(cfg.family);
  j["n_runs"] = r.n_runs;
  j["feasibility_pct"] = r.feasibility_pct;
  j["gridlock_pct"] = r.gridlock_pct;
  j["mean_iterations"] = r.mean_iterations;
  if (cfg.family == dataset::Family::Racing) {
    j["win_rate_pct"] = r.win_rate_pct;
    j["mean_lead_car_lengths"] = r.mean_lead;
  } else {
    j["both_passed_pct"] = r.both_passed_pct;
    j["mean_completion_time"] = r.mean_completion_time;
  }
  os << j.dump(2) << "\n";
}

void write_run_metrics_csv(const MonteCarloReport& r, std::ostream& os) {
  os << "run,crashed,feasible,gridlock,win,lead_car_lengths,both_passed,completion_time,"
        "avg_iterations\n";
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    const auto& m = r.runs[i].metrics;
    os << i << ',' << (r.runs[i].crashed ? 1 : 0) << ',' << (m.feasible ? 1 : 0) << ','
       << (m.gridlock ? 1 : 0) << ',' << (m.win ? 1 : 0) << ',' << fmt(m.lead_car_lengths)
       << ',' << (m.both_passed ? 1 : 0) << ',' << fmt(m.completion_time) << ','
       << fmt(m.avg_iterations) << "\n";
  }
}

void write_lead_histogram_csv(const MonteCarloReport& r, std::ostream& os) {
  os << "lead_bin_lo,count\n";
  for (const auto& [bin, count] : r.lead_histogram) os << bin << ',' << count << "\n";
}

void write_timing_json(const MonteCarloReport& r, std::ostream& os) {
  json j;
  j["mean_solve_time_s"] = r.mean_solve_time;
  os << j.dump(2) << "\n";
}

void write_timing_json(const Metrics& m, std::ostream& os) {
  json j;
  j["avg_solve_time_s"] = m.avg_solve_time;
  os << j.dump(2) << "\n";
}

}  // namespace gtmpc::harness
