#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gtmpc/dataset.hpp"
#include "gtmpc/dynamics.hpp"
#include "gtmpc/mpc.hpp"
#include "gtmpc/rng.hpp"
#include "gtmpc/valuefn.hpp"

namespace gtmpc::harness {

struct GridlockParams {
  double eps_v = 0.05;  // m/s
  int window = 30;      // consecutive steps
};

struct RacingSetup {
  int slow_agent = 0;
  double slow_factor = 0.9;  // velocity profile and v_max handicap
  std::array<mpc::TerminalSelector, 2> selector{mpc::TerminalSelector::MP,
                                                mpc::TerminalSelector::MP};
  std::array<const valuefn::TrainedValueFn*, 2> model{nullptr, nullptr};
  std::array<double, 4> sigma{0.1, 0.01, 0.1, 0.05};  // forecast noise per channel
  int laps_to_finish = 0;                             // 0 = fixed-duration race
};

struct IntersectionSetup {
  int scenario = 6;
  std::optional<std::pair<std::string, std::string>> routes;  // else sampled per seed
  std::optional<std::array<double, 2>> s0;                    // else U(0, s_int/2)
  std::array<mpc::TerminalSelector, 2> selector{mpc::TerminalSelector::GT,
                                                mpc::TerminalSelector::GT};
  std::array<const valuefn::TrainedValueFn*, 2> model{nullptr, nullptr};
};

struct SimConfig {
  dataset::Family family = dataset::Family::Intersection;
  std::uint64_t seed = 1;
  int T = 150;
  GridlockParams gridlock;
  mpc::MpcConfig mpc;  // N, dt, weights, d_min; vp is adapted per agent
  game::SolverOptions solver;
  RacingSetup racing;
  IntersectionSetup intersection;
};

struct AgentRecord {
  dynamics::AgentState state;  // state at the start of the tick
  dynamics::AgentInput input;  // applied input
  mpc::SolveStatus status = mpc::SolveStatus::Converged;
  bool safety = false;
  int iterations = 0;
  double solve_time = 0.0;
};

struct StepRecord {
  int t = 0;
  std::array<AgentRecord, 2> agent;
};

struct SimLog {
  std::vector<StepRecord> steps;
  std::array<bool, 2> completed{false, false};
  std::array<int, 2> completion_step{-1, -1};
  std::array<dynamics::AgentState, 2> final_state;
};

struct Metrics {
  bool feasible = true;  // no safety intervention over the whole run
  bool gridlock = false;
  double avg_solve_time = 0.0;
  double avg_iterations = 0.0;
  // racing
  double lead_car_lengths = 0.0;  // fast vehicle's final lead
  bool win = false;
  // intersection
  bool both_passed = false;
  double completion_time = -1.0;  // s; -1 when not both passed
};

// opponent prediction from its previous-tick plan shifted one step; constant
// speed before any plan exists, constant braking after a safety tick. Racing
// adds per-channel Gaussian noise.
mpc::Forecast forecast_oracle(const std::optional<mpc::MpcSolution>& opponent_prev_plan,
                              bool opponent_was_safety, const dynamics::AgentState& opponent_now,
                              const geometry::PathSpec& opponent_path,
                              const dynamics::VehicleParams& opponent_params, int N, double dt,
                              const std::array<double, 4>& sigma, Rng& rng);

// Algorithm loop for both agents: forecast, policy step, plant step, log.
std::pair<SimLog, Metrics> run_closed_loop(const SimConfig& cfg,
                                           const dataset::RacingWorld* racing,
                                           const dataset::IntersectionWorld* intersection);

bool detect_gridlock(const SimLog& log, double eps_v, int window);

Metrics compute_metrics(const SimLog& log, const SimConfig& cfg, double car_length,
                        int fast_agent);

struct RunResult {
  bool crashed = false;  // harness exception, counted as infeasible
  Metrics metrics;
};

struct MonteCarloReport {
  int n_runs = 0;
  double feasibility_pct = 0.0;
  double gridlock_pct = 0.0;
  double mean_solve_time = 0.0;
  double mean_iterations = 0.0;
  double win_rate_pct = 0.0;    // racing
  double mean_lead = 0.0;       // racing, car lengths
  double both_passed_pct = 0.0; // intersection
  double mean_completion_time = 0.0;
  std::map<int, int> lead_histogram;  // bin = floor(lead), width 1 car length
  std::vector<RunResult> runs;
};

// n_runs independent simulations with seeds derived from cfg.seed; aggregation
// is deterministic in the seed list and independent of the worker count.
MonteCarloReport monte_carlo(const SimConfig& cfg, int n_runs,
                             const dataset::RacingWorld* racing,
                             const dataset::IntersectionWorld* intersection, int threads = 0);

// deterministic artifacts (no wall-clock content)
void write_simlog_csv(const SimLog& log, std::ostream& os);
void write_metrics_json(const Metrics& m, const SimConfig& cfg, std::ostream& os);
void write_report_json(const MonteCarloReport& r, const SimConfig& cfg, std::ostream& os);
void write_run_metrics_csv(const MonteCarloReport& r, std::ostream& os);
void write_lead_histogram_csv(const MonteCarloReport& r, std::ostream& os);
// wall-clock telemetry, kept out of the deterministic outputs
void write_timing_json(const MonteCarloReport& r, std::ostream& os);
void write_timing_json(const Metrics& m, std::ostream& os);

}  // namespace gtmpc::harness
