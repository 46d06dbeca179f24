#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gtmpc/dynamics.hpp"
#include "gtmpc/game.hpp"
#include "gtmpc/geometry.hpp"

namespace gtmpc::dataset {

enum class Family { Racing, Intersection };

std::string to_string(Family f);
Family family_from_string(const std::string& s);

// stage/terminal cost weights shared between data-generation games and MPC
struct GameWeights {
  // racing stage tracking on [v, e_psi, s, e_y]
  double q_v = 0.05;
  double q_epsi = 1.0;
  double q_ey = 0.2;
  // input and input-rate weights
  double r_a = 0.02;
  double r_delta = 0.5;
  double r_da = 0.05;
  double r_ddelta = 0.5;
  // terminal progress weight (1 keeps the intersection game an exact potential)
  double w_progress = 1.0;
};

struct RacingWorld {
  geometry::LTrackConfig track_cfg;
  geometry::PathSpec centerline;
  geometry::Raceline raceline;
  dynamics::VehicleParams params;
  GameWeights weights;
  double d_min = 3.0;
  double l_int = 16.0;  // interaction window, 8 car lengths
  double ic_v_min = 2.0;
  double ic_v_max = 12.0;
  double ic_e_psi = 0.2;
};

struct IntersectionWorld {
  geometry::IntersectionConfig cfg;
  std::vector<geometry::RouteSpec> routes;
  dynamics::VehicleParams params;
  GameWeights weights;
  double d_min = 3.0;
};

RacingWorld make_racing_world(const geometry::LTrackConfig& track_cfg,
                              const dynamics::VehicleParams& params,
                              const GameWeights& weights);
IntersectionWorld make_intersection_world(const geometry::IntersectionConfig& cfg,
                                          const dynamics::VehicleParams& params,
                                          const GameWeights& weights);

// Dynamic game instances behind the dataset. The returned GameSpec keeps
// references to the world's path objects, which must outlive it.
game::GameSpec make_racing_game(const RacingWorld& world,
                                const std::array<Eigen::Vector4d, 2>& z0, int horizon,
                                double dt);
game::GameSpec make_intersection_game(const IntersectionWorld& world,
                                      const geometry::RouteSpec& route_1,
                                      const geometry::RouteSpec& route_2,
                                      const std::array<Eigen::Vector2d, 2>& z0, int horizon,
                                      double dt);

// progress intervals over which two routes come closer than d_min
struct ConflictWindow {
  bool exists = false;
  double s_in[2] = {0.0, 0.0};
  double s_out[2] = {0.0, 0.0};
};

ConflictWindow conflict_window(const geometry::PathSpec& path_1,
                               const geometry::PathSpec& path_2, double d_min,
                               double ds = 0.25);

// Potential-game solve with constructive warm starts, one per yield order
// (the two local equilibria of a crossing); returns the converged solution
// with the lowest potential.
game::GneSolution solve_intersection_game(const IntersectionWorld& world,
                                          const geometry::RouteSpec& route_1,
                                          const geometry::RouteSpec& route_2,
                                          const std::array<Eigen::Vector2d, 2>& z0,
                                          int horizon, double dt,
                                          const game::SolverOptions& options);

// ---------------------------------------------------------------------------
// Sampling

// Agent 1 uniform along the track, agent 2 within the interaction window;
// lateral/heading errors and speeds uniform inside the state box.
dynamics::JointState sample_racing_ic(const RacingWorld& world, std::uint64_t rng_seed);

struct IntersectionIc {
  const geometry::RouteSpec* route[2] = {nullptr, nullptr};
  double s0[2] = {0.0, 0.0};
  double v0[2] = {0.0, 0.0};
  geometry::ScenarioEncoding enc;
};

// Routes uniform over scenario m's tuples, s0 ~ U(0, s_int/2), v0 = 0.
// Exactly symmetric draws get agent 2's s0 shifted +1 mm (deterministic
// tie-break; the equilibrium is otherwise non-unique).
IntersectionIc sample_intersection_ic(const IntersectionWorld& world, int scenario_m,
                                      std::uint64_t rng_seed);

// ---------------------------------------------------------------------------
// Rewards and features

// progress advantage of agent i at the end of the game
double compute_reward_racing(const dynamics::JointState& z_final, int i);
// collective progress, identical for both agents
double compute_reward_intersection(const dynamics::JointState& z_final, int i);

// racing: [z_opp, z_i - z_opp] over [v, e_psi, s, e_y]; s entries wrapped on
// the closed track. intersection: [zt_opp, zt_i - zt_opp] with zt = [s, v, sc].
Eigen::VectorXd build_features(const dynamics::JointState& z0, int i,
                               const std::optional<std::pair<int, int>>& scenario_codes,
                               const geometry::PathSpec* racing_path);

// ---------------------------------------------------------------------------
// Dataset container and generation

struct Sample {
  std::vector<double> features;
  double target = 0.0;
  int agent_perspective = 1;  // 1|2
  int scenario = 0;           // signed encoding of the perspective agent, 0 for racing
  bool feasible = true;
  std::uint64_t source_seed = 0;
};

struct DatasetMeta {
  std::string family;
  int scenario_m = 0;
  int n_x = 0;
  int n_g = 0;
  double dt = 0.1;
  std::string config_hash;
  double low_reward = 0.0;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<Sample> samples;
};

struct GenerationConfig {
  Family family = Family::Intersection;
  int scenario = 6;  // intersection only
  int n_games = 100;
  int horizon = 0;  // 0 = family default (25 racing, 200 intersection)
  double dt = 0.1;
  std::uint64_t seed = 1;
  int threads = 0;  // 0 = hardware concurrency
  game::SolverOptions solver;
};

struct GenerationStats {
  int converged = 0;
  int infeasible = 0;
  int skipped = 0;  // MaxIterations or solver failure, logged and dropped
};

// Solves one game per seed on a worker pool; sample order is deterministic in
// the seed index regardless of scheduling. Infeasible games contribute two
// low-reward samples (racing: -(N_G dt v_max), intersection: 0).
Dataset generate_dataset(const GenerationConfig& cfg, const RacingWorld* racing,
                         const IntersectionWorld* intersection,
                         GenerationStats* stats = nullptr);

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// CSV columns seed,perspective,scenario,feasible,f_0..f_{n_x-1},target with a
// key=value sidecar at <path>.meta. Round trips are bit-exact.
void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace gtmpc::dataset
