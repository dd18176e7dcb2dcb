#pragma once

// Signal-control orchestration: per-intersection decision loop over the
// simulator, green-duration rules combining live queues with forecast demand,
// and the baseline controllers used for comparison runs.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gplight/dqn.hpp"
#include "gplight/microsim.hpp"
#include "gplight/stgcn.hpp"

namespace gplight {

enum class Mode {
  FixedTime,          // phases cycle 0..3, fixed green
  MaxPressure,        // greedy phase by movement-pressure sum, fixed green
  PressLightFixed,    // DQN phase choice, fixed green
  PressLightDynamic,  // DQN phase choice, green = required by live queue
  GpLight,            // DQN phase choice, green = min(forecast, live queue)
};

Mode parse_mode(const std::string& name);
std::string mode_name(Mode m);
bool mode_uses_agents(Mode m);
bool mode_uses_predictor(Mode m);
RewardSpec default_reward(Mode m);

struct DurationRule {
  double discharge_headway_s = 2.0;
  int t_min_s = 10;
  int t_max_s = 60;
  int lanes_discharging = 2;  // movements served per phase
  int fixed_green_s = 30;
};

// clamp(round(n * headway / lanes), t_min, t_max)
int duration_from_count(double n, const DurationRule& rule);

// n = vehicles queued on the phase's two incoming movements right now
int required_green(const Observation& obs, const std::array<int, 2>& phase_movements,
                   const DurationRule& rule);

// n = max over the horizon of forecast occupancy summed over the phase's lanes;
// prediction layout [node][lane][h] as produced by the forecaster
int expected_green(const std::vector<double>& prediction, int n_nodes, int lanes,
                   int horizon, int node, const std::array<int, 2>& phase_movements,
                   const DurationRule& rule);

// Observation vector fed to the agents: 28 own features plus, when enabled,
// the 12 incoming queue lengths of each linked neighbor in E,W,S,N order.
std::vector<double> build_state(const Simulator& sim, int node, bool include_neighbors);
int state_dim(const RoadGraph& g, int node, bool include_neighbors);

struct ActionRecord {
  int step = 0;   // simulator clock at the decision
  int node = 0;
  int phase = 0;
  int t_req = 0;
  int t_exp = -1;  // -1 when the mode never consults a forecast
  int green = 0;
  bool warm_up = false;  // decided before the first forecast was available
};

struct EpisodeConfig {
  Mode mode = Mode::FixedTime;
  int total_s = 3600;
  DurationRule rule;
  RewardSpec reward;         // ignored by fixedtime; see default_reward()
  // Multiplies rewards fed to the TD update. Leaves the greedy policy
  // unchanged; keeps target magnitudes near the regime the fixed learning
  // rate handles (raw pressure sums reach ~500 on saturated approaches and
  // blow out the first gradient steps).
  double reward_scale = 1.0 / 40.0;
  double epsilon = 0.2;      // exploration while learning; evaluation uses 0
  bool learn = true;
  bool include_neighbor_obs = false;
  // gplight only: when false the forecaster is never queried, so every action
  // takes the warm-up duration path. Lets the agent train on phase selection
  // alone before forecast-capped greens switch on.
  bool use_forecaster = true;
  std::uint64_t seed = 0;
  int spawn_jitter_s = 0;
  bool record_events = false;
  bool collect_series = true;
};

struct EpisodeResult {
  MetricsRecord metrics;
  std::vector<ActionRecord> actions;
  int t_sum = 0;  // final clock; in [total_s, total_s + t_max + yellow]
  std::vector<std::vector<double>> minute_features;  // [minute][n*12]
  std::vector<double> real_volume;       // per minute, summed over all lanes
  std::vector<double> predicted_volume;  // per minute; -1 before forecasts start
  double mean_td_loss = 0;
  long td_updates = 0;
};

class EpisodeRunner {
 public:
  EpisodeRunner(const RoadGraph& g, std::vector<FlowSpec> flows);

  // agents: one per intersection for the learning modes, else null.
  // predictor: required for gplight, ignored otherwise.
  EpisodeResult run(const EpisodeConfig& cfg, std::vector<DqnAgent>* agents,
                    const Stgcn* predictor) const;

  const RoadGraph& graph() const { return *graph_; }

 private:
  const RoadGraph* graph_;
  std::vector<FlowSpec> flows_;
};

// Cumulative green seconds per phase after each of one node's actions.
struct PhaseGreenSeries {
  std::vector<int> step;
  std::vector<std::array<long, kPhases>> cumulative;
};
PhaseGreenSeries accumulate_phase_green(const std::vector<ActionRecord>& log, int node);

}  // namespace gplight
