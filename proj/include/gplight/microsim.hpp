#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gplight/rng.hpp"
#include "gplight/roadgraph.hpp"

namespace gplight {

inline constexpr int kYellowS = 5;
inline constexpr int kDischargeHeadwayS = 2;

// Demand record: vehicles on `route` (a chain of incoming-lane ids) released
// on a fixed cadence. An optional surge window swaps in a denser cadence for
// part of the span.
struct FlowSpec {
  std::vector<std::string> route;
  int interval_s = 20;
  int start_s = 0;
  int end_s = 0;
  bool has_surge = false;
  int surge_start_s = 0;
  int surge_end_s = 0;
  int surge_interval_s = 1;
};

std::vector<FlowSpec> load_flows(const std::string& json_text, const RoadGraph&);
std::vector<FlowSpec> load_flows_file(const std::string& path, const RoadGraph&);
std::string flows_to_json(const std::vector<FlowSpec>&);

// Release times implied by a spec: base cadence with in-surge ticks replaced
// by the surge cadence.
std::vector<int> spawn_times(const FlowSpec&);

struct Observation {
  int node = 0;
  std::array<double, kPhases> phase_onehot{};
  std::array<double, kMovements> incoming{};   // queue per incoming lane
  std::array<double, kMovements> outgoing{};   // occupancy per outgoing lane
  std::vector<double> as_vector() const;       // 4 + 12 + 12 = 28
};
inline constexpr int kObservationDim = kPhases + 2 * kMovements;

struct SignalState {
  int active_phase = 0;
  int green_remaining = 0;
  int yellow_remaining = 0;
  int pending_phase = -1;
  int pending_green = 0;
  bool ran_once = false;
};

struct MetricsRecord {
  long throughput = 0;
  double att_completed_s = 0;
  double att_inclusive_s = 0;
  bool empty = false;                    // no vehicle completed
  std::vector<long> cumulative_passed;   // index = second, size clock+1
};

struct SimEvent {
  int step;
  char type;  // 's' spawn, 'e' enter network, 'c' cross, 'x' exit
  int vehicle;
  int lane;
};

class Simulator {
 public:
  struct Options {
    int spawn_jitter_s = 0;  // uniform [0, jitter] added per release, 0 = off
    std::uint64_t seed = 0;
    bool record_events = true;
  };

  Simulator(const RoadGraph& graph, Options opt);
  explicit Simulator(const RoadGraph& graph) : Simulator(graph, Options()) {}

  void add_flows(const std::vector<FlowSpec>& flows);

  int clock() const { return clock_; }
  bool awaiting(int node) const;
  bool all_awaiting() const;
  const SignalState& signal(int node) const { return signals_[node]; }

  // Requires the signal to be awaiting. Same phase extends directly; a new
  // phase first runs the fixed yellow. green_s >= 1.
  void set_action(int node, int phase, int green_s);

  // One simulated second: releases, discharges, stats, signal timers.
  void step();

  Observation observe(int node) const;
  Observation observe(const std::string& intersection_id) const;

  // Per-minute per-lane running max of incoming occupancy. Minute m is only
  // readable once its 60 seconds have fully elapsed.
  int complete_minutes() const { return clock_ / 60; }
  std::vector<double> per_minute_lane_max(int minute) const;  // n*12, lane-major per node

  MetricsRecord metrics() const;

  // conservation counters
  long spawned() const { return spawned_; }
  long backlog_count() const { return static_cast<long>(backlog_.size()); }
  long in_network() const { return in_network_; }
  long completed() const { return completed_; }

  const std::vector<SimEvent>& events() const { return events_; }
  void write_event_log(std::ostream&) const;

  const RoadGraph& graph() const { return *graph_; }
  double out_lane_occupancy(int node, int movement) const;
  int out_lane_capacity(int node, int movement) const;
  int lane_occupancy_by_id(const std::string& lane_id) const;

 private:
  struct Lane {
    std::string id;
    double length_m = 0;
    double free_flow_s = 0;
    int capacity = 0;
    std::deque<int> queue;  // vehicle indices, front discharges first
    int last_discharge = -1 << 28;
  };

  struct Vehicle {
    std::vector<int> route;  // lane indices
    int route_pos = 0;
    int spawn_t = 0;
    int enter_t = -1;
    int exit_t = -1;
    int lane_enter_t = 0;
  };

  struct NodeRt {
    std::array<int, kMovements> in_lane{};
    std::array<int, kMovements> out_lane{};
  };

  struct Release {
    int time;
    int order;  // global deterministic tie-break
    std::vector<int> route;
  };

  int lane_index(const std::string& id) const;
  void release_vehicle(const Release&);
  bool try_enter(int veh);
  void record(char type, int veh, int lane);
  void update_minute_stats();

  const RoadGraph* graph_;
  Options opt_;
  std::vector<Lane> lanes_;
  std::vector<NodeRt> nodes_;
  std::vector<SignalState> signals_;
  std::vector<Vehicle> vehicles_;
  std::vector<Release> schedule_;  // sorted by (time, order)
  std::size_t next_release_ = 0;
  std::deque<int> backlog_;
  int clock_ = 0;
  long spawned_ = 0, in_network_ = 0, completed_ = 0;
  std::vector<long> cumulative_passed_{0};
  std::vector<SimEvent> events_;
  std::vector<double> minute_running_max_;      // n*12
  std::vector<std::vector<double>> minute_max_; // finalized minutes
};

}  // namespace gplight
