#pragma once

// Built-in benchmark scenarios: road network documents plus demand flows for
// a single intersection and two synthetic grids.

#include <cstdint>
#include <string>
#include <vector>

#include "gplight/microsim.hpp"
#include "gplight/roadgraph.hpp"

namespace gplight {

inline constexpr int kScenarioSpanS = 3600;
inline constexpr int kSurgeStartS = 900;
inline constexpr int kSurgeEndS = 2700;

// Uniform grid roadnet document: rows x cols intersections, ids "X<r>_<c>",
// standard four-phase plan. East-west lanes get lane_ew_m, north-south lanes
// lane_ns_m; spacing follows the same split.
std::string grid_roadnet_document(int rows, int cols, double spacing_x_m,
                                  double spacing_y_m, double lane_ew_m,
                                  double lane_ns_m);
std::string grid_roadnet_document(int rows, int cols, double spacing_m,
                                  double lane_len_m);

struct Scenario {
  std::string name;
  std::string roadnet_json;
  RoadGraph graph;
  std::vector<FlowSpec> flows;
};

// name picks one of:
//   single: one intersection, a 20 s flow per movement, with the east-west
//           straight flows surged to 1 s on [900, 2700] (always on; this IS
//           the dataset).
//   grid16: 4x4 grid, 300 m blocks, straight corridor flows with cadences
//           drawn from `seed`; with_surge adds the 1 s window to the
//           east-west corridors.
//   grid48: 3x16 grid, 350 m east-west blocks and 100 m north-south blocks,
//           same corridor scheme.
Scenario make_scenario(const std::string& name, std::uint64_t seed,
                       bool with_surge = false);

}  // namespace gplight
