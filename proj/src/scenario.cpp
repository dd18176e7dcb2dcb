#include "gplight/scenario.hpp"

#include <random>
#include <sstream>
#include <stdexcept>

#include "gplight/rng.hpp"

namespace gplight {

std::string grid_roadnet_document(int rows, int cols, double spacing_x_m,
                                  double spacing_y_m, double lane_ew_m,
                                  double lane_ns_m) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("grid needs rows, cols >= 1");
  std::ostringstream os;
  os << "{\"intersections\":[";
  bool first = true;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (!first) os << ",";
      first = false;
      std::string id = "X" + std::to_string(r) + "_" + std::to_string(c);
      os << "{\"id\":\"" << id << "\",\"x\":" << c * spacing_x_m
         << ",\"y\":" << r * spacing_y_m << ",\"lanes\":[";
      const char* app = "EWSN";
      const char* turn = "LSR";
      bool fl = true;
      for (int a = 0; a < 4; ++a) {
        double len = (a < 2) ? lane_ew_m : lane_ns_m;  // E/W approaches ride the e-w blocks
        for (int t = 0; t < 3; ++t) {
          if (!fl) os << ",";
          fl = false;
          os << "{\"id\":\"" << id << "_" << app[a] << "_" << turn[t]
             << "\",\"length_m\":" << len << ",\"approach\":\"" << app[a]
             << "\",\"turn\":\"" << turn[t] << "\"}";
        }
      }
      os << "],\"phases\":[[\"WS\",\"ES\"],[\"NS\",\"SS\"],[\"WL\",\"EL\"],[\"NL\",\"SL\"]]}";
    }
  }
  os << "],\"links\":[";
  bool firstl = true;
  auto link = [&](int r1, int c1, int r2, int c2) {
    if (!firstl) os << ",";
    firstl = false;
    os << "{\"from\":\"X" << r1 << "_" << c1 << "\",\"to\":\"X" << r2 << "_" << c2
       << "\"}";
  };
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      if (c + 1 < cols) {
        link(r, c, r, c + 1);
        link(r, c + 1, r, c);
      }
      if (r + 1 < rows) {
        link(r, c, r + 1, c);
        link(r + 1, c, r, c);
      }
    }
  os << "]}";
  return os.str();
}

std::string grid_roadnet_document(int rows, int cols, double spacing_m,
                                  double lane_len_m) {
  return grid_roadnet_document(rows, cols, spacing_m, spacing_m, lane_len_m,
                               lane_len_m);
}

namespace {

Scenario single_scenario() {
  Scenario sc;
  sc.name = "single";
  sc.roadnet_json = grid_roadnet_document(1, 1, 300, 300);
  sc.graph = build_graph(sc.roadnet_json);
  for (int m = 0; m < kMovements; ++m) {
    FlowSpec f;
    f.route = {sc.graph.nodes[0].incoming[m].id};
    f.interval_s = 20;
    f.start_s = 0;
    f.end_s = kScenarioSpanS;
    if (m == movement_index(Approach::West, Turn::Straight) ||
        m == movement_index(Approach::East, Turn::Straight)) {
      f.has_surge = true;
      f.surge_start_s = kSurgeStartS;
      f.surge_end_s = kSurgeEndS;
      f.surge_interval_s = 1;
    }
    sc.flows.push_back(std::move(f));
  }
  return sc;
}

// One flow per boundary entry of the approach, running straight through to
// the far boundary. Cadence and phase offset are drawn per flow.
void add_corridor_flows(Scenario& sc, Approach a, Rng& rng, bool surged) {
  const RoadGraph& g = sc.graph;
  Side entry = static_cast<Side>(static_cast<int>(a));
  Side exit = exit_side(a, Turn::Straight);
  std::uniform_int_distribution<int> cadence(15, 30);
  for (int start = 0; start < g.n(); ++start) {
    if (g.side_neighbor[start][static_cast<int>(entry)] >= 0) continue;
    FlowSpec f;
    int cur = start;
    while (true) {
      f.route.push_back(g.nodes[cur].incoming[movement_index(a, Turn::Straight)].id);
      int next = g.side_neighbor[cur][static_cast<int>(exit)];
      if (next < 0) break;
      cur = next;
    }
    f.interval_s = cadence(rng);
    f.start_s = std::uniform_int_distribution<int>(0, f.interval_s - 1)(rng);
    f.end_s = kScenarioSpanS;
    if (surged) {
      f.has_surge = true;
      f.surge_start_s = kSurgeStartS;
      f.surge_end_s = kSurgeEndS;
      f.surge_interval_s = 1;
    }
    sc.flows.push_back(std::move(f));
  }
}

Scenario grid_scenario(const std::string& name, int rows, int cols,
                       double spacing_x, double spacing_y, double lane_ew,
                       double lane_ns, std::uint64_t seed, bool with_surge) {
  Scenario sc;
  sc.name = name;
  sc.roadnet_json =
      grid_roadnet_document(rows, cols, spacing_x, spacing_y, lane_ew, lane_ns);
  sc.graph = build_graph(sc.roadnet_json);
  Rng rng = make_rng(seed, "scenario-flow");
  add_corridor_flows(sc, Approach::West, rng, with_surge);
  add_corridor_flows(sc, Approach::East, rng, with_surge);
  add_corridor_flows(sc, Approach::North, rng, false);
  add_corridor_flows(sc, Approach::South, rng, false);
  return sc;
}

}  // namespace

Scenario make_scenario(const std::string& name, std::uint64_t seed, bool with_surge) {
  if (name == "single") return single_scenario();
  if (name == "grid16") return grid_scenario(name, 4, 4, 300, 300, 300, 300, seed, with_surge);
  if (name == "grid48")
    return grid_scenario(name, 3, 16, 350, 100, 350, 100, seed, with_surge);
  throw std::invalid_argument("unknown scenario '" + name +
                              "' (expected single, grid16 or grid48)");
}

}  // namespace gplight
