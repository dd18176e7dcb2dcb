#pragma once

#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gplight/roadgraph.hpp"

namespace testsupport {

// Builds a roadnet document for a grid of intersections with uniform lane
// length and the standard four-phase plan. rows x cols nodes at the given
// spacing; single-node networks get no links.
inline std::string grid_roadnet_json(int rows, int cols, double spacing_m,
                                     double lane_len_m) {
  std::ostringstream os;
  os << "{\"intersections\":[";
  bool first = true;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (!first) os << ",";
      first = false;
      std::string id = "X" + std::to_string(r) + "_" + std::to_string(c);
      os << "{\"id\":\"" << id << "\",\"x\":" << c * spacing_m
         << ",\"y\":" << r * spacing_m << ",\"lanes\":[";
      const char* app = "EWSN";
      const char* turn = "LSR";
      bool fl = true;
      for (int a = 0; a < 4; ++a)
        for (int t = 0; t < 3; ++t) {
          if (!fl) os << ",";
          fl = false;
          os << "{\"id\":\"" << id << "_" << app[a] << "_" << turn[t]
             << "\",\"length_m\":" << lane_len_m << ",\"approach\":\"" << app[a]
             << "\",\"turn\":\"" << turn[t] << "\"}";
        }
      os << "],\"phases\":[[\"WS\",\"ES\"],[\"NS\",\"SS\"],[\"WL\",\"EL\"],[\"NL\",\"SL\"]]}";
    }
  }
  os << "],\"links\":[";
  bool firstl = true;
  auto link = [&](int r1, int c1, int r2, int c2) {
    if (!firstl) os << ",";
    firstl = false;
    os << "{\"from\":\"X" << r1 << "_" << c1 << "\",\"to\":\"X" << r2 << "_"
       << c2 << "\"}";
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

inline gplight::RoadGraph grid_graph(int rows, int cols, double spacing_m = 300,
                                     double lane_len_m = 300) {
  return gplight::build_graph(grid_roadnet_json(rows, cols, spacing_m, lane_len_m));
}

// Random connected-ish graph on n nodes for property tests: a path backbone
// plus extra random edges, random positive weights.
inline gplight::RoadGraph random_weighted_graph(int n, std::mt19937_64& rng) {
  gplight::RoadGraph g = grid_graph(1, n, 300, 300);
  std::uniform_real_distribution<double> w(0.05, 2.0);
  std::uniform_real_distribution<double> coin(0, 1);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      bool backbone = (j == i + 1);
      bool extra = coin(rng) < 0.3;
      double ww = (backbone || extra) ? w(rng) : 0.0;
      g.adj[i * n + j] = g.adj[j * n + i] = ww > 0 ? 1 : 0;
      g.weights[i * n + j] = g.weights[j * n + i] = ww;
    }
  return g;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testsupport
