#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace gplight {

// Compass conventions: an approach names the side vehicles arrive from, so
// approach W traffic heads east. Right-hand driving, so a left turn from the
// west approach exits through the north side.

enum class Approach : int { East = 0, West = 1, South = 2, North = 3 };
enum class Turn : int { Left = 0, Straight = 1, Right = 2 };
enum class Side : int { East = 0, West = 1, South = 2, North = 3 };

inline constexpr int kApproaches = 4;
inline constexpr int kTurns = 3;
inline constexpr int kMovements = 12;  // 4 approaches x {L,S,R}
inline constexpr int kPhases = 4;

inline constexpr double kVehicleFootprintM = 7.5;
inline constexpr double kFreeFlowSpeedMps = 11.11;

inline int movement_index(Approach a, Turn t) {
  return static_cast<int>(a) * kTurns + static_cast<int>(t);
}
inline Approach movement_approach(int m) { return static_cast<Approach>(m / kTurns); }
inline Turn movement_turn(int m) { return static_cast<Turn>(m % kTurns); }

Side exit_side(Approach a, Turn t);
Approach opposite(Approach a);
Side opposite(Side s);

// Side of intersection `at` through which traffic leaves toward a neighbor
// sitting on side s; that neighbor receives it on approach opposite(s).
inline Approach approach_at_neighbor(Side s) {
  return opposite(static_cast<Approach>(static_cast<int>(s)));
}

// Movements that may hold green together: opposite same-turn pairs, pairs
// from one approach, and anything paired with a right turn.
bool movements_conflict(int m1, int m2);

std::string movement_name(int m);         // e.g. "WS", "NL"
int parse_movement(const std::string&);   // throws on bad token

struct LaneGeom {
  std::string id;
  double length_m = 0;
  Approach approach = Approach::East;
  Turn turn = Turn::Left;

  int capacity() const;        // floor(length / vehicle footprint)
  double free_flow_s() const;  // length / free-flow speed
};

struct IntersectionSpec {
  std::string id;
  double x = 0, y = 0;
  std::array<LaneGeom, kMovements> incoming;          // indexed by movement
  std::array<std::array<int, 2>, kPhases> phases{};   // movement indices
};

struct RoadGraph {
  std::vector<IntersectionSpec> nodes;
  std::vector<std::uint8_t> adj;      // n x n, symmetric, zero diagonal
  std::vector<double> weights;        // n x n, symmetric, zero diagonal
  std::vector<std::array<int, 4>> side_neighbor;  // per node, per Side, -1 if open

  int n() const { return static_cast<int>(nodes.size()); }
  bool connected(int a, int b) const { return adj[a * n() + b] != 0; }
  double weight(int a, int b) const { return weights[a * n() + b]; }
  int node_index(const std::string& id) const;  // -1 if unknown

  // Stamp tying checkpoints to the graph they were built against.
  std::uint64_t topology_hash() const;
};

// Parses and validates a roadnet document. Rejects unknown fields (listing
// them), malformed geometry, conflicting phases, duplicate ids, lanes shorter
// than one vehicle footprint, and isolated nodes in multi-node networks.
// Weights start as the 0/1 adjacency.
RoadGraph build_graph(const std::string& roadnet_json_text);
RoadGraph load_roadnet_file(const std::string& path);

// Thresholded Gaussian kernel over Euclidean node distance; entries for
// unconnected or beyond-cutoff pairs are zero. sigma/cutoff must be positive.
std::vector<double> gaussian_edge_weights(const RoadGraph&, double sigma_m,
                                          double cutoff_m);
void apply_edge_weights(RoadGraph&, double sigma_m, double cutoff_m);

struct Laplacian {
  int n = 0;
  std::vector<double> matrix;  // symmetric normalized
  double lambda_max = 0;
  std::vector<double> scaled;  // 2 L / lambda_max - I
};

// Symmetric normalized Laplacian with zero rows for isolated nodes.
// lambda_max comes from power iteration (rel tol 1e-6, <= 1000 iterations)
// and falls back to 2 for edgeless graphs.
Laplacian normalized_laplacian(const RoadGraph&);

std::vector<double> scale_laplacian(const std::vector<double>& L, int n,
                                    double lambda_max);

double power_iteration_lambda_max(const std::vector<double>& M, int n,
                                  double rel_tol = 1e-6, int max_iters = 1000);

}  // namespace gplight
