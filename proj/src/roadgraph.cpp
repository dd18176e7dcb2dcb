#include "gplight/roadgraph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "gplight/rng.hpp"
#include "json.hpp"

namespace gplight {

using nlohmann::json;

Side exit_side(Approach a, Turn t) {
  // Row per approach: exit side for {Left, Straight, Right}.
  static constexpr Side table[4][3] = {
      /* East  */ {Side::South, Side::West, Side::North},
      /* West  */ {Side::North, Side::East, Side::South},
      /* South */ {Side::West, Side::North, Side::East},
      /* North */ {Side::East, Side::South, Side::West},
  };
  return table[static_cast<int>(a)][static_cast<int>(t)];
}

Approach opposite(Approach a) {
  switch (a) {
    case Approach::East: return Approach::West;
    case Approach::West: return Approach::East;
    case Approach::South: return Approach::North;
    case Approach::North: return Approach::South;
  }
  return a;
}

Side opposite(Side s) {
  return static_cast<Side>(static_cast<int>(opposite(static_cast<Approach>(static_cast<int>(s)))));
}

bool movements_conflict(int m1, int m2) {
  Approach a1 = movement_approach(m1), a2 = movement_approach(m2);
  Turn t1 = movement_turn(m1), t2 = movement_turn(m2);
  if (t1 == Turn::Right || t2 == Turn::Right) return false;
  if (a1 == a2) return false;
  if (a2 == opposite(a1) && t1 == t2) return false;
  return true;
}

std::string movement_name(int m) {
  static const char* app = "EWSN";
  static const char* turn = "LSR";
  std::string s;
  s += app[m / kTurns];
  s += turn[m % kTurns];
  return s;
}

int parse_movement(const std::string& s) {
  if (s.size() == 2) {
    static const std::string app = "EWSN", turn = "LSR";
    auto a = app.find(s[0]);
    auto t = turn.find(s[1]);
    if (a != std::string::npos && t != std::string::npos)
      return static_cast<int>(a) * kTurns + static_cast<int>(t);
  }
  throw std::runtime_error("bad movement token '" + s + "' (expected e.g. \"WS\", \"NL\")");
}

int LaneGeom::capacity() const {
  return static_cast<int>(std::floor(length_m / kVehicleFootprintM));
}

double LaneGeom::free_flow_s() const { return length_m / kFreeFlowSpeedMps; }

int RoadGraph::node_index(const std::string& id) const {
  for (int i = 0; i < n(); ++i)
    if (nodes[i].id == id) return i;
  return -1;
}

std::uint64_t RoadGraph::topology_hash() const {
  std::uint64_t h = fnv1a64("roadgraph");
  std::uint32_t nn = static_cast<std::uint32_t>(n());
  h = fnv1a64(&nn, sizeof nn, h);
  for (const auto& node : nodes) h = fnv1a64(node.id, h);
  h = fnv1a64(adj.data(), adj.size(), h);
  h = fnv1a64(weights.data(), weights.size() * sizeof(double), h);
  return h;
}

namespace {

void reject_unknown_fields(const json& obj, const std::set<std::string>& allowed,
                           const std::string& where) {
  std::vector<std::string> unknown;
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key())) unknown.push_back(it.key());
  if (!unknown.empty()) {
    std::ostringstream os;
    os << "unknown field(s) in " << where << ":";
    for (const auto& k : unknown) os << " '" << k << "'";
    throw std::runtime_error(os.str());
  }
}

Approach parse_approach(const std::string& s) {
  if (s == "E") return Approach::East;
  if (s == "W") return Approach::West;
  if (s == "S") return Approach::South;
  if (s == "N") return Approach::North;
  throw std::runtime_error("bad approach '" + s + "' (expected E/W/S/N)");
}

Turn parse_turn(const std::string& s) {
  if (s == "L") return Turn::Left;
  if (s == "S") return Turn::Straight;
  if (s == "R") return Turn::Right;
  throw std::runtime_error("bad turn '" + s + "' (expected L/S/R)");
}

Side side_between(const IntersectionSpec& from, const IntersectionSpec& to) {
  double dx = to.x - from.x, dy = to.y - from.y;
  if (dx == 0 && dy == 0)
    throw std::runtime_error("linked intersections '" + from.id + "' and '" + to.id +
                             "' share coordinates; cannot assign a side");
  if (std::abs(dx) >= std::abs(dy)) return dx > 0 ? Side::East : Side::West;
  return dy > 0 ? Side::North : Side::South;
}

}  // namespace

RoadGraph build_graph(const std::string& roadnet_json_text) {
  json doc;
  try {
    doc = json::parse(roadnet_json_text);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("roadnet is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw std::runtime_error("roadnet root must be an object");
  reject_unknown_fields(doc, {"intersections", "links"}, "roadnet root");
  if (!doc.contains("intersections") || !doc["intersections"].is_array() ||
      doc["intersections"].empty())
    throw std::runtime_error("roadnet needs a non-empty 'intersections' array");

  RoadGraph g;
  std::unordered_set<std::string> lane_ids;
  for (const auto& jn : doc["intersections"]) {
    if (!jn.is_object()) throw std::runtime_error("intersection entries must be objects");
    reject_unknown_fields(jn, {"id", "x", "y", "lanes", "phases"}, "intersection");
    IntersectionSpec node;
    node.id = jn.at("id").get<std::string>();
    node.x = jn.at("x").get<double>();
    node.y = jn.at("y").get<double>();
    if (g.node_index(node.id) >= 0)
      throw std::runtime_error("duplicate intersection id '" + node.id + "'");

    const auto& lanes = jn.at("lanes");
    if (!lanes.is_array() || lanes.size() != kMovements)
      throw std::runtime_error("intersection '" + node.id + "' must list exactly 12 lanes");
    std::array<bool, kMovements> seen{};
    for (const auto& jl : lanes) {
      reject_unknown_fields(jl, {"id", "length_m", "approach", "turn"},
                            "lane of '" + node.id + "'");
      LaneGeom lane;
      lane.id = jl.at("id").get<std::string>();
      lane.length_m = jl.at("length_m").get<double>();
      lane.approach = parse_approach(jl.at("approach").get<std::string>());
      lane.turn = parse_turn(jl.at("turn").get<std::string>());
      if (lane.length_m < kVehicleFootprintM)
        throw std::runtime_error("lane '" + lane.id + "' shorter than one vehicle (" +
                                 std::to_string(lane.length_m) + " m)");
      if (!lane_ids.insert(lane.id).second)
        throw std::runtime_error("duplicate lane id '" + lane.id + "'");
      int m = movement_index(lane.approach, lane.turn);
      if (seen[m])
        throw std::runtime_error("intersection '" + node.id + "' has two lanes for movement " +
                                 movement_name(m));
      seen[m] = true;
      node.incoming[m] = lane;
    }

    const auto& phases = jn.at("phases");
    if (!phases.is_array() || phases.size() != kPhases)
      throw std::runtime_error("intersection '" + node.id + "' must list exactly 4 phases");
    for (int p = 0; p < kPhases; ++p) {
      const auto& jp = phases[p];
      if (!jp.is_array() || jp.size() != 2)
        throw std::runtime_error("phase " + std::to_string(p) + " of '" + node.id +
                                 "' must pair exactly 2 movements");
      int m1 = parse_movement(jp[0].get<std::string>());
      int m2 = parse_movement(jp[1].get<std::string>());
      if (movement_turn(m1) == Turn::Right || movement_turn(m2) == Turn::Right)
        throw std::runtime_error("phase " + std::to_string(p) + " of '" + node.id +
                                 "' includes an unsignalized right turn");
      if (m1 == m2 || movements_conflict(m1, m2))
        throw std::runtime_error("phase " + std::to_string(p) + " of '" + node.id +
                                 "' pairs conflicting movements " + movement_name(m1) +
                                 "/" + movement_name(m2));
      node.phases[p] = {m1, m2};
    }
    g.nodes.push_back(std::move(node));
  }

  int n = g.n();
  g.adj.assign(static_cast<std::size_t>(n) * n, 0);
  g.weights.assign(static_cast<std::size_t>(n) * n, 0.0);
  g.side_neighbor.assign(n, {-1, -1, -1, -1});

  if (doc.contains("links")) {
    if (!doc["links"].is_array()) throw std::runtime_error("'links' must be an array");
    for (const auto& jl : doc["links"]) {
      reject_unknown_fields(jl, {"from", "to"}, "link");
      int a = g.node_index(jl.at("from").get<std::string>());
      int b = g.node_index(jl.at("to").get<std::string>());
      if (a < 0 || b < 0)
        throw std::runtime_error("link references unknown intersection");
      if (a == b) throw std::runtime_error("self-link on '" + g.nodes[a].id + "'");
      g.adj[a * n + b] = g.adj[b * n + a] = 1;
      g.weights[a * n + b] = g.weights[b * n + a] = 1.0;
    }
  }

  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      if (a == b || !g.connected(a, b)) continue;
      Side s = side_between(g.nodes[a], g.nodes[b]);
      int& slot = g.side_neighbor[a][static_cast<int>(s)];
      if (slot >= 0 && slot != b)
        throw std::runtime_error("intersection '" + g.nodes[a].id +
                                 "' has two neighbors on the same side");
      slot = b;
    }
  }

  if (n > 1) {
    for (int a = 0; a < n; ++a) {
      bool any = false;
      for (int b = 0; b < n && !any; ++b) any = g.connected(a, b);
      if (!any)
        throw std::runtime_error("intersection '" + g.nodes[a].id +
                                 "' is disconnected from the network");
    }
  }
  return g;
}

RoadGraph load_roadnet_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open roadnet file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return build_graph(ss.str());
}

std::vector<double> gaussian_edge_weights(const RoadGraph& g, double sigma_m,
                                          double cutoff_m) {
  if (!(sigma_m > 0)) throw std::runtime_error("edge weight sigma must be positive");
  if (!(cutoff_m > 0)) throw std::runtime_error("edge weight cutoff must be positive");
  int n = g.n();
  std::vector<double> w(static_cast<std::size_t>(n) * n, 0.0);
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      if (!g.connected(a, b)) continue;
      double dx = g.nodes[a].x - g.nodes[b].x;
      double dy = g.nodes[a].y - g.nodes[b].y;
      double dist = std::sqrt(dx * dx + dy * dy);
      if (dist > cutoff_m) continue;
      double v = std::exp(-(dist * dist) / (sigma_m * sigma_m));
      w[a * n + b] = w[b * n + a] = v;
    }
  }
  return w;
}

void apply_edge_weights(RoadGraph& g, double sigma_m, double cutoff_m) {
  g.weights = gaussian_edge_weights(g, sigma_m, cutoff_m);
}

double power_iteration_lambda_max(const std::vector<double>& M, int n,
                                  double rel_tol, int max_iters) {
  if (n <= 0) throw std::runtime_error("empty matrix");
  std::vector<double> v(n), w(n);
  Rng rng(0x5eedULL);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  double n0 = 0;
  for (auto& x : v) {
    x = u(rng);
    n0 += x * x;
  }
  n0 = std::sqrt(n0);
  for (auto& x : v) x /= n0;

  double lambda = 0;
  for (int it = 0; it < max_iters; ++it) {
    double dot = 0, norm2 = 0;
    for (int i = 0; i < n; ++i) {
      double s = 0;
      for (int j = 0; j < n; ++j) s += M[i * n + j] * v[j];
      w[i] = s;
      dot += v[i] * s;
      norm2 += s * s;
    }
    double prev = lambda;
    lambda = dot;  // v is unit length after the first pass
    double norm = std::sqrt(norm2);
    if (norm == 0) return 0;
    for (int i = 0; i < n; ++i) v[i] = w[i] / norm;
    if (it > 0 && std::abs(lambda - prev) <= rel_tol * std::max(std::abs(lambda), 1e-12))
      return lambda;
  }
  return lambda;
}

Laplacian normalized_laplacian(const RoadGraph& g) {
  int n = g.n();
  Laplacian lap;
  lap.n = n;
  lap.matrix.assign(static_cast<std::size_t>(n) * n, 0.0);

  std::vector<double> deg(n, 0.0);
  bool any_edge = false;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      deg[i] += g.weights[i * n + j];
      if (i != j && g.weights[i * n + j] != 0) any_edge = true;
    }

  std::vector<double> dinv(n, 0.0);
  for (int i = 0; i < n; ++i) dinv[i] = deg[i] > 0 ? 1.0 / std::sqrt(deg[i]) : 0.0;

  for (int i = 0; i < n; ++i) {
    // isolated nodes keep a fully zero row, diagonal included
    lap.matrix[i * n + i] = deg[i] > 0 ? 1.0 : 0.0;
    for (int j = i + 1; j < n; ++j) {
      double v = -dinv[i] * dinv[j] * g.weights[i * n + j];
      lap.matrix[i * n + j] = v;
      lap.matrix[j * n + i] = v;
    }
  }

  lap.lambda_max = any_edge ? power_iteration_lambda_max(lap.matrix, n) : 2.0;
  if (!(lap.lambda_max > 0))
    throw std::runtime_error("laplacian lambda_max must be positive");
  lap.scaled = scale_laplacian(lap.matrix, n, lap.lambda_max);
  return lap;
}

std::vector<double> scale_laplacian(const std::vector<double>& L, int n,
                                    double lambda_max) {
  if (!(lambda_max > 0)) throw std::runtime_error("lambda_max must be positive");
  std::vector<double> out(L);
  for (auto& v : out) v *= 2.0 / lambda_max;
  for (int i = 0; i < n; ++i) out[i * n + i] -= 1.0;
  return out;
}

}  // namespace gplight
