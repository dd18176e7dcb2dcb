#include "gplight/microsim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"

namespace gplight {

using nlohmann::json;

std::vector<double> Observation::as_vector() const {
  std::vector<double> v;
  v.reserve(kObservationDim);
  v.insert(v.end(), phase_onehot.begin(), phase_onehot.end());
  v.insert(v.end(), incoming.begin(), incoming.end());
  v.insert(v.end(), outgoing.begin(), outgoing.end());
  return v;
}

std::vector<int> spawn_times(const FlowSpec& f) {
  std::vector<int> out;
  for (long t = f.start_s; t <= f.end_s; t += f.interval_s) {
    if (f.has_surge && t >= f.surge_start_s && t <= f.surge_end_s) continue;
    out.push_back(static_cast<int>(t));
  }
  if (f.has_surge) {
    for (long t = std::max<long>(f.surge_start_s, f.start_s);
         t <= std::min(f.surge_end_s, f.end_s); t += f.surge_interval_s)
      out.push_back(static_cast<int>(t));
    std::sort(out.begin(), out.end());
  }
  return out;
}

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
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

}  // namespace

std::vector<FlowSpec> load_flows(const std::string& json_text, const RoadGraph& g) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("flow file is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw std::runtime_error("flow file root must be an object");
  reject_unknown(doc, {"flows"}, "flow file root");
  if (!doc.contains("flows") || !doc["flows"].is_array())
    throw std::runtime_error("flow file needs a 'flows' array");

  // lane id -> (node, movement)
  std::unordered_map<std::string, std::pair<int, int>> lane_at;
  for (int ni = 0; ni < g.n(); ++ni)
    for (int m = 0; m < kMovements; ++m)
      lane_at[g.nodes[ni].incoming[m].id] = {ni, m};

  std::vector<FlowSpec> flows;
  for (const auto& jf : doc["flows"]) {
    reject_unknown(jf, {"route", "interval_s", "start_s", "end_s", "surge"}, "flow record");
    FlowSpec f;
    f.route = jf.at("route").get<std::vector<std::string>>();
    f.interval_s = jf.at("interval_s").get<int>();
    f.start_s = jf.at("start_s").get<int>();
    f.end_s = jf.at("end_s").get<int>();
    if (jf.contains("surge")) {
      const auto& js = jf["surge"];
      reject_unknown(js, {"start_s", "end_s", "interval_s"}, "flow surge window");
      f.has_surge = true;
      f.surge_start_s = js.at("start_s").get<int>();
      f.surge_end_s = js.at("end_s").get<int>();
      f.surge_interval_s = js.at("interval_s").get<int>();
    }

    if (f.route.empty()) throw std::runtime_error("flow route is empty");
    if (f.interval_s < 1) throw std::runtime_error("flow interval_s must be >= 1");
    if (f.start_s < 0 || f.end_s < f.start_s)
      throw std::runtime_error("flow needs 0 <= start_s <= end_s");
    if (f.has_surge &&
        (f.surge_interval_s < 1 || f.surge_end_s < f.surge_start_s))
      throw std::runtime_error("flow surge window malformed");

    for (std::size_t i = 0; i < f.route.size(); ++i) {
      auto it = lane_at.find(f.route[i]);
      if (it == lane_at.end())
        throw std::runtime_error("flow route references unknown lane '" + f.route[i] + "'");
      if (i + 1 < f.route.size()) {
        auto [node, movement] = it->second;
        Side s = exit_side(movement_approach(movement), movement_turn(movement));
        int next_node = g.side_neighbor[node][static_cast<int>(s)];
        auto [n2, m2] = lane_at.at(f.route[i + 1]);
        if (next_node < 0 || n2 != next_node ||
            movement_approach(m2) != approach_at_neighbor(s))
          throw std::runtime_error("flow route hop '" + f.route[i] + "' -> '" +
                                   f.route[i + 1] + "' is not a connected transition");
      }
    }
    flows.push_back(std::move(f));
  }
  return flows;
}

std::vector<FlowSpec> load_flows_file(const std::string& path, const RoadGraph& g) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open flow file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_flows(ss.str(), g);
}

std::string flows_to_json(const std::vector<FlowSpec>& flows) {
  json arr = json::array();
  for (const auto& f : flows) {
    json jf;
    jf["route"] = f.route;
    jf["interval_s"] = f.interval_s;
    jf["start_s"] = f.start_s;
    jf["end_s"] = f.end_s;
    if (f.has_surge)
      jf["surge"] = {{"start_s", f.surge_start_s},
                     {"end_s", f.surge_end_s},
                     {"interval_s", f.surge_interval_s}};
    arr.push_back(std::move(jf));
  }
  return json{{"flows", arr}}.dump(2) + "\n";
}

Simulator::Simulator(const RoadGraph& graph, Options opt)
    : graph_(&graph), opt_(opt) {
  int n = graph.n();
  nodes_.resize(n);
  signals_.resize(n);

  auto add_lane = [&](const LaneGeom& geom) {
    Lane lane;
    lane.id = geom.id;
    lane.length_m = geom.length_m;
    lane.free_flow_s = geom.free_flow_s();
    lane.capacity = geom.capacity();
    lanes_.push_back(std::move(lane));
    return static_cast<int>(lanes_.size()) - 1;
  };

  for (int ni = 0; ni < n; ++ni)
    for (int m = 0; m < kMovements; ++m)
      nodes_[ni].in_lane[m] = add_lane(graph.nodes[ni].incoming[m]);

  // A movement's outgoing lane is the downstream road's lane with the same
  // turn index; open boundary sides get sink lanes mirrored from this node's
  // own entry geometry on that side.
  for (int ni = 0; ni < n; ++ni) {
    for (int m = 0; m < kMovements; ++m) {
      Side s = exit_side(movement_approach(m), movement_turn(m));
      int nb = graph.side_neighbor[ni][static_cast<int>(s)];
      Turn t = movement_turn(m);
      if (nb >= 0) {
        int dm = movement_index(approach_at_neighbor(s), t);
        nodes_[ni].out_lane[m] = nodes_[nb].in_lane[dm];
      } else {
        LaneGeom mirror =
            graph.nodes[ni].incoming[movement_index(static_cast<Approach>(static_cast<int>(s)), t)];
        mirror.id = "sink_" + graph.nodes[ni].id + "_" +
                    std::string(1, "EWSN"[static_cast<int>(s)]) +
                    std::string(1, "LSR"[static_cast<int>(t)]);
        nodes_[ni].out_lane[m] = add_lane(mirror);
      }
    }
  }
  minute_running_max_.assign(static_cast<std::size_t>(n) * kMovements, 0.0);
}

int Simulator::lane_index(const std::string& id) const {
  for (std::size_t i = 0; i < lanes_.size(); ++i)
    if (lanes_[i].id == id) return static_cast<int>(i);
  return -1;
}

void Simulator::add_flows(const std::vector<FlowSpec>& flows) {
  Rng jitter_rng = make_rng(opt_.seed, "spawn-jitter");
  std::uniform_int_distribution<int> jitter(0, std::max(0, opt_.spawn_jitter_s));
  int order = static_cast<int>(schedule_.size());
  for (const auto& f : flows) {
    std::vector<int> route;
    route.reserve(f.route.size());
    for (const auto& id : f.route) {
      int li = lane_index(id);
      if (li < 0) throw std::runtime_error("flow references unknown lane '" + id + "'");
      route.push_back(li);
    }
    for (int t : spawn_times(f)) {
      int eff = opt_.spawn_jitter_s > 0 ? t + jitter(jitter_rng) : t;
      schedule_.push_back({eff, order++, route});
    }
  }
  std::stable_sort(schedule_.begin(), schedule_.end(), [](const Release& a, const Release& b) {
    return a.time != b.time ? a.time < b.time : a.order < b.order;
  });
}

bool Simulator::awaiting(int node) const {
  const auto& s = signals_[node];
  return s.green_remaining == 0 && s.yellow_remaining == 0;
}

bool Simulator::all_awaiting() const {
  for (int i = 0; i < graph_->n(); ++i)
    if (!awaiting(i)) return false;
  return true;
}

void Simulator::set_action(int node, int phase, int green_s) {
  if (phase < 0 || phase >= kPhases) throw std::runtime_error("phase out of range");
  if (green_s < 1) throw std::runtime_error("green duration must be >= 1 s");
  auto& s = signals_[node];
  if (!awaiting(node))
    throw std::logic_error("set_action while signal is not awaiting a decision");
  if (!s.ran_once || phase == s.active_phase) {
    s.active_phase = phase;
    s.green_remaining = green_s;
  } else {
    s.yellow_remaining = kYellowS;
    s.pending_phase = phase;
    s.pending_green = green_s;
  }
  s.ran_once = true;
}

void Simulator::record(char type, int veh, int lane) {
  if (opt_.record_events) events_.push_back({clock_, type, veh, lane});
}

bool Simulator::try_enter(int vi) {
  auto& v = vehicles_[vi];
  Lane& lane = lanes_[v.route[0]];
  if (static_cast<int>(lane.queue.size()) >= lane.capacity) return false;
  lane.queue.push_back(vi);
  v.enter_t = clock_;
  v.lane_enter_t = clock_;
  ++in_network_;
  record('e', vi, v.route[0]);
  return true;
}

void Simulator::release_vehicle(const Release& r) {
  Vehicle v;
  v.route = r.route;
  v.spawn_t = clock_;
  vehicles_.push_back(std::move(v));
  int vi = static_cast<int>(vehicles_.size()) - 1;
  ++spawned_;
  record('s', vi, r.route[0]);
  if (!try_enter(vi)) backlog_.push_back(vi);
}

void Simulator::update_minute_stats() {
  int n = graph_->n();
  for (int ni = 0; ni < n; ++ni)
    for (int m = 0; m < kMovements; ++m) {
      double occ = static_cast<double>(lanes_[nodes_[ni].in_lane[m]].queue.size());
      auto& cur = minute_running_max_[ni * kMovements + m];
      if (occ > cur) cur = occ;
    }
  if ((clock_ + 1) % 60 == 0) {
    minute_max_.push_back(minute_running_max_);
    std::fill(minute_running_max_.begin(), minute_running_max_.end(), 0.0);
  }
}

void Simulator::step() {
  const int t = clock_;

  // backlog first, then releases due this second
  if (!backlog_.empty()) {
    std::deque<int> still;
    for (int vi : backlog_)
      if (!try_enter(vi)) still.push_back(vi);
    backlog_.swap(still);
  }
  while (next_release_ < schedule_.size() && schedule_[next_release_].time <= t) {
    release_vehicle(schedule_[next_release_]);
    ++next_release_;
  }

  // discharge
  for (int ni = 0; ni < graph_->n(); ++ni) {
    const auto& sig = signals_[ni];
    const auto& phase = graph_->nodes[ni].phases[sig.active_phase];
    for (int m = 0; m < kMovements; ++m) {
      bool is_right = movement_turn(m) == Turn::Right;
      bool green = sig.green_remaining > 0 && (phase[0] == m || phase[1] == m);
      if (!is_right && !green) continue;

      Lane& in = lanes_[nodes_[ni].in_lane[m]];
      if (in.queue.empty()) continue;
      if (t - in.last_discharge < kDischargeHeadwayS) continue;
      int vi = in.queue.front();
      Vehicle& v = vehicles_[vi];
      if (t + 1 - v.lane_enter_t < in.free_flow_s - 1e-9) continue;

      bool last_hop = v.route_pos + 1 >= static_cast<int>(v.route.size());
      if (last_hop) {
        in.queue.pop_front();
        in.last_discharge = t;
        v.exit_t = t + 1;
        --in_network_;
        ++completed_;
        record('x', vi, v.route[v.route_pos]);
      } else {
        Lane& out = lanes_[v.route[v.route_pos + 1]];
        if (static_cast<int>(out.queue.size()) >= out.capacity) continue;
        in.queue.pop_front();
        in.last_discharge = t;
        record('c', vi, v.route[v.route_pos]);
        ++v.route_pos;
        v.lane_enter_t = t + 1;
        out.queue.push_back(vi);
      }
    }
  }

  update_minute_stats();
  cumulative_passed_.push_back(completed_);

  // signal timers
  for (auto& s : signals_) {
    if (s.green_remaining > 0) {
      --s.green_remaining;
    } else if (s.yellow_remaining > 0) {
      if (--s.yellow_remaining == 0) {
        s.active_phase = s.pending_phase;
        s.green_remaining = s.pending_green;
        s.pending_phase = -1;
        s.pending_green = 0;
      }
    }
  }
  clock_ = t + 1;
}

Observation Simulator::observe(int node) const {
  if (node < 0 || node >= graph_->n()) throw std::runtime_error("observe: bad node index");
  Observation o;
  o.node = node;
  o.phase_onehot[signals_[node].active_phase] = 1.0;
  for (int m = 0; m < kMovements; ++m) {
    o.incoming[m] = static_cast<double>(lanes_[nodes_[node].in_lane[m]].queue.size());
    o.outgoing[m] = static_cast<double>(lanes_[nodes_[node].out_lane[m]].queue.size());
  }
  return o;
}

Observation Simulator::observe(const std::string& id) const {
  int ni = graph_->node_index(id);
  if (ni < 0) throw std::runtime_error("observe: unknown intersection '" + id + "'");
  return observe(ni);
}

std::vector<double> Simulator::per_minute_lane_max(int minute) const {
  if (minute < 0 || minute >= static_cast<int>(minute_max_.size()))
    throw std::runtime_error("minute " + std::to_string(minute) +
                             " is not complete yet (clock " + std::to_string(clock_) + ")");
  return minute_max_[minute];
}

MetricsRecord Simulator::metrics() const {
  MetricsRecord r;
  r.throughput = completed_;
  r.cumulative_passed = cumulative_passed_;
  double sum_completed = 0;
  double sum_inclusive = 0;
  long n_inclusive = 0;
  for (const auto& v : vehicles_) {
    if (v.exit_t >= 0) {
      sum_completed += v.exit_t - v.spawn_t;
      sum_inclusive += v.exit_t - v.spawn_t;
      ++n_inclusive;
    } else if (v.enter_t >= 0) {
      sum_inclusive += clock_ - v.spawn_t;
      ++n_inclusive;
    }
  }
  r.empty = completed_ == 0;
  r.att_completed_s = completed_ > 0 ? sum_completed / static_cast<double>(completed_) : 0.0;
  r.att_inclusive_s = n_inclusive > 0 ? sum_inclusive / static_cast<double>(n_inclusive) : 0.0;
  return r;
}

void Simulator::write_event_log(std::ostream& os) const {
  for (const auto& e : events_)
    os << e.step << ' ' << e.type << ' ' << e.vehicle << ' ' << lanes_[e.lane].id << '\n';
}

double Simulator::out_lane_occupancy(int node, int movement) const {
  return static_cast<double>(lanes_[nodes_[node].out_lane[movement]].queue.size());
}

int Simulator::out_lane_capacity(int node, int movement) const {
  return lanes_[nodes_[node].out_lane[movement]].capacity;
}

int Simulator::lane_occupancy_by_id(const std::string& lane_id) const {
  int li = lane_index(lane_id);
  if (li < 0) throw std::runtime_error("unknown lane '" + lane_id + "'");
  return static_cast<int>(lanes_[li].queue.size());
}

}  // namespace gplight
