#include "gplight/control.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gplight {

Mode parse_mode(const std::string& name) {
  if (name == "fixedtime") return Mode::FixedTime;
  if (name == "maxpressure") return Mode::MaxPressure;
  if (name == "presslight-fixed") return Mode::PressLightFixed;
  if (name == "presslight-dynamic") return Mode::PressLightDynamic;
  if (name == "gplight") return Mode::GpLight;
  throw std::invalid_argument(
      "unknown mode '" + name +
      "' (expected fixedtime, maxpressure, presslight-fixed, presslight-dynamic "
      "or gplight)");
}

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::FixedTime: return "fixedtime";
    case Mode::MaxPressure: return "maxpressure";
    case Mode::PressLightFixed: return "presslight-fixed";
    case Mode::PressLightDynamic: return "presslight-dynamic";
    case Mode::GpLight: return "gplight";
  }
  throw std::invalid_argument("bad mode value");
}

bool mode_uses_agents(Mode m) {
  return m == Mode::PressLightFixed || m == Mode::PressLightDynamic ||
         m == Mode::GpLight;
}

bool mode_uses_predictor(Mode m) { return m == Mode::GpLight; }

RewardSpec default_reward(Mode m) {
  RewardSpec spec;
  spec.kind = (m == Mode::PressLightFixed || m == Mode::PressLightDynamic)
                  ? RewardKind::PressLight
                  : RewardKind::CapacityPressure;
  return spec;
}

static void check_rule(const DurationRule& rule) {
  if (rule.discharge_headway_s <= 0) throw std::invalid_argument("headway must be > 0");
  if (rule.lanes_discharging < 1)
    throw std::invalid_argument("lanes_discharging must be >= 1");
  if (rule.t_min_s < 1 || rule.t_max_s < rule.t_min_s)
    throw std::invalid_argument("need 1 <= t_min <= t_max");
  if (rule.fixed_green_s < 1) throw std::invalid_argument("fixed_green must be >= 1");
}

int duration_from_count(double n, const DurationRule& rule) {
  check_rule(rule);
  if (n < 0) throw std::invalid_argument("vehicle count must be >= 0");
  long t = std::lround(n * rule.discharge_headway_s / rule.lanes_discharging);
  return static_cast<int>(std::clamp<long>(t, rule.t_min_s, rule.t_max_s));
}

int required_green(const Observation& obs, const std::array<int, 2>& phase_movements,
                   const DurationRule& rule) {
  double n = obs.incoming[phase_movements[0]] + obs.incoming[phase_movements[1]];
  return duration_from_count(n, rule);
}

int expected_green(const std::vector<double>& prediction, int n_nodes, int lanes,
                   int horizon, int node, const std::array<int, 2>& phase_movements,
                   const DurationRule& rule) {
  if (static_cast<int>(prediction.size()) != n_nodes * lanes * horizon)
    throw std::invalid_argument("prediction size does not match nodes*lanes*horizon");
  if (node < 0 || node >= n_nodes) throw std::invalid_argument("node out of range");
  const double* base = prediction.data() + static_cast<std::size_t>(node) * lanes * horizon;
  double peak = 0;
  for (int h = 0; h < horizon; ++h) {
    double n = base[phase_movements[0] * horizon + h] +
               base[phase_movements[1] * horizon + h];
    peak = std::max(peak, n);
  }
  return duration_from_count(peak, rule);
}

std::vector<double> build_state(const Simulator& sim, int node, bool include_neighbors) {
  std::vector<double> v = sim.observe(node).as_vector();
  if (include_neighbors) {
    const auto& nb = sim.graph().side_neighbor[node];
    for (int s = 0; s < 4; ++s) {
      if (nb[s] < 0) continue;
      Observation o = sim.observe(nb[s]);
      v.insert(v.end(), o.incoming.begin(), o.incoming.end());
    }
  }
  return v;
}

int state_dim(const RoadGraph& g, int node, bool include_neighbors) {
  int dim = kObservationDim;
  if (include_neighbors) {
    for (int s = 0; s < 4; ++s)
      if (g.side_neighbor[node][s] >= 0) dim += kMovements;
  }
  return dim;
}

EpisodeRunner::EpisodeRunner(const RoadGraph& g, std::vector<FlowSpec> flows)
    : graph_(&g), flows_(std::move(flows)) {}

namespace {

struct PendingExp {
  bool has = false;
  std::vector<double> s;
  int a = 0;
};

int maxpressure_phase(const Simulator& sim, const Observation& obs, int node) {
  const auto& phases = sim.graph().nodes[node].phases;
  int best = 0;
  double best_p = -1e300;
  for (int p = 0; p < kPhases; ++p) {
    double total = 0;
    for (int m : phases[p])
      total += movement_pressure(obs.incoming[m], sim.out_lane_occupancy(node, m),
                                 sim.out_lane_capacity(node, m));
    if (total > best_p + 1e-12) {
      best_p = total;
      best = p;
    }
  }
  return best;
}

}  // namespace

EpisodeResult EpisodeRunner::run(const EpisodeConfig& cfg, std::vector<DqnAgent>* agents,
                                 const Stgcn* predictor) const {
  const RoadGraph& g = *graph_;
  const int n = g.n();
  check_rule(cfg.rule);
  if (cfg.total_s < 1) throw std::invalid_argument("episode length must be >= 1 s");
  if (cfg.epsilon < 0 || cfg.epsilon > 1)
    throw std::invalid_argument("epsilon must be in [0,1]");
  if (cfg.reward_scale <= 0)
    throw std::invalid_argument("reward scale must be positive");
  if (mode_uses_agents(cfg.mode)) {
    if (agents == nullptr || static_cast<int>(agents->size()) != n)
      throw std::invalid_argument("need one agent per intersection");
    for (int i = 0; i < n; ++i) {
      int want = state_dim(g, i, cfg.include_neighbor_obs);
      if ((*agents)[i].config().obs_dim != want)
        throw std::invalid_argument("agent observation size does not match network");
    }
  }
  int history = 0, horizon = 0;
  if (cfg.mode == Mode::GpLight && cfg.use_forecaster) {
    if (predictor == nullptr)
      throw std::invalid_argument("gplight needs a trained forecaster");
    if (predictor->n_nodes() != n)
      throw std::invalid_argument("forecaster was built for a different network");
    history = predictor->config().history;
    horizon = predictor->config().horizon;
    if (cfg.total_s < (history + horizon) * 60)
      throw std::invalid_argument("episode shorter than history plus horizon");
  }

  Simulator::Options opt;
  opt.spawn_jitter_s = cfg.spawn_jitter_s;
  opt.seed = cfg.seed;
  opt.record_events = cfg.record_events;
  Simulator sim(g, opt);
  sim.add_flows(flows_);

  EpisodeResult res;
  std::vector<PendingExp> pending(n);
  std::vector<int> cycle_phase(n, 0);
  std::vector<double> forecast;           // [node][lane][horizon], raw counts
  std::vector<double> pred_volume_by_minute;
  double eps = cfg.learn ? cfg.epsilon : 0.0;
  double td_loss_sum = 0;

  auto refresh_forecast = [&]() {
    int m = sim.complete_minutes();
    std::vector<double> x(static_cast<std::size_t>(history) * n * kMovements);
    for (int t = 0; t < history; ++t) {
      std::vector<double> row = sim.per_minute_lane_max(m - history + t);
      std::copy(row.begin(), row.end(),
                x.begin() + static_cast<std::size_t>(t) * n * kMovements);
    }
    forecast = predictor->predict(x);
    if (cfg.collect_series) {
      if (static_cast<int>(pred_volume_by_minute.size()) <= m)
        pred_volume_by_minute.resize(m + 1, -1.0);
      double total = 0;
      for (int node = 0; node < n; ++node)
        for (int l = 0; l < kMovements; ++l)
          total += forecast[(static_cast<std::size_t>(node) * kMovements + l) * horizon];
      pred_volume_by_minute[m] = total;
    }
  };

  auto decide = [&](int node) {
    Observation obs = sim.observe(node);
    std::vector<double> state;
    if (mode_uses_agents(cfg.mode)) {
      state = build_state(sim, node, cfg.include_neighbor_obs);
      DqnAgent& agent = (*agents)[node];
      if (cfg.learn && pending[node].has) {
        double r = cfg.reward_scale * node_reward(cfg.reward, sim, node);
        agent.remember(std::move(pending[node].s), pending[node].a, r, state);
        pending[node].has = false;
        if (agent.replay_size() >= static_cast<std::size_t>(agent.config().batch_size)) {
          td_loss_sum += agent.td_update();
          ++res.td_updates;
        }
      }
    }

    ActionRecord rec;
    rec.step = sim.clock();
    rec.node = node;
    rec.warm_up = forecast.empty();
    switch (cfg.mode) {
      case Mode::FixedTime:
        rec.phase = cycle_phase[node];
        cycle_phase[node] = (cycle_phase[node] + 1) % kPhases;
        rec.green = cfg.rule.fixed_green_s;
        rec.t_req = required_green(obs, g.nodes[node].phases[rec.phase], cfg.rule);
        break;
      case Mode::MaxPressure:
        rec.phase = maxpressure_phase(sim, obs, node);
        rec.green = cfg.rule.fixed_green_s;
        rec.t_req = required_green(obs, g.nodes[node].phases[rec.phase], cfg.rule);
        break;
      case Mode::PressLightFixed:
        rec.phase = (*agents)[node].act(state, eps);
        rec.green = cfg.rule.fixed_green_s;
        rec.t_req = required_green(obs, g.nodes[node].phases[rec.phase], cfg.rule);
        break;
      case Mode::PressLightDynamic:
        rec.phase = (*agents)[node].act(state, eps);
        rec.t_req = required_green(obs, g.nodes[node].phases[rec.phase], cfg.rule);
        rec.green = rec.t_req;
        break;
      case Mode::GpLight: {
        rec.phase = (*agents)[node].act(state, eps);
        rec.t_req = required_green(obs, g.nodes[node].phases[rec.phase], cfg.rule);
        rec.t_exp = forecast.empty()
                        ? cfg.rule.t_max_s
                        : expected_green(forecast, n, kMovements, horizon, node,
                                         g.nodes[node].phases[rec.phase], cfg.rule);
        rec.green = std::min(rec.t_exp, rec.t_req);
        break;
      }
    }
    res.actions.push_back(rec);
    if (mode_uses_agents(cfg.mode) && cfg.learn) {
      pending[node].has = true;
      pending[node].s = std::move(state);
      pending[node].a = rec.phase;
    }
    sim.set_action(node, rec.phase, rec.green);
  };

  while (sim.clock() < cfg.total_s) {
    if (cfg.mode == Mode::GpLight && cfg.use_forecaster && sim.clock() % 60 == 0 &&
        sim.complete_minutes() >= history)
      refresh_forecast();
    for (int node = 0; node < n; ++node)
      if (sim.awaiting(node)) decide(node);
    sim.step();
  }
  // let running greens finish so every issued action plays out fully
  while (!sim.all_awaiting()) sim.step();

  res.metrics = sim.metrics();
  res.t_sum = sim.clock();
  if (res.td_updates > 0) res.mean_td_loss = td_loss_sum / res.td_updates;
  if (cfg.collect_series) {
    int minutes = sim.complete_minutes();
    res.minute_features.reserve(minutes);
    res.real_volume.reserve(minutes);
    for (int m = 0; m < minutes; ++m) {
      std::vector<double> row = sim.per_minute_lane_max(m);
      double total = 0;
      for (double v : row) total += v;
      res.real_volume.push_back(total);
      res.minute_features.push_back(std::move(row));
    }
    pred_volume_by_minute.resize(minutes, -1.0);
    res.predicted_volume = std::move(pred_volume_by_minute);
  }
  return res;
}

PhaseGreenSeries accumulate_phase_green(const std::vector<ActionRecord>& log, int node) {
  PhaseGreenSeries series;
  std::array<long, kPhases> cum{};
  for (const ActionRecord& rec : log) {
    if (rec.node != node) continue;
    cum[rec.phase] += rec.green;
    series.step.push_back(rec.step);
    series.cumulative.push_back(cum);
  }
  return series;
}

}  // namespace gplight
