#include "gplight/dqn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gplight/io.hpp"

namespace gplight {

double movement_pressure(double n_in, double n_out, double n_max) {
  if (n_max < 1.0) throw std::runtime_error("outgoing lane capacity must be >= 1");
  if (n_out < 0 || n_out > n_max)
    throw std::runtime_error("outgoing occupancy outside [0, capacity]");
  if (n_in < 0) throw std::runtime_error("incoming occupancy must be >= 0");
  return n_in * (1.0 - n_out / n_max);
}

double intersection_reward(const RewardSpec& spec, const double* n_in,
                           const double* n_out, const int* n_max, int count) {
  double sum = 0;
  for (int i = 0; i < count; ++i) {
    switch (spec.kind) {
      case RewardKind::CapacityPressure:
        sum += movement_pressure(n_in[i], n_out[i], static_cast<double>(n_max[i]));
        break;
      case RewardKind::QueueLength:
        sum += n_in[i];
        break;
      case RewardKind::PressLight:
        sum += n_in[i] - n_out[i] * spec.out_scale;
        break;
    }
  }
  return -sum;
}

double node_reward(const RewardSpec& spec, const Simulator& sim, int node) {
  Observation obs = sim.observe(node);
  int n_max[kMovements];
  for (int m = 0; m < kMovements; ++m) n_max[m] = sim.out_lane_capacity(node, m);
  return intersection_reward(spec, obs.incoming.data(), obs.outgoing.data(), n_max,
                             kMovements);
}

double EpsilonSchedule::at(int episode) const {
  if (horizon_episodes < 1) throw std::runtime_error("epsilon horizon must be >= 1");
  if (episode <= 0) return start;
  if (episode >= horizon_episodes) return end;
  double f = static_cast<double>(episode) / horizon_episodes;
  return start + (end - start) * f;
}

DqnAgent::DqnAgent(Config cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)),
      rng_act_(make_rng(seed, "dqn-act")),
      rng_sample_(make_rng(seed, "dqn-sample")) {
  if (cfg_.obs_dim < 1 || cfg_.actions < 2) throw std::runtime_error("bad agent dims");
  if (cfg_.obs_scale <= 0 || cfg_.gamma < 0 || cfg_.gamma > 1 || cfg_.lr < 0)
    throw std::runtime_error("bad agent settings");
  if (cfg_.replay_capacity < 1 || cfg_.batch_size < 1 || cfg_.target_sync < 1)
    throw std::runtime_error("bad agent replay settings");
  for (int h : cfg_.hidden)
    if (h < 1) throw std::runtime_error("bad hidden layer width");

  int cur = 0;
  int prev = cfg_.obs_dim;
  auto push_layer = [&](int out) {
    Layer l{prev, out, cur, cur + prev * out};
    cur += prev * out + out;
    layers_.push_back(l);
    prev = out;
  };
  for (int h : cfg_.hidden) push_layer(h);
  push_layer(cfg_.actions);
  params_.assign(cur, 0.0);
  init_params(seed);
  target_ = params_;
}

void DqnAgent::init_params(std::uint64_t seed) {
  Rng rng = make_rng(seed, "dqn-init");
  for (const Layer& l : layers_) {
    double s = std::sqrt(6.0 / (l.in + l.out));
    std::uniform_real_distribution<double> u(-s, s);
    for (int i = 0; i < l.in * l.out; ++i) params_[l.w + i] = u(rng);
  }
}

std::uint64_t DqnAgent::layout_hash() const {
  std::uint64_t h = fnv1a64(&cfg_.obs_dim, sizeof cfg_.obs_dim);
  h = fnv1a64(&cfg_.actions, sizeof cfg_.actions, h);
  for (int w : cfg_.hidden) h = fnv1a64(&w, sizeof w, h);
  h = fnv1a64(&cfg_.obs_scale, sizeof cfg_.obs_scale, h);
  return h;
}

void DqnAgent::net_forward_cached(const double* params, const std::vector<double>& obs,
                                  std::vector<std::vector<double>>& act) const {
  if (static_cast<int>(obs.size()) != cfg_.obs_dim)
    throw std::runtime_error("observation size does not match the agent");
  act.assign(layers_.size() + 1, {});
  act[0].resize(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) act[0][i] = obs[i] * cfg_.obs_scale;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const Layer& l = layers_[li];
    bool last = li + 1 == layers_.size();
    act[li + 1].resize(l.out);
    for (int o = 0; o < l.out; ++o) {
      double z = params[l.b + o];
      for (int i = 0; i < l.in; ++i) z += act[li][i] * params[l.w + i * l.out + o];
      act[li + 1][o] = last ? z : (z > 0 ? z : 0.0);
    }
  }
}

std::vector<double> DqnAgent::net_forward(const double* params,
                                          const std::vector<double>& obs) const {
  std::vector<std::vector<double>> act;
  net_forward_cached(params, obs, act);
  return act.back();
}

void DqnAgent::net_backward(const double* params,
                            const std::vector<std::vector<double>>& act,
                            const std::vector<double>& dout, double* grad) const {
  std::vector<double> d = dout;
  for (int li = static_cast<int>(layers_.size()) - 1; li >= 0; --li) {
    const Layer& l = layers_[li];
    std::vector<double> dprev(l.in, 0.0);
    for (int o = 0; o < l.out; ++o) {
      double dz = d[o];
      if (dz == 0) continue;
      grad[l.b + o] += dz;
      for (int i = 0; i < l.in; ++i) {
        grad[l.w + i * l.out + o] += act[li][i] * dz;
        dprev[i] += params[l.w + i * l.out + o] * dz;
      }
    }
    if (li > 0)
      for (int i = 0; i < l.in; ++i)
        if (act[li][i] <= 0) dprev[i] = 0.0;  // ReLU mask on hidden activations
    d = std::move(dprev);
  }
}

std::vector<double> DqnAgent::q_values(const std::vector<double>& obs) const {
  return net_forward(params_.data(), obs);
}

std::vector<double> DqnAgent::target_q_values(const std::vector<double>& obs) const {
  return net_forward(target_.data(), obs);
}

int DqnAgent::greedy_action(const std::vector<double>& obs) const {
  std::vector<double> q = q_values(obs);
  int best = 0;
  for (int a = 1; a < cfg_.actions; ++a)
    if (q[a] > q[best]) best = a;
  return best;
}

int DqnAgent::act(const std::vector<double>& obs, double epsilon) {
  if (epsilon < 0 || epsilon > 1) throw std::runtime_error("epsilon outside [0,1]");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng_act_) < epsilon) {
    std::uniform_int_distribution<int> pick(0, cfg_.actions - 1);
    return pick(rng_act_);
  }
  return greedy_action(obs);
}

void DqnAgent::remember(std::vector<double> s, int a, double r, std::vector<double> s2) {
  if (static_cast<int>(s.size()) != cfg_.obs_dim ||
      static_cast<int>(s2.size()) != cfg_.obs_dim)
    throw std::runtime_error("experience state size does not match the agent");
  if (a < 0 || a >= cfg_.actions) throw std::runtime_error("experience action out of range");
  replay_.push_back({std::move(s), a, r, std::move(s2)});
  if (static_cast<int>(replay_.size()) > cfg_.replay_capacity) replay_.pop_front();
}

double DqnAgent::td_loss(const std::vector<Experience>& batch) const {
  if (batch.empty()) throw std::runtime_error("empty batch");
  double loss = 0;
  for (const Experience& e : batch) {
    std::vector<double> qn = net_forward(target_.data(), e.s2);
    double target = e.r + cfg_.gamma * *std::max_element(qn.begin(), qn.end());
    std::vector<double> q = net_forward(params_.data(), e.s);
    double diff = target - q[e.a];
    loss += diff * diff;
  }
  return loss / static_cast<double>(batch.size());
}

double DqnAgent::td_loss_grad(const std::vector<Experience>& batch,
                              std::vector<double>& grad, Exec exec) const {
  if (batch.empty()) throw std::runtime_error("empty batch");
  struct Acc {
    double loss = 0;
    std::vector<double> grad;
  };
  double inv = 1.0 / static_cast<double>(batch.size());
  auto acc = accumulate_chunked<Acc>(
      static_cast<int>(batch.size()), exec,
      [&] {
        Acc a;
        a.grad.assign(params_.size(), 0.0);
        return a;
      },
      [&](int i, Acc& a) {
        const Experience& e = batch[i];
        std::vector<double> qn = net_forward(target_.data(), e.s2);
        double target = e.r + cfg_.gamma * *std::max_element(qn.begin(), qn.end());
        std::vector<std::vector<double>> act;
        net_forward_cached(params_.data(), e.s, act);
        double diff = act.back()[e.a] - target;
        a.loss += diff * diff;
        std::vector<double> dout(cfg_.actions, 0.0);
        dout[e.a] = 2.0 * diff * inv;  // gradient flows through the taken action only
        net_backward(params_.data(), act, dout, a.grad.data());
      },
      [](Acc& a, const Acc& b) {
        a.loss += b.loss;
        for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += b.grad[i];
      });
  grad = std::move(acc.grad);
  return acc.loss * inv;
}

double DqnAgent::td_update() {
  if (replay_.empty()) throw std::runtime_error("cannot update from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, replay_.size() - 1);
  std::vector<Experience> batch;
  batch.reserve(cfg_.batch_size);
  for (int i = 0; i < cfg_.batch_size; ++i) batch.push_back(replay_[pick(rng_sample_)]);

  std::vector<double> grad;
  double loss = td_loss_grad(batch, grad, cfg_.exec);
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i] -= cfg_.lr * grad[i];
  ++updates_;
  if (updates_ % cfg_.target_sync == 0) sync_target();
  return loss;
}

void DqnAgent::sync_target() { target_ = params_; }

void DqnAgent::save(const std::string& path, const std::string& agent_id) const {
  BinaryWriter w(path);
  w.str("dqn-ckpt-v1");
  w.str(agent_id);
  w.u64(layout_hash());
  w.u64(static_cast<std::uint64_t>(updates_));
  w.array("params", params_);
  w.array("target", target_);
  w.close();
}

DqnAgent DqnAgent::load(const std::string& path, const std::string& expected_id,
                        Config cfg) {
  BinaryReader r(path);
  if (r.str() != "dqn-ckpt-v1")
    throw std::runtime_error("not an agent checkpoint: " + path);
  std::string id = r.str();
  if (id != expected_id)
    throw std::runtime_error("agent checkpoint is for '" + id + "', expected '" +
                             expected_id + "'");
  std::uint64_t layout = r.u64();
  std::uint64_t updates = r.u64();
  DqnAgent agent(std::move(cfg), 0);
  if (layout != agent.layout_hash())
    throw std::runtime_error("agent checkpoint layout does not match the config");
  std::vector<double> p = r.array("params");
  std::vector<double> t = r.array("target");
  if (p.size() != agent.params_.size() || t.size() != agent.params_.size())
    throw std::runtime_error("agent checkpoint parameter count mismatch");
  agent.params_ = std::move(p);
  agent.target_ = std::move(t);
  agent.updates_ = static_cast<long>(updates);
  return agent;
}

}  // namespace gplight
