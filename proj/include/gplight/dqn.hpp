#pragma once

// Per-intersection Q-learning: capacity-aware pressure rewards, a small ReLU
// MLP over the 28-feature observation (plus optional neighbor block), an
// epsilon-greedy policy, FIFO replay, and a periodically synced target net.

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "gplight/kernels.hpp"
#include "gplight/microsim.hpp"
#include "gplight/rng.hpp"

namespace gplight {

// Demand on one movement discounted by downstream saturation:
// n_in * (1 - n_out / n_max). Requires n_max >= 1 and 0 <= n_out <= n_max.
double movement_pressure(double n_in, double n_out, double n_max);

enum class RewardKind {
  CapacityPressure,  // -sum n_in * (1 - n_out/n_max)
  QueueLength,       // -sum n_in (the n_max -> infinity limit)
  PressLight,        // -sum (n_in - n_out * out_scale)
};

struct RewardSpec {
  RewardKind kind = RewardKind::CapacityPressure;
  double out_scale = 1.0;  // PressLight only
};

// Reward over `count` movement readings (negated demand sum).
double intersection_reward(const RewardSpec& spec, const double* n_in,
                           const double* n_out, const int* n_max, int count);

// Pulls the 12 readings for one intersection from the simulator.
double node_reward(const RewardSpec& spec, const Simulator& sim, int node);

struct EpsilonSchedule {
  double start = 0.8;
  double end = 0.2;
  int horizon_episodes = 1;  // episodes to walk start -> end
  double at(int episode) const;
};

struct Experience {
  std::vector<double> s;
  int a = 0;
  double r = 0;
  std::vector<double> s2;
};

class DqnAgent {
 public:
  struct Config {
    int obs_dim = kObservationDim;
    int actions = kPhases;
    std::vector<int> hidden = {64, 64};
    double obs_scale = 1.0 / 40.0;
    double gamma = 0.8;
    double lr = 1e-3;
    int replay_capacity = 10000;
    int batch_size = 32;
    int target_sync = 200;  // td updates between target refreshes
    Exec exec = Exec::Serial;
  };

  DqnAgent(Config cfg, std::uint64_t seed);

  const Config& config() const { return cfg_; }
  std::uint64_t layout_hash() const;

  std::vector<double> q_values(const std::vector<double>& obs) const;
  std::vector<double> target_q_values(const std::vector<double>& obs) const;
  int greedy_action(const std::vector<double>& obs) const;  // ties -> lowest index
  int act(const std::vector<double>& obs, double epsilon);

  void remember(std::vector<double> s, int a, double r, std::vector<double> s2);
  std::size_t replay_size() const { return replay_.size(); }
  const Experience& replay_at(std::size_t i) const { return replay_[i]; }

  // Samples batch_size experiences with replacement, takes one SGD step on the
  // online parameters, counts toward the target sync period. Returns the batch
  // TD loss. The replay buffer must be nonempty.
  double td_update();
  long updates() const { return updates_; }
  void sync_target();

  // Loss/gradient on an explicit batch; no step, no sync bookkeeping.
  double td_loss(const std::vector<Experience>& batch) const;
  double td_loss_grad(const std::vector<Experience>& batch, std::vector<double>& grad,
                      Exec exec) const;

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  const std::vector<double>& target_params() const { return target_; }

  void save(const std::string& path, const std::string& agent_id) const;
  static DqnAgent load(const std::string& path, const std::string& expected_id,
                       Config cfg);

 private:
  struct Layer { int in, out, w, b; };

  std::vector<double> net_forward(const double* params,
                                  const std::vector<double>& obs) const;
  // caches activations per layer; act[0] is the scaled input
  void net_forward_cached(const double* params, const std::vector<double>& obs,
                          std::vector<std::vector<double>>& act) const;
  void net_backward(const double* params, const std::vector<std::vector<double>>& act,
                    const std::vector<double>& dout, double* grad) const;
  void init_params(std::uint64_t seed);

  Config cfg_;
  std::vector<Layer> layers_;
  std::vector<double> params_, target_;
  std::deque<Experience> replay_;
  Rng rng_act_, rng_sample_;
  long updates_ = 0;
};

}  // namespace gplight
