// Times the batched network gradients with the serial reference and the
// OpenMP path on the same inputs, and prints the max parameter-gradient
// difference between the two so any drift is visible next to the speedup.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <vector>

#include "gplight/dqn.hpp"
#include "gplight/rng.hpp"
#include "gplight/scenario.hpp"
#include "gplight/stgcn.hpp"

using namespace gplight;

namespace {

double ms_per_call(int reps, const std::function<void()>& fn) {
  fn();  // warm once
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  int reps = argc > 1 ? std::atoi(argv[1]) : 10;
  Rng rng = make_rng(7, "bench");
  std::uniform_real_distribution<double> count(0.0, 30.0);

  // forecaster batch gradient on a 4x4 grid
  Scenario sc = make_scenario("grid16", 1);
  Stgcn::Config scfg;
  Stgcn model(sc.graph, scfg, 11);
  StgcnDataset ds;
  ds.n_nodes = sc.graph.n();
  ds.history = scfg.history;
  ds.horizon = scfg.horizon;
  const int windows = 64;
  for (int i = 0; i < windows; ++i) {
    std::vector<double> x(static_cast<std::size_t>(ds.history) * ds.n_nodes * ds.lanes);
    std::vector<double> y(static_cast<std::size_t>(ds.n_nodes) * ds.lanes * ds.horizon);
    for (double& v : x) v = count(rng);
    for (double& v : y) v = count(rng);
    ds.inputs.push_back(std::move(x));
    ds.targets.push_back(std::move(y));
  }
  std::vector<int> idx(windows / 2);
  std::iota(idx.begin(), idx.end(), 0);

  std::vector<double> gs(model.params().size()), gp(model.params().size());
  double serial_ms = ms_per_call(
      reps, [&] { model.batch_loss_grad(ds, idx, gs, Exec::Serial); });
  double parallel_ms = ms_per_call(
      reps, [&] { model.batch_loss_grad(ds, idx, gp, Exec::Parallel); });
  std::printf("forecaster batch grad (%d nodes, batch %zu): serial %.2f ms, "
              "parallel %.2f ms, speedup %.2fx, max grad diff %.3g\n",
              sc.graph.n(), idx.size(), serial_ms, parallel_ms,
              serial_ms / parallel_ms, max_abs_diff(gs, gp));

  // agent td batch gradient
  DqnAgent::Config acfg;
  DqnAgent agent(acfg, 13);
  std::uniform_int_distribution<int> act(0, acfg.actions - 1);
  std::vector<Experience> batch(256);
  for (Experience& e : batch) {
    e.s.resize(acfg.obs_dim);
    e.s2.resize(acfg.obs_dim);
    for (double& v : e.s) v = count(rng);
    for (double& v : e.s2) v = count(rng);
    e.a = act(rng);
    e.r = -count(rng);
  }
  std::vector<double> as(agent.params().size()), ap(agent.params().size());
  serial_ms = ms_per_call(reps, [&] { agent.td_loss_grad(batch, as, Exec::Serial); });
  parallel_ms =
      ms_per_call(reps, [&] { agent.td_loss_grad(batch, ap, Exec::Parallel); });
  std::printf("agent td batch grad (batch %zu): serial %.2f ms, parallel %.2f ms, "
              "speedup %.2fx, max grad diff %.3g\n",
              batch.size(), serial_ms, parallel_ms, serial_ms / parallel_ms,
              max_abs_diff(as, ap));
  return 0;
}
