#pragma once

// Config-driven benchmark pipeline: harvest forecaster data, train forecaster
// and agents, evaluate every mode x seed cell, and emit CSV artifacts plus a
// manifest that makes reruns byte-identical.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gplight/control.hpp"
#include "gplight/dqn.hpp"
#include "gplight/microsim.hpp"
#include "gplight/roadgraph.hpp"
#include "gplight/stgcn.hpp"

namespace gplight {

struct PredictorParams {
  int history = 10;
  int horizon = 5;
  int cheb_order = 3;
  int kt = 3;
  int c_hidden = 32;
  int c_spatial = 16;
  double feature_scale = 40.0;
  double sigma_m = 400.0;   // edge weight kernel width
  double cutoff_m = 1000.0;
  int epochs = 30;
  int batch = 16;
  double lr = 1e-3;
};

struct AgentParams {
  double gamma = 0.8;
  double lr = 1e-3;
  double eps_start = 0.8;
  double eps_end = 0.2;
  double obs_scale = 1.0 / 40.0;
  double reward_scale = 1.0 / 40.0;  // td target conditioning, policy-neutral
  std::vector<int> hidden = {64, 64};
  int batch = 32;
  int target_sync = 200;
  int replay = 10000;
};

struct ExperimentConfig {
  std::string out_dir;
  std::string scenario;                  // built-in name, or empty
  bool scenario_surge = false;           // grid scenarios only
  std::string roadnet_path, flow_path;   // explicit inputs, or empty
  std::vector<Mode> modes;
  std::vector<std::uint64_t> seeds = {0};
  std::uint64_t root_seed = 0;
  int episodes = 50;                     // training budget per learning cell
  // gplight training episodes run with the forecaster withheld before the
  // remaining episodes integrate it. 0 = joint from the first episode.
  int pretrain_episodes = 0;
  int episode_s = 3600;
  int spawn_jitter_s = 0;                // training and harvest only
  int harvest_episodes = 6;
  bool neighbor_obs = false;
  int workers = 0;                       // 0 = hardware concurrency
  PredictorParams predictor;
  AgentParams agent;
  DurationRule rule;

  // filled by resolve_experiment_config
  std::string roadnet_json;
  RoadGraph graph;
  std::vector<FlowSpec> flows;
  std::uint64_t config_hash = 0;
};

// Parses fields and checks ranges; does not touch the filesystem.
ExperimentConfig parse_experiment_config(const std::string& json_text);
// Loads or generates the network and flows, then cross-validates.
void resolve_experiment_config(ExperimentConfig& cfg);
ExperimentConfig load_experiment_config(const std::string& path);

struct StageError : std::runtime_error {
  StageError(const std::string& stage, const std::string& message)
      : std::runtime_error("[stage:" + stage + "] " + message), stage_name(stage) {}
  std::string stage_name;
};

// Artifact locations under cfg.out_dir.
std::string dataset_path(const ExperimentConfig&);
std::string predictor_ckpt_path(const ExperimentConfig&);
std::string cell_dir(const ExperimentConfig&, Mode, std::size_t seed_idx);
std::string agent_ckpt_path(const ExperimentConfig&, Mode, std::size_t seed_idx, int node);

// In-memory engine, shared by the file stages and the acceptance harness.
StgcnDataset harvest_dataset(const ExperimentConfig&);
Stgcn make_predictor(const ExperimentConfig&);  // fresh, untrained
Stgcn::TrainReport train_predictor_model(const ExperimentConfig&, Stgcn&,
                                         const StgcnDataset&);
std::vector<DqnAgent> make_cell_agents(const ExperimentConfig&, std::size_t seed_idx);

struct CellResult {
  Mode mode = Mode::FixedTime;
  std::size_t seed_idx = 0;
  std::vector<EpisodeResult> training;
  EpisodeResult eval;
  bool has_eval = false;
};

// Trains (agent modes, when train=true) and/or evaluates one mode x seed cell.
// Evaluation always runs greedy with learning off and no spawn jitter so every
// mode faces the same released traffic.
CellResult run_cell(const ExperimentConfig&, Mode, std::size_t seed_idx,
                    const Stgcn* predictor, std::vector<DqnAgent>* agents,
                    bool train, bool evaluate);

// File-based stages; each throws StageError and leaves partial outputs behind.
void stage_harvest(const ExperimentConfig&);
void stage_train_predictor(const ExperimentConfig&);
void stage_train_control(const ExperimentConfig&);
void stage_evaluate(const ExperimentConfig&);
// manifest + the four stages above, skipping those no listed mode needs
void run_all(const ExperimentConfig&);

void write_manifest(const ExperimentConfig&);

// Gap series and mode summary across two finished run directories.
void compare_runs(const std::string& dir_a, const std::string& dir_b,
                  const std::string& out_dir);

}  // namespace gplight
