#include "gplight/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "gplight/io.hpp"
#include "gplight/rng.hpp"
#include "gplight/scenario.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace gplight {

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

void require(bool ok, const std::string& message) {
  if (!ok) throw std::runtime_error(message);
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for read: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Everything lands via a temp file and a rename so a cell is either absent or
// complete, never half-written.
void write_text_atomic(const std::string& path, const std::string& text) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for write: " + tmp);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.close();
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  fs::rename(tmp, path);
}

template <typename F>
void finish_rename(const std::string& path, F&& writer) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::string tmp = path + ".tmp";
  writer(tmp);
  fs::rename(tmp, path);
}

std::uint64_t scenario_identity(const ExperimentConfig& cfg) {
  return fnv1a64(flows_to_json(cfg.flows), fnv1a64(cfg.roadnet_json));
}

std::uint64_t cell_base_seed(const ExperimentConfig& cfg, std::size_t idx) {
  return derive_seed(cfg.root_seed, "cell", cfg.seeds[idx]);
}

RoadGraph weighted_graph(const ExperimentConfig& cfg) {
  RoadGraph g = cfg.graph;
  apply_edge_weights(g, cfg.predictor.sigma_m, cfg.predictor.cutoff_m);
  return g;
}

EpisodeConfig base_episode(const ExperimentConfig& cfg, Mode mode) {
  EpisodeConfig ec;
  ec.mode = mode;
  ec.total_s = cfg.episode_s;
  ec.rule = cfg.rule;
  ec.reward = default_reward(mode);
  ec.reward_scale = cfg.agent.reward_scale;
  ec.include_neighbor_obs = cfg.neighbor_obs;
  return ec;
}

bool any_mode(const ExperimentConfig& cfg, bool (*pred)(Mode)) {
  for (Mode m : cfg.modes)
    if (pred(m)) return true;
  return false;
}

template <typename F>
void run_stage(const char* tag, F&& body) {
  try {
    body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(tag, e.what());
  }
}

// Fixed-width pool over independent cells; each cell is serial inside. The
// first failure is reported after every in-flight cell finished, so completed
// cells keep their outputs.
template <typename F>
void parallel_cells(int workers, int count, F&& body) {
  if (count <= 0) return;
  int w = workers > 0 ? workers : static_cast<int>(std::thread::hardware_concurrency());
  w = std::clamp(w, 1, count);
  if (w == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::string> errors(count);
  std::vector<std::thread> threads;
  threads.reserve(w);
  for (int t = 0; t < w; ++t) {
    threads.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
        try {
          body(i);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        } catch (...) {
          errors[i] = "unknown error";
        }
      }
    });
  }
  for (auto& th : threads) th.join();
  for (const std::string& e : errors)
    if (!e.empty()) throw std::runtime_error(e);
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("config is not valid JSON: ") + e.what());
  }
  require(doc.is_object(), "config root must be a JSON object");
  reject_unknown(doc,
                 {"out_dir", "scenario", "surge", "roadnet", "flows", "modes", "seeds",
                  "root_seed", "episodes", "pretrain_episodes", "episode_s",
                  "spawn_jitter_s", "harvest_episodes", "neighbor_obs", "workers",
                  "predictor", "agent", "duration"},
                 "config");

  ExperimentConfig cfg;
  cfg.config_hash = fnv1a64(text);
  cfg.out_dir = doc.value("out_dir", std::string());
  require(!cfg.out_dir.empty(), "config needs a non-empty 'out_dir'");

  cfg.scenario = doc.value("scenario", std::string());
  cfg.scenario_surge = doc.value("surge", false);
  cfg.roadnet_path = doc.value("roadnet", std::string());
  cfg.flow_path = doc.value("flows", std::string());
  bool named = !cfg.scenario.empty();
  bool files = !cfg.roadnet_path.empty() || !cfg.flow_path.empty();
  require(named != files,
          "config needs either 'scenario' or 'roadnet'+'flows', not both");
  if (files)
    require(!cfg.roadnet_path.empty() && !cfg.flow_path.empty(),
            "'roadnet' and 'flows' must be given together");

  require(doc.contains("modes") && doc["modes"].is_array() && !doc["modes"].empty(),
          "config needs a non-empty 'modes' array");
  for (const auto& jm : doc["modes"]) {
    require(jm.is_string(), "'modes' entries must be strings");
    Mode m = parse_mode(jm.get<std::string>());
    require(std::find(cfg.modes.begin(), cfg.modes.end(), m) == cfg.modes.end(),
            "duplicate mode '" + mode_name(m) + "'");
    cfg.modes.push_back(m);
  }

  if (doc.contains("seeds")) {
    require(doc["seeds"].is_array() && !doc["seeds"].empty(),
            "'seeds' must be a non-empty array");
    cfg.seeds.clear();
    for (const auto& js : doc["seeds"]) {
      require(js.is_number_integer() && js.get<long long>() >= 0,
              "'seeds' entries must be non-negative integers");
      auto s = js.get<std::uint64_t>();
      require(std::find(cfg.seeds.begin(), cfg.seeds.end(), s) == cfg.seeds.end(),
              "duplicate seed " + std::to_string(s));
      cfg.seeds.push_back(s);
    }
  }
  cfg.root_seed = doc.value("root_seed", std::uint64_t{0});

  cfg.episodes = doc.value("episodes", 50);
  require(cfg.episodes >= 0 && cfg.episodes <= 100000, "'episodes' out of range");
  cfg.pretrain_episodes = doc.value("pretrain_episodes", 0);
  require(cfg.pretrain_episodes >= 0 && cfg.pretrain_episodes <= cfg.episodes,
          "'pretrain_episodes' must be in [0, episodes]");
  cfg.episode_s = doc.value("episode_s", 3600);
  require(cfg.episode_s >= 60 && cfg.episode_s <= 86400, "'episode_s' out of range");
  cfg.spawn_jitter_s = doc.value("spawn_jitter_s", 0);
  require(cfg.spawn_jitter_s >= 0 && cfg.spawn_jitter_s <= 59,
          "'spawn_jitter_s' out of range");
  cfg.harvest_episodes = doc.value("harvest_episodes", 6);
  require(cfg.harvest_episodes >= 1 && cfg.harvest_episodes <= 10000,
          "'harvest_episodes' out of range");
  cfg.neighbor_obs = doc.value("neighbor_obs", false);
  cfg.workers = doc.value("workers", 0);
  require(cfg.workers >= 0 && cfg.workers <= 1024, "'workers' out of range");

  if (doc.contains("predictor")) {
    const json& p = doc["predictor"];
    require(p.is_object(), "'predictor' must be an object");
    reject_unknown(p,
                   {"history", "horizon", "cheb_order", "kt", "c_hidden", "c_spatial",
                    "feature_scale", "sigma_m", "cutoff_m", "epochs", "batch", "lr"},
                   "predictor");
    PredictorParams& pp = cfg.predictor;
    pp.history = p.value("history", pp.history);
    pp.horizon = p.value("horizon", pp.horizon);
    pp.cheb_order = p.value("cheb_order", pp.cheb_order);
    pp.kt = p.value("kt", pp.kt);
    pp.c_hidden = p.value("c_hidden", pp.c_hidden);
    pp.c_spatial = p.value("c_spatial", pp.c_spatial);
    pp.feature_scale = p.value("feature_scale", pp.feature_scale);
    pp.sigma_m = p.value("sigma_m", pp.sigma_m);
    pp.cutoff_m = p.value("cutoff_m", pp.cutoff_m);
    pp.epochs = p.value("epochs", pp.epochs);
    pp.batch = p.value("batch", pp.batch);
    pp.lr = p.value("lr", pp.lr);
    require(pp.history >= 1 && pp.horizon >= 1 && pp.cheb_order >= 1 && pp.kt >= 1,
            "predictor dimensions must be >= 1");
    require(pp.history - 4 * (pp.kt - 1) >= 1,
            "predictor history too short for two temporal layers of width kt");
    require(pp.c_hidden >= 1 && pp.c_spatial >= 1, "predictor channels must be >= 1");
    require(pp.feature_scale > 0, "'feature_scale' must be > 0");
    require(pp.sigma_m > 0 && pp.cutoff_m > 0, "edge kernel parameters must be > 0");
    require(pp.epochs >= 1 && pp.epochs <= 100000, "'epochs' out of range");
    require(pp.batch >= 1, "'batch' must be >= 1");
    require(pp.lr > 0, "predictor 'lr' must be > 0");
  }

  if (doc.contains("agent")) {
    const json& a = doc["agent"];
    require(a.is_object(), "'agent' must be an object");
    reject_unknown(a,
                   {"gamma", "lr", "eps_start", "eps_end", "obs_scale",
                    "reward_scale", "hidden", "batch", "target_sync", "replay"},
                   "agent");
    AgentParams& ap = cfg.agent;
    ap.gamma = a.value("gamma", ap.gamma);
    ap.lr = a.value("lr", ap.lr);
    ap.eps_start = a.value("eps_start", ap.eps_start);
    ap.eps_end = a.value("eps_end", ap.eps_end);
    ap.obs_scale = a.value("obs_scale", ap.obs_scale);
    ap.reward_scale = a.value("reward_scale", ap.reward_scale);
    if (a.contains("hidden")) {
      require(a["hidden"].is_array() && !a["hidden"].empty(),
              "'hidden' must be a non-empty array");
      ap.hidden.clear();
      for (const auto& h : a["hidden"]) {
        require(h.is_number_integer() && h.get<int>() >= 1,
                "'hidden' entries must be integers >= 1");
        ap.hidden.push_back(h.get<int>());
      }
    }
    ap.batch = a.value("batch", ap.batch);
    ap.target_sync = a.value("target_sync", ap.target_sync);
    ap.replay = a.value("replay", ap.replay);
    require(ap.gamma >= 0 && ap.gamma <= 1, "'gamma' must be in [0,1]");
    require(ap.lr > 0, "agent 'lr' must be > 0");
    require(ap.eps_start >= 0 && ap.eps_start <= 1 && ap.eps_end >= 0 && ap.eps_end <= 1,
            "epsilon bounds must be in [0,1]");
    require(ap.eps_end <= ap.eps_start, "'eps_end' must not exceed 'eps_start'");
    require(ap.obs_scale > 0, "'obs_scale' must be > 0");
    require(ap.reward_scale > 0, "'reward_scale' must be > 0");
    require(ap.batch >= 1, "agent 'batch' must be >= 1");
    require(ap.target_sync >= 1, "'target_sync' must be >= 1");
    require(ap.replay >= ap.batch, "'replay' must hold at least one batch");
  }

  if (doc.contains("duration")) {
    const json& d = doc["duration"];
    require(d.is_object(), "'duration' must be an object");
    reject_unknown(d,
                   {"headway_s", "t_min_s", "t_max_s", "lanes_discharging",
                    "fixed_green_s"},
                   "duration");
    DurationRule& r = cfg.rule;
    r.discharge_headway_s = d.value("headway_s", r.discharge_headway_s);
    r.t_min_s = d.value("t_min_s", r.t_min_s);
    r.t_max_s = d.value("t_max_s", r.t_max_s);
    r.lanes_discharging = d.value("lanes_discharging", r.lanes_discharging);
    r.fixed_green_s = d.value("fixed_green_s", r.fixed_green_s);
    require(r.discharge_headway_s > 0, "'headway_s' must be > 0");
    require(r.t_min_s >= 1 && r.t_max_s >= r.t_min_s, "need 1 <= t_min <= t_max");
    require(r.lanes_discharging >= 1, "'lanes_discharging' must be >= 1");
    require(r.fixed_green_s >= 1, "'fixed_green_s' must be >= 1");
  }

  if (any_mode(cfg, mode_uses_predictor))
    require(cfg.episode_s >= (cfg.predictor.history + cfg.predictor.horizon) * 60,
            "episode_s must cover predictor history plus horizon");
  if (any_mode(cfg, mode_uses_agents))
    require(cfg.episodes >= 1, "learning modes need 'episodes' >= 1");
  return cfg;
}

void resolve_experiment_config(ExperimentConfig& cfg) {
  if (!cfg.scenario.empty()) {
    Scenario sc = make_scenario(cfg.scenario, derive_seed(cfg.root_seed, "scenario"),
                                cfg.scenario_surge);
    cfg.roadnet_json = std::move(sc.roadnet_json);
    cfg.graph = std::move(sc.graph);
    cfg.flows = std::move(sc.flows);
    return;
  }
  require(fs::exists(cfg.roadnet_path), "roadnet file not found: " + cfg.roadnet_path);
  require(fs::exists(cfg.flow_path), "flow file not found: " + cfg.flow_path);
  cfg.roadnet_json = read_text_file(cfg.roadnet_path);
  cfg.graph = build_graph(cfg.roadnet_json);
  cfg.flows = load_flows_file(cfg.flow_path, cfg.graph);
}

ExperimentConfig load_experiment_config(const std::string& path) {
  ExperimentConfig cfg = parse_experiment_config(read_text_file(path));
  resolve_experiment_config(cfg);
  return cfg;
}

std::string dataset_path(const ExperimentConfig& cfg) {
  return cfg.out_dir + "/dataset.bin";
}
std::string predictor_ckpt_path(const ExperimentConfig& cfg) {
  return cfg.out_dir + "/predictor.bin";
}
std::string cell_dir(const ExperimentConfig& cfg, Mode mode, std::size_t seed_idx) {
  return cfg.out_dir + "/" + mode_name(mode) + "-s" +
         std::to_string(cfg.seeds[seed_idx]);
}
std::string agent_ckpt_path(const ExperimentConfig& cfg, Mode mode,
                            std::size_t seed_idx, int node) {
  return cell_dir(cfg, mode, seed_idx) + "/agent-n" + std::to_string(node) + ".bin";
}

StgcnDataset harvest_dataset(const ExperimentConfig& cfg) {
  StgcnDataset ds;
  ds.n_nodes = cfg.graph.n();
  ds.lanes = kMovements;
  ds.history = cfg.predictor.history;
  ds.horizon = cfg.predictor.horizon;
  EpisodeRunner runner(cfg.graph, cfg.flows);
  for (int i = 0; i < cfg.harvest_episodes; ++i) {
    EpisodeConfig ec = base_episode(cfg, Mode::MaxPressure);
    ec.learn = false;
    ec.seed = derive_seed(cfg.root_seed, "harvest-episode", i);
    ec.spawn_jitter_s = cfg.spawn_jitter_s;
    EpisodeResult res = runner.run(ec, nullptr, nullptr);
    // drop drain-time minutes so the window count only depends on the config
    std::size_t nominal = static_cast<std::size_t>(cfg.episode_s / 60);
    if (res.minute_features.size() > nominal) res.minute_features.resize(nominal);
    append_windows(ds, res.minute_features, ds.n_nodes, ds.history, ds.horizon);
  }
  return ds;
}

Stgcn make_predictor(const ExperimentConfig& cfg) {
  Stgcn::Config sc;
  sc.history = cfg.predictor.history;
  sc.horizon = cfg.predictor.horizon;
  sc.lanes = kMovements;
  sc.cheb_order = cfg.predictor.cheb_order;
  sc.kt = cfg.predictor.kt;
  sc.c_hidden = cfg.predictor.c_hidden;
  sc.c_spatial = cfg.predictor.c_spatial;
  sc.feature_scale = cfg.predictor.feature_scale;
  return Stgcn(weighted_graph(cfg), sc, derive_seed(cfg.root_seed, "predictor-init"));
}

Stgcn::TrainReport train_predictor_model(const ExperimentConfig& cfg, Stgcn& model,
                                         const StgcnDataset& ds) {
  return model.train(ds, cfg.predictor.epochs, cfg.predictor.batch, cfg.predictor.lr,
                     derive_seed(cfg.root_seed, "predictor-train"), Exec::Parallel);
}

std::vector<DqnAgent> make_cell_agents(const ExperimentConfig& cfg,
                                       std::size_t seed_idx) {
  std::uint64_t base = cell_base_seed(cfg, seed_idx);
  std::vector<DqnAgent> agents;
  agents.reserve(cfg.graph.n());
  for (int k = 0; k < cfg.graph.n(); ++k) {
    DqnAgent::Config ac;
    ac.obs_dim = state_dim(cfg.graph, k, cfg.neighbor_obs);
    ac.actions = kPhases;
    ac.hidden = cfg.agent.hidden;
    ac.obs_scale = cfg.agent.obs_scale;
    ac.gamma = cfg.agent.gamma;
    ac.lr = cfg.agent.lr;
    ac.replay_capacity = cfg.agent.replay;
    ac.batch_size = cfg.agent.batch;
    ac.target_sync = cfg.agent.target_sync;
    ac.exec = Exec::Parallel;
    agents.emplace_back(ac, derive_seed(base, "agent-init", k));
  }
  return agents;
}

CellResult run_cell(const ExperimentConfig& cfg, Mode mode, std::size_t seed_idx,
                    const Stgcn* predictor, std::vector<DqnAgent>* agents, bool train,
                    bool evaluate) {
  CellResult res;
  res.mode = mode;
  res.seed_idx = seed_idx;
  EpisodeRunner runner(cfg.graph, cfg.flows);
  std::uint64_t base = cell_base_seed(cfg, seed_idx);

  if (train && mode_uses_agents(mode)) {
    EpsilonSchedule sched{cfg.agent.eps_start, cfg.agent.eps_end,
                          std::max(1, cfg.episodes)};
    res.training.reserve(cfg.episodes);
    for (int e = 0; e < cfg.episodes; ++e) {
      EpisodeConfig ec = base_episode(cfg, mode);
      ec.learn = true;
      ec.epsilon = sched.at(e);
      ec.seed = derive_seed(base, "train-episode", e);
      ec.spawn_jitter_s = cfg.spawn_jitter_s;
      ec.collect_series = false;
      ec.use_forecaster = e >= cfg.pretrain_episodes;
      res.training.push_back(runner.run(ec, agents, predictor));
    }
  }
  if (evaluate) {
    EpisodeConfig ec = base_episode(cfg, mode);
    ec.learn = false;
    ec.epsilon = 0;
    ec.seed = derive_seed(base, "eval-episode");
    ec.spawn_jitter_s = 0;
    ec.collect_series = true;
    res.eval = runner.run(ec, mode_uses_agents(mode) ? agents : nullptr, predictor);
    res.has_eval = true;
  }
  return res;
}

namespace {

std::string training_csv(const ExperimentConfig& cfg,
                         const std::vector<EpisodeResult>& eps) {
  EpsilonSchedule sched{cfg.agent.eps_start, cfg.agent.eps_end,
                        std::max(1, cfg.episodes)};
  std::ostringstream os;
  os << "episode,epsilon,throughput,att_completed_s,td_updates,mean_td_loss\n";
  for (std::size_t e = 0; e < eps.size(); ++e) {
    os << e << "," << csv_num(sched.at(static_cast<int>(e))) << ","
       << eps[e].metrics.throughput << "," << csv_num(eps[e].metrics.att_completed_s)
       << "," << eps[e].td_updates << "," << csv_num(eps[e].mean_td_loss) << "\n";
  }
  return os.str();
}

std::string cumulative_csv(const EpisodeResult& res) {
  std::ostringstream os;
  os << "t,passed\n";
  for (std::size_t t = 0; t < res.metrics.cumulative_passed.size(); ++t)
    os << t << "," << res.metrics.cumulative_passed[t] << "\n";
  return os.str();
}

std::string actions_csv(const EpisodeResult& res) {
  std::ostringstream os;
  os << "step,node,phase,t_req,t_exp,green,warm_up\n";
  for (const ActionRecord& a : res.actions)
    os << a.step << "," << a.node << "," << a.phase << "," << a.t_req << "," << a.t_exp
       << "," << a.green << "," << (a.warm_up ? 1 : 0) << "\n";
  return os.str();
}

std::string phase_green_csv(const EpisodeResult& res, int n_nodes) {
  std::ostringstream os;
  os << "step,node,p0,p1,p2,p3\n";
  for (int node = 0; node < n_nodes; ++node) {
    PhaseGreenSeries s = accumulate_phase_green(res.actions, node);
    for (std::size_t i = 0; i < s.step.size(); ++i) {
      os << s.step[i] << "," << node;
      for (long v : s.cumulative[i]) os << "," << v;
      os << "\n";
    }
  }
  return os.str();
}

std::string volume_csv(const EpisodeResult& res) {
  std::ostringstream os;
  os << "minute,real,predicted\n";
  for (std::size_t m = 0; m < res.real_volume.size(); ++m)
    os << m << "," << csv_num(res.real_volume[m]) << ","
       << csv_num(res.predicted_volume[m]) << "\n";
  return os.str();
}

void write_cell_series(const ExperimentConfig& cfg, Mode mode, std::size_t seed_idx,
                       const EpisodeResult& res) {
  std::string dir = cell_dir(cfg, mode, seed_idx);
  write_text_atomic(dir + "/cumulative.csv", cumulative_csv(res));
  write_text_atomic(dir + "/actions.csv", actions_csv(res));
  write_text_atomic(dir + "/phase_green.csv", phase_green_csv(res, cfg.graph.n()));
  if (mode_uses_predictor(mode))
    write_text_atomic(dir + "/volume.csv", volume_csv(res));
}

Stgcn load_predictor(const ExperimentConfig& cfg) {
  return Stgcn::load(predictor_ckpt_path(cfg), weighted_graph(cfg));
}

}  // namespace

void write_manifest(const ExperimentConfig& cfg) {
  json m;
  m["version"] = "gplight-0.1";
  m["config_hash"] = hex64(cfg.config_hash);
  m["scenario_hash"] = hex64(scenario_identity(cfg));
  m["scenario"] = cfg.scenario.empty() ? std::string("custom") : cfg.scenario;
  m["root_seed"] = cfg.root_seed;
  m["seeds"] = cfg.seeds;
  std::vector<std::string> names;
  for (Mode mode : cfg.modes) names.push_back(mode_name(mode));
  m["modes"] = names;
  m["episodes"] = cfg.episodes;
  m["pretrain_episodes"] = cfg.pretrain_episodes;
  m["episode_s"] = cfg.episode_s;
  m["spawn_jitter_s"] = cfg.spawn_jitter_s;
  m["harvest_episodes"] = cfg.harvest_episodes;
  m["neighbor_obs"] = cfg.neighbor_obs;
  m["predictor"] = {{"history", cfg.predictor.history},
                    {"horizon", cfg.predictor.horizon},
                    {"cheb_order", cfg.predictor.cheb_order},
                    {"kt", cfg.predictor.kt},
                    {"c_hidden", cfg.predictor.c_hidden},
                    {"c_spatial", cfg.predictor.c_spatial},
                    {"feature_scale", cfg.predictor.feature_scale},
                    {"sigma_m", cfg.predictor.sigma_m},
                    {"cutoff_m", cfg.predictor.cutoff_m},
                    {"epochs", cfg.predictor.epochs},
                    {"batch", cfg.predictor.batch},
                    {"lr", cfg.predictor.lr}};
  m["agent"] = {{"gamma", cfg.agent.gamma},
                {"lr", cfg.agent.lr},
                {"eps_start", cfg.agent.eps_start},
                {"eps_end", cfg.agent.eps_end},
                {"obs_scale", cfg.agent.obs_scale},
                {"reward_scale", cfg.agent.reward_scale},
                {"hidden", cfg.agent.hidden},
                {"batch", cfg.agent.batch},
                {"target_sync", cfg.agent.target_sync},
                {"replay", cfg.agent.replay}};
  m["duration"] = {{"headway_s", cfg.rule.discharge_headway_s},
                   {"t_min_s", cfg.rule.t_min_s},
                   {"t_max_s", cfg.rule.t_max_s},
                   {"lanes_discharging", cfg.rule.lanes_discharging},
                   {"fixed_green_s", cfg.rule.fixed_green_s}};
  write_text_atomic(cfg.out_dir + "/manifest.json", m.dump(2) + "\n");
}

void stage_harvest(const ExperimentConfig& cfg) {
  run_stage("harvest", [&]() {
    StgcnDataset ds = harvest_dataset(cfg);
    std::uint64_t hash = make_predictor(cfg).graph_hash();
    finish_rename(dataset_path(cfg),
                  [&](const std::string& tmp) { save_dataset(tmp, ds, hash); });
  });
}

void stage_train_predictor(const ExperimentConfig& cfg) {
  run_stage("train-predictor", [&]() {
    Stgcn model = make_predictor(cfg);
    StgcnDataset ds = load_dataset(dataset_path(cfg), model.graph_hash());
    Stgcn::TrainReport report = train_predictor_model(cfg, model, ds);
    finish_rename(predictor_ckpt_path(cfg),
                  [&](const std::string& tmp) { model.save(tmp); });
    std::ostringstream os;
    os << "epoch,loss\n";
    for (std::size_t e = 0; e < report.epoch_loss.size(); ++e)
      os << e << "," << csv_num(report.epoch_loss[e]) << "\n";
    write_text_atomic(cfg.out_dir + "/predictor_training.csv", os.str());
  });
}

void stage_train_control(const ExperimentConfig& cfg) {
  run_stage("train-control", [&]() {
    std::vector<std::pair<Mode, std::size_t>> cells;
    for (Mode mode : cfg.modes) {
      if (!mode_uses_agents(mode)) continue;
      for (std::size_t i = 0; i < cfg.seeds.size(); ++i) cells.emplace_back(mode, i);
    }
    if (cells.empty()) return;
    std::optional<Stgcn> predictor;
    if (any_mode(cfg, mode_uses_predictor)) predictor = load_predictor(cfg);
    parallel_cells(cfg.workers, static_cast<int>(cells.size()), [&](int i) {
      auto [mode, seed_idx] = cells[i];
      std::vector<DqnAgent> agents = make_cell_agents(cfg, seed_idx);
      CellResult res = run_cell(cfg, mode, seed_idx,
                                mode_uses_predictor(mode) ? &*predictor : nullptr,
                                &agents, true, false);
      for (int k = 0; k < cfg.graph.n(); ++k)
        finish_rename(agent_ckpt_path(cfg, mode, seed_idx, k),
                      [&](const std::string& tmp) {
                        agents[k].save(tmp, cfg.graph.nodes[k].id);
                      });
      write_text_atomic(cell_dir(cfg, mode, seed_idx) + "/training.csv",
                        training_csv(cfg, res.training));
    });
  });
}

void stage_evaluate(const ExperimentConfig& cfg) {
  run_stage("evaluate", [&]() {
    std::vector<std::pair<Mode, std::size_t>> cells;
    for (Mode mode : cfg.modes)
      for (std::size_t i = 0; i < cfg.seeds.size(); ++i) cells.emplace_back(mode, i);
    std::optional<Stgcn> predictor;
    if (any_mode(cfg, mode_uses_predictor)) predictor = load_predictor(cfg);
    std::vector<std::string> rows(cells.size());
    parallel_cells(cfg.workers, static_cast<int>(cells.size()), [&](int i) {
      auto [mode, seed_idx] = cells[i];
      std::vector<DqnAgent> agents;
      if (mode_uses_agents(mode)) {
        for (int k = 0; k < cfg.graph.n(); ++k) {
          DqnAgent::Config ac;
          ac.obs_dim = state_dim(cfg.graph, k, cfg.neighbor_obs);
          ac.actions = kPhases;
          ac.hidden = cfg.agent.hidden;
          ac.obs_scale = cfg.agent.obs_scale;
          ac.gamma = cfg.agent.gamma;
          ac.lr = cfg.agent.lr;
          ac.replay_capacity = cfg.agent.replay;
          ac.batch_size = cfg.agent.batch;
          ac.target_sync = cfg.agent.target_sync;
          ac.exec = Exec::Parallel;
          agents.push_back(DqnAgent::load(agent_ckpt_path(cfg, mode, seed_idx, k),
                                          cfg.graph.nodes[k].id, ac));
        }
      }
      CellResult res = run_cell(cfg, mode, seed_idx,
                                mode_uses_predictor(mode) ? &*predictor : nullptr,
                                mode_uses_agents(mode) ? &agents : nullptr, false,
                                true);
      write_cell_series(cfg, mode, seed_idx, res.eval);
      std::ostringstream os;
      os << (mode_uses_agents(mode) ? cfg.episodes : 0) << "," << mode_name(mode)
         << "," << cfg.seeds[seed_idx] << "," << res.eval.metrics.throughput << ","
         << csv_num(res.eval.metrics.att_completed_s) << ","
         << csv_num(res.eval.metrics.att_inclusive_s) << "\n";
      rows[i] = os.str();
    });
    std::string summary = "episode,mode,seed,throughput,att_completed_s,att_inclusive_s\n";
    for (const std::string& r : rows) summary += r;
    write_text_atomic(cfg.out_dir + "/summary.csv", summary);
  });
}

void run_all(const ExperimentConfig& cfg) {
  run_stage("manifest", [&]() { write_manifest(cfg); });
  if (any_mode(cfg, mode_uses_predictor)) {
    stage_harvest(cfg);
    stage_train_predictor(cfg);
  }
  if (any_mode(cfg, mode_uses_agents)) stage_train_control(cfg);
  stage_evaluate(cfg);
}

namespace {

struct RunInfo {
  json manifest;
  std::string dir;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> modes;
};

RunInfo read_run(const std::string& dir) {
  RunInfo info;
  info.dir = dir;
  std::string path = dir + "/manifest.json";
  if (!fs::exists(path)) throw std::runtime_error("no manifest in run dir: " + dir);
  info.manifest = json::parse(read_text_file(path));
  for (const auto& s : info.manifest.at("seeds")) info.seeds.push_back(s.get<std::uint64_t>());
  for (const auto& m : info.manifest.at("modes")) info.modes.push_back(m.get<std::string>());
  return info;
}

std::vector<long> read_cumulative(const std::string& cell) {
  std::ifstream in(cell + "/cumulative.csv");
  if (!in) throw std::runtime_error("missing series file: " + cell + "/cumulative.csv");
  std::string line;
  std::getline(in, line);  // header
  std::vector<long> out;
  while (std::getline(in, line)) {
    auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    out.push_back(std::stol(line.substr(comma + 1)));
  }
  return out;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void compare_runs(const std::string& dir_a, const std::string& dir_b,
                  const std::string& out_dir) {
  run_stage("compare", [&]() {
    RunInfo a = read_run(dir_a);
    RunInfo b = read_run(dir_b);
    if (a.manifest.at("scenario_hash") != b.manifest.at("scenario_hash"))
      throw std::runtime_error("runs use different scenarios");
    if (a.manifest.at("episode_s") != b.manifest.at("episode_s"))
      throw std::runtime_error("runs use different episode horizons");

    std::vector<std::uint64_t> common;
    for (auto s : a.seeds)
      if (std::find(b.seeds.begin(), b.seeds.end(), s) != b.seeds.end())
        common.push_back(s);
    if (common.empty()) throw std::runtime_error("runs share no seeds");

    const std::string mode_a = a.modes.at(0);
    const std::string mode_b = b.modes.at(0);
    std::vector<std::vector<long>> gaps;
    std::size_t max_len = 0;
    for (auto s : common) {
      std::vector<long> ca =
          read_cumulative(dir_a + "/" + mode_a + "-s" + std::to_string(s));
      std::vector<long> cb =
          read_cumulative(dir_b + "/" + mode_b + "-s" + std::to_string(s));
      std::size_t len = std::max(ca.size(), cb.size());
      std::vector<long> gap(len);
      for (std::size_t t = 0; t < len; ++t) {
        long va = t < ca.size() ? ca[t] : ca.back();
        long vb = t < cb.size() ? cb[t] : cb.back();
        gap[t] = va - vb;
      }
      max_len = std::max(max_len, len);
      gaps.push_back(std::move(gap));
    }

    std::ostringstream os;
    os << "t";
    for (auto s : common) os << ",s" << s;
    os << ",median\n";
    for (std::size_t t = 0; t < max_len; ++t) {
      os << t;
      std::vector<double> at_t;
      for (const auto& gap : gaps) {
        long v = t < gap.size() ? gap[t] : gap.back();
        os << "," << v;
        at_t.push_back(static_cast<double>(v));
      }
      os << "," << csv_num(median_of(at_t)) << "\n";
    }
    write_text_atomic(out_dir + "/gap.csv", os.str());

    // Table layout: one row per run and mode, medians over that run's seeds.
    std::ostringstream table;
    table << "run,mode,att_s,throughput\n";
    for (const RunInfo* run : {&a, &b}) {
      std::ifstream in(run->dir + "/summary.csv");
      if (!in) throw std::runtime_error("missing summary in run dir: " + run->dir);
      std::string line;
      std::getline(in, line);
      std::map<std::string, std::vector<double>> att, thr;
      while (std::getline(in, line)) {
        std::vector<std::string> parts;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) parts.push_back(cell);
        if (parts.size() < 6) continue;
        att[parts[1]].push_back(std::stod(parts[4]));
        thr[parts[1]].push_back(std::stod(parts[3]));
      }
      for (const std::string& mode : run->modes) {
        if (!att.count(mode)) continue;
        table << (run == &a ? "A" : "B") << "," << mode << ","
              << csv_num(median_of(att[mode])) << "," << csv_num(median_of(thr[mode]))
              << "\n";
      }
    }
    write_text_atomic(out_dir + "/table.csv", table.str());
  });
}

}  // namespace gplight
