// Command line front end for the benchmark pipeline.
//
//   gplight generate <scenario> --out DIR [--seed N] [--surge]
//   gplight train-predictor --config FILE [--seed N] [--out DIR]
//   gplight train-control   --config FILE [--seed N] [--out DIR]
//   gplight evaluate        --config FILE [--seed N] [--out DIR]
//   gplight compare <runA> <runB> --out DIR
//
// evaluate runs any prerequisite stage whose artifacts are missing, so a
// fresh config goes dataset -> predictor -> agents -> summary in one call.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "gplight/experiment.hpp"
#include "gplight/microsim.hpp"
#include "gplight/scenario.hpp"

namespace fs = std::filesystem;
using namespace gplight;

namespace {

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for read: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

ExperimentConfig load_with_overrides(const CommonFlags& flags) {
  ExperimentConfig cfg;
  try {
    cfg = parse_experiment_config(read_text_file(flags.config_path));
    if (flags.seed_set) cfg.root_seed = flags.seed;
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    resolve_experiment_config(cfg);
  } catch (const std::exception& e) {
    throw StageError("config", e.what());
  }
  return cfg;
}

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "experiment config (JSON)")
      ->required();
  cmd->add_option("--seed", flags.seed, "override the config root_seed")
      ->each([&flags](const std::string&) { flags.seed_set = true; });
  cmd->add_option("--out", flags.out_dir, "override the config out_dir");
}

bool agent_ckpts_present(const ExperimentConfig& cfg) {
  for (Mode mode : cfg.modes) {
    if (!mode_uses_agents(mode)) continue;
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
      for (int k = 0; k < cfg.graph.n(); ++k)
        if (!fs::exists(agent_ckpt_path(cfg, mode, i, k))) return false;
  }
  return true;
}

bool any_mode_of(const ExperimentConfig& cfg, bool (*pred)(Mode)) {
  for (Mode m : cfg.modes)
    if (pred(m)) return true;
  return false;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"queue-based traffic signal control benchmark"};
  app.require_subcommand(1);

  // generate
  std::string gen_name, gen_out;
  std::uint64_t gen_seed = 0;
  bool gen_surge = false;
  CLI::App* gen = app.add_subcommand("generate", "write roadnet and flow files");
  gen->add_option("scenario", gen_name, "single, grid16 or grid48")->required();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "cadence seed for grid scenarios");
  gen->add_flag("--surge", gen_surge, "add the east-west surge to grid corridors");
  gen->callback([&]() {
    Scenario sc = make_scenario(gen_name, gen_seed, gen_surge);
    write_text_file(gen_out + "/roadnet.json", sc.roadnet_json);
    write_text_file(gen_out + "/flows.json", flows_to_json(sc.flows));
    std::cout << "wrote " << gen_out << "/roadnet.json and " << gen_out
              << "/flows.json\n";
  });

  // train-predictor
  CommonFlags tp;
  CLI::App* tpc = app.add_subcommand("train-predictor",
                                     "harvest forecaster data and train it");
  add_common(tpc, tp);
  tpc->callback([&]() {
    ExperimentConfig cfg = load_with_overrides(tp);
    write_manifest(cfg);
    stage_harvest(cfg);
    stage_train_predictor(cfg);
    std::cout << "wrote " << predictor_ckpt_path(cfg) << "\n";
  });

  // train-control
  CommonFlags tc;
  CLI::App* tcc = app.add_subcommand("train-control", "train the signal agents");
  add_common(tcc, tc);
  tcc->callback([&]() {
    ExperimentConfig cfg = load_with_overrides(tc);
    write_manifest(cfg);
    stage_train_control(cfg);
    std::cout << "agent checkpoints under " << cfg.out_dir << "\n";
  });

  // evaluate
  CommonFlags ev;
  CLI::App* evc = app.add_subcommand(
      "evaluate", "evaluate every mode/seed cell (training first if needed)");
  add_common(evc, ev);
  evc->callback([&]() {
    ExperimentConfig cfg = load_with_overrides(ev);
    write_manifest(cfg);
    if (any_mode_of(cfg, mode_uses_predictor) &&
        !fs::exists(predictor_ckpt_path(cfg))) {
      if (!fs::exists(dataset_path(cfg))) stage_harvest(cfg);
      stage_train_predictor(cfg);
    }
    if (any_mode_of(cfg, mode_uses_agents) && !agent_ckpts_present(cfg))
      stage_train_control(cfg);
    stage_evaluate(cfg);
    std::cout << "wrote " << cfg.out_dir << "/summary.csv\n";
  });

  // compare
  std::string cmp_a, cmp_b, cmp_out;
  CLI::App* cmp = app.add_subcommand("compare", "gap series and table for two runs");
  cmp->add_option("run_a", cmp_a, "first run directory")->required();
  cmp->add_option("run_b", cmp_b, "second run directory")->required();
  cmp->add_option("--out", cmp_out, "output directory")->required();
  cmp->callback([&]() {
    compare_runs(cmp_a, cmp_b, cmp_out);
    std::cout << "wrote " << cmp_out << "/gap.csv and " << cmp_out << "/table.csv\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const StageError& e) {
    std::cerr << "error " << e.what() << "\n";
    return e.stage_name == "config" ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "error [stage:cli] " << e.what() << "\n";
    return 4;
  }
  return 0;
}
