#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "bcrl/features.hpp"
#include "bcrl/harness.hpp"
#include "bcrl/lspe.hpp"
#include "bcrl/oracles.hpp"
#include "bcrl/rng.hpp"

namespace {

using namespace bcrl;

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitValidation;
  } catch (const TrainAbortError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::string token;
  for (char c : text + ",") {
    if (c == ',') {
      if (!token.empty()) {
        seeds.push_back(std::stoull(token));
        token.clear();
      }
    } else {
      token.push_back(c);
    }
  }
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bellman-complete representation learning for offline policy "
               "evaluation on finite MDPs"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::string seed_list;
  std::string axis;
  std::vector<double> values;
  int jobs = 1;
  std::string checkpoint_path;
  std::string results_dir;

  auto add_common = [&](CLI::App* cmd, bool needs_config = true) {
    if (needs_config) {
      cmd->add_option("--config", config_path, "experiment config (JSON)")
          ->required();
    }
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed-list", seed_list,
                    "comma-separated run seeds overriding the config");
  };

  CLI::App* gen = app.add_subcommand(
      "gen", "build the MDP and offline datasets, then persist them");
  add_common(gen);

  CLI::App* train_cmd = app.add_subcommand(
      "train", "train the representation on the first dataset split");
  add_common(train_cmd);

  CLI::App* eval_cmd = app.add_subcommand(
      "eval", "full pipeline: dataset, training, LSPE, oracle scoring");
  add_common(eval_cmd);

  CLI::App* sweep = app.add_subcommand("sweep", "run a one-axis config sweep");
  add_common(sweep);
  sweep->add_option("--axis", axis, "sweep axis: N | K | lambda | seed")
      ->required();
  sweep->add_option("--values", values, "axis values")->required();
  sweep->add_option("--jobs", jobs, "parallel experiments");

  CLI::App* plotdata = app.add_subcommand(
      "plotdata", "rewrite run artifacts into plot-ready tables");
  plotdata->add_option("--results", results_dir, "directory of run outputs")
      ->required();
  plotdata->add_option("--out", out_dir, "output directory");

  CLI::App* certify = app.add_subcommand(
      "certify", "witness + completeness check of a feature checkpoint");
  add_common(certify);
  certify->add_option("--checkpoint", checkpoint_path, "feature checkpoint")
      ->required();

  CLI11_PARSE(app, argc, argv);

  auto load = [&]() {
    ExperimentConfig cfg = load_config(config_path);
    if (!seed_list.empty()) {
      cfg.seeds = parse_seed_list(seed_list);
      if (cfg.seeds.empty()) {
        throw ConfigError({"--seed-list: no seeds parsed"});
      }
    }
    return cfg;
  };

  if (gen->parsed()) {
    return guarded([&] {
      const ExperimentConfig cfg = load();
      const ProblemInstance problem = build_problem(cfg);
      const std::filesystem::path dir =
          std::filesystem::path(out_dir) / cfg.hash();
      std::filesystem::create_directories(dir);
      save_mdp(problem.mdp, dir / "mdp.txt");
      for (std::uint64_t seed : cfg.seeds) {
        const std::uint64_t data_seed = SplitMix64(seed).split(1).next_u64();
        const OfflineDataset data = sample_offline_dataset(
            problem.mdp, problem.nu, 2 * cfg.dataset_n, data_seed);
        save_dataset(data,
                     dir / ("dataset_seed" + std::to_string(seed) + ".bin"));
      }
      std::cout << "wrote " << dir.string() << "\n";
      return kExitOk;
    });
  }

  if (train_cmd->parsed() || eval_cmd->parsed()) {
    return guarded([&] {
      const ExperimentConfig cfg = load();
      const RunOutcome outcome = run_experiment(cfg, out_dir);
      for (const SummaryRow& row : outcome.summary) {
        std::printf("%-22s rmse=%-12.6g median=%-12.6g n=%d\n",
                    row.method.c_str(), row.rmse, row.median_abs_error,
                    row.count);
      }
      std::cout << "artifacts: " << outcome.run_dir.string() << "\n";
      return kExitOk;
    });
  }

  if (sweep->parsed()) {
    return guarded([&] {
      const ExperimentConfig cfg = load();
      const std::vector<SweepRow> rows =
          run_sweep(cfg, axis, values, out_dir, jobs);
      for (const SweepRow& row : rows) {
        std::printf("%s=%-10g %-22s median=%-12.6g\n", row.axis.c_str(),
                    row.value, row.method.c_str(), row.median_abs_error);
      }
      return kExitOk;
    });
  }

  if (plotdata->parsed()) {
    return guarded([&] {
      emit_plotdata(results_dir, out_dir);
      std::cout << "wrote plot tables to " << out_dir << "\n";
      return kExitOk;
    });
  }

  if (certify->parsed()) {
    return guarded([&] {
      const ExperimentConfig cfg = load();
      std::filesystem::create_directories(out_dir);
      const std::filesystem::path report =
          std::filesystem::path(out_dir) / "certify.json";
      const CertifyOutcome outcome =
          certify_checkpoint(cfg, checkpoint_path, report);
      std::printf("bc_loss        %.6g\n", outcome.bc_loss);
      std::printf("rho_norm       %.6g\n", outcome.rho_norm);
      std::printf("m_norm         %.6g (%s)\n", outcome.m_norm,
                  outcome.witness_admissible ? "admissible" : "inadmissible");
      std::printf("implied_w      %.6g\n", outcome.implied_w);
      std::printf("lbc_error      %.6g\n", outcome.lbc_error);
      std::printf("lambda_min     %.6g\n", outcome.lambda_min);
      std::cout << "report: " << report.string() << "\n";
      return kExitOk;
    });
  }

  return kExitOk;
}
