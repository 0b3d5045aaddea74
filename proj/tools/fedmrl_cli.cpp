#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fedmrl/config.hpp"
#include "fedmrl/errors.hpp"
#include "fedmrl/log.hpp"
#include "fedmrl/reporting.hpp"

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kDivergence = 3, kIo = 4 };

fedmrl::ConfigOverrides split_overrides(const std::vector<std::string>& items) {
  fedmrl::ConfigOverrides out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw fedmrl::ConfigError("--set expects key=value, got '" + item + "'");
    out.emplace_back(item.substr(0, eq), item.substr(eq + 1));
  }
  return out;
}

fedmrl::ExperimentConfig load_config(const std::string& path, fedmrl::ConfigOverrides overrides) {
  return path.empty() ? fedmrl::parse_config_text("", overrides) : fedmrl::parse_config_file(path, overrides);
}

void print_result(const fedmrl::ExperimentResult& r, const std::filesystem::path& out) {
  const auto s = fedmrl::summarize(r.final_eval);
  std::printf("rounds %zu  ACC %.4f  Pre %.4f  Recall %.4f  F1 %.4f  loss variance %.3e\n", r.records.size(),
              s.accuracy, s.precision, s.recall, s.f1, r.records.empty() ? 0.0 : r.records.back().loss_variance);
  std::printf("wrote %s\n", out.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning simulator with RL-tuned proximal terms and SOM aggregation"};
  app.set_version_flag("--version", fedmrl::kVersion);
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", algo, resume_path;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;

  auto* run = app.add_subcommand("run", "Run one experiment");
  run->add_option("--config", config_path, "Config file (key = value lines)")->check(CLI::ExistingFile);
  run->add_option("--algo", algo, "fedmrl, fedavg, fedprox or fednova");
  auto* seed_opt = run->add_option("--seed", seed, "Master seed");
  run->add_option("--out", out_dir, "Output directory")->capture_default_str();
  run->add_option("--set", sets, "Override a config key, e.g. --set train.lr=0.01");
  run->add_option("--resume", resume_path, "Continue from a checkpoint.json")->check(CLI::ExistingFile);

  double total = 1.0;
  std::size_t grid_n = 101;
  std::string landscape_out = "landscape.csv";
  auto* landscape = app.add_subcommand("landscape", "Two-client fairness landscape as CSV");
  landscape->add_option("--total", total, "Sum of the two client losses")->capture_default_str();
  landscape->add_option("--n", grid_n, "Grid points")->capture_default_str();
  landscape->add_option("--out", landscape_out, "Output CSV")->capture_default_str();

  std::string algos_arg = "fedavg,fedprox,fednova,fedmrl";
  std::size_t seeds = 5;
  std::string sweep_config, sweep_out = "sweep";
  std::vector<std::string> sweep_sets;
  auto* sweep = app.add_subcommand("sweep", "Run several algorithms over consecutive seeds");
  sweep->add_option("--algos", algos_arg, "Comma-separated algorithms")->capture_default_str();
  sweep->add_option("--seeds", seeds, "Seeds per algorithm, starting at the config seed")->capture_default_str();
  sweep->add_option("--config", sweep_config, "Base config file")->check(CLI::ExistingFile);
  sweep->add_option("--set", sweep_sets, "Override a config key");
  sweep->add_option("--out", sweep_out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*run) {
      if (!resume_path.empty()) {
        if (!config_path.empty() || !algo.empty() || *seed_opt || !sets.empty()) {
          fedmrl::warn("--resume uses the checkpoint's config; other run options are ignored");
        }
        fedmrl::Experiment e = fedmrl::Experiment::resume(fedmrl::read_json(resume_path));
        print_result(fedmrl::run_to_directory(e, out_dir), out_dir);
        return kOk;
      }
      auto overrides = split_overrides(sets);
      if (!algo.empty()) overrides.emplace_back("algo", algo);
      if (*seed_opt) overrides.emplace_back("seed", std::to_string(seed));
      fedmrl::Experiment e(load_config(config_path, overrides));
      print_result(fedmrl::run_to_directory(e, out_dir), out_dir);
    } else if (*landscape) {
      fedmrl::emit_landscape(total, grid_n, landscape_out);
      std::printf("wrote %s\n", landscape_out.c_str());
    } else if (*sweep) {
      std::vector<fedmrl::Algorithm> algos;
      std::string name;
      for (std::size_t i = 0; i <= algos_arg.size(); ++i) {
        if (i == algos_arg.size() || algos_arg[i] == ',') {
          if (!name.empty()) algos.push_back(fedmrl::parse_algorithm(name));
          name.clear();
        } else if (algos_arg[i] != ' ') {
          name += algos_arg[i];
        }
      }
      const auto base = load_config(sweep_config, split_overrides(sweep_sets));
      const auto rows = fedmrl::run_sweep(base, algos, seeds, sweep_out);
      std::printf("%-8s %6s %8s %8s %8s %8s %8s %12s\n", "algo", "seeds", "ACC", "ACC_std", "Pre", "Recall", "F1",
                  "loss_var");
      for (const auto& r : rows) {
        std::printf("%-8s %6zu %8.4f %8.4f %8.4f %8.4f %8.4f %12.3e\n", r.algo.c_str(), r.seeds, r.mean_acc, r.std_acc,
                    r.mean_precision, r.mean_recall, r.mean_f1, r.mean_loss_variance);
      }
      std::printf("wrote %s\n", (std::filesystem::path(sweep_out) / "comparison.csv").string().c_str());
    }
  } catch (const fedmrl::DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDivergence;
  } catch (const fedmrl::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const fedmrl::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  }
  return kOk;
}
