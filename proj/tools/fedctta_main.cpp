// fedctta: deterministic simulator of federated continual test-time
// adaptation on a synthetic drifting task.
//
// Subcommands:
//   run    single experiment (optionally multi-seed), emits rounds.csv,
//          collab.jsonl, schedule.txt, summary.{json,txt}, manifest.json
//   sweep  paired ablation across one axis (agg_interval, batch_size,
//          metric, tau, sh, th)
//   show   pretty-print a stored summary.json / sweep.json

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedctta/report.hpp"
#include "fedctta/version.hpp"

namespace {

struct FlagBinding {
  std::string key;    // config key the flag maps onto
  std::string value;  // textual value as given
};

void add_config_flags(CLI::App* cmd, std::vector<FlagBinding>& bindings) {
  static const std::vector<std::pair<std::string, std::string>> flags = {
      {"--seed", "seed"},
      {"--method", "method"},
      {"--tta-mode", "tta_mode"},
      {"--clients", "clients"},
      {"--slots", "slots"},
      {"--batch-size", "batch_size"},
      {"--agg-interval", "agg_interval"},
      {"--metric", "metric"},
      {"--tau", "tau"},
      {"--probes", "probes"},
      {"--clusters", "drift.n_clusters"},
      {"--change-period", "drift.change_period"},
      {"--severity", "drift.severity"},
      {"--lr", "lr"},
      {"--workers", "workers"},
  };
  for (const auto& [flag, key] : flags) {
    cmd->add_option_function<std::string>(
        flag, [&bindings, k = key](const std::string& v) { bindings.push_back({k, v}); });
  }
  cmd->add_option_function<std::vector<std::string>>(
      "--set",
      [&bindings](const std::vector<std::string>& kvs) {
        for (const std::string& kv : kvs) {
          auto eq = kv.find('=');
          if (eq == std::string::npos)
            throw CLI::ValidationError("--set expects key=value, got '" + kv + "'");
          bindings.push_back({kv.substr(0, eq), kv.substr(eq + 1)});
        }
      },
      "Set any config key directly (key=value)");
}

fedctta::report::KvPairs to_overrides(const std::vector<FlagBinding>& bindings) {
  fedctta::report::KvPairs out;
  for (const FlagBinding& b : bindings) out.emplace_back(b.key, b.value);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated continual test-time adaptation simulator"};
  app.set_version_flag("--version", std::string(fedctta::kVersion));
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  int num_seeds = 1;
  std::vector<FlagBinding> bindings;

  CLI::App* run = app.add_subcommand("run", "run one experiment");
  run->add_option("--config", config_path, "key=value config file");
  run->add_option("--out-dir", out_dir, "output directory");
  run->add_option("--num-seeds", num_seeds, "consecutive seeds starting at --seed");
  add_config_flags(run, bindings);

  std::string axis;
  std::vector<std::string> values;
  CLI::App* sweep = app.add_subcommand("sweep", "paired ablation sweep over one axis");
  sweep->add_option("--config", config_path, "key=value config file");
  sweep->add_option("--out-dir", out_dir, "output directory");
  sweep->add_option("--num-seeds", num_seeds, "consecutive seeds per value");
  sweep->add_option("--axis", axis, "agg_interval|batch_size|metric|tau|sh|th")->required();
  sweep->add_option("--values", values, "axis values")->required()->delimiter(',');
  add_config_flags(sweep, bindings);

  std::string summary_path;
  CLI::App* show = app.add_subcommand("show", "pretty-print a summary file");
  show->add_option("summary", summary_path, "summary.json / sweep.json path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    using namespace fedctta;
    if (show->parsed()) {
      report::show_summary(summary_path, std::cout);
      return 0;
    }

    std::optional<std::string> cfg_file;
    if (!config_path.empty()) cfg_file = config_path;
    report::KvMap resolved;
    sim::ExperimentConfig cfg = report::parse_config(cfg_file, to_overrides(bindings), &resolved);

    report::SummaryTable table;
    if (run->parsed()) {
      table = report::run_and_emit(cfg, num_seeds, out_dir, resolved);
    } else {
      table = report::sweep_and_emit(report::axis_from_name(axis), values, cfg, num_seeds,
                                     out_dir, resolved);
    }
    report::write_summary_text(table, std::cout);
    std::cout << "artifacts written to " << out_dir << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
