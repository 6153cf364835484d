#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedctta/orchestrator.hpp"

namespace fedctta::report {

using KvPairs = std::vector<std::pair<std::string, std::string>>;
using KvMap = std::map<std::string, std::string>;

// The fully-resolved config as canonical dotted key=value pairs; what the
// manifest echoes and what round-trips through parse.
KvMap config_to_kv(const sim::ExperimentConfig& config);

// key=value lines, '#' comments, blank lines ignored.
KvMap parse_kv_file(const std::string& path);

// Defaults, overlaid by the optional file, overlaid by explicit overrides
// (command-line flags). Unknown keys and malformed values raise ConfigError
// naming the key.
sim::ExperimentConfig parse_config(const std::optional<std::string>& path,
                                   const KvPairs& overrides, KvMap* resolved_out = nullptr);

// One row per (slot, client), sorted, fixed 6-decimal values:
// slot,client,domain,method,accuracy,entropy_before,entropy_after
void emit_round_csv(const sim::ExperimentResult& result, const std::string& method_label,
                    const std::string& path);

// One JSON record per aggregation event: round, metric, tau, N rows of N
// weights.
void emit_collab_jsonl(const sim::ExperimentResult& result, const sim::ExperimentConfig& config,
                       const std::string& path);

struct SummaryRow {
  std::string method;
  std::string tta_mode;
  std::string setting;
  int num_seeds = 0;
  std::vector<double> per_domain;  // aligned to SummaryTable::domains, NaN = unseen
  double overall_mean = 0.0;
  double overall_std = 0.0;
};

struct SummaryTable {
  std::vector<std::string> domains;
  std::vector<SummaryRow> rows;
};

// Collapse per-seed results for one config into one row. Configs must be
// identical up to the master seed (UsageError otherwise).
SummaryRow summarize_runs(const std::vector<sim::ExperimentConfig>& configs,
                          const std::vector<sim::ExperimentResult>& results,
                          const std::string& setting);

void write_summary_json(const SummaryTable& table, const std::string& path);
SummaryTable read_summary_json(const std::string& path);
void write_summary_text(const SummaryTable& table, std::ostream& out);

enum class AblationAxis { agg_interval, batch_size, metric, tau, sh, th };
AblationAxis axis_from_name(std::string_view name);
const char* axis_name(AblationAxis axis);

// Paired sweep: the same seed block runs for every value; only the axis value
// differs. One summary row per value.
SummaryTable run_ablation(AblationAxis axis, const std::vector<std::string>& values,
                          const sim::ExperimentConfig& base, int num_seeds);

// FNV-1a 64 content digest as fixed-width hex.
std::string file_digest_hex(const std::string& path);

// Drivers behind the CLI subcommands. Both return the emitted summary table
// and write a manifest listing every artifact with its digest.
SummaryTable run_and_emit(const sim::ExperimentConfig& base, int num_seeds,
                          const std::string& out_dir, const KvMap& resolved_config);
SummaryTable sweep_and_emit(AblationAxis axis, const std::vector<std::string>& values,
                            const sim::ExperimentConfig& base, int num_seeds,
                            const std::string& out_dir, const KvMap& resolved_config);

// Pretty-print a stored summary file.
void show_summary(const std::string& summary_json_path, std::ostream& out);

}  // namespace fedctta::report
