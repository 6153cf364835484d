#include "fedctta/report.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "fedctta/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace fedctta::report {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, end);
}

std::string fmt_fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected integer, got '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    unsigned long long out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected unsigned integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key " + key + ": expected boolean, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(key, item));
  if (out.empty()) throw ConfigError("config key " + key + ": expected a comma list");
  return out;
}

struct KeyDef {
  const char* name;
  std::function<void(sim::ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const sim::ExperimentConfig&)> get;
};

const std::vector<KeyDef>& key_registry() {
  using C = sim::ExperimentConfig;
  static const std::vector<KeyDef> keys = {
      {"clients", [](C& c, const std::string& v) { c.num_clients = parse_int("clients", v); },
       [](const C& c) { return std::to_string(c.num_clients); }},
      {"slots", [](C& c, const std::string& v) { c.num_slots = parse_int("slots", v); },
       [](const C& c) { return std::to_string(c.num_slots); }},
      {"batch_size", [](C& c, const std::string& v) { c.batch_size = parse_int("batch_size", v); },
       [](const C& c) { return std::to_string(c.batch_size); }},
      {"seed", [](C& c, const std::string& v) { c.master_seed = parse_u64("seed", v); },
       [](const C& c) { return std::to_string(c.master_seed); }},
      {"method", [](C& c, const std::string& v) { c.method = sim::method_from_name(v); },
       [](const C& c) { return sim::method_name(c.method); }},
      {"tta_mode", [](C& c, const std::string& v) { c.tta_mode = tta::tta_mode_from_name(v); },
       [](const C& c) { return tta::tta_mode_name(c.tta_mode); }},
      {"agg_interval",
       [](C& c, const std::string& v) { c.agg_interval = parse_int("agg_interval", v); },
       [](const C& c) { return std::to_string(c.agg_interval); }},
      {"metric", [](C& c, const std::string& v) { c.metric = agg::metric_from_name(v); },
       [](const C& c) { return agg::metric_name(c.metric); }},
      {"tau", [](C& c, const std::string& v) { c.tau = parse_double("tau", v); },
       [](const C& c) { return fmt_double(c.tau); }},
      {"probes", [](C& c, const std::string& v) { c.num_probes = parse_int("probes", v); },
       [](const C& c) { return std::to_string(c.num_probes); }},
      {"probe_source",
       [](C& c, const std::string& v) { c.probe_source = sim::probe_source_from_name(v); },
       [](const C& c) { return sim::probe_source_name(c.probe_source); }},
      {"probe_regen",
       [](C& c, const std::string& v) { c.probe_regen_per_round = parse_bool("probe_regen", v); },
       [](const C& c) { return c.probe_regen_per_round ? "true" : "false"; }},
      {"agg_running_stats",
       [](C& c, const std::string& v) {
         c.aggregate_running_stats = parse_bool("agg_running_stats", v);
       },
       [](const C& c) { return c.aggregate_running_stats ? "true" : "false"; }},
      {"force_uniform",
       [](C& c, const std::string& v) { c.force_uniform_collab = parse_bool("force_uniform", v); },
       [](const C& c) { return c.force_uniform_collab ? "true" : "false"; }},
      {"lr", [](C& c, const std::string& v) { c.lr = parse_double("lr", v); },
       [](const C& c) { return fmt_double(c.lr); }},
      {"steps_per_batch",
       [](C& c, const std::string& v) { c.steps_per_batch = parse_int("steps_per_batch", v); },
       [](const C& c) { return std::to_string(c.steps_per_batch); }},
      {"bn_affine_only",
       [](C& c, const std::string& v) { c.bn_affine_only = parse_bool("bn_affine_only", v); },
       [](const C& c) { return c.bn_affine_only ? "true" : "false"; }},
      {"workers", [](C& c, const std::string& v) { c.workers = parse_int("workers", v); },
       [](const C& c) { return std::to_string(c.workers); }},
      {"slot_length",
       [](C& c, const std::string& v) { c.slot_length = parse_int("slot_length", v); },
       [](const C& c) { return std::to_string(c.slot_length); }},
      {"model.input_dim",
       [](C& c, const std::string& v) { c.model.input_dim = parse_int("model.input_dim", v); },
       [](const C& c) { return std::to_string(c.model.input_dim); }},
      {"model.hidden_dims",
       [](C& c, const std::string& v) {
         c.model.hidden_dims = parse_int_list("model.hidden_dims", v);
       },
       [](const C& c) {
         std::string out;
         for (std::size_t i = 0; i < c.model.hidden_dims.size(); ++i) {
           if (i) out += ',';
           out += std::to_string(c.model.hidden_dims[i]);
         }
         return out;
       }},
      {"model.num_classes",
       [](C& c, const std::string& v) { c.model.num_classes = parse_int("model.num_classes", v); },
       [](const C& c) { return std::to_string(c.model.num_classes); }},
      {"model.bn_momentum",
       [](C& c, const std::string& v) {
         c.model.bn_momentum = parse_double("model.bn_momentum", v);
       },
       [](const C& c) { return fmt_double(c.model.bn_momentum); }},
      {"model.bn_epsilon",
       [](C& c, const std::string& v) { c.model.bn_epsilon = parse_double("model.bn_epsilon", v); },
       [](const C& c) { return fmt_double(c.model.bn_epsilon); }},
      {"drift.n_clusters",
       [](C& c, const std::string& v) { c.n_clusters = parse_int("drift.n_clusters", v); },
       [](const C& c) { return std::to_string(c.n_clusters); }},
      {"drift.change_period",
       [](C& c, const std::string& v) { c.change_period = parse_int("drift.change_period", v); },
       [](const C& c) { return std::to_string(c.change_period); }},
      {"drift.severity",
       [](C& c, const std::string& v) { c.severity = parse_int("drift.severity", v); },
       [](const C& c) { return std::to_string(c.severity); }},
      {"drift.cov_scale",
       [](C& c, const std::string& v) { c.cov_scale = parse_double("drift.cov_scale", v); },
       [](const C& c) { return fmt_double(c.cov_scale); }},
      {"task.pretrain_size",
       [](C& c, const std::string& v) { c.pretrain_size = parse_int("task.pretrain_size", v); },
       [](const C& c) { return std::to_string(c.pretrain_size); }},
      {"task.heldout_size",
       [](C& c, const std::string& v) { c.heldout_size = parse_int("task.heldout_size", v); },
       [](const C& c) { return std::to_string(c.heldout_size); }},
      {"task.pretrain_epochs",
       [](C& c, const std::string& v) { c.pretrain_epochs = parse_int("task.pretrain_epochs", v); },
       [](const C& c) { return std::to_string(c.pretrain_epochs); }},
      {"task.pretrain_lr",
       [](C& c, const std::string& v) { c.pretrain_lr = parse_double("task.pretrain_lr", v); },
       [](const C& c) { return fmt_double(c.pretrain_lr); }},
      {"task.pretrain_batch",
       [](C& c, const std::string& v) { c.pretrain_batch = parse_int("task.pretrain_batch", v); },
       [](const C& c) { return std::to_string(c.pretrain_batch); }},
  };
  return keys;
}

void apply_key(sim::ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const KeyDef& def : key_registry()) {
    if (key == def.name) {
      def.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key: " + key);
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string iso_now() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string setting_label(const sim::ExperimentConfig& cfg, const drift::DriftSchedule& sched) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "clusters=%d,period=%d,sh=%.3f,th=%.3f", cfg.n_clusters,
                cfg.change_period, drift::compute_sh(sched, 0), drift::compute_th(sched, 0));
  return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  out << content;
  if (!out) throw ConfigError("write failed for " + path);
}

json manifest_files_entry(const std::string& out_dir, const std::vector<std::string>& files) {
  json arr = json::array();
  for (const std::string& rel : files) {
    const std::string full = out_dir + "/" + rel;
    json f;
    f["path"] = rel;
    f["bytes"] = static_cast<std::uint64_t>(fs::file_size(full));
    f["fnv1a64"] = file_digest_hex(full);
    arr.push_back(std::move(f));
  }
  return arr;
}

void write_manifest(const std::string& out_dir, const KvMap& resolved_config,
                    std::uint64_t master_seed, int num_seeds, const std::string& started_at,
                    const std::vector<std::string>& files) {
  json m;
  m["version"] = kVersion;
  m["master_seed"] = master_seed;
  m["num_seeds"] = num_seeds;
  m["config"] = resolved_config;
  m["started_at"] = started_at;
  m["finished_at"] = iso_now();
  m["files"] = manifest_files_entry(out_dir, files);
  write_text_file(out_dir + "/manifest.json", m.dump(2) + "\n");
}

// Emits one seed's artifacts into dir; returns the file names written.
std::vector<std::string> emit_run_artifacts(const sim::ExperimentConfig& cfg,
                                            const sim::ExperimentResult& result,
                                            const std::string& dir) {
  fs::create_directories(dir);
  std::vector<std::string> names;
  emit_round_csv(result, sim::method_name(cfg.method), dir + "/rounds.csv");
  names.push_back("rounds.csv");
  if (cfg.method == sim::Method::fedctta) {
    emit_collab_jsonl(result, cfg, dir + "/collab.jsonl");
    names.push_back("collab.jsonl");
  }
  std::ostringstream sched;
  drift::export_schedule(result.schedule, sched);
  write_text_file(dir + "/schedule.txt", sched.str());
  names.push_back("schedule.txt");
  return names;
}

}  // namespace

KvMap config_to_kv(const sim::ExperimentConfig& config) {
  KvMap out;
  for (const KeyDef& def : key_registry()) out[def.name] = def.get(config);
  return out;
}

KvMap parse_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  KvMap out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    out[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return out;
}

sim::ExperimentConfig parse_config(const std::optional<std::string>& path,
                                   const KvPairs& overrides, KvMap* resolved_out) {
  sim::ExperimentConfig cfg;
  if (path) {
    for (const auto& [k, v] : parse_kv_file(*path)) apply_key(cfg, k, v);
  }
  for (const auto& [k, v] : overrides) apply_key(cfg, k, v);
  cfg.validate();
  if (resolved_out) *resolved_out = config_to_kv(cfg);
  return cfg;
}

void emit_round_csv(const sim::ExperimentResult& result, const std::string& method_label,
                    const std::string& path) {
  std::ostringstream out;
  out << "slot,client,domain,method,accuracy,entropy_before,entropy_after\n";
  for (const sim::RoundResult& rr : result.rounds) {
    for (std::size_t i = 0; i < rr.accuracy.size(); ++i) {
      const std::string& dom =
          result.schedule.catalog[static_cast<std::size_t>(rr.domain[i])].name;
      out << rr.slot << ',' << i << ',' << dom << ',' << method_label << ','
          << fmt_fixed6(rr.accuracy[i]) << ',' << fmt_fixed6(rr.entropy_before[i]) << ','
          << fmt_fixed6(rr.entropy_after[i]) << '\n';
    }
  }
  write_text_file(path, out.str());
}

void emit_collab_jsonl(const sim::ExperimentResult& result, const sim::ExperimentConfig& config,
                       const std::string& path) {
  std::ostringstream out;
  for (const sim::RoundResult& rr : result.rounds) {
    if (!rr.collab) continue;
    const agg::CollaborationMatrix& c = *rr.collab;
    json rec;
    rec["round"] = c.round;
    rec["metric"] = agg::metric_name(config.metric);
    rec["tau"] = config.tau;
    json rows = json::array();
    for (int i = 0; i < c.n; ++i) {
      json row = json::array();
      for (int j = 0; j < c.n; ++j) row.push_back(c.at(i, j));
      rows.push_back(std::move(row));
    }
    rec["rows"] = std::move(rows);
    out << rec.dump() << '\n';
  }
  write_text_file(path, out.str());
}

SummaryRow summarize_runs(const std::vector<sim::ExperimentConfig>& configs,
                          const std::vector<sim::ExperimentResult>& results,
                          const std::string& setting) {
  if (configs.empty() || configs.size() != results.size())
    throw UsageError("summarize_runs: need one config per result");
  for (const sim::ExperimentConfig& c : configs) {
    sim::ExperimentConfig a = c, b = configs[0];
    a.master_seed = 0;
    b.master_seed = 0;
    if (!(a == b)) throw UsageError("summarize_runs: inconsistent configs across seeds");
  }

  const std::vector<drift::DomainSpec>& catalog = results[0].schedule.catalog;
  const std::size_t nd = catalog.size();
  std::vector<double> domain_sum(nd, 0.0);
  std::vector<int> domain_seen(nd, 0);
  std::vector<double> overall_per_seed;
  overall_per_seed.reserve(results.size());

  for (const sim::ExperimentResult& res : results) {
    std::vector<double> acc(nd, 0.0);
    std::vector<long> cnt(nd, 0);
    for (const sim::RoundResult& rr : res.rounds) {
      for (std::size_t i = 0; i < rr.accuracy.size(); ++i) {
        acc[static_cast<std::size_t>(rr.domain[i])] += rr.accuracy[i];
        cnt[static_cast<std::size_t>(rr.domain[i])] += 1;
      }
    }
    double overall = 0.0;
    int seen = 0;
    for (std::size_t d = 0; d < nd; ++d) {
      if (cnt[d] == 0) continue;
      const double mean = acc[d] / cnt[d];
      domain_sum[d] += mean;
      domain_seen[d] += 1;
      overall += mean;
      ++seen;
    }
    overall_per_seed.push_back(seen > 0 ? overall / seen : 0.0);
  }

  SummaryRow row;
  row.method = sim::method_name(configs[0].method);
  row.tta_mode = tta::tta_mode_name(configs[0].method == sim::Method::no_adapt
                                        ? tta::TtaMode::none
                                        : configs[0].tta_mode);
  row.setting = setting;
  row.num_seeds = static_cast<int>(results.size());
  row.per_domain.resize(nd);
  for (std::size_t d = 0; d < nd; ++d)
    row.per_domain[d] =
        domain_seen[d] > 0 ? domain_sum[d] / domain_seen[d] : std::nan("");
  double mean = 0.0;
  for (double v : overall_per_seed) mean += v;
  mean /= static_cast<double>(overall_per_seed.size());
  row.overall_mean = mean;
  if (overall_per_seed.size() > 1) {
    double ss = 0.0;
    for (double v : overall_per_seed) ss += (v - mean) * (v - mean);
    row.overall_std = std::sqrt(ss / static_cast<double>(overall_per_seed.size() - 1));
  }
  return row;
}

void write_summary_json(const SummaryTable& table, const std::string& path) {
  json j;
  j["domains"] = table.domains;
  json rows = json::array();
  for (const SummaryRow& r : table.rows) {
    json row;
    row["method"] = r.method;
    row["tta_mode"] = r.tta_mode;
    row["setting"] = r.setting;
    row["num_seeds"] = r.num_seeds;
    json pd = json::array();
    for (double v : r.per_domain) {
      if (std::isnan(v))
        pd.push_back(nullptr);
      else
        pd.push_back(v);
    }
    row["per_domain"] = std::move(pd);
    row["overall_mean"] = r.overall_mean;
    row["overall_std"] = r.overall_std;
    rows.push_back(std::move(row));
  }
  j["rows"] = std::move(rows);
  write_text_file(path, j.dump(2) + "\n");
}

SummaryTable read_summary_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open summary file: " + path);
  json j = json::parse(in);
  SummaryTable table;
  table.domains = j.at("domains").get<std::vector<std::string>>();
  for (const json& row : j.at("rows")) {
    SummaryRow r;
    r.method = row.at("method").get<std::string>();
    r.tta_mode = row.at("tta_mode").get<std::string>();
    r.setting = row.at("setting").get<std::string>();
    r.num_seeds = row.at("num_seeds").get<int>();
    for (const json& v : row.at("per_domain"))
      r.per_domain.push_back(v.is_null() ? std::nan("") : v.get<double>());
    r.overall_mean = row.at("overall_mean").get<double>();
    r.overall_std = row.at("overall_std").get<double>();
    table.rows.push_back(std::move(r));
  }
  return table;
}

void write_summary_text(const SummaryTable& table, std::ostream& out) {
  // Accuracy as percentages with two decimals; '-' marks unseen domains.
  std::vector<std::string> headers = {"method", "tta", "setting", "seeds"};
  for (const std::string& d : table.domains) headers.push_back(d);
  headers.push_back("mean");

  std::vector<std::vector<std::string>> cells;
  for (const SummaryRow& r : table.rows) {
    std::vector<std::string> row = {r.method, r.tta_mode, r.setting, std::to_string(r.num_seeds)};
    for (double v : r.per_domain) {
      if (std::isnan(v)) {
        row.push_back("-");
      } else {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
        row.push_back(buf);
      }
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f+-%.2f", 100.0 * r.overall_mean,
                  100.0 * r.overall_std);
    row.push_back(buf);
    cells.push_back(std::move(row));
  }

  std::vector<std::size_t> width(headers.size());
  for (std::size_t c = 0; c < headers.size(); ++c) {
    width[c] = headers[c].size();
    for (const auto& row : cells) width[c] = std::max(width[c], row[c].size());
  }
  auto print_row = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      out << row[c];
      if (c + 1 < row.size()) out << std::string(width[c] - row[c].size() + 2, ' ');
    }
    out << '\n';
  };
  print_row(headers);
  for (const auto& row : cells) print_row(row);
}

AblationAxis axis_from_name(std::string_view name) {
  if (name == "agg_interval") return AblationAxis::agg_interval;
  if (name == "batch_size") return AblationAxis::batch_size;
  if (name == "metric") return AblationAxis::metric;
  if (name == "tau") return AblationAxis::tau;
  if (name == "sh") return AblationAxis::sh;
  if (name == "th") return AblationAxis::th;
  throw ConfigError("unknown ablation axis: " + std::string(name));
}

const char* axis_name(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::agg_interval: return "agg_interval";
    case AblationAxis::batch_size: return "batch_size";
    case AblationAxis::metric: return "metric";
    case AblationAxis::tau: return "tau";
    case AblationAxis::sh: return "sh";
    case AblationAxis::th: return "th";
  }
  return "?";
}

namespace {

sim::ExperimentConfig apply_axis(const sim::ExperimentConfig& base, AblationAxis axis,
                                 const std::string& value) {
  sim::ExperimentConfig cfg = base;
  switch (axis) {
    case AblationAxis::agg_interval: cfg.agg_interval = parse_int("agg_interval", value); break;
    case AblationAxis::batch_size: cfg.batch_size = parse_int("batch_size", value); break;
    case AblationAxis::metric: cfg.metric = agg::metric_from_name(value); break;
    case AblationAxis::tau: cfg.tau = parse_double("tau", value); break;
    case AblationAxis::sh: cfg.n_clusters = parse_int("sh(n_clusters)", value); break;
    case AblationAxis::th: cfg.change_period = parse_int("th(change_period)", value); break;
  }
  return cfg;
}

}  // namespace

SummaryTable run_ablation(AblationAxis axis, const std::vector<std::string>& values,
                          const sim::ExperimentConfig& base, int num_seeds) {
  if (values.empty()) throw UsageError("run_ablation: no axis values");
  if (num_seeds < 1) throw UsageError("run_ablation: num_seeds must be >= 1");
  SummaryTable table;
  for (const std::string& value : values) {
    sim::ExperimentConfig cfg = apply_axis(base, axis, value);
    std::vector<sim::ExperimentConfig> cfgs;
    std::vector<sim::ExperimentResult> results;
    for (int k = 0; k < num_seeds; ++k) {
      sim::ExperimentConfig run_cfg = cfg;
      run_cfg.master_seed = base.master_seed + static_cast<std::uint64_t>(k);
      results.push_back(sim::run_experiment(run_cfg));
      cfgs.push_back(run_cfg);
    }
    if (table.domains.empty())
      for (const drift::DomainSpec& d : results[0].schedule.catalog)
        table.domains.push_back(d.name);
    table.rows.push_back(
        summarize_runs(cfgs, results, std::string(axis_name(axis)) + "=" + value));
  }
  return table;
}

std::string file_digest_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open for digest: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

SummaryTable run_and_emit(const sim::ExperimentConfig& base, int num_seeds,
                          const std::string& out_dir, const KvMap& resolved_config) {
  if (num_seeds < 1) throw UsageError("run_and_emit: num_seeds must be >= 1");
  const std::string started = iso_now();
  fs::create_directories(out_dir);

  std::vector<std::string> files;
  std::vector<sim::ExperimentConfig> cfgs;
  std::vector<sim::ExperimentResult> results;
  for (int k = 0; k < num_seeds; ++k) {
    sim::ExperimentConfig cfg = base;
    cfg.master_seed = base.master_seed + static_cast<std::uint64_t>(k);
    results.push_back(sim::run_experiment(cfg));
    cfgs.push_back(cfg);
    const std::string rel =
        num_seeds == 1 ? std::string() : "seed_" + std::to_string(cfg.master_seed);
    const std::string dir = rel.empty() ? out_dir : out_dir + "/" + rel;
    for (const std::string& name : emit_run_artifacts(cfg, results.back(), dir))
      files.push_back(rel.empty() ? name : rel + "/" + name);
  }

  SummaryTable table;
  for (const drift::DomainSpec& d : results[0].schedule.catalog) table.domains.push_back(d.name);
  table.rows.push_back(
      summarize_runs(cfgs, results, setting_label(base, results[0].schedule)));

  write_summary_json(table, out_dir + "/summary.json");
  files.push_back("summary.json");
  std::ostringstream txt;
  write_summary_text(table, txt);
  write_text_file(out_dir + "/summary.txt", txt.str());
  files.push_back("summary.txt");

  write_manifest(out_dir, resolved_config, base.master_seed, num_seeds, started, files);
  return table;
}

SummaryTable sweep_and_emit(AblationAxis axis, const std::vector<std::string>& values,
                            const sim::ExperimentConfig& base, int num_seeds,
                            const std::string& out_dir, const KvMap& resolved_config) {
  const std::string started = iso_now();
  fs::create_directories(out_dir);
  std::vector<std::string> files;

  SummaryTable table;
  for (const std::string& value : values) {
    sim::ExperimentConfig cfg = apply_axis(base, axis, value);
    std::vector<sim::ExperimentConfig> cfgs;
    std::vector<sim::ExperimentResult> results;
    for (int k = 0; k < num_seeds; ++k) {
      sim::ExperimentConfig run_cfg = cfg;
      run_cfg.master_seed = base.master_seed + static_cast<std::uint64_t>(k);
      results.push_back(sim::run_experiment(run_cfg));
      cfgs.push_back(run_cfg);
      const std::string rel = std::string(axis_name(axis)) + "_" + value + "/seed_" +
                              std::to_string(run_cfg.master_seed);
      for (const std::string& name : emit_run_artifacts(run_cfg, results.back(), out_dir + "/" + rel))
        files.push_back(rel + "/" + name);
    }
    if (table.domains.empty())
      for (const drift::DomainSpec& d : results[0].schedule.catalog)
        table.domains.push_back(d.name);
    table.rows.push_back(
        summarize_runs(cfgs, results, std::string(axis_name(axis)) + "=" + value));
  }

  write_summary_json(table, out_dir + "/sweep.json");
  files.push_back("sweep.json");
  std::ostringstream txt;
  write_summary_text(table, txt);
  write_text_file(out_dir + "/sweep.txt", txt.str());
  files.push_back("sweep.txt");

  write_manifest(out_dir, resolved_config, base.master_seed, num_seeds, started, files);
  return table;
}

void show_summary(const std::string& summary_json_path, std::ostream& out) {
  write_summary_text(read_summary_json(summary_json_path), out);
}

}  // namespace fedctta::report
