#include "fedctta/orchestrator.hpp"

#include <algorithm>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace fedctta::sim {

const char* method_name(Method m) {
  switch (m) {
    case Method::no_adapt: return "no_adapt";
    case Method::local: return "local";
    case Method::fedavg: return "fedavg";
    case Method::fedavg_ft: return "fedavg_ft";
    case Method::fedctta: return "fedctta";
  }
  return "?";
}

Method method_from_name(std::string_view name) {
  for (Method m : {Method::no_adapt, Method::local, Method::fedavg, Method::fedavg_ft,
                   Method::fedctta})
    if (name == method_name(m)) return m;
  throw ConfigError("unknown method: " + std::string(name));
}

const char* probe_source_name(ProbeSource s) {
  return s == ProbeSource::noise ? "noise" : "heldout";
}

ProbeSource probe_source_from_name(std::string_view name) {
  if (name == "noise") return ProbeSource::noise;
  if (name == "heldout") return ProbeSource::heldout;
  throw ConfigError("unknown probe source: " + std::string(name));
}

void ExperimentConfig::validate() const {
  model.validate();
  if (num_clients < 1) throw ConfigError("config: clients must be >= 1");
  if (num_slots < 1) throw ConfigError("config: slots must be >= 1");
  const bool adapting = method != Method::no_adapt && tta_mode != tta::TtaMode::none;
  if (batch_size < (adapting ? 2 : 1))
    throw ConfigError("config: batch_size too small for the adaptation mode");
  if (agg_interval < 1) throw ConfigError("config: agg_interval must be >= 1");
  if (!(tau > 0.0)) throw ConfigError("config: tau must be positive");
  if (num_probes < 1) throw ConfigError("config: probes must be >= 1");
  if (probe_source == ProbeSource::heldout && num_probes > heldout_size)
    throw ConfigError("config: probes exceed the held-out set size");
  if (lr < 0.0) throw ConfigError("config: lr must be nonnegative");
  if (steps_per_batch < 1) throw ConfigError("config: steps_per_batch must be >= 1");
  if (workers < 1) throw ConfigError("config: workers must be >= 1");
  if (n_clusters < 1 || n_clusters > num_clients)
    throw ConfigError("config: drift.n_clusters must lie in [1, clients]");
  if (change_period < 1) throw ConfigError("config: drift.change_period must be >= 1");
  if (severity < 1 || severity > 5) throw ConfigError("config: drift.severity must be in [1, 5]");
  if (!(cov_scale > 0.0)) throw ConfigError("config: drift.cov_scale must be positive");
  if (slot_length < 1) throw ConfigError("config: slot_length must be >= 1");
  if (pretrain_size < model.num_classes || heldout_size < model.num_classes)
    throw ConfigError("config: task datasets must cover every class");
  if (pretrain_epochs < 0) throw ConfigError("config: pretrain_epochs must be >= 0");
  if (!(pretrain_lr > 0.0)) throw ConfigError("config: pretrain_lr must be positive");
  if (pretrain_batch < 2) throw ConfigError("config: pretrain_batch must be >= 2");
}

std::string config_signature(const ExperimentConfig& c) {
  std::ostringstream os;
  os << c.num_clients << '|' << c.num_slots << '|' << c.batch_size << '|'
     << tta::tta_mode_name(c.tta_mode) << '|' << method_name(c.method) << '|' << c.agg_interval
     << '|' << agg::metric_name(c.metric) << '|' << c.tau << '|' << c.num_probes << '|'
     << probe_source_name(c.probe_source) << '|' << c.probe_regen_per_round << '|'
     << c.aggregate_running_stats << '|' << c.force_uniform_collab << '|' << c.lr << '|'
     << c.steps_per_batch << '|' << c.bn_affine_only << '|' << c.master_seed << '|'
     << c.model.input_dim << '|';
  for (int h : c.model.hidden_dims) os << h << ',';
  os << '|' << c.model.num_classes << '|' << c.model.bn_momentum << '|' << c.model.bn_epsilon
     << '|' << c.n_clusters << '|' << c.change_period << '|' << c.severity << '|' << c.cov_scale
     << '|' << c.slot_length << '|' << c.pretrain_size << '|' << c.heldout_size << '|'
     << c.pretrain_epochs << '|' << c.pretrain_lr << '|' << c.pretrain_batch;
  return os.str();
}

namespace {

// Fan client work out to a fixed thread partition. Each client's work is a
// pure function of its own state and keyed seeds, so the partition cannot
// change results; exceptions propagate after the join.
void for_each_client(int n, int workers, const std::function<void(int)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int w = std::min(workers, n);
  std::exception_ptr first_error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(w));
  for (int t = 0; t < w; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (int i = t; i < n; i += w) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (std::thread& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

agg::ProbeSet build_probes(const ExperimentConfig& cfg, const drift::SyntheticTask& task,
                           int round) {
  const std::uint64_t pseed =
      derive_seed(cfg.master_seed, "probe_round", static_cast<std::uint64_t>(round + 1));
  if (cfg.probe_source == ProbeSource::noise)
    return agg::generate_probes(cfg.num_probes, cfg.model.input_dim, pseed);

  // Held-out clean rows, sampled without replacement.
  Rng rng(derive_seed(pseed, "heldout_pick"));
  const int total = task.heldout_set.size();
  std::vector<int> idx(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) idx[static_cast<std::size_t>(i)] = i;
  rng.shuffle(idx);
  agg::ProbeSet ps;
  ps.seed = pseed;
  ps.samples = Matrix(cfg.num_probes, cfg.model.input_dim);
  for (int i = 0; i < cfg.num_probes; ++i)
    for (int j = 0; j < cfg.model.input_dim; ++j)
      ps.samples(i, j) = task.heldout_set.inputs(idx[static_cast<std::size_t>(i)], j);
  return ps;
}

}  // namespace

agg::CollaborationMatrix step_method_fedctta(std::vector<tta::ClientState>& clients,
                                             const agg::ProbeSet& probes,
                                             agg::DistanceMetric metric, double tau, int round,
                                             bool include_running_stats, bool force_uniform) {
  const int n = static_cast<int>(clients.size());
  if (n == 0) throw UsageError("step_method_fedctta: no clients");
  agg::CollaborationMatrix c;
  if (force_uniform || n == 1) {
    c = agg::uniform_collaboration(n);
  } else {
    std::vector<agg::Fingerprint> fps;
    fps.reserve(static_cast<std::size_t>(n));
    const bool feats = agg::metric_uses_features(metric);
    for (const tta::ClientState& cl : clients)
      fps.push_back(agg::fingerprint(cl.model, probes, feats));
    c = agg::collaboration_weights(agg::pairwise_distance(fps, metric), tau);
  }
  c.round = round;

  std::vector<nn::ParamVector> params;
  params.reserve(clients.size());
  for (const tta::ClientState& cl : clients) params.push_back(nn::flatten(cl.model));
  std::vector<nn::ParamVector> mixed = agg::aggregate_personalized(params, c, include_running_stats);
  for (std::size_t i = 0; i < clients.size(); ++i)
    clients[i].model = nn::unflatten(clients[i].model.spec, mixed[i]);
  return c;
}

void step_method_fedavg(std::vector<tta::ClientState>& clients) {
  if (clients.empty()) throw UsageError("step_method_fedavg: no clients");
  std::vector<nn::ParamVector> params;
  params.reserve(clients.size());
  for (const tta::ClientState& cl : clients) params.push_back(nn::flatten(cl.model));
  nn::ParamVector mean = agg::aggregate_fedavg(params);
  for (tta::ClientState& cl : clients) cl.model = nn::unflatten(cl.model.spec, mean);
}

double evaluate_on_clean(const nn::Model& model, const drift::SyntheticTask& task) {
  return nn::dataset_accuracy(model, task.heldout_set);
}

void save_checkpoint(const std::string& path, const ExperimentConfig& config, int next_slot,
                     const std::vector<tta::ClientState>& clients) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("checkpoint: cannot open " + path + " for writing");
  out.write("FCTA", 4);
  const std::uint64_t sig = fnv1a64(config_signature(config));
  out.write(reinterpret_cast<const char*>(&sig), sizeof(sig));
  const std::int32_t slot = next_slot;
  const std::int32_t n = static_cast<std::int32_t>(clients.size());
  out.write(reinterpret_cast<const char*>(&slot), sizeof(slot));
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (const tta::ClientState& cl : clients) nn::write_param_vector(out, nn::flatten(cl.model));
  if (!out) throw ConfigError("checkpoint: write failed for " + path);
}

CheckpointData load_checkpoint(const std::string& path, const ExperimentConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string_view(magic, 4) != "FCTA")
    throw ConfigError("checkpoint: bad magic in " + path);
  std::uint64_t sig = 0;
  in.read(reinterpret_cast<char*>(&sig), sizeof(sig));
  if (sig != fnv1a64(config_signature(config)))
    throw ConfigError("checkpoint: config signature mismatch");
  std::int32_t slot = 0, n = 0;
  in.read(reinterpret_cast<char*>(&slot), sizeof(slot));
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (!in || n != config.num_clients) throw ConfigError("checkpoint: client count mismatch");
  CheckpointData data;
  data.next_slot = slot;
  data.params.reserve(static_cast<std::size_t>(n));
  for (std::int32_t i = 0; i < n; ++i) data.params.push_back(nn::read_param_vector(in));
  return data;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& opts) {
  config.validate();

  drift::SyntheticTask task =
      drift::make_task(config.model.num_classes, config.model.input_dim,
                       derive_seed(config.master_seed, "task"), config.pretrain_size,
                       config.heldout_size, config.cov_scale);
  std::vector<drift::DomainSpec> catalog = drift::default_catalog(config.severity);
  drift::DriftSchedule schedule =
      drift::build_schedule(config.num_clients, config.num_slots, config.n_clusters,
                            config.change_period, catalog,
                            derive_seed(config.master_seed, "schedule"), config.slot_length);

  nn::Model source = nn::pretrain_source(
      nn::init_model(config.model, derive_seed(config.master_seed, "init")), task.pretrain_set,
      config.pretrain_epochs, config.pretrain_lr, derive_seed(config.master_seed, "pretrain"),
      config.pretrain_batch);

  const tta::TtaMode mode =
      config.method == Method::no_adapt ? tta::TtaMode::none : config.tta_mode;
  std::vector<tta::ClientState> clients;
  clients.reserve(static_cast<std::size_t>(config.num_clients));
  for (int i = 0; i < config.num_clients; ++i)
    clients.push_back({i, source, mode, config.lr, config.steps_per_batch, config.bn_affine_only});

  int start_slot = 0;
  if (opts.resume_from) {
    CheckpointData data = load_checkpoint(*opts.resume_from, config);
    start_slot = data.next_slot;
    for (int i = 0; i < config.num_clients; ++i)
      clients[static_cast<std::size_t>(i)].model =
          nn::unflatten(config.model, data.params[static_cast<std::size_t>(i)]);
  }

  agg::ProbeSet probes = build_probes(config, task, -1);

  ExperimentResult res;
  res.schedule = schedule;
  res.summary.clean_accuracy_source = evaluate_on_clean(source, task);

  const bool aggregates =
      config.method == Method::fedavg || config.method == Method::fedavg_ft ||
      config.method == Method::fedctta;

  for (int t = start_slot; t < config.num_slots; ++t) {
    RoundResult rr;
    rr.slot = t;
    rr.accuracy.assign(static_cast<std::size_t>(config.num_clients), 0.0);
    rr.entropy_before.assign(static_cast<std::size_t>(config.num_clients), 0.0);
    rr.entropy_after.assign(static_cast<std::size_t>(config.num_clients), 0.0);
    rr.domain.assign(static_cast<std::size_t>(config.num_clients), 0);

    for_each_client(config.num_clients, config.workers, [&](int i) {
      double acc = 0.0, eb = 0.0, ea = 0.0;
      for (int b = 0; b < config.slot_length; ++b) {
        nn::Batch batch =
            drift::stream_batch(task, schedule, i, t, b, config.batch_size, config.master_seed);
        tta::AdaptOutcome oc = tta::process_batch(clients[static_cast<std::size_t>(i)], batch);
        acc += oc.accuracy;
        eb += oc.mean_entropy_before;
        ea += oc.mean_entropy_after;
      }
      rr.accuracy[static_cast<std::size_t>(i)] = acc / config.slot_length;
      rr.entropy_before[static_cast<std::size_t>(i)] = eb / config.slot_length;
      rr.entropy_after[static_cast<std::size_t>(i)] = ea / config.slot_length;
      rr.domain[static_cast<std::size_t>(i)] = schedule.domain_at(i, t);
    });

    if (aggregates && (t + 1) % config.agg_interval == 0) {
      if (config.method == Method::fedctta) {
        if (config.probe_regen_per_round) probes = build_probes(config, task, t);
        rr.collab = step_method_fedctta(clients, probes, config.metric, config.tau, t,
                                        config.aggregate_running_stats,
                                        config.force_uniform_collab);
      } else {
        step_method_fedavg(clients);
      }
    }

    res.rounds.push_back(std::move(rr));
    if (opts.checkpoint_path && opts.checkpoint_after_slot == t)
      save_checkpoint(*opts.checkpoint_path, config, t + 1, clients);
  }

  // Summary: per-domain means over every (slot, client) cell, overall as the
  // mean of per-domain means, per-client means, and the forgetting probe.
  std::map<int, std::pair<double, long>> per_domain;
  std::vector<double> client_sum(static_cast<std::size_t>(config.num_clients), 0.0);
  for (const RoundResult& rr : res.rounds) {
    for (int i = 0; i < config.num_clients; ++i) {
      auto& slot = per_domain[rr.domain[static_cast<std::size_t>(i)]];
      slot.first += rr.accuracy[static_cast<std::size_t>(i)];
      slot.second += 1;
      client_sum[static_cast<std::size_t>(i)] += rr.accuracy[static_cast<std::size_t>(i)];
    }
  }
  double overall = 0.0;
  for (const auto& [dom, acc] : per_domain) {
    const double mean = acc.first / acc.second;
    res.summary.per_domain.emplace_back(schedule.catalog[static_cast<std::size_t>(dom)].name, mean);
    overall += mean;
  }
  if (!per_domain.empty()) overall /= static_cast<double>(per_domain.size());
  res.summary.overall_accuracy = overall;
  res.summary.per_client.resize(static_cast<std::size_t>(config.num_clients));
  const auto slots_seen = static_cast<double>(res.rounds.size());
  for (int i = 0; i < config.num_clients; ++i)
    res.summary.per_client[static_cast<std::size_t>(i)] =
        slots_seen > 0 ? client_sum[static_cast<std::size_t>(i)] / slots_seen : 0.0;
  double clean_final = 0.0;
  for (const tta::ClientState& cl : clients) clean_final += evaluate_on_clean(cl.model, task);
  res.summary.clean_accuracy_final = clean_final / config.num_clients;
  return res;
}

}  // namespace fedctta::sim
