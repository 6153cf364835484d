#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedctta/adaptation.hpp"
#include "fedctta/aggregation.hpp"
#include "fedctta/drift.hpp"

namespace fedctta::sim {

enum class Method { no_adapt, local, fedavg, fedavg_ft, fedctta };

const char* method_name(Method m);
Method method_from_name(std::string_view name);

enum class ProbeSource { noise, heldout };

const char* probe_source_name(ProbeSource s);
ProbeSource probe_source_from_name(std::string_view name);

struct ExperimentConfig {
  int num_clients = 20;
  int num_slots = 150;
  int batch_size = 10;
  tta::TtaMode tta_mode = tta::TtaMode::bn;
  Method method = Method::fedctta;
  int agg_interval = 1;

  agg::DistanceMetric metric = agg::DistanceMetric::neg_euclid;
  double tau = 1.0;
  int num_probes = 64;
  ProbeSource probe_source = ProbeSource::noise;
  bool probe_regen_per_round = false;
  bool aggregate_running_stats = true;
  bool force_uniform_collab = false;

  double lr = 1e-5;
  int steps_per_batch = 1;
  bool bn_affine_only = false;

  std::uint64_t master_seed = 1;
  int workers = 1;

  nn::ModelSpec model{8, {16}, 4, 0.1, 1e-5};

  int n_clusters = 4;
  int change_period = 10;
  int severity = 5;
  double cov_scale = 1.0;
  int slot_length = 1;

  int pretrain_size = 2000;
  int heldout_size = 1000;
  int pretrain_epochs = 30;
  double pretrain_lr = 0.1;
  int pretrain_batch = 32;

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

// Per-slot metrics: one entry per client, plus the collaboration matrix for
// slots where similarity-aware aggregation ran.
struct RoundResult {
  int slot = 0;
  std::vector<double> accuracy;
  std::vector<double> entropy_before;
  std::vector<double> entropy_after;
  std::vector<int> domain;  // catalog index active per client
  std::optional<agg::CollaborationMatrix> collab;
  bool operator==(const RoundResult&) const = default;
};

struct ExperimentSummary {
  double overall_accuracy = 0.0;  // mean of per-domain means
  std::vector<std::pair<std::string, double>> per_domain;  // catalog order, seen domains only
  std::vector<double> per_client;
  double clean_accuracy_source = 0.0;  // source model on the held-out clean set
  double clean_accuracy_final = 0.0;   // mean over final client models
};

struct ExperimentResult {
  drift::DriftSchedule schedule;
  std::vector<RoundResult> rounds;
  ExperimentSummary summary;
};

struct RunOptions {
  std::optional<std::string> resume_from;      // checkpoint to load before the loop
  std::optional<std::string> checkpoint_path;  // where to write a checkpoint
  int checkpoint_after_slot = -1;              // write after this slot completes
};

// The full round loop: stream, predict-then-adapt, aggregate on the
// configured interval. Deterministic in (config, master_seed) regardless of
// worker count.
ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& opts = {});

// Aggregation steps, exposed for direct testing. Both leave fingerprinting
// and weighting pure in the client models; only the parameter swap mutates.
agg::CollaborationMatrix step_method_fedctta(std::vector<tta::ClientState>& clients,
                                             const agg::ProbeSet& probes,
                                             agg::DistanceMetric metric, double tau, int round,
                                             bool include_running_stats, bool force_uniform);
void step_method_fedavg(std::vector<tta::ClientState>& clients);

// Eval-mode accuracy of a model on the task's held-out clean set; the
// catastrophic-forgetting probe.
double evaluate_on_clean(const nn::Model& model, const drift::SyntheticTask& task);

// Checkpointing: slot index plus every client's parameter vector, guarded by
// a config signature so resuming under a different config fails loudly.
void save_checkpoint(const std::string& path, const ExperimentConfig& config, int next_slot,
                     const std::vector<tta::ClientState>& clients);
struct CheckpointData {
  int next_slot = 0;
  std::vector<nn::ParamVector> params;
};
CheckpointData load_checkpoint(const std::string& path, const ExperimentConfig& config);

// Canonical textual signature of a config (checkpoint guard, manifests).
std::string config_signature(const ExperimentConfig& config);

}  // namespace fedctta::sim
