#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fedctta/model.hpp"
#include "fedctta/rng.hpp"

namespace fedctta::drift {

// Separable Gaussian-blob classification task plus materialized clean
// pretraining and held-out evaluation sets. The closest pair of class means
// is rescaled to sit at 4.4x the covariance scale, so separability holds by
// construction at a fixed difficulty across seeds.
struct SyntheticTask {
  int num_classes = 0;
  int input_dim = 0;
  double cov_scale = 1.0;
  std::uint64_t seed = 0;
  Matrix class_means;  // num_classes x input_dim
  nn::Dataset pretrain_set;
  nn::Dataset heldout_set;
};

// A covariate-shift domain: inputs map to scale * R(rotation) * x + noise.
// Severity scales the rotation angle and noise linearly and the scale factor
// geometrically, so higher severity is a strictly stronger shift.
struct DomainSpec {
  int domain_id = 0;
  std::string name;
  double rotation_angle = 0.0;  // radians, applied to coordinate pairs
  double scale = 1.0;
  double noise_std = 0.0;
  int severity = 5;  // 1..5
};

// Assignment of one domain to every (client, slot); clients within a cluster
// share an identical domain sequence.
struct DriftSchedule {
  int num_clients = 0;
  int num_slots = 0;
  int slot_length = 1;  // batches per slot
  std::vector<int> assignment;  // num_clients x num_slots catalog indices
  std::vector<int> cluster_of;  // cluster id per client
  std::vector<DomainSpec> catalog;

  int domain_at(int client, int slot) const {
    return assignment[static_cast<std::size_t>(client) * num_slots + slot];
  }
};

SyntheticTask make_task(int num_classes, int input_dim, std::uint64_t seed,
                        int pretrain_size = 2000, int heldout_size = 1000,
                        double cov_scale = 1.0);

// n labeled clean samples drawn from the task's blobs.
nn::Batch sample_clean(const SyntheticTask& task, int n, Rng& rng);

// Applies the domain transform; labels pass through bit-unchanged.
nn::Batch apply_domain(const nn::Batch& batch, const DomainSpec& domain,
                       std::uint64_t noise_seed);

// The fixed 15-entry corruption catalog at the given severity.
std::vector<DomainSpec> default_catalog(int severity);

// Clients split into n_clusters contiguous groups; each group cycles through
// its own ordering of the catalog (spread rotations, then reversed rotations,
// then seeded shuffles — distinct sequences while the catalog allows it),
// moving to the next domain every change_period slots.
DriftSchedule build_schedule(int num_clients, int num_slots, int n_clusters,
                             int change_period, const std::vector<DomainSpec>& catalog,
                             std::uint64_t seed, int slot_length = 1);

// Spatial heterogeneity: distinct full domain sequences / num_clients.
// The slot index is range-checked; the sequence clustering is time-invariant.
double compute_sh(const DriftSchedule& schedule, int t);

// Temporal heterogeneity: fraction of slot transitions (t-1 -> t) where the
// client's domain changes; 0 for a single slot.
double compute_th(const DriftSchedule& schedule, int client);

// The (client, slot, batch_index) stream: clean samples through the
// scheduled domain, a pure function of the indices and seed.
nn::Batch stream_batch(const SyntheticTask& task, const DriftSchedule& schedule,
                       int client, int slot, int batch_index, int batch_size,
                       std::uint64_t seed);

// Audit dump: the full assignment plus per-slot SH and per-client TH.
void export_schedule(const DriftSchedule& schedule, std::ostream& out);

}  // namespace fedctta::drift
