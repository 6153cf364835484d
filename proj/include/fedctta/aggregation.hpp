#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "fedctta/model.hpp"

namespace fedctta::agg {

// Shared random-noise inputs every client model is evaluated on; the common
// yardstick that makes output behavior comparable without sharing data.
struct ProbeSet {
  Matrix samples;  // count x input_dim
  std::uint64_t seed = 0;
  int count() const { return samples.rows; }
};

// A model's output signature on the probe set: mean logits, and optionally
// the mean penultimate activations for the feature-space metrics.
struct Fingerprint {
  std::vector<double> mean_logits;
  std::vector<double> mean_features;  // empty unless requested
};

enum class DistanceMetric {
  neg_euclid,        // -||mu_i - mu_j||_2 on mean logits
  kl,                // -KL(softmax(mu_i) || softmax(mu_j))
  cross_entropy,     // -CE(softmax(mu_i), softmax(mu_j))
  cosine,            // cosine similarity of mean logits
  feat_neg_euclid,   // -||.||_2 on mean features
  feat_cosine,       // cosine similarity of mean features
};

const char* metric_name(DistanceMetric m);
DistanceMetric metric_from_name(std::string_view name);
bool metric_uses_features(DistanceMetric m);

// Pairwise similarities, oriented so larger always means more similar.
struct DistanceMatrix {
  int n = 0;
  DistanceMetric metric = DistanceMetric::neg_euclid;
  std::vector<double> values;  // n x n row-major
  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * n + j]; }
  double& at(int i, int j) { return values[static_cast<std::size_t>(i) * n + j]; }
};

// Row-stochastic aggregation weights; entry (i, j) is client j's contribution
// to client i's personalized aggregate.
struct CollaborationMatrix {
  int n = 0;
  int round = -1;
  std::vector<double> values;
  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * n + j]; }
  double& at(int i, int j) { return values[static_cast<std::size_t>(i) * n + j]; }
};

// count i.i.d. standard-normal probe vectors, bit-reproducible in seed.
ProbeSet generate_probes(int count, int input_dim, std::uint64_t seed);

// Eval-mode forward over the probes; pure in the model. Means accumulate in
// fixed row order.
Fingerprint fingerprint(const nn::Model& model, const ProbeSet& probes,
                        bool with_features = false);

DistanceMatrix pairwise_distance(const std::vector<Fingerprint>& fps, DistanceMetric metric);

// Row-wise softmax of D / tau with max-shift stabilization. Row sums use a
// value-ordered reduction so relabeling clients permutes the result bit for
// bit.
CollaborationMatrix collaboration_weights(const DistanceMatrix& d, double tau);

CollaborationMatrix uniform_collaboration(int n);

// theta_i_new = sum_j C(i,j) * theta_j in fixed j order, over the full
// vector; include_running_stats=false keeps each client's own BN running
// statistics instead of mixing them.
std::vector<nn::ParamVector> aggregate_personalized(const std::vector<nn::ParamVector>& params,
                                                    const CollaborationMatrix& c,
                                                    bool include_running_stats = true);

// Unweighted elementwise mean in fixed client order.
nn::ParamVector aggregate_fedavg(const std::vector<nn::ParamVector>& params);

}  // namespace fedctta::agg
