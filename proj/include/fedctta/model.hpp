#pragma once

#include <cstdint>
#include <vector>

#include "fedctta/errors.hpp"
#include "fedctta/math.hpp"
#include "fedctta/matrix.hpp"
#include "fedctta/params.hpp"

namespace fedctta::nn {

// Client model architecture: Linear -> BatchNorm -> ReLU per hidden layer,
// final Linear to num_classes logits.
struct ModelSpec {
  int input_dim = 0;
  std::vector<int> hidden_dims;
  int num_classes = 0;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;

  void validate() const;
  int num_hidden() const { return static_cast<int>(hidden_dims.size()); }
  std::size_t param_count() const;
  bool operator==(const ModelSpec&) const = default;
};

struct LinearLayer {
  Matrix weight;             // out x in
  std::vector<double> bias;  // out
  bool operator==(const LinearLayer&) const = default;
};

struct BatchNormLayer {
  std::vector<double> gamma, beta, run_mean, run_var;
  bool operator==(const BatchNormLayer&) const = default;
};

struct Model {
  ModelSpec spec;
  std::vector<LinearLayer> linear;  // hidden layers + output layer
  std::vector<BatchNormLayer> bn;   // one per hidden layer
  bool operator==(const Model&) const = default;
};

struct Batch {
  Matrix inputs;            // n x input_dim
  std::vector<int> labels;  // empty when unlabeled; never read by adaptation
  int size() const { return inputs.rows; }
  bool has_labels() const { return !labels.empty(); }
};

// BatchNorm statistics handling during a forward pass.
//   eval          - normalize by the stored running statistics; pure.
//   adapt         - fold the batch statistics into the running statistics
//                   (EMA with momentum bn_momentum), normalize by the updated
//                   values, and commit them to the model.
//   adapt_preview - the adapt computation without the commit; loss probes and
//                   gradient checks.
enum class StatsMode { eval, adapt, adapt_preview };

struct BnLayerCache {
  Matrix lin_in;                  // input to this hidden layer's linear
  Matrix x;                       // linear output entering BN
  Matrix xhat;                    // normalized activations
  std::vector<double> batch_mean;
  std::vector<double> use_mean;   // statistics actually used to normalize
  std::vector<double> inv_std;
  Matrix relu_in;                 // gamma * xhat + beta
};

struct ForwardCache {
  StatsMode mode = StatsMode::eval;
  double alpha_eff = 0.0;  // 0 in eval mode, bn_momentum otherwise
  std::vector<BnLayerCache> hidden;
  Matrix final_in;  // penultimate activations (input to the output layer)
  Matrix logits;
};

// Fan-in-scaled uniform weights, deterministic in seed; gamma=1, beta=0,
// running mean 0, running variance 1.
Model init_model(const ModelSpec& spec, std::uint64_t seed);

// Mutating entry point; StatsMode::adapt commits the running-statistic
// update. Batches of one sample are rejected in adapt/adapt_preview modes.
Matrix forward(Model& model, const Batch& batch, StatsMode mode, ForwardCache* cache = nullptr);
// Const entry point for eval / adapt_preview; UsageError on adapt.
Matrix forward(const Model& model, const Batch& batch, StatsMode mode,
               ForwardCache* cache = nullptr);

// Mean prediction entropy over the batch under the given statistics mode
// (read-only; pass adapt_preview to match an adapt-mode forward).
double entropy_loss(const Model& model, const Batch& batch,
                    StatsMode mode = StatsMode::adapt_preview);

// Analytic gradients with respect to every parameter, zero over running
// statistics; the cache must come from a forward over the same batch.
ParamVector backward_from_logit_grad(const Model& model, const ForwardCache& cache,
                                     const Matrix& dlogits);
ParamVector backward_entropy(const Model& model, const ForwardCache& cache);
ParamVector backward_cross_entropy(const Model& model, const ForwardCache& cache,
                                   const std::vector<int>& labels);

ParamVector flatten(const Model& model);
Model unflatten(const ModelSpec& spec, const ParamVector& pv);

struct Dataset {
  Matrix inputs;
  std::vector<int> labels;
  int size() const { return inputs.rows; }
};

// Supervised cross-entropy SGD with BN in adapt mode; the source model every
// client starts from. Deterministic in seed; epochs == 0 returns the model
// unchanged.
Model pretrain_source(Model model, const Dataset& clean, int epochs, double lr,
                      std::uint64_t seed, int batch_size = 32);

// Eval-mode accuracy over a labeled dataset.
double dataset_accuracy(const Model& model, const Dataset& data);

}  // namespace fedctta::nn
