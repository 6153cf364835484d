#pragma once

#include <string_view>
#include <vector>

#include "fedctta/model.hpp"

namespace fedctta::tta {

enum class TtaMode { none, bn, grad };

const char* tta_mode_name(TtaMode m);
TtaMode tta_mode_from_name(std::string_view name);

// One client's adaptation state. The client owns its model exclusively while
// a slot is being processed; the only cross-client interaction is the
// aggregation barrier handled by the orchestrator.
struct ClientState {
  int client_id = 0;
  nn::Model model;
  TtaMode mode = TtaMode::bn;
  double lr = 1e-5;           // grad mode step size
  int steps_per_batch = 1;    // grad mode optimizer iterations per batch
  bool bn_affine_only = false;  // grad mode: restrict updates to gamma/beta
};

// Metrics surface for one processed batch. Labels are consumed only here,
// after the adaptation decision, never by the adaptation itself. Entropies
// are eval-mode prediction entropies on the batch with the model as of
// arrival (before) and after the slot's update (after).
struct AdaptOutcome {
  std::vector<int> predictions;
  double mean_entropy_before = 0.0;
  double mean_entropy_after = 0.0;
  double accuracy = 0.0;
};

// Statistics-only adaptation: predictions come from the forward pass that
// folds the batch into the running statistics; trainable parameters are
// untouched bit for bit.
AdaptOutcome adapt_step_bn(ClientState& client, const nn::Batch& batch);

// Entropy-minimization adaptation: predictions are recorded from the forward
// pass before any optimizer step; then steps_per_batch iterations of
// forward / backward / SGD. lr == 0 short-circuits to the predict path,
// leaving the model bit-identical.
AdaptOutcome adapt_step_grad(ClientState& client, const nn::Batch& batch);

// Eval-mode argmax; ties break toward the lowest class index; pure.
std::vector<int> predict(const ClientState& client, const nn::Batch& batch);

// Dispatch on client.mode; TtaMode::none is a pure predict with metrics.
AdaptOutcome process_batch(ClientState& client, const nn::Batch& batch);

}  // namespace fedctta::tta
