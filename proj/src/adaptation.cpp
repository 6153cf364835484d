#include "fedctta/adaptation.hpp"

#include <string>

namespace fedctta::tta {

const char* tta_mode_name(TtaMode m) {
  switch (m) {
    case TtaMode::none: return "none";
    case TtaMode::bn: return "bn";
    case TtaMode::grad: return "grad";
  }
  return "?";
}

TtaMode tta_mode_from_name(std::string_view name) {
  if (name == "none") return TtaMode::none;
  if (name == "bn") return TtaMode::bn;
  if (name == "grad") return TtaMode::grad;
  throw ConfigError("unknown tta mode: " + std::string(name));
}

namespace {

double batch_accuracy(const std::vector<int>& pred, const std::vector<int>& labels) {
  int hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == labels[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

void require_labels(const nn::Batch& batch, const char* who) {
  if (!batch.has_labels())
    throw UsageError(std::string(who) + ": held-out labels required for outcome metrics");
  if (static_cast<int>(batch.labels.size()) != batch.size())
    throw ShapeError(std::string(who) + ": label count does not match batch size");
}

double eval_entropy(const nn::Model& model, const nn::Batch& batch) {
  return mean_entropy_from_logits(nn::forward(model, batch, nn::StatsMode::eval));
}

AdaptOutcome predict_outcome(const ClientState& client, const nn::Batch& batch) {
  Matrix logits = nn::forward(client.model, batch, nn::StatsMode::eval);
  AdaptOutcome out;
  out.predictions = argmax_rows(logits);
  out.mean_entropy_before = mean_entropy_from_logits(logits);
  out.mean_entropy_after = out.mean_entropy_before;
  out.accuracy = batch_accuracy(out.predictions, batch.labels);
  return out;
}

}  // namespace

AdaptOutcome adapt_step_bn(ClientState& client, const nn::Batch& batch) {
  if (client.mode != TtaMode::bn)
    throw UsageError("adapt_step_bn: client is not in bn mode");
  require_labels(batch, "adapt_step_bn");

  AdaptOutcome out;
  out.mean_entropy_before = eval_entropy(client.model, batch);
  Matrix logits = nn::forward(client.model, batch, nn::StatsMode::adapt);
  out.predictions = argmax_rows(logits);
  // The committed statistics are exactly the ones that produced these logits,
  // so the post-update eval entropy equals the prediction entropy.
  out.mean_entropy_after = mean_entropy_from_logits(logits);
  out.accuracy = batch_accuracy(out.predictions, batch.labels);
  return out;
}

AdaptOutcome adapt_step_grad(ClientState& client, const nn::Batch& batch) {
  if (client.mode != TtaMode::grad)
    throw UsageError("adapt_step_grad: client is not in grad mode");
  if (client.lr < 0.0) throw ConfigError("adapt_step_grad: negative learning rate");
  if (client.steps_per_batch < 1)
    throw ConfigError("adapt_step_grad: steps_per_batch must be >= 1");
  require_labels(batch, "adapt_step_grad");

  if (client.lr == 0.0) return predict_outcome(client, batch);

  AdaptOutcome out;
  out.mean_entropy_before = eval_entropy(client.model, batch);

  nn::ForwardCache cache;
  Matrix logits = nn::forward(client.model, batch, nn::StatsMode::adapt, &cache);
  out.predictions = argmax_rows(logits);

  for (int s = 0; s < client.steps_per_batch; ++s) {
    if (s > 0) nn::forward(client.model, batch, nn::StatsMode::adapt, &cache);
    nn::ParamVector grads = nn::backward_entropy(client.model, cache);
    if (client.bn_affine_only) {
      nn::zero_role(grads, nn::ParamRole::weight);
      nn::zero_role(grads, nn::ParamRole::bias);
    }
    client.model = nn::unflatten(client.model.spec,
                                 nn::sgd_step(nn::flatten(client.model), grads, client.lr));
  }

  out.mean_entropy_after = eval_entropy(client.model, batch);
  out.accuracy = batch_accuracy(out.predictions, batch.labels);
  return out;
}

std::vector<int> predict(const ClientState& client, const nn::Batch& batch) {
  return argmax_rows(nn::forward(client.model, batch, nn::StatsMode::eval));
}

AdaptOutcome process_batch(ClientState& client, const nn::Batch& batch) {
  switch (client.mode) {
    case TtaMode::bn: return adapt_step_bn(client, batch);
    case TtaMode::grad: return adapt_step_grad(client, batch);
    case TtaMode::none:
      require_labels(batch, "process_batch");
      return predict_outcome(client, batch);
  }
  throw UsageError("process_batch: unknown tta mode");
}

}  // namespace fedctta::tta
