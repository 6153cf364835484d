#include "fedctta/math.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedctta/errors.hpp"

namespace fedctta {

std::vector<double> log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw UsageError("log_softmax: empty logit vector");
  double m = logits[0];
  for (double z : logits) {
    if (!std::isfinite(z)) throw NumericError("log_softmax: non-finite logit");
    m = std::max(m, z);
  }
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - m);
  double lse = m + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - lse;
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out = log_softmax(logits);
  for (double& v : out) v = std::exp(v);
  return out;
}

double entropy(std::span<const double> p) {
  if (p.empty()) throw UsageError("entropy: empty probability vector");
  double sum = 0.0;
  for (double v : p) {
    if (!std::isfinite(v)) throw NumericError("entropy: non-finite probability");
    if (v < 0.0) throw DomainError("entropy: negative probability component");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw DomainError("entropy: probabilities sum to " + std::to_string(sum));
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

double entropy_from_logits(std::span<const double> logits) {
  std::vector<double> lp = log_softmax(logits);
  double h = 0.0;
  for (double v : lp) h -= std::exp(v) * v;
  return h;
}

double mean_entropy_from_logits(const Matrix& logits) {
  if (logits.rows == 0) throw UsageError("mean_entropy_from_logits: empty batch");
  double acc = 0.0;
  for (int i = 0; i < logits.rows; ++i) acc += entropy_from_logits(logits.row(i));
  return acc / logits.rows;
}

std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows));
  for (int i = 0; i < logits.rows; ++i) {
    int best = 0;
    for (int j = 1; j < logits.cols; ++j)
      if (logits(i, j) > logits(i, best)) best = j;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace fedctta
