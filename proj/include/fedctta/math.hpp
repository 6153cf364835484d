#pragma once

#include <span>
#include <vector>

#include "fedctta/matrix.hpp"

namespace fedctta {

// Max-shifted log-sum-exp; throws NumericError on non-finite input.
std::vector<double> log_softmax(std::span<const double> logits);

// Strictly positive probabilities summing to 1.
std::vector<double> softmax(std::span<const double> logits);

// Shannon entropy with natural log; 0 * log 0 == 0. Requires a probability
// vector: nonnegative entries (DomainError otherwise) summing to 1 within
// 1e-6.
double entropy(std::span<const double> p);

double entropy_from_logits(std::span<const double> logits);
double mean_entropy_from_logits(const Matrix& logits);

// Row-wise argmax; ties resolve to the lowest class index.
std::vector<int> argmax_rows(const Matrix& logits);

}  // namespace fedctta
