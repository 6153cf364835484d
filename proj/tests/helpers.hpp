#pragma once

// Shared fixtures and independent oracles for the test suites. Oracles here
// recompute expectations by their own route and must stay independent of the
// library code paths they check.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "fedctta/model.hpp"
#include "fedctta/rng.hpp"

namespace testutil {

inline fedctta::nn::ModelSpec small_spec(int d = 3, std::vector<int> hidden = {5},
                                         int k = 3) {
  fedctta::nn::ModelSpec spec;
  spec.input_dim = d;
  spec.hidden_dims = std::move(hidden);
  spec.num_classes = k;
  return spec;
}

// A model whose BN parameters and running statistics are all non-trivial so
// every gradient path through the normalization is exercised.
inline fedctta::nn::Model random_model(const fedctta::nn::ModelSpec& spec,
                                       std::uint64_t seed) {
  using namespace fedctta;
  nn::Model m = nn::init_model(spec, seed);
  Rng rng(derive_seed(seed, "randomize_bn"));
  for (auto& bn : m.bn) {
    for (double& v : bn.gamma) v = rng.next_uniform(0.5, 1.5);
    for (double& v : bn.beta) v = rng.next_uniform(-0.5, 0.5);
    for (double& v : bn.run_mean) v = rng.next_uniform(-0.5, 0.5);
    for (double& v : bn.run_var) v = rng.next_uniform(0.5, 2.0);
  }
  return m;
}

inline fedctta::nn::Batch random_batch(const fedctta::nn::ModelSpec& spec, int n,
                                       std::uint64_t seed) {
  using namespace fedctta;
  nn::Batch b;
  b.inputs = Matrix(n, spec.input_dim);
  Rng rng(derive_seed(seed, "batch"));
  for (double& v : b.inputs.data) v = rng.next_normal();
  b.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) b.labels[static_cast<std::size_t>(i)] = rng.next_int(spec.num_classes);
  return b;
}

// Central finite difference of the mean-entropy loss with respect to one
// flattened parameter; the independent oracle for the analytic backward pass.
inline double fd_entropy_grad(const fedctta::nn::Model& m, const fedctta::nn::Batch& b,
                              fedctta::nn::StatsMode mode, std::size_t idx, double h) {
  using namespace fedctta::nn;
  ParamVector pv = flatten(m);
  ParamVector hi = pv, lo = pv;
  hi.values[idx] += h;
  lo.values[idx] -= h;
  double lp = entropy_loss(unflatten(m.spec, hi), b, mode);
  double lm = entropy_loss(unflatten(m.spec, lo), b, mode);
  return (lp - lm) / (2.0 * h);
}

// Finite differences lose validity when a pre-activation sits within h of the
// ReLU kink; reject such draws so the oracle stays meaningful.
inline bool relu_margin_ok(const fedctta::nn::Model& m, const fedctta::nn::Batch& b,
                           fedctta::nn::StatsMode mode, double margin = 1e-3) {
  using namespace fedctta::nn;
  ForwardCache cache;
  forward(m, b, mode == StatsMode::adapt ? StatsMode::adapt_preview : mode, &cache);
  for (const auto& layer : cache.hidden)
    for (double v : layer.relu_in.data)
      if (std::abs(v) < margin) return false;
  return true;
}

inline std::string model_bytes(const fedctta::nn::Model& m) {
  std::ostringstream os;
  fedctta::nn::write_param_vector(os, fedctta::nn::flatten(m));
  return os.str();
}

// Unique scratch directory under the system temp root, removed on scope exit.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("fedctta_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace testutil
