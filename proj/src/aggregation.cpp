#include "fedctta/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedctta/rng.hpp"

namespace fedctta::agg {

const char* metric_name(DistanceMetric m) {
  switch (m) {
    case DistanceMetric::neg_euclid: return "neg_euclid";
    case DistanceMetric::kl: return "kl";
    case DistanceMetric::cross_entropy: return "cross_entropy";
    case DistanceMetric::cosine: return "cosine";
    case DistanceMetric::feat_neg_euclid: return "feat_neg_euclid";
    case DistanceMetric::feat_cosine: return "feat_cosine";
  }
  return "?";
}

DistanceMetric metric_from_name(std::string_view name) {
  for (DistanceMetric m : {DistanceMetric::neg_euclid, DistanceMetric::kl,
                           DistanceMetric::cross_entropy, DistanceMetric::cosine,
                           DistanceMetric::feat_neg_euclid, DistanceMetric::feat_cosine})
    if (name == metric_name(m)) return m;
  throw ConfigError("unknown distance metric: " + std::string(name));
}

bool metric_uses_features(DistanceMetric m) {
  return m == DistanceMetric::feat_neg_euclid || m == DistanceMetric::feat_cosine;
}

ProbeSet generate_probes(int count, int input_dim, std::uint64_t seed) {
  if (count < 1) throw ConfigError("probe count must be >= 1");
  if (input_dim < 1) throw ConfigError("probe dimension must be >= 1");
  ProbeSet ps;
  ps.seed = seed;
  ps.samples = Matrix(count, input_dim);
  Rng rng(derive_seed(seed, "probes"));
  for (double& v : ps.samples.data) v = rng.next_normal();
  return ps;
}

Fingerprint fingerprint(const nn::Model& model, const ProbeSet& probes, bool with_features) {
  if (probes.samples.cols != model.spec.input_dim)
    throw ShapeError("fingerprint: probe width does not match model input_dim");
  nn::Batch b{probes.samples, {}};
  nn::ForwardCache cache;
  Matrix logits = nn::forward(model, b, nn::StatsMode::eval, with_features ? &cache : nullptr);

  auto column_mean = [](const Matrix& m) {
    std::vector<double> mean(static_cast<std::size_t>(m.cols), 0.0);
    for (int i = 0; i < m.rows; ++i)
      for (int j = 0; j < m.cols; ++j) mean[static_cast<std::size_t>(j)] += m(i, j);
    for (double& v : mean) v /= m.rows;
    return mean;
  };

  Fingerprint fp;
  fp.mean_logits = column_mean(logits);
  if (with_features) fp.mean_features = column_mean(cache.final_in);
  return fp;
}

namespace {

double neg_euclid(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    double d = a[k] - b[k];
    s += d * d;
  }
  return -std::sqrt(s);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na == 0.0 && nb == 0.0) return 1.0;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

DistanceMatrix pairwise_distance(const std::vector<Fingerprint>& fps, DistanceMetric metric) {
  const int n = static_cast<int>(fps.size());
  if (n < 2) throw UsageError("pairwise_distance: need at least two fingerprints");
  const bool feats = metric_uses_features(metric);
  const std::size_t dim = feats ? fps[0].mean_features.size() : fps[0].mean_logits.size();
  for (const Fingerprint& fp : fps) {
    if (feats && fp.mean_features.empty())
      throw ConfigError("pairwise_distance: fingerprints lack mean features for a feat_* metric");
    const std::size_t d = feats ? fp.mean_features.size() : fp.mean_logits.size();
    if (d != dim) throw ShapeError("pairwise_distance: fingerprint dimension mismatch");
  }

  auto vec = [&](int i) -> std::span<const double> {
    return feats ? std::span<const double>(fps[static_cast<std::size_t>(i)].mean_features)
                 : std::span<const double>(fps[static_cast<std::size_t>(i)].mean_logits);
  };

  // Softmax-normalized logits for the probabilistic metrics.
  std::vector<std::vector<double>> logp;
  if (metric == DistanceMetric::kl || metric == DistanceMetric::cross_entropy) {
    logp.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) logp.push_back(log_softmax(vec(i)));
  }

  DistanceMatrix d;
  d.n = n;
  d.metric = metric;
  d.values.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double v = 0.0;
      switch (metric) {
        case DistanceMetric::neg_euclid:
        case DistanceMetric::feat_neg_euclid:
          v = neg_euclid(vec(i), vec(j));
          break;
        case DistanceMetric::cosine:
        case DistanceMetric::feat_cosine:
          v = cosine_similarity(vec(i), vec(j));
          break;
        case DistanceMetric::kl: {
          // -KL(p_i || p_j), 0 exactly when the distributions coincide.
          double kl = 0.0;
          for (std::size_t k = 0; k < dim; ++k) {
            double pi = std::exp(logp[static_cast<std::size_t>(i)][k]);
            kl += pi * (logp[static_cast<std::size_t>(i)][k] - logp[static_cast<std::size_t>(j)][k]);
          }
          v = -kl;
          break;
        }
        case DistanceMetric::cross_entropy: {
          double ce = 0.0;
          for (std::size_t k = 0; k < dim; ++k)
            ce -= std::exp(logp[static_cast<std::size_t>(i)][k]) * logp[static_cast<std::size_t>(j)][k];
          v = -ce;
          break;
        }
      }
      d.at(i, j) = v;
    }
  }
  return d;
}

CollaborationMatrix collaboration_weights(const DistanceMatrix& d, double tau) {
  if (!(tau > 0.0)) throw ConfigError("softmax temperature must be positive");
  const int n = d.n;
  if (n < 1) throw UsageError("collaboration_weights: empty distance matrix");
  for (double v : d.values)
    if (!std::isfinite(v)) throw NumericError("collaboration_weights: non-finite distance");

  CollaborationMatrix c;
  c.n = n;
  c.values.assign(static_cast<std::size_t>(n) * n, 0.0);
  std::vector<double> expo(static_cast<std::size_t>(n));
  std::vector<double> sorted(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double m = d.at(i, 0);
    for (int j = 1; j < n; ++j) m = std::max(m, d.at(i, j));
    for (int j = 0; j < n; ++j) expo[static_cast<std::size_t>(j)] = std::exp((d.at(i, j) - m) / tau);
    // Value-ordered reduction: the row sum depends only on the multiset of
    // addends, so relabeling clients permutes the matrix bit for bit.
    sorted = expo;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (double v : sorted) sum += v;
    for (int j = 0; j < n; ++j) c.at(i, j) = expo[static_cast<std::size_t>(j)] / sum;
  }
  return c;
}

CollaborationMatrix uniform_collaboration(int n) {
  if (n < 1) throw UsageError("uniform_collaboration: need at least one client");
  CollaborationMatrix c;
  c.n = n;
  c.values.assign(static_cast<std::size_t>(n) * n, 1.0 / n);
  return c;
}

namespace {

// The one reduction kernel behind both aggregation flavors, so a uniform
// collaboration row and the plain mean execute identical floating-point ops.
std::vector<double> weighted_sum(const std::vector<nn::ParamVector>& params,
                                 std::span<const double> w) {
  std::vector<double> acc(params[0].size(), 0.0);
  for (std::size_t j = 0; j < params.size(); ++j) {
    const double wj = w[j];
    const std::vector<double>& src = params[j].values;
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += wj * src[k];
  }
  return acc;
}

void check_layouts(const std::vector<nn::ParamVector>& params, const char* who) {
  for (std::size_t j = 1; j < params.size(); ++j)
    if (!params[j].same_layout(params[0]) || params[j].size() != params[0].size())
      throw ShapeError(std::string(who) + ": client parameter layouts differ");
}

}  // namespace

std::vector<nn::ParamVector> aggregate_personalized(const std::vector<nn::ParamVector>& params,
                                                    const CollaborationMatrix& c,
                                                    bool include_running_stats) {
  const int n = static_cast<int>(params.size());
  if (n == 0) throw UsageError("aggregate_personalized: empty client list");
  if (c.n != n) throw ShapeError("aggregate_personalized: collaboration matrix size mismatch");
  check_layouts(params, "aggregate_personalized");

  std::vector<nn::ParamVector> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    nn::ParamVector& pv = out[static_cast<std::size_t>(i)];
    pv.layout = params[static_cast<std::size_t>(i)].layout;
    pv.values = weighted_sum(params, std::span<const double>(
                                         c.values.data() + static_cast<std::size_t>(i) * n,
                                         static_cast<std::size_t>(n)));
    if (!include_running_stats) {
      for (const nn::ParamSegment& s : pv.layout) {
        if (s.role != nn::ParamRole::run_mean && s.role != nn::ParamRole::run_var) continue;
        for (std::size_t k = 0; k < s.length; ++k)
          pv.values[s.offset + k] = params[static_cast<std::size_t>(i)].values[s.offset + k];
      }
    }
  }
  return out;
}

nn::ParamVector aggregate_fedavg(const std::vector<nn::ParamVector>& params) {
  if (params.empty()) throw UsageError("aggregate_fedavg: empty client list");
  check_layouts(params, "aggregate_fedavg");
  std::vector<double> w(params.size(), 1.0 / static_cast<double>(params.size()));
  nn::ParamVector out;
  out.layout = params[0].layout;
  out.values = weighted_sum(params, w);
  return out;
}

}  // namespace fedctta::agg
