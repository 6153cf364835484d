#include "fedctta/model.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "fedctta/rng.hpp"

namespace fedctta::nn {

void ModelSpec::validate() const {
  if (input_dim < 1) throw ConfigError("model: input_dim must be >= 1");
  if (hidden_dims.empty())
    throw ConfigError("model: at least one hidden layer is required");
  for (int h : hidden_dims)
    if (h < 1) throw ConfigError("model: hidden layer widths must be >= 1");
  if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
  if (!(bn_momentum > 0.0 && bn_momentum < 1.0))
    throw ConfigError("model: bn_momentum must lie strictly in (0, 1)");
  if (!(bn_epsilon > 0.0)) throw ConfigError("model: bn_epsilon must be positive");
}

std::size_t ModelSpec::param_count() const {
  std::size_t total = 0;
  int in = input_dim;
  for (int h : hidden_dims) {
    total += static_cast<std::size_t>(h) * in + h;  // linear
    total += 4u * static_cast<std::size_t>(h);      // gamma, beta, run stats
    in = h;
  }
  total += static_cast<std::size_t>(num_classes) * in + num_classes;
  return total;
}

namespace {

std::vector<int> layer_dims(const ModelSpec& spec) {
  std::vector<int> dims;
  dims.reserve(spec.hidden_dims.size() + 2);
  dims.push_back(spec.input_dim);
  for (int h : spec.hidden_dims) dims.push_back(h);
  dims.push_back(spec.num_classes);
  return dims;
}

// Canonical segment order: per hidden layer weight, bias, gamma, beta,
// run_mean, run_var; then the output layer's weight and bias.
std::vector<ParamSegment> build_layout(const ModelSpec& spec, std::size_t* total_out) {
  std::vector<ParamSegment> layout;
  std::size_t offset = 0;
  auto add = [&](int layer, ParamRole role, std::size_t len) {
    layout.push_back({layer, role, offset, len});
    offset += len;
  };
  std::vector<int> dims = layer_dims(spec);
  const int H = spec.num_hidden();
  for (int l = 0; l < H; ++l) {
    std::size_t w = static_cast<std::size_t>(dims[l + 1]);
    add(l, ParamRole::weight, w * dims[l]);
    add(l, ParamRole::bias, w);
    add(l, ParamRole::gamma, w);
    add(l, ParamRole::beta, w);
    add(l, ParamRole::run_mean, w);
    add(l, ParamRole::run_var, w);
  }
  add(H, ParamRole::weight,
      static_cast<std::size_t>(dims[H + 1]) * dims[H]);
  add(H, ParamRole::bias, static_cast<std::size_t>(dims[H + 1]));
  if (total_out) *total_out = offset;
  return layout;
}

Matrix linear_forward(const LinearLayer& lin, const Matrix& in) {
  Matrix out(in.rows, lin.weight.rows);
  for (int i = 0; i < in.rows; ++i) {
    for (int j = 0; j < lin.weight.rows; ++j) {
      double s = lin.bias[static_cast<std::size_t>(j)];
      for (int k = 0; k < in.cols; ++k) s += in(i, k) * lin.weight(j, k);
      out(i, j) = s;
    }
  }
  return out;
}

// d_in = d_out * W   (n x out) * (out x in) -> (n x in)
Matrix linear_backward_input(const LinearLayer& lin, const Matrix& d_out) {
  Matrix d_in(d_out.rows, lin.weight.cols);
  for (int i = 0; i < d_out.rows; ++i) {
    for (int k = 0; k < lin.weight.cols; ++k) {
      double s = 0.0;
      for (int j = 0; j < lin.weight.rows; ++j) s += d_out(i, j) * lin.weight(j, k);
      d_in(i, k) = s;
    }
  }
  return d_in;
}

struct BnStats {
  std::vector<double> mean, var;
};

Matrix forward_core(const Model& m, const Batch& batch, StatsMode mode,
                    ForwardCache* cache, std::vector<BnStats>* commit_out) {
  const ModelSpec& spec = m.spec;
  if (batch.inputs.cols != spec.input_dim)
    throw ShapeError("forward: batch width " + std::to_string(batch.inputs.cols) +
                     ", expected " + std::to_string(spec.input_dim));
  const int n = batch.inputs.rows;
  if (n < 1) throw ShapeError("forward: empty batch");
  const bool use_batch_stats = mode != StatsMode::eval;
  if (use_batch_stats && n < 2)
    throw DegenerateVarianceError(
        "forward: adapting statistics needs a batch of at least 2 samples");
  const double alpha = use_batch_stats ? spec.bn_momentum : 0.0;
  const int H = spec.num_hidden();
  if (cache) {
    cache->mode = mode;
    cache->alpha_eff = alpha;
    cache->hidden.assign(static_cast<std::size_t>(H), {});
  }

  Matrix cur = batch.inputs;
  for (int l = 0; l < H; ++l) {
    Matrix x = linear_forward(m.linear[static_cast<std::size_t>(l)], cur);
    const BatchNormLayer& bn = m.bn[static_cast<std::size_t>(l)];
    const int w = static_cast<int>(bn.gamma.size());

    std::vector<double> batch_mean(static_cast<std::size_t>(w), 0.0);
    std::vector<double> use_mean(static_cast<std::size_t>(w));
    std::vector<double> use_var(static_cast<std::size_t>(w));
    if (use_batch_stats) {
      std::vector<double> batch_var(static_cast<std::size_t>(w), 0.0);
      for (int j = 0; j < w; ++j) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += x(i, j);
        batch_mean[static_cast<std::size_t>(j)] = s / n;
      }
      for (int j = 0; j < w; ++j) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
          double d = x(i, j) - batch_mean[static_cast<std::size_t>(j)];
          s += d * d;
        }
        batch_var[static_cast<std::size_t>(j)] = s / n;  // population variance
      }
      for (int j = 0; j < w; ++j) {
        use_mean[static_cast<std::size_t>(j)] =
            (1.0 - alpha) * bn.run_mean[static_cast<std::size_t>(j)] +
            alpha * batch_mean[static_cast<std::size_t>(j)];
        use_var[static_cast<std::size_t>(j)] =
            (1.0 - alpha) * bn.run_var[static_cast<std::size_t>(j)] +
            alpha * batch_var[static_cast<std::size_t>(j)];
      }
    } else {
      use_mean = bn.run_mean;
      use_var = bn.run_var;
      batch_mean = use_mean;
    }

    std::vector<double> inv_std(static_cast<std::size_t>(w));
    for (int j = 0; j < w; ++j)
      inv_std[static_cast<std::size_t>(j)] =
          1.0 / std::sqrt(use_var[static_cast<std::size_t>(j)] + spec.bn_epsilon);

    Matrix xhat(n, w), relu_in(n, w), act(n, w);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < w; ++j) {
        double xh = (x(i, j) - use_mean[static_cast<std::size_t>(j)]) *
                    inv_std[static_cast<std::size_t>(j)];
        xhat(i, j) = xh;
        double y = bn.gamma[static_cast<std::size_t>(j)] * xh +
                   bn.beta[static_cast<std::size_t>(j)];
        relu_in(i, j) = y;
        act(i, j) = y > 0.0 ? y : 0.0;
      }
    }

    if (commit_out) commit_out->push_back({use_mean, use_var});
    if (cache) {
      BnLayerCache& c = cache->hidden[static_cast<std::size_t>(l)];
      c.lin_in = cur;
      c.x = std::move(x);
      c.xhat = std::move(xhat);
      c.batch_mean = std::move(batch_mean);
      c.use_mean = std::move(use_mean);
      c.inv_std = std::move(inv_std);
      c.relu_in = std::move(relu_in);
    }
    cur = std::move(act);
  }

  Matrix logits = linear_forward(m.linear[static_cast<std::size_t>(H)], cur);
  if (cache) {
    cache->final_in = std::move(cur);
    cache->logits = logits;
  }
  return logits;
}

}  // namespace

Model init_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Model m;
  m.spec = spec;
  std::vector<int> dims = layer_dims(spec);
  const int H = spec.num_hidden();
  m.linear.resize(static_cast<std::size_t>(H) + 1);
  m.bn.resize(static_cast<std::size_t>(H));
  for (int l = 0; l <= H; ++l) {
    const int in = dims[static_cast<std::size_t>(l)];
    const int out = dims[static_cast<std::size_t>(l) + 1];
    Rng rng(derive_seed(seed, "init_linear", static_cast<std::uint64_t>(l)));
    LinearLayer& lin = m.linear[static_cast<std::size_t>(l)];
    lin.weight = Matrix(out, in);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : lin.weight.data) v = rng.next_uniform(-bound, bound);
    lin.bias.assign(static_cast<std::size_t>(out), 0.0);
  }
  for (int l = 0; l < H; ++l) {
    const std::size_t w = static_cast<std::size_t>(dims[static_cast<std::size_t>(l) + 1]);
    BatchNormLayer& bn = m.bn[static_cast<std::size_t>(l)];
    bn.gamma.assign(w, 1.0);
    bn.beta.assign(w, 0.0);
    bn.run_mean.assign(w, 0.0);
    bn.run_var.assign(w, 1.0);
  }
  return m;
}

Matrix forward(Model& model, const Batch& batch, StatsMode mode, ForwardCache* cache) {
  std::vector<BnStats> commit;
  Matrix logits = forward_core(model, batch, mode, cache,
                               mode == StatsMode::adapt ? &commit : nullptr);
  if (mode == StatsMode::adapt) {
    for (std::size_t l = 0; l < model.bn.size(); ++l) {
      model.bn[l].run_mean = std::move(commit[l].mean);
      model.bn[l].run_var = std::move(commit[l].var);
    }
  }
  return logits;
}

Matrix forward(const Model& model, const Batch& batch, StatsMode mode, ForwardCache* cache) {
  if (mode == StatsMode::adapt)
    throw UsageError("forward: adapt mode commits statistics and needs a mutable model");
  return forward_core(model, batch, mode, cache, nullptr);
}

double entropy_loss(const Model& model, const Batch& batch, StatsMode mode) {
  if (batch.size() < 1) throw UsageError("entropy_loss: empty batch");
  if (mode == StatsMode::adapt)
    throw UsageError("entropy_loss: read-only evaluation; use adapt_preview");
  Matrix logits = forward(model, batch, mode, nullptr);
  return mean_entropy_from_logits(logits);
}

ParamVector backward_from_logit_grad(const Model& model, const ForwardCache& cache,
                                     const Matrix& dlogits) {
  const ModelSpec& spec = model.spec;
  const int H = spec.num_hidden();
  if (static_cast<int>(cache.hidden.size()) != H || cache.logits.rows == 0)
    throw UsageError("backward: forward cache missing or stale");
  if (!dlogits.same_shape(cache.logits))
    throw ShapeError("backward: logit-gradient shape mismatch");
  const int n = dlogits.rows;
  const double alpha = cache.alpha_eff;

  std::size_t total = 0;
  ParamVector g;
  g.layout = build_layout(spec, &total);
  g.values.assign(total, 0.0);
  auto seg = [&](int layer, ParamRole role) -> double* {
    for (const ParamSegment& s : g.layout)
      if (s.layer == layer && s.role == role) return g.values.data() + s.offset;
    throw UsageError("backward: missing segment");
  };

  // Output layer.
  {
    const Matrix& fin = cache.final_in;
    double* dW = seg(H, ParamRole::weight);
    double* db = seg(H, ParamRole::bias);
    const int out = dlogits.cols, in = fin.cols;
    for (int j = 0; j < out; ++j) {
      double bs = 0.0;
      for (int i = 0; i < n; ++i) bs += dlogits(i, j);
      db[j] = bs;
      for (int k = 0; k < in; ++k) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += dlogits(i, j) * fin(i, k);
        dW[j * in + k] = s;
      }
    }
  }

  Matrix d = linear_backward_input(model.linear[static_cast<std::size_t>(H)], dlogits);

  for (int l = H - 1; l >= 0; --l) {
    const BnLayerCache& hc = cache.hidden[static_cast<std::size_t>(l)];
    const BatchNormLayer& bn = model.bn[static_cast<std::size_t>(l)];
    const int w = static_cast<int>(bn.gamma.size());

    // ReLU mask on the pre-activation.
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < w; ++j)
        if (hc.relu_in(i, j) <= 0.0) d(i, j) = 0.0;

    double* dgamma = seg(l, ParamRole::gamma);
    double* dbeta = seg(l, ParamRole::beta);
    for (int j = 0; j < w; ++j) {
      double sg = 0.0, sb = 0.0;
      for (int i = 0; i < n; ++i) {
        sg += d(i, j) * hc.xhat(i, j);
        sb += d(i, j);
      }
      dgamma[j] = sg;
      dbeta[j] = sb;
    }

    // Through the normalization. The statistics used are an EMA blend of the
    // stored running values (constants here) and the batch statistics, so the
    // batch-dependent terms carry a factor alpha; alpha = 0 reduces this to
    // the eval-mode pass-through.
    Matrix dx(n, w);
    for (int j = 0; j < w; ++j) {
      const double gam = bn.gamma[static_cast<std::size_t>(j)];
      const double istd = hc.inv_std[static_cast<std::size_t>(j)];
      const double sd = gam * dbeta[j];   // sum_i dL/dxhat_ij
      const double sdh = gam * dgamma[j]; // sum_i dL/dxhat_ij * xhat_ij
      const double bm = hc.batch_mean[static_cast<std::size_t>(j)];
      for (int i = 0; i < n; ++i) {
        const double dxh = d(i, j) * gam;
        dx(i, j) = istd * (dxh - (alpha / n) * sd -
                           (alpha / n) * (hc.x(i, j) - bm) * istd * sdh);
      }
    }

    double* dW = seg(l, ParamRole::weight);
    double* db = seg(l, ParamRole::bias);
    const Matrix& lin_in = hc.lin_in;
    const int in = lin_in.cols;
    for (int j = 0; j < w; ++j) {
      double bs = 0.0;
      for (int i = 0; i < n; ++i) bs += dx(i, j);
      db[j] = bs;
      for (int k = 0; k < in; ++k) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += dx(i, j) * lin_in(i, k);
        dW[j * in + k] = s;
      }
    }

    if (l > 0) d = linear_backward_input(model.linear[static_cast<std::size_t>(l)], dx);
  }

  return g;
}

ParamVector backward_entropy(const Model& model, const ForwardCache& cache) {
  const Matrix& z = cache.logits;
  if (z.rows == 0) throw UsageError("backward_entropy: forward cache required");
  const int n = z.rows, K = z.cols;
  Matrix dl(n, K);
  for (int i = 0; i < n; ++i) {
    std::vector<double> lp = log_softmax(z.row(i));
    double h = 0.0;
    for (double v : lp) h -= std::exp(v) * v;
    for (int j = 0; j < K; ++j) {
      double p = std::exp(lp[static_cast<std::size_t>(j)]);
      dl(i, j) = -p * (lp[static_cast<std::size_t>(j)] + h) / n;
    }
  }
  return backward_from_logit_grad(model, cache, dl);
}

ParamVector backward_cross_entropy(const Model& model, const ForwardCache& cache,
                                   const std::vector<int>& labels) {
  const Matrix& z = cache.logits;
  if (z.rows == 0) throw UsageError("backward_cross_entropy: forward cache required");
  const int n = z.rows, K = z.cols;
  if (static_cast<int>(labels.size()) != n)
    throw ShapeError("backward_cross_entropy: label count mismatch");
  Matrix dl(n, K);
  for (int i = 0; i < n; ++i) {
    int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= K) throw DomainError("backward_cross_entropy: label out of range");
    std::vector<double> p = softmax(z.row(i));
    for (int j = 0; j < K; ++j)
      dl(i, j) = (p[static_cast<std::size_t>(j)] - (j == y ? 1.0 : 0.0)) / n;
  }
  return backward_from_logit_grad(model, cache, dl);
}

ParamVector flatten(const Model& model) {
  const ModelSpec& spec = model.spec;
  std::size_t total = 0;
  ParamVector pv;
  pv.layout = build_layout(spec, &total);
  pv.values.resize(total);
  const int H = spec.num_hidden();
  for (const ParamSegment& s : pv.layout) {
    double* dst = pv.values.data() + s.offset;
    const std::size_t li = static_cast<std::size_t>(s.layer);
    switch (s.role) {
      case ParamRole::weight: {
        const Matrix& w = model.linear[li].weight;
        for (std::size_t k = 0; k < s.length; ++k) dst[k] = w.data[k];
        break;
      }
      case ParamRole::bias:
        for (std::size_t k = 0; k < s.length; ++k) dst[k] = model.linear[li].bias[k];
        break;
      case ParamRole::gamma:
        for (std::size_t k = 0; k < s.length; ++k) dst[k] = model.bn[li].gamma[k];
        break;
      case ParamRole::beta:
        for (std::size_t k = 0; k < s.length; ++k) dst[k] = model.bn[li].beta[k];
        break;
      case ParamRole::run_mean:
        for (std::size_t k = 0; k < s.length; ++k) dst[k] = model.bn[li].run_mean[k];
        break;
      case ParamRole::run_var:
        for (std::size_t k = 0; k < s.length; ++k) dst[k] = model.bn[li].run_var[k];
        break;
    }
  }
  (void)H;
  return pv;
}

Model unflatten(const ModelSpec& spec, const ParamVector& pv) {
  std::size_t total = 0;
  std::vector<ParamSegment> expected = build_layout(spec, &total);
  if (pv.layout != expected || pv.values.size() != total)
    throw ShapeError("unflatten: layout does not match the model spec");
  Model m = init_model(spec, 0);
  for (const ParamSegment& s : pv.layout) {
    const double* src = pv.values.data() + s.offset;
    const std::size_t li = static_cast<std::size_t>(s.layer);
    switch (s.role) {
      case ParamRole::weight:
        for (std::size_t k = 0; k < s.length; ++k) m.linear[li].weight.data[k] = src[k];
        break;
      case ParamRole::bias:
        for (std::size_t k = 0; k < s.length; ++k) m.linear[li].bias[k] = src[k];
        break;
      case ParamRole::gamma:
        for (std::size_t k = 0; k < s.length; ++k) m.bn[li].gamma[k] = src[k];
        break;
      case ParamRole::beta:
        for (std::size_t k = 0; k < s.length; ++k) m.bn[li].beta[k] = src[k];
        break;
      case ParamRole::run_mean:
        for (std::size_t k = 0; k < s.length; ++k) m.bn[li].run_mean[k] = src[k];
        break;
      case ParamRole::run_var:
        for (std::size_t k = 0; k < s.length; ++k) m.bn[li].run_var[k] = src[k];
        break;
    }
  }
  return m;
}

Model pretrain_source(Model model, const Dataset& clean, int epochs, double lr,
                      std::uint64_t seed, int batch_size) {
  if (clean.size() == 0) throw ConfigError("pretrain: empty dataset");
  if (static_cast<int>(clean.labels.size()) != clean.size())
    throw ShapeError("pretrain: labels required");
  if (epochs < 0) throw ConfigError("pretrain: negative epoch count");
  if (batch_size < 2) throw ConfigError("pretrain: batch_size must be >= 2");
  const int n = clean.size();
  const int d = clean.inputs.cols;
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  for (int e = 0; e < epochs; ++e) {
    Rng rng(derive_seed(seed, "pretrain_shuffle", static_cast<std::uint64_t>(e)));
    rng.shuffle(order);
    for (int s = 0; s < n; s += batch_size) {
      const int end = std::min(s + batch_size, n);
      if (end - s < 2) break;  // drop a trailing singleton
      Batch mb;
      mb.inputs = Matrix(end - s, d);
      mb.labels.resize(static_cast<std::size_t>(end - s));
      for (int i = s; i < end; ++i) {
        const int src = order[static_cast<std::size_t>(i)];
        for (int j = 0; j < d; ++j) mb.inputs(i - s, j) = clean.inputs(src, j);
        mb.labels[static_cast<std::size_t>(i - s)] =
            clean.labels[static_cast<std::size_t>(src)];
      }
      ForwardCache cache;
      forward(model, mb, StatsMode::adapt, &cache);
      ParamVector grads = backward_cross_entropy(model, cache, mb.labels);
      model = unflatten(model.spec, sgd_step(flatten(model), grads, lr));
    }
  }
  return model;
}

double dataset_accuracy(const Model& model, const Dataset& data) {
  if (data.size() == 0) throw UsageError("dataset_accuracy: empty dataset");
  Batch b{data.inputs, data.labels};
  Matrix logits = forward(model, b, StatsMode::eval, nullptr);
  std::vector<int> pred = argmax_rows(logits);
  int hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == data.labels[i]) ++hit;
  return static_cast<double>(hit) / data.size();
}

}  // namespace fedctta::nn
