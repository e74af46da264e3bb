#include "alignlens/runtime.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace alignlens {

namespace detail {

struct LayerCache {
  MatrixD x_in;  // block input
  std::vector<double> inv1, mean1;
  MatrixD a;  // norm1(x_in)
  std::vector<MatrixD> q, k, v;
  std::vector<MatrixD> attn;  // T x T, lower triangle used
  MatrixD cat;
  MatrixD y;  // after the attention residual
  std::vector<double> inv2, mean2;
  MatrixD b;  // norm2(y)
  MatrixD z, g;
};

struct ActivationCache {
  std::vector<LayerCache> layers;
  MatrixD x_final;
  std::vector<double> invf, meanf;
  MatrixD hidden;  // final_norm(x_final)
};

}  // namespace detail

namespace {

using detail::ActivationCache;
using detail::LayerCache;

// All reductions below accumulate in double from 0.0 in ascending index order.
// The reference forward pass in the test suite relies on that order.

void norm_row(std::span<const double> x, const NormParams& p, NormKind kind, double eps,
              std::span<double> out, double& inv, double& mean) {
  const std::size_t d = x.size();
  if (kind == NormKind::rmsnorm) {
    double ss = 0.0;
    for (std::size_t k = 0; k < d; ++k) ss += x[k] * x[k];
    inv = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
    mean = 0.0;
    for (std::size_t k = 0; k < d; ++k) out[k] = (x[k] * inv) * static_cast<double>(p.weight[k]);
    return;
  }
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += x[k];
  mean = s / static_cast<double>(d);
  double vs = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double c = x[k] - mean;
    vs += c * c;
  }
  inv = 1.0 / std::sqrt(vs / static_cast<double>(d) + eps);
  for (std::size_t k = 0; k < d; ++k) {
    out[k] = ((x[k] - mean) * inv) * static_cast<double>(p.weight[k]);
    if (!p.bias.empty()) out[k] += static_cast<double>(p.bias[k]);
  }
}

std::vector<double> norm_row_backward(std::span<const double> x, std::span<const double> dy,
                                      const NormParams& p, NormKind kind, double inv, double mean) {
  const std::size_t d = x.size();
  const double n = static_cast<double>(d);
  std::vector<double> dxhat(d), xhat(d), dx(d);
  for (std::size_t k = 0; k < d; ++k) {
    dxhat[k] = dy[k] * static_cast<double>(p.weight[k]);
    xhat[k] = (kind == NormKind::rmsnorm ? x[k] : x[k] - mean) * inv;
  }
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    m1 += dxhat[k];
    m2 += dxhat[k] * xhat[k];
  }
  m1 /= n;
  m2 /= n;
  for (std::size_t k = 0; k < d; ++k) {
    dx[k] = kind == NormKind::rmsnorm ? inv * (dxhat[k] - xhat[k] * m2)
                                      : inv * (dxhat[k] - m1 - xhat[k] * m2);
  }
  return dx;
}

double activate(Activation a, double x) {
  switch (a) {
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::gelu: return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    case Activation::silu: return x / (1.0 + std::exp(-x));
  }
  return x;
}

double activate_grad(Activation a, double x) {
  switch (a) {
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::gelu: {
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
      return 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)) + x * pdf;
    }
    case Activation::silu: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 + x * (1.0 - s));
    }
  }
  return 1.0;
}

// out[t][j] = sum_k in[t][k] * w[k][j]
MatrixD project(const MatrixD& in, const Matrix& w) {
  MatrixD out(in.rows(), w.cols());
  for (std::size_t t = 0; t < in.rows(); ++t) {
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < in.cols(); ++k) acc += in(t, k) * static_cast<double>(w(k, j));
      out(t, j) = acc;
    }
  }
  return out;
}

// out[t][f] = sum_k in[t][k] * w[f][k]
MatrixD project_transposed(const MatrixD& in, const Matrix& w) {
  MatrixD out(in.rows(), w.rows());
  for (std::size_t t = 0; t < in.rows(); ++t) {
    for (std::size_t f = 0; f < w.rows(); ++f) {
      double acc = 0.0;
      for (std::size_t k = 0; k < in.cols(); ++k) acc += in(t, k) * static_cast<double>(w(f, k));
      out(t, f) = acc;
    }
  }
  return out;
}

void norm_rows(const MatrixD& x, const NormParams& p, const ModelConfig& c, MatrixD& out,
               std::vector<double>& inv, std::vector<double>& mean) {
  out = MatrixD(x.rows(), x.cols());
  inv.assign(x.rows(), 0.0);
  mean.assign(x.rows(), 0.0);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    norm_row(x.row(t), p, c.norm_kind, c.norm_eps, out.row(t), inv[t], mean[t]);
  }
}

ActivationCache run_layers(const ModelBundle& bundle, const MatrixD& inputs) {
  const ModelConfig& c = bundle.config;
  const std::size_t T = inputs.rows();
  const double scale = c.effective_attn_scale();
  ActivationCache cache;
  cache.layers.resize(c.n_layers);
  MatrixD x = inputs;

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const LayerWeights& w = bundle.layers[l];
    LayerCache& lc = cache.layers[l];
    lc.x_in = x;
    norm_rows(x, w.norm1, c, lc.a, lc.inv1, lc.mean1);

    lc.cat = MatrixD(T, c.n_heads * c.d_head);
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      MatrixD q = project(lc.a, w.wq[h]);
      MatrixD k = project(lc.a, w.wk[h]);
      MatrixD v = project(lc.a, w.wv[h]);
      MatrixD attn(T, T);
      std::vector<double> s(T);
      for (std::size_t t = 0; t < T; ++t) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t u = 0; u <= t; ++u) {
          double dot = 0.0;
          for (std::size_t j = 0; j < c.d_head; ++j) dot += q(t, j) * k(u, j);
          s[u] = dot / scale;
          if (s[u] > mx) mx = s[u];
        }
        double sum = 0.0;
        for (std::size_t u = 0; u <= t; ++u) {
          s[u] = std::exp(s[u] - mx);
          sum += s[u];
        }
        for (std::size_t u = 0; u <= t; ++u) attn(t, u) = s[u] / sum;
        for (std::size_t j = 0; j < c.d_head; ++j) {
          double acc = 0.0;
          for (std::size_t u = 0; u <= t; ++u) acc += attn(t, u) * v(u, j);
          lc.cat(t, h * c.d_head + j) = acc;
        }
      }
      lc.q.push_back(std::move(q));
      lc.k.push_back(std::move(k));
      lc.v.push_back(std::move(v));
      lc.attn.push_back(std::move(attn));
    }

    const MatrixD attn_out = project(lc.cat, w.wo);
    lc.y = MatrixD(T, c.d_model);
    for (std::size_t i = 0; i < lc.y.size(); ++i) lc.y.data()[i] = x.data()[i] + attn_out.data()[i];

    norm_rows(lc.y, w.norm2, c, lc.b, lc.inv2, lc.mean2);
    lc.z = project_transposed(lc.b, w.wu);
    lc.g = MatrixD(lc.z.rows(), lc.z.cols());
    for (std::size_t i = 0; i < lc.z.size(); ++i) lc.g.data()[i] = activate(c.activation, lc.z.data()[i]);
    const MatrixD ffn_out = project(lc.g, w.wp);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = lc.y.data()[i] + ffn_out.data()[i];
  }

  cache.x_final = x;
  norm_rows(x, bundle.final_norm, c, cache.hidden, cache.invf, cache.meanf);
  return cache;
}

std::vector<double> vocab_probabilities(const ModelBundle& bundle, std::span<const double> hidden) {
  const Matrix& eo = bundle.output_embeddings;
  std::vector<double> p(eo.rows());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < eo.rows(); ++v) {
    double acc = 0.0;
    for (std::size_t k = 0; k < eo.cols(); ++k) acc += hidden[k] * static_cast<double>(eo(v, k));
    p[v] = acc;
    if (acc > mx) mx = acc;
  }
  double sum = 0.0;
  for (double& x : p) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : p) x /= sum;
  return p;
}

void check_ids(const ModelBundle& bundle, std::span<const TokenId> ids) {
  if (ids.empty()) throw ValidationError("empty context");
  if (ids.size() > bundle.config.max_context) {
    throw ValidationError("context length " + std::to_string(ids.size()) + " exceeds max_context " +
                          std::to_string(bundle.config.max_context));
  }
  for (TokenId id : ids) {
    if (id >= bundle.config.vocab_size) throw RangeError("token id " + std::to_string(id) + " out of range");
  }
}

void check_inputs(const ModelBundle& bundle, const MatrixD& inputs) {
  if (inputs.rows() == 0) throw ValidationError("empty context");
  if (inputs.cols() != bundle.config.d_model) throw DimensionError("input embeddings have wrong width");
  if (inputs.rows() > bundle.config.max_context) throw ValidationError("context exceeds max_context");
}

ForwardTrace make_trace(const ModelBundle& bundle, const MatrixD& inputs, std::vector<TokenId> ids) {
  auto cache = std::make_shared<ActivationCache>(run_layers(bundle, inputs));
  ForwardTrace trace;
  trace.context_ids = std::move(ids);
  trace.probabilities = Matrix(inputs.rows(), bundle.config.vocab_size);
  for (std::size_t t = 0; t < inputs.rows(); ++t) {
    const auto p = vocab_probabilities(bundle, cache->hidden.row(t));
    for (std::size_t v = 0; v < p.size(); ++v) trace.probabilities(t, v) = static_cast<float>(p[v]);
  }
  trace.cache = std::move(cache);
  return trace;
}

}  // namespace

MatrixD embed_tokens(const ModelBundle& bundle, std::span<const TokenId> ids,
                     std::optional<std::size_t> zeroed) {
  check_ids(bundle, ids);
  if (zeroed && *zeroed >= ids.size()) {
    throw RangeError("occluded position " + std::to_string(*zeroed) + " outside context of length " +
                     std::to_string(ids.size()));
  }
  const std::size_t d = bundle.config.d_model;
  MatrixD x(ids.size(), d);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (zeroed && *zeroed == t) continue;
    const auto row = bundle.input_embeddings.row(ids[t]);
    for (std::size_t k = 0; k < d; ++k) x(t, k) = static_cast<double>(row[k]);
  }
  return x;
}

ForwardTrace forward(const ModelBundle& bundle, std::span<const TokenId> ids) {
  const MatrixD x = embed_tokens(bundle, ids);
  return make_trace(bundle, x, std::vector<TokenId>(ids.begin(), ids.end()));
}

ForwardTrace forward_embeddings(const ModelBundle& bundle, const MatrixD& inputs) {
  check_inputs(bundle, inputs);
  return make_trace(bundle, inputs, {});
}

std::vector<double> probabilities_at(const ModelBundle& bundle, const MatrixD& inputs,
                                     std::span<const std::size_t> rows,
                                     std::span<const TokenId> targets) {
  check_inputs(bundle, inputs);
  if (rows.size() != targets.size()) throw DimensionError("probabilities_at: rows/targets mismatch");
  const ActivationCache cache = run_layers(bundle, inputs);
  std::vector<double> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= inputs.rows()) throw RangeError("probabilities_at: row out of range");
    if (targets[i] >= bundle.config.vocab_size) throw RangeError("target id out of range");
    out[i] = vocab_probabilities(bundle, cache.hidden.row(rows[i]))[targets[i]];
  }
  return out;
}

double occluded_prob(const ModelBundle& bundle, std::span<const TokenId> context,
                     std::optional<std::size_t> occluded, TokenId target) {
  if (target >= bundle.config.vocab_size) throw RangeError("target id out of range");
  const MatrixD x = embed_tokens(bundle, context, occluded);
  const std::size_t last = context.size() - 1;
  return probabilities_at(bundle, x, std::span<const std::size_t>(&last, 1),
                          std::span<const TokenId>(&target, 1))[0];
}

double next_token_prob(const ModelBundle& bundle, std::span<const TokenId> context, TokenId target) {
  return occluded_prob(bundle, context, std::nullopt, target);
}

EmbeddingGradient backprop(const ModelBundle& bundle, const ForwardTrace& trace, std::size_t position,
                           TokenId target, GradientTarget mode) {
  const ModelConfig& c = bundle.config;
  if (!trace.cache) throw ValidationError("backprop: trace carries no activation cache");
  const ActivationCache& cache = *trace.cache;
  const std::size_t full = cache.hidden.rows();
  if (position >= full) throw RangeError("backprop: position out of range");
  if (target >= c.vocab_size) throw RangeError("target id out of range");
  const std::size_t T = position + 1;
  const std::size_t D = c.d_model;
  const double scale = c.effective_attn_scale();

  // d(target score) / d logits
  const auto p = vocab_probabilities(bundle, cache.hidden.row(position));
  std::vector<double> dlogit(p.size(), 0.0);
  if (mode == GradientTarget::probability) {
    for (std::size_t j = 0; j < p.size(); ++j) dlogit[j] = -p[target] * p[j];
    dlogit[target] += p[target];
  } else {
    dlogit[target] = 1.0;
  }

  std::vector<double> dh(D, 0.0);
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (dlogit[j] == 0.0) continue;
    const auto row = bundle.output_embeddings.row(j);
    for (std::size_t k = 0; k < D; ++k) dh[k] += dlogit[j] * static_cast<double>(row[k]);
  }

  MatrixD dx(T, D);
  {
    const auto g = norm_row_backward(cache.x_final.row(position), dh, bundle.final_norm, c.norm_kind,
                                     cache.invf[position], cache.meanf[position]);
    std::copy(g.begin(), g.end(), dx.row(position).begin());
  }

  for (std::size_t l = c.n_layers; l-- > 0;) {
    const LayerWeights& w = bundle.layers[l];
    const LayerCache& lc = cache.layers[l];

    // x' = y + act(z) Wp, z = norm2(y) Wu^T
    MatrixD dy = dx;
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> dz(c.d_ffn);
      for (std::size_t f = 0; f < c.d_ffn; ++f) {
        double acc = 0.0;
        for (std::size_t k = 0; k < D; ++k) acc += dx(t, k) * static_cast<double>(w.wp(f, k));
        dz[f] = acc * activate_grad(c.activation, lc.z(t, f));
      }
      std::vector<double> db(D, 0.0);
      for (std::size_t f = 0; f < c.d_ffn; ++f) {
        if (dz[f] == 0.0) continue;
        for (std::size_t k = 0; k < D; ++k) db[k] += dz[f] * static_cast<double>(w.wu(f, k));
      }
      const auto g = norm_row_backward(lc.y.row(t), db, w.norm2, c.norm_kind, lc.inv2[t], lc.mean2[t]);
      for (std::size_t k = 0; k < D; ++k) dy(t, k) += g[k];
    }

    // y = x + cat Wo
    const std::size_t width = c.n_heads * c.d_head;
    MatrixD dcat(T, width);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i < width; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < D; ++k) acc += dy(t, k) * static_cast<double>(w.wo(i, k));
        dcat(t, i) = acc;
      }
    }

    MatrixD da(T, D);
    std::vector<double> dp(T);
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      const MatrixD& q = lc.q[h];
      const MatrixD& k = lc.k[h];
      const MatrixD& v = lc.v[h];
      const MatrixD& attn = lc.attn[h];
      MatrixD dq(T, c.d_head), dk(T, c.d_head), dv(T, c.d_head);
      for (std::size_t t = 0; t < T; ++t) {
        const double* dout = &dcat(t, h * c.d_head);
        double weighted = 0.0;
        for (std::size_t u = 0; u <= t; ++u) {
          double acc = 0.0;
          for (std::size_t j = 0; j < c.d_head; ++j) acc += dout[j] * v(u, j);
          dp[u] = acc;
          weighted += attn(t, u) * acc;
        }
        for (std::size_t u = 0; u <= t; ++u) {
          const double ds = attn(t, u) * (dp[u] - weighted) / scale;
          for (std::size_t j = 0; j < c.d_head; ++j) {
            dv(u, j) += attn(t, u) * dout[j];
            dq(t, j) += ds * k(u, j);
            dk(u, j) += ds * q(t, j);
          }
        }
      }
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t kk = 0; kk < D; ++kk) {
          double acc = 0.0;
          for (std::size_t j = 0; j < c.d_head; ++j) {
            acc += dq(t, j) * static_cast<double>(w.wq[h](kk, j)) +
                   dk(t, j) * static_cast<double>(w.wk[h](kk, j)) +
                   dv(t, j) * static_cast<double>(w.wv[h](kk, j));
          }
          da(t, kk) += acc;
        }
      }
    }

    MatrixD dprev = dy;
    for (std::size_t t = 0; t < T; ++t) {
      const auto g = norm_row_backward(lc.x_in.row(t), da.row(t), w.norm1, c.norm_kind, lc.inv1[t], lc.mean1[t]);
      for (std::size_t kk = 0; kk < D; ++kk) dprev(t, kk) += g[kk];
    }
    dx = std::move(dprev);
  }

  EmbeddingGradient out{MatrixD(full, D)};
  for (std::size_t t = 0; t < T; ++t) std::copy(dx.row(t).begin(), dx.row(t).end(), out.grads.row(t).begin());
  return out;
}

EmbeddingGradient embedding_gradient(const ModelBundle& bundle, std::span<const TokenId> context,
                                     TokenId target, GradientTarget mode) {
  if (target >= bundle.config.vocab_size) throw RangeError("target id out of range");
  const ForwardTrace trace = forward(bundle, context);
  return backprop(bundle, trace, context.size() - 1, target, mode);
}

std::vector<TokenId> generate_greedy(const ModelBundle& bundle, std::span<const TokenId> prompt,
                                     std::size_t max_new_tokens) {
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < max_new_tokens && seq.size() < bundle.config.max_context; ++i) {
    const MatrixD x = embed_tokens(bundle, seq);
    const ActivationCache cache = run_layers(bundle, x);
    const auto p = vocab_probabilities(bundle, cache.hidden.row(seq.size() - 1));
    const auto best = top_k(p, 1)[0];
    seq.push_back(static_cast<TokenId>(best));
    out.push_back(static_cast<TokenId>(best));
  }
  return out;
}

}  // namespace alignlens
