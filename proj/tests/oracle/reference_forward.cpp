#include "reference_forward.hpp"

#include <cmath>
#include <numbers>

namespace oracle {

using alignlens::ModelBundle;
using alignlens::NormParams;
using alignlens::TokenId;
using Vec = std::vector<double>;

namespace {

Vec normalize(const Vec& x, const NormParams& p, const alignlens::ModelConfig& c) {
  const double d = static_cast<double>(x.size());
  Vec out(x.size());
  if (c.norm_kind == alignlens::NormKind::rmsnorm) {
    double ss = 0.0;
    for (double v : x) ss += v * v;
    const double inv = 1.0 / std::sqrt(ss / d + c.norm_eps);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] * inv) * double(p.weight[i]);
    return out;
  }
  double s = 0.0;
  for (double v : x) s += v;
  const double mu = s / d;
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  const double inv = 1.0 / std::sqrt(var / d + c.norm_eps);
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = ((x[i] - mu) * inv) * double(p.weight[i]);
    if (!p.bias.empty()) out[i] += double(p.bias[i]);
  }
  return out;
}

double act(alignlens::Activation a, double x) {
  if (a == alignlens::Activation::relu) return x > 0.0 ? x : 0.0;
  if (a == alignlens::Activation::gelu) return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  return x / (1.0 + std::exp(-x));
}

// v (length rows of w) times w.
Vec vec_mat(const Vec& v, const alignlens::Matrix& w) {
  Vec out(w.cols());
  for (std::size_t j = 0; j < w.cols(); ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < w.rows(); ++i) acc += v[i] * double(w(i, j));
    out[j] = acc;
  }
  return out;
}

}  // namespace

std::vector<double> reference_distribution_from(const ModelBundle& bundle, const std::vector<Vec>& inputs) {
  const auto& c = bundle.config;
  const double scale = c.effective_attn_scale();
  std::vector<Vec> xs = inputs;
  const std::size_t T = xs.size();

  for (const auto& layer : bundle.layers) {
    std::vector<Vec> normed(T);
    for (std::size_t t = 0; t < T; ++t) normed[t] = normalize(xs[t], layer.norm1, c);

    std::vector<Vec> heads_out(T, Vec(c.n_heads * c.d_head));
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      std::vector<Vec> q(T), k(T), v(T);
      for (std::size_t t = 0; t < T; ++t) {
        q[t] = vec_mat(normed[t], layer.wq[h]);
        k[t] = vec_mat(normed[t], layer.wk[h]);
        v[t] = vec_mat(normed[t], layer.wv[h]);
      }
      for (std::size_t t = 0; t < T; ++t) {
        Vec w(t + 1);
        double mx = -INFINITY;
        for (std::size_t u = 0; u <= t; ++u) {
          double dot = 0.0;
          for (std::size_t j = 0; j < c.d_head; ++j) dot += q[t][j] * k[u][j];
          w[u] = dot / scale;
          mx = std::max(mx, w[u]);
        }
        double z = 0.0;
        for (double& e : w) {
          e = std::exp(e - mx);
          z += e;
        }
        for (double& e : w) e = e / z;
        for (std::size_t j = 0; j < c.d_head; ++j) {
          double acc = 0.0;
          for (std::size_t u = 0; u <= t; ++u) acc += w[u] * v[u][j];
          heads_out[t][h * c.d_head + j] = acc;
        }
      }
    }

    for (std::size_t t = 0; t < T; ++t) {
      const Vec attn = vec_mat(heads_out[t], layer.wo);
      Vec y(c.d_model);
      for (std::size_t i = 0; i < c.d_model; ++i) y[i] = xs[t][i] + attn[i];
      const Vec b = normalize(y, layer.norm2, c);
      Vec g(c.d_ffn);
      for (std::size_t f = 0; f < c.d_ffn; ++f) {
        double acc = 0.0;
        for (std::size_t i = 0; i < c.d_model; ++i) acc += b[i] * double(layer.wu(f, i));
        g[f] = act(c.activation, acc);
      }
      const Vec ffn = vec_mat(g, layer.wp);
      for (std::size_t i = 0; i < c.d_model; ++i) xs[t][i] = y[i] + ffn[i];
    }
  }

  const Vec hidden = normalize(xs.back(), bundle.final_norm, c);
  const auto& eo = bundle.output_embeddings;
  Vec p(eo.rows());
  double mx = -INFINITY;
  for (std::size_t w = 0; w < eo.rows(); ++w) {
    double acc = 0.0;
    for (std::size_t i = 0; i < eo.cols(); ++i) acc += hidden[i] * double(eo(w, i));
    p[w] = acc;
    mx = std::max(mx, acc);
  }
  double z = 0.0;
  for (double& e : p) {
    e = std::exp(e - mx);
    z += e;
  }
  for (double& e : p) e /= z;
  return p;
}

std::vector<double> reference_distribution(const ModelBundle& bundle, const std::vector<TokenId>& context,
                                           std::optional<std::size_t> zeroed) {
  std::vector<Vec> inputs;
  for (std::size_t t = 0; t < context.size(); ++t) {
    Vec row(bundle.config.d_model, 0.0);
    if (!(zeroed && *zeroed == t)) {
      for (std::size_t i = 0; i < row.size(); ++i) row[i] = double(bundle.input_embeddings(context[t], i));
    }
    inputs.push_back(std::move(row));
  }
  return reference_distribution_from(bundle, inputs);
}

double reference_prob(const ModelBundle& bundle, const std::vector<TokenId>& context,
                      std::optional<std::size_t> zeroed, TokenId target) {
  return reference_distribution(bundle, context, zeroed)[target];
}

}  // namespace oracle
