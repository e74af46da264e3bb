#include "alignlens/ffn.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "alignlens/attention.hpp"
#include "alignlens/error.hpp"
#include "alignlens/parallel.hpp"
#include "alignlens/tensor.hpp"
#include "json.hpp"

namespace alignlens {

MatrixD centralize(const MatrixD& w) {
  MatrixD out = w;
  for (std::size_t c = 0; c < w.cols(); ++c) {
    double sum = 0.0;
    for (std::size_t r = 0; r < w.rows(); ++r) sum += w(r, c);
    const double m = w.rows() ? sum / static_cast<double>(w.rows()) : 0.0;
    for (std::size_t r = 0; r < w.rows(); ++r) out(r, c) = w(r, c) - m;
  }
  return out;
}

MatrixD centralize(const Matrix& w) { return centralize(w.cast<double>()); }

MatrixD covariance(const MatrixD& centered) {
  const std::size_t d = centered.cols();
  MatrixD c(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < centered.rows(); ++r) acc += centered(r, i) * centered(r, j);
      c(i, j) = acc;
      c(j, i) = acc;
    }
  }
  return c;
}

void canonicalize_signs(MatrixD& vectors) {
  for (std::size_t c = 0; c < vectors.cols(); ++c) {
    std::size_t best = 0;
    for (std::size_t r = 1; r < vectors.rows(); ++r) {
      if (std::abs(vectors(r, c)) > std::abs(vectors(best, c))) best = r;
    }
    if (vectors.rows() && vectors(best, c) < 0.0) {
      for (std::size_t r = 0; r < vectors.rows(); ++r) vectors(r, c) = -vectors(r, c);
    }
  }
}

double VarianceCurve::at(std::size_t rank) const {
  if (cumulative.empty()) throw ValidationError("empty variance curve");
  if (rank == 0) return 0.0;
  return cumulative[std::min(rank, cumulative.size()) - 1];
}

double LayerPca::explained_ratio(std::size_t rank) const {
  double total = 0.0;
  for (double l : eigenvalues) total += std::max(l, 0.0);
  if (!(total > 0.0)) return 0.0;
  return std::max(eigenvalues.at(rank), 0.0) / total;
}

std::vector<double> LayerPca::direction(std::size_t rank) const { return directions.column(rank); }

LayerPca ffn_pca(const ModelBundle& bundle, std::size_t layer) {
  if (layer >= bundle.config.n_layers) throw RangeError("layer " + std::to_string(layer) + " out of range");
  const MatrixD cov = covariance(centralize(bundle.layers[layer].wp));
  EigenResult eig = symmetric_eig(cov);
  LayerPca pca;
  pca.layer = layer;
  pca.eigenvalues = std::move(eig.eigenvalues);
  pca.directions = std::move(eig.eigenvectors);
  pca.sweeps = eig.sweeps;
  canonicalize_signs(pca.directions);

  // Round-off can leave the smallest eigenvalues marginally negative.
  double total = 0.0;
  for (double l : pca.eigenvalues) total += std::max(l, 0.0);
  pca.curve.layer = layer;
  pca.curve.cumulative.resize(pca.eigenvalues.size());
  double run = 0.0;
  for (std::size_t r = 0; r < pca.eigenvalues.size(); ++r) {
    run += std::max(pca.eigenvalues[r], 0.0);
    pca.curve.cumulative[r] = total > 0.0 ? std::min(1.0, run / total) : 0.0;
  }
  if (total > 0.0) pca.curve.cumulative.back() = 1.0;
  return pca;
}

std::vector<LayerPca> all_layer_pca(const ModelBundle& bundle, std::size_t workers) {
  std::vector<LayerPca> out(bundle.config.n_layers);
  parallel_for(out.size(), workers, [&](std::size_t l) { out[l] = ffn_pca(bundle, l); });
  return out;
}

ProjectionVocab full_projection_vocab(const ModelBundle& bundle) {
  ProjectionVocab pv;
  const Matrix& eo = bundle.output_embeddings;
  const std::size_t first = 2;  // <unk>, <bos>
  pv.vectors = MatrixD(eo.rows() - first, eo.cols());
  for (std::size_t id = first; id < eo.rows(); ++id) {
    pv.words.push_back(bundle.vocabulary.token(static_cast<TokenId>(id)));
    pv.ids.push_back(static_cast<TokenId>(id));
    for (std::size_t k = 0; k < eo.cols(); ++k) pv.vectors(id - first, k) = eo(id, k);
  }
  return pv;
}

ProjectionVocab filtered_projection_vocab(const ModelBundle& bundle, const std::vector<std::string>& filter) {
  ProjectionVocab pv;
  const Matrix& eo = bundle.output_embeddings;
  std::vector<std::vector<double>> rows;
  for (const auto& word : filter) {
    const auto ids = tokenize(bundle.vocabulary, word);
    if (ids.empty() || std::count(ids.begin(), ids.end(), Vocabulary::kUnk)) continue;
    std::vector<double> v(eo.cols(), 0.0);
    for (TokenId id : ids)
      for (std::size_t k = 0; k < eo.cols(); ++k) v[k] += eo(id, k);
    for (double& x : v) x /= static_cast<double>(ids.size());
    pv.words.push_back(word);
    pv.ids.push_back(ids.front());
    rows.push_back(std::move(v));
  }
  if (rows.empty()) throw ValidationError("vocabulary filter leaves no candidate words");
  pv.vectors = MatrixD(rows.size(), eo.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), pv.vectors.row(i).begin());
  return pv;
}

std::vector<WordScore> component_words(const ProjectionVocab& candidates, std::span<const double> direction,
                                       std::size_t k) {
  if (k == 0) throw ValidationError("component_words: k must be at least 1");
  if (candidates.words.empty()) throw ValidationError("component_words: no candidate words");
  if (direction.size() != candidates.vectors.cols()) throw DimensionError("component_words: direction width");
  std::vector<double> scores(candidates.words.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < direction.size(); ++j) acc += direction[j] * candidates.vectors(i, j);
    scores[i] = acc;
  }
  std::vector<WordScore> out;
  for (std::size_t i : top_k(scores, std::min(k, scores.size()))) out.push_back({candidates.words[i], scores[i]});
  return out;
}

std::vector<ConceptComponent> layer_components(const LayerPca& pca, const ProjectionVocab& candidates,
                                               std::size_t max_rank, std::size_t k, bool with_negated) {
  std::vector<ConceptComponent> out;
  const std::size_t n = std::min(max_rank, pca.eigenvalues.size());
  for (std::size_t r = 0; r < n; ++r) {
    ConceptComponent c;
    c.layer = pca.layer;
    c.rank = r;
    c.eigenvalue = pca.eigenvalues[r];
    c.explained_ratio = pca.explained_ratio(r);
    c.direction = pca.direction(r);
    c.top_words = component_words(candidates, c.direction, k);
    if (with_negated) {
      std::vector<double> neg(c.direction.size());
      std::transform(c.direction.begin(), c.direction.end(), neg.begin(), [](double x) { return -x; });
      c.negated_words = component_words(candidates, neg, k);
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<BandSummary> layer_group_summary(const std::vector<VarianceCurve>& curves, std::size_t rank_r,
                                             std::size_t group_size, const std::vector<LayerLabel>& labels) {
  std::size_t n_layers = 0;
  for (const auto& c : curves) n_layers = std::max(n_layers, c.layer + 1);
  for (const auto& l : labels) n_layers = std::max(n_layers, l.layer + 1);
  const std::size_t n_bands = band_count(n_layers, group_size);
  std::vector<BandSummary> out(n_bands);
  std::vector<std::size_t> curve_count(n_bands, 0), label_count(n_bands, 0);
  for (std::size_t b = 0; b < n_bands; ++b) {
    out[b].band = b;
    out[b].label = band_label(b, group_size, n_layers);
  }
  for (const auto& c : curves) {
    const std::size_t b = c.layer / group_size;
    out[b].mean_variance_at_rank += c.at(rank_r);
    ++curve_count[b];
  }
  for (const auto& l : labels) {
    const std::size_t b = l.layer / group_size;
    out[b].category_percent[l.category] += 1.0;
    ++label_count[b];
  }
  for (std::size_t b = 0; b < n_bands; ++b) {
    if (curve_count[b]) out[b].mean_variance_at_rank /= static_cast<double>(curve_count[b]);
    for (auto& [cat, v] : out[b].category_percent) v = 100.0 * v / static_cast<double>(label_count[b]);
  }
  return out;
}

std::string components_json(std::size_t layer, const std::vector<ConceptComponent>& components) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["layer"] = layer;
  auto arr = ordered_json::array();
  for (const auto& c : components) {
    ordered_json e;
    e["rank"] = c.rank;
    e["eigenvalue"] = c.eigenvalue;
    e["explained_ratio"] = c.explained_ratio;
    auto words = ordered_json::array();
    for (const auto& w : c.top_words) words.push_back({{"word", w.word}, {"projection", w.projection}});
    e["words"] = words;
    if (!c.negated_words.empty()) {
      auto neg = ordered_json::array();
      for (const auto& w : c.negated_words) neg.push_back({{"word", w.word}, {"projection", w.projection}});
      e["negated_words"] = neg;
    }
    arr.push_back(std::move(e));
  }
  j["components"] = arr;
  return j.dump(2) + "\n";
}

std::string variance_curve_csv(const VarianceCurve& curve) {
  std::ostringstream os;
  os.precision(17);
  os << "rank,cumulative\n";
  for (std::size_t r = 0; r < curve.cumulative.size(); ++r) os << r + 1 << ',' << curve.cumulative[r] << '\n';
  return os.str();
}

}  // namespace alignlens
