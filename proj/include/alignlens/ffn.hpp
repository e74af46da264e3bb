#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "alignlens/checkpoint.hpp"

namespace alignlens {

// Subtracts each column's mean (accumulated in double).
MatrixD centralize(const Matrix& w);
MatrixD centralize(const MatrixD& w);

// W^T W for a centralized D'' x D matrix.
MatrixD covariance(const MatrixD& centered);

// Flips each column so that its largest-magnitude entry is positive (the
// earliest such entry on ties).
void canonicalize_signs(MatrixD& vectors);

struct VarianceCurve {
  std::size_t layer = 0;
  std::vector<double> cumulative;  // c_r for r = 1..D

  // c_R, with R clamped to D.
  double at(std::size_t rank) const;
};

struct LayerPca {
  std::size_t layer = 0;
  std::vector<double> eigenvalues;  // descending
  MatrixD directions;               // D x D, column r pairs with eigenvalues[r]
  VarianceCurve curve;
  std::size_t sweeps = 0;

  double explained_ratio(std::size_t rank) const;
  std::vector<double> direction(std::size_t rank) const;
};

// PCA of the layer's value projection W_p.
LayerPca ffn_pca(const ModelBundle& bundle, std::size_t layer);
std::vector<LayerPca> all_layer_pca(const ModelBundle& bundle, std::size_t workers);

// Candidate words for projection, each with an output-embedding vector.
struct ProjectionVocab {
  std::vector<std::string> words;
  std::vector<TokenId> ids;  // token id for single-token words, first sub-token otherwise
  MatrixD vectors;           // words.size() x D
};

// Every non-reserved token of the vocabulary.
ProjectionVocab full_projection_vocab(const ModelBundle& bundle);
// Words from `filter`; a word spanning several tokens uses the mean of their
// E_o rows, and words that need <unk> are dropped.
ProjectionVocab filtered_projection_vocab(const ModelBundle& bundle, const std::vector<std::string>& filter);

struct WordScore {
  std::string word;
  double projection = 0.0;

  bool operator==(const WordScore&) const = default;
};

// Top-k candidates by direction . vector, ties in candidate order.
std::vector<WordScore> component_words(const ProjectionVocab& candidates, std::span<const double> direction,
                                       std::size_t k);

struct ConceptComponent {
  std::size_t layer = 0;
  std::size_t rank = 0;  // 0-based
  double eigenvalue = 0.0;
  double explained_ratio = 0.0;
  std::vector<double> direction;
  std::vector<WordScore> top_words;
  std::vector<WordScore> negated_words;  // filled on request
};

std::vector<ConceptComponent> layer_components(const LayerPca& pca, const ProjectionVocab& candidates,
                                               std::size_t max_rank, std::size_t k, bool with_negated = false);

struct LayerLabel {
  std::size_t layer = 0;
  std::string category;
};

struct BandSummary {
  std::size_t band = 0;
  std::string label;                        // "1-4"
  double mean_variance_at_rank = 0.0;       // mean c_R over the band's layers
  std::map<std::string, double> category_percent;  // over labels of the band's layers
};

std::vector<BandSummary> layer_group_summary(const std::vector<VarianceCurve>& curves, std::size_t rank_r,
                                             std::size_t group_size,
                                             const std::vector<LayerLabel>& labels = {});

// {"layer", "components": [{rank, eigenvalue, explained_ratio, words: [{word, projection}]}]}
std::string components_json(std::size_t layer, const std::vector<ConceptComponent>& components);
// "rank,cumulative" lines
std::string variance_curve_csv(const VarianceCurve& curve);

}  // namespace alignlens
