#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "alignlens/checkpoint.hpp"
#include "alignlens/stats.hpp"

namespace alignlens {

struct NeuronWordLists {
  std::size_t layer = 0, head = 0, dim = 0;
  std::vector<TokenId> query_ids, key_ids;  // ranked, best first
  std::vector<double> query_scores, key_scores;
};

// Top-k vocabulary tokens by E_i[w] . Wq^h[:, d] (and Wk^h[:, d] for keys).
NeuronWordLists neuron_word_lists(const ModelBundle& bundle, std::size_t layer, std::size_t head,
                                  std::size_t d, std::size_t k);

// Lists for every dimension of one head, sharing the projection.
std::vector<NeuronWordLists> head_word_lists(const ModelBundle& bundle, std::size_t layer,
                                             std::size_t head, std::size_t k);

// mean + 1.96 * population sd of cos(word, r) over the reference words
// present in the table. std::nullopt when the word itself is missing.
std::optional<double> word_threshold(const EmbeddingTable& table, std::string_view word,
                                     const std::vector<std::string>& reference_words);

// Thresholds computed on first use and cached. Safe to share across threads.
class ThresholdTable {
 public:
  // Reference set: the first `reference_count` words of the table's frequency order.
  ThresholdTable(const EmbeddingTable& table, std::size_t reference_count = 1000);
  ThresholdTable(const EmbeddingTable& table, std::vector<std::string> reference_words);

  std::optional<double> threshold(std::string_view word) const;
  const EmbeddingTable& table() const { return *table_; }
  const std::vector<std::string>& reference_words() const { return reference_; }

 private:
  const EmbeddingTable* table_;
  std::vector<std::string> reference_;
  mutable std::mutex mutex_;
  mutable std::map<std::string, std::optional<double>, std::less<>> cache_;
};

struct WordPair {
  std::string query;
  std::string key;

  auto operator<=>(const WordPair&) const = default;
};

// (w_q, w_k) over the k x k cross product with cos(e_q, e_k) above
// max(theta_q, theta_k). Tokens are mapped through glove_key; pairs with a
// word missing from the table are skipped. Duplicates are dropped.
std::vector<WordPair> form_pairs(const NeuronWordLists& lists, const Vocabulary& vocab,
                                 const ThresholdTable& thresholds);

struct PairCount {
  WordPair pair;
  std::size_t frequency = 0;  // number of neurons producing the pair

  bool operator==(const PairCount&) const = default;
};

struct HeadPairProfile {
  std::size_t layer = 0, head = 0;
  std::vector<PairCount> pairs;                  // frequency desc, then pair order
  std::vector<std::vector<WordPair>> neuron_pairs;  // per dimension, before truncation
};

struct AttentionOptions {
  std::size_t k = 100;
  std::size_t top_n = 100;
  std::size_t workers = 1;
};

HeadPairProfile head_profile(const ModelBundle& bundle, std::size_t layer, std::size_t head,
                             const ThresholdTable& thresholds, std::size_t k, std::size_t top_n);

// Frequency ranking shared by head_profile: counts, sorts and truncates.
std::vector<PairCount> rank_pairs(const std::vector<std::vector<WordPair>>& neuron_pairs, std::size_t top_n);

struct ModelPairProfiles {
  std::size_t n_layers = 0, n_heads = 0;
  std::vector<HeadPairProfile> heads;  // layer-major

  const HeadPairProfile& at(std::size_t layer, std::size_t head) const { return heads[layer * n_heads + head]; }
};

ModelPairProfiles all_head_profiles(const ModelBundle& bundle, const ThresholdTable& thresholds,
                                    const AttentionOptions& options);

// e_a Wq Wk^T e_b^T from the D x D bilinear matrix.
double relation_score(const ModelBundle& bundle, std::size_t layer, std::size_t head,
                      std::string_view word_a, std::string_view word_b);
// Same quantity as sum_d (e_a . q_d)(e_b . k_d).
double relation_score_by_neuron(const ModelBundle& bundle, std::size_t layer, std::size_t head,
                                std::string_view word_a, std::string_view word_b);

// Jaccard overlap of the ordered pair sets. Throws when both are empty.
double intersection_rate(const std::vector<WordPair>& a, const std::vector<WordPair>& b);
double intersection_rate(const HeadPairProfile& a, const HeadPairProfile& b);

struct VerbCount {
  std::string verb;
  std::size_t band = 0;
  std::size_t heads_more = 0;
  std::size_t heads_less = 0;

  bool changed() const { return heads_more + heads_less > 0; }
  double proportion_more() const;  // percent; requires changed()
};

struct VerbHeadStats {
  std::size_t band_size = 8;
  std::size_t n_bands = 0;
  std::vector<std::string> verbs;
  std::vector<VerbCount> counts;  // band-major, verbs in input order

  const VerbCount& at(std::size_t band, std::size_t verb_index) const {
    return counts[band * verbs.size() + verb_index];
  }
};

// Number of pairs in the profile with the verb on either side.
std::size_t verb_pair_count(const HeadPairProfile& profile, std::string_view verb);

VerbHeadStats verb_head_stats(const ModelPairProfiles& pretrained, const ModelPairProfiles& tuned,
                              const std::vector<std::string>& verbs, std::size_t band_size);

struct VerbBandSummary {
  std::size_t verbs_counted = 0;  // verbs with at least one changed head
  double mean = 0.0;
  double sd = 0.0;  // sample sd over verbs
  std::vector<double> proportions;
};

VerbBandSummary summarize_verbs(const VerbHeadStats& stats, std::size_t band);

// Layer bands of `band_size` consecutive layers; the last may be shorter.
std::size_t band_count(std::size_t n_layers, std::size_t band_size);
std::string band_label(std::size_t band, std::size_t band_size, std::size_t n_layers);

// {"layer", "head", "pairs": [[wq, wk, freq], ...]}
std::string profile_json(const HeadPairProfile& profile);

}  // namespace alignlens
