#include "alignlens/attention.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "alignlens/error.hpp"
#include "alignlens/parallel.hpp"
#include "alignlens/tensor.hpp"
#include "json.hpp"

namespace alignlens {

namespace {

void check_head(const ModelBundle& bundle, std::size_t layer, std::size_t head) {
  if (layer >= bundle.config.n_layers) throw RangeError("layer " + std::to_string(layer) + " out of range");
  if (head >= bundle.config.n_heads) throw RangeError("head " + std::to_string(head) + " out of range");
}

// |V| x D' scores E_i W for one projection.
MatrixD vocab_projection(const ModelBundle& bundle, const Matrix& w) {
  const Matrix& e = bundle.input_embeddings;
  MatrixD out(e.rows(), w.cols());
  for (std::size_t v = 0; v < e.rows(); ++v) {
    for (std::size_t d = 0; d < w.cols(); ++d) {
      double acc = 0.0;
      for (std::size_t i = 0; i < e.cols(); ++i) acc += static_cast<double>(e(v, i)) * static_cast<double>(w(i, d));
      out(v, d) = acc;
    }
  }
  return out;
}

void fill_ranked(const MatrixD& scores, std::size_t d, std::size_t k, std::vector<TokenId>& ids,
                 std::vector<double>& values) {
  const std::vector<double> col = scores.column(d);
  for (std::size_t i : top_k(col, k)) {
    ids.push_back(static_cast<TokenId>(i));
    values.push_back(col[i]);
  }
}

TokenId require_token(const ModelBundle& bundle, std::string_view word) {
  const auto id = bundle.vocabulary.find(word);
  if (!id) throw ValidationError("word '" + std::string(word) + "' not in model vocabulary");
  return *id;
}

}  // namespace

std::vector<NeuronWordLists> head_word_lists(const ModelBundle& bundle, std::size_t layer,
                                             std::size_t head, std::size_t k) {
  check_head(bundle, layer, head);
  if (k > bundle.config.vocab_size) throw RangeError("k exceeds vocabulary size");
  const MatrixD qs = vocab_projection(bundle, bundle.layers[layer].wq[head]);
  const MatrixD ks = vocab_projection(bundle, bundle.layers[layer].wk[head]);
  std::vector<NeuronWordLists> out(bundle.config.d_head);
  for (std::size_t d = 0; d < out.size(); ++d) {
    auto& l = out[d];
    l.layer = layer;
    l.head = head;
    l.dim = d;
    fill_ranked(qs, d, k, l.query_ids, l.query_scores);
    fill_ranked(ks, d, k, l.key_ids, l.key_scores);
  }
  return out;
}

NeuronWordLists neuron_word_lists(const ModelBundle& bundle, std::size_t layer, std::size_t head,
                                  std::size_t d, std::size_t k) {
  check_head(bundle, layer, head);
  if (d >= bundle.config.d_head) throw RangeError("neuron index " + std::to_string(d) + " out of range");
  if (k > bundle.config.vocab_size) throw RangeError("k exceeds vocabulary size");
  NeuronWordLists l;
  l.layer = layer;
  l.head = head;
  l.dim = d;
  fill_ranked(vocab_projection(bundle, bundle.layers[layer].wq[head]), d, k, l.query_ids, l.query_scores);
  fill_ranked(vocab_projection(bundle, bundle.layers[layer].wk[head]), d, k, l.key_ids, l.key_scores);
  return l;
}

std::optional<double> word_threshold(const EmbeddingTable& table, std::string_view word,
                                     const std::vector<std::string>& reference_words) {
  const auto e = table.find(word);
  if (!e) return std::nullopt;
  std::vector<double> cos;
  cos.reserve(reference_words.size());
  for (const auto& r : reference_words) {
    if (const auto er = table.find(r)) cos.push_back(cosine(*e, *er));
  }
  if (cos.size() < 2) throw ValidationError("word_threshold: fewer than two reference words in table");
  return mean(cos) + 1.96 * population_sd(cos);
}

ThresholdTable::ThresholdTable(const EmbeddingTable& table, std::size_t reference_count) : table_(&table) {
  const auto& order = table.frequency_order();
  reference_.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(reference_count, order.size())));
}

ThresholdTable::ThresholdTable(const EmbeddingTable& table, std::vector<std::string> reference_words)
    : table_(&table), reference_(std::move(reference_words)) {}

std::optional<double> ThresholdTable::threshold(std::string_view word) const {
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(word); it != cache_.end()) return it->second;
  }
  const auto value = word_threshold(*table_, word, reference_);
  std::lock_guard lock(mutex_);
  cache_.emplace(std::string(word), value);
  return value;
}

std::vector<WordPair> form_pairs(const NeuronWordLists& lists, const Vocabulary& vocab,
                                 const ThresholdTable& thresholds) {
  const EmbeddingTable& table = thresholds.table();
  struct Side {
    std::string word;
    std::span<const float> vec;
    double theta;
  };
  auto resolve = [&](const std::vector<TokenId>& ids) {
    std::vector<Side> out;
    for (TokenId id : ids) {
      std::string key = glove_key(vocab.token(id));
      if (key.empty()) continue;
      const auto vec = table.find(key);
      if (!vec) continue;
      out.push_back({key, *vec, *thresholds.threshold(key)});
    }
    return out;
  };
  const auto qs = resolve(lists.query_ids);
  const auto ks = resolve(lists.key_ids);

  std::vector<WordPair> pairs;
  std::set<WordPair> seen;
  for (const auto& q : qs) {
    for (const auto& k : ks) {
      if (cosine(q.vec, k.vec) > std::max(q.theta, k.theta)) {
        WordPair p{q.word, k.word};
        if (seen.insert(p).second) pairs.push_back(std::move(p));
      }
    }
  }
  return pairs;
}

std::vector<PairCount> rank_pairs(const std::vector<std::vector<WordPair>>& neuron_pairs, std::size_t top_n) {
  std::map<WordPair, std::size_t> freq;
  for (const auto& pairs : neuron_pairs) {
    std::set<WordPair> unique(pairs.begin(), pairs.end());
    for (const auto& p : unique) ++freq[p];
  }
  std::vector<PairCount> ranked;
  ranked.reserve(freq.size());
  for (const auto& [p, f] : freq) ranked.push_back({p, f});
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const PairCount& a, const PairCount& b) { return a.frequency > b.frequency; });
  if (ranked.size() > top_n) ranked.resize(top_n);
  return ranked;
}

HeadPairProfile head_profile(const ModelBundle& bundle, std::size_t layer, std::size_t head,
                             const ThresholdTable& thresholds, std::size_t k, std::size_t top_n) {
  HeadPairProfile prof;
  prof.layer = layer;
  prof.head = head;
  for (const auto& lists : head_word_lists(bundle, layer, head, k)) {
    prof.neuron_pairs.push_back(form_pairs(lists, bundle.vocabulary, thresholds));
  }
  prof.pairs = rank_pairs(prof.neuron_pairs, top_n);
  return prof;
}

ModelPairProfiles all_head_profiles(const ModelBundle& bundle, const ThresholdTable& thresholds,
                                    const AttentionOptions& options) {
  ModelPairProfiles out;
  out.n_layers = bundle.config.n_layers;
  out.n_heads = bundle.config.n_heads;
  out.heads.resize(out.n_layers * out.n_heads);
  parallel_for(out.heads.size(), options.workers, [&](std::size_t i) {
    out.heads[i] = head_profile(bundle, i / out.n_heads, i % out.n_heads, thresholds, options.k, options.top_n);
  });
  return out;
}

double relation_score(const ModelBundle& bundle, std::size_t layer, std::size_t head,
                      std::string_view word_a, std::string_view word_b) {
  check_head(bundle, layer, head);
  const auto ea = bundle.input_embeddings.row(require_token(bundle, word_a));
  const auto eb = bundle.input_embeddings.row(require_token(bundle, word_b));
  const Matrix& wq = bundle.layers[layer].wq[head];
  const Matrix& wk = bundle.layers[layer].wk[head];
  const MatrixD bilinear = matmul(wq.cast<double>(), transpose(wk.cast<double>()));
  double score = 0.0;
  for (std::size_t i = 0; i < bilinear.rows(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < bilinear.cols(); ++j) row += bilinear(i, j) * eb[j];
    score += static_cast<double>(ea[i]) * row;
  }
  return score;
}

double relation_score_by_neuron(const ModelBundle& bundle, std::size_t layer, std::size_t head,
                                std::string_view word_a, std::string_view word_b) {
  check_head(bundle, layer, head);
  const auto ea = bundle.input_embeddings.row(require_token(bundle, word_a));
  const auto eb = bundle.input_embeddings.row(require_token(bundle, word_b));
  const Matrix& wq = bundle.layers[layer].wq[head];
  const Matrix& wk = bundle.layers[layer].wk[head];
  double score = 0.0;
  for (std::size_t d = 0; d < wq.cols(); ++d) {
    double q = 0.0, k = 0.0;
    for (std::size_t i = 0; i < wq.rows(); ++i) {
      q += static_cast<double>(ea[i]) * wq(i, d);
      k += static_cast<double>(eb[i]) * wk(i, d);
    }
    score += q * k;
  }
  return score;
}

double intersection_rate(const std::vector<WordPair>& a, const std::vector<WordPair>& b) {
  const std::set<WordPair> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  if (sa.empty() && sb.empty()) throw ValidationError("intersection_rate: both pair sets are empty");
  std::size_t common = 0;
  for (const auto& p : sa) common += sb.count(p);
  return static_cast<double>(common) / static_cast<double>(sa.size() + sb.size() - common);
}

double intersection_rate(const HeadPairProfile& a, const HeadPairProfile& b) {
  std::vector<WordPair> pa, pb;
  for (const auto& p : a.pairs) pa.push_back(p.pair);
  for (const auto& p : b.pairs) pb.push_back(p.pair);
  return intersection_rate(pa, pb);
}

double VerbCount::proportion_more() const {
  if (!changed()) throw ValidationError("proportion_more: verb '" + verb + "' has no changed heads");
  return 100.0 * static_cast<double>(heads_more) / static_cast<double>(heads_more + heads_less);
}

std::size_t verb_pair_count(const HeadPairProfile& profile, std::string_view verb) {
  std::size_t n = 0;
  for (const auto& p : profile.pairs) {
    if (p.pair.query == verb || p.pair.key == verb) ++n;
  }
  return n;
}

std::size_t band_count(std::size_t n_layers, std::size_t band_size) {
  if (band_size == 0) throw ValidationError("band size must be positive");
  return (n_layers + band_size - 1) / band_size;
}

std::string band_label(std::size_t band, std::size_t band_size, std::size_t n_layers) {
  const std::size_t first = band * band_size + 1;
  const std::size_t last = std::min(n_layers, first + band_size - 1);
  return std::to_string(first) + "-" + std::to_string(last);
}

VerbHeadStats verb_head_stats(const ModelPairProfiles& pretrained, const ModelPairProfiles& tuned,
                              const std::vector<std::string>& verbs, std::size_t band_size) {
  if (verbs.empty()) throw ValidationError("verb_head_stats: verb list is empty");
  if (pretrained.n_layers != tuned.n_layers || pretrained.n_heads != tuned.n_heads) {
    throw DimensionError("verb_head_stats: profiles come from different architectures");
  }
  VerbHeadStats stats;
  stats.band_size = band_size;
  stats.n_bands = band_count(pretrained.n_layers, band_size);
  for (const auto& v : verbs) stats.verbs.push_back(to_lower_ascii(v));
  stats.counts.resize(stats.n_bands * verbs.size());
  for (std::size_t b = 0; b < stats.n_bands; ++b) {
    for (std::size_t i = 0; i < verbs.size(); ++i) {
      auto& c = stats.counts[b * verbs.size() + i];
      c.verb = stats.verbs[i];
      c.band = b;
    }
  }
  for (std::size_t l = 0; l < pretrained.n_layers; ++l) {
    const std::size_t b = l / band_size;
    for (std::size_t h = 0; h < pretrained.n_heads; ++h) {
      for (std::size_t i = 0; i < verbs.size(); ++i) {
        const std::size_t before = verb_pair_count(pretrained.at(l, h), stats.verbs[i]);
        const std::size_t after = verb_pair_count(tuned.at(l, h), stats.verbs[i]);
        auto& c = stats.counts[b * verbs.size() + i];
        if (after > before) ++c.heads_more;
        if (after < before) ++c.heads_less;
      }
    }
  }
  return stats;
}

VerbBandSummary summarize_verbs(const VerbHeadStats& stats, std::size_t band) {
  if (band >= stats.n_bands) throw RangeError("band out of range");
  VerbBandSummary s;
  for (std::size_t i = 0; i < stats.verbs.size(); ++i) {
    const auto& c = stats.at(band, i);
    if (c.changed()) s.proportions.push_back(c.proportion_more());
  }
  s.verbs_counted = s.proportions.size();
  s.mean = mean(s.proportions);
  s.sd = sample_sd(s.proportions);
  return s;
}

std::string profile_json(const HeadPairProfile& profile) {
  nlohmann::ordered_json j;
  j["layer"] = profile.layer;
  j["head"] = profile.head;
  auto pairs = nlohmann::ordered_json::array();
  for (const auto& p : profile.pairs) pairs.push_back({p.pair.query, p.pair.key, p.frequency});
  j["pairs"] = pairs;
  return j.dump();
}

}  // namespace alignlens
