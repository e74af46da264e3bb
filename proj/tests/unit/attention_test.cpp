#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "alignlens/attention.hpp"
#include "alignlens/fixture.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace alignlens;

namespace {

// GloVe-style table with a random vector for every distinct token key.
EmbeddingTable random_glove(const ModelBundle& b, std::uint64_t seed, std::size_t dim = 6) {
  Rng rng(seed);
  EmbeddingTable t(dim);
  for (const auto& tok : b.vocabulary.tokens()) {
    const auto key = glove_key(tok);
    if (key.empty() || key[0] == '<') continue;
    std::vector<float> v(dim);
    for (float& x : v) x = static_cast<float>(rng.normal());
    t.add(key, std::move(v));
  }
  return t;
}

std::vector<std::size_t> oracle_ranking(const ModelBundle& b, const Matrix& w, std::size_t d) {
  std::vector<std::pair<double, std::size_t>> s;
  for (std::size_t v = 0; v < b.config.vocab_size; ++v) {
    double acc = 0.0;
    for (std::size_t i = 0; i < b.config.d_model; ++i) acc += double(b.input_embeddings(v, i)) * w(i, d);
    s.push_back({-acc, v});
  }
  std::sort(s.begin(), s.end());
  std::vector<std::size_t> out;
  for (const auto& p : s) out.push_back(p.second);
  return out;
}

double two_pass_threshold(const EmbeddingTable& t, const std::string& w, const std::vector<std::string>& refs) {
  const auto e = *t.find(w);
  std::vector<double> c;
  for (const auto& r : refs) {
    const auto f = *t.find(r);
    double dot = 0, nu = 0, nv = 0;
    for (std::size_t i = 0; i < e.size(); ++i) {
      dot += double(e[i]) * f[i];
      nu += double(e[i]) * e[i];
      nv += double(f[i]) * f[i];
    }
    c.push_back(dot / std::sqrt(nu * nv));
  }
  const double m = std::accumulate(c.begin(), c.end(), 0.0) / c.size();
  double var = 0.0;
  for (double x : c) var += (x - m) * (x - m);
  return m + 1.96 * std::sqrt(var / c.size());
}

}  // namespace

TEST_CASE("aligned projection column ranks its word first") {
  auto b = testing::tiny_bundle(1);
  std::fill(b.input_embeddings.data().begin(), b.input_embeddings.data().end(), 0.0f);
  for (std::size_t v = 2; v < 2 + b.config.d_model; ++v) b.input_embeddings(v, v - 2) = 1.0f;
  auto& wq = b.layers[0].wq[1];
  for (std::size_t i = 0; i < wq.rows(); ++i) wq(i, 3) = b.input_embeddings(9, i);
  const auto l = neuron_word_lists(b, 0, 1, 3, 5);
  CHECK(l.query_ids.front() == 9);
}

TEST_CASE("word lists match the exhaustive ranking") {
  const auto b = testing::tiny_bundle(2);
  for (std::size_t d = 0; d < b.config.d_head; ++d) {
    const auto l = neuron_word_lists(b, 1, 0, d, 10);
    const auto q = oracle_ranking(b, b.layers[1].wq[0], d);
    const auto k = oracle_ranking(b, b.layers[1].wk[0], d);
    CHECK(std::vector<std::size_t>(l.query_ids.begin(), l.query_ids.end()) ==
          std::vector<std::size_t>(q.begin(), q.begin() + 10));
    CHECK(std::vector<std::size_t>(l.key_ids.begin(), l.key_ids.end()) ==
          std::vector<std::size_t>(k.begin(), k.begin() + 10));
  }
  const auto full = neuron_word_lists(b, 0, 0, 0, b.config.vocab_size);
  CHECK(full.query_ids.size() == b.config.vocab_size);
  CHECK(std::is_sorted(full.query_scores.rbegin(), full.query_scores.rend()));
  const auto lists = head_word_lists(b, 1, 0, 10);
  CHECK(lists[2].query_ids == neuron_word_lists(b, 1, 0, 2, 10).query_ids);
  CHECK_THROWS_AS(neuron_word_lists(b, 0, 0, 0, b.config.vocab_size + 1), RangeError);
  CHECK_THROWS_AS(neuron_word_lists(b, 0, 2, 0, 3), RangeError);
}

TEST_CASE("word threshold examples") {
  EmbeddingTable t(2);
  t.add("w", {1, 0});
  t.add("neg", {-1, 0});
  t.add("up", {0, 1});
  t.add("down", {0, -2});
  CHECK(*word_threshold(t, "w", {"w", "neg"}) == doctest::Approx(1.96));
  CHECK(*word_threshold(t, "w", {"up", "down"}) == doctest::Approx(0.0));
  CHECK_FALSE(word_threshold(t, "missing", {"up", "down"}).has_value());
  CHECK_THROWS_AS(word_threshold(t, "w", {"up", "nothere"}), ValidationError);
}

TEST_CASE("word threshold matches a two-pass oracle") {
  const auto b = testing::tiny_bundle(3);
  const auto t = random_glove(b, 4);
  const auto& refs = t.frequency_order();
  for (const auto& w : refs) CHECK(*word_threshold(t, w, refs) == doctest::Approx(two_pass_threshold(t, w, refs)).epsilon(1e-6));
  ThresholdTable cache(t, 1000);
  CHECK(cache.reference_words().size() == t.size());
  CHECK(*cache.threshold(refs[3]) == *word_threshold(t, refs[3], refs));
}

TEST_CASE("form_pairs filtering") {
  Vocabulary vocab({"<unk>", "<bos>", "write", "essay", "cat", "zzz"});
  EmbeddingTable t(4);
  t.add("write", {1, 0, 0, 0});
  t.add("essay", {0.99f, 0.14f, 0, 0});
  t.add("cat", {0, 0, 1, 0});
  t.add("a", {0, 0, 0, 1});
  t.add("b", {0, 0, 0, -1});
  t.add("c", {0, 1, 0, 0});
  t.add("d", {0, -1, 0, 0});
  // theta(write) = theta(cat) = 0, theta(essay) ~ 0.27
  ThresholdTable thresholds(t, std::vector<std::string>{"a", "b", "c", "d"});

  NeuronWordLists l;
  l.query_ids = {2, 4};
  l.key_ids = {3, 5};
  CHECK(form_pairs(l, vocab, thresholds) == std::vector<WordPair>{{"write", "essay"}});

  NeuronWordLists none;
  none.query_ids = {5};
  none.key_ids = {5, 0};
  CHECK(form_pairs(none, vocab, thresholds).empty());

  NeuronWordLists self;
  self.query_ids = {4};
  self.key_ids = {4};
  CHECK(form_pairs(self, vocab, thresholds) == std::vector<WordPair>{{"cat", "cat"}});
}

TEST_CASE("rank_pairs counting and ordering") {
  const WordPair p{"a", "b"};
  const std::vector<std::vector<WordPair>> same(8, {p});
  CHECK(rank_pairs(same, 100) == std::vector<PairCount>{{p, 8}});

  const std::vector<std::vector<WordPair>> distinct{{{"c", "d"}}, {{"a", "z"}}, {{"a", "b"}}};
  const auto r = rank_pairs(distinct, 100);
  REQUIRE(r.size() == 3);
  CHECK(r[0].pair == WordPair{"a", "b"});
  CHECK(r[1].pair == WordPair{"a", "z"});
  CHECK(r[2].pair == WordPair{"c", "d"});
  for (const auto& c : r) CHECK(c.frequency == 1);
  CHECK(rank_pairs(distinct, 2).size() == 2);
}

TEST_CASE("head profile matches a brute-force recount") {
  const auto b = testing::tiny_bundle(5);
  const auto t = random_glove(b, 6);
  ThresholdTable thresholds(t, 1000);
  const std::size_t k = 8;
  const auto prof = head_profile(b, 1, 1, thresholds, k, 1000);

  const auto& refs = t.frequency_order();
  std::map<WordPair, std::size_t> counts;
  for (std::size_t d = 0; d < b.config.d_head; ++d) {
    const auto q = oracle_ranking(b, b.layers[1].wq[1], d);
    const auto kk = oracle_ranking(b, b.layers[1].wk[1], d);
    std::set<WordPair> found;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const auto wq = glove_key(b.vocabulary.token(static_cast<TokenId>(q[i])));
        const auto wk = glove_key(b.vocabulary.token(static_cast<TokenId>(kk[j])));
        if (!t.contains(wq) || !t.contains(wk)) continue;
        const double c = cosine(*t.find(wq), *t.find(wk));
        if (c > std::max(two_pass_threshold(t, wq, refs), two_pass_threshold(t, wk, refs))) found.insert({wq, wk});
      }
    for (const auto& p : found) ++counts[p];
  }
  std::map<WordPair, std::size_t> got;
  for (const auto& pc : prof.pairs) got[pc.pair] = pc.frequency;
  CHECK(got == counts);
  for (std::size_t i = 1; i < prof.pairs.size(); ++i) CHECK(prof.pairs[i - 1].frequency >= prof.pairs[i].frequency);
}

TEST_CASE("relation score two paths agree") {
  Rng rng(9);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto b = testing::tiny_bundle(seed);
    const auto& toks = b.vocabulary.tokens();
    for (int i = 0; i < 5; ++i) {
      const auto& wa = toks[2 + rng.below(toks.size() - 2)];
      const auto& wb = toks[2 + rng.below(toks.size() - 2)];
      const double x = relation_score(b, 1, 0, wa, wb), y = relation_score_by_neuron(b, 1, 0, wa, wb);
      CHECK(std::abs(x - y) <= 1e-5 * std::max(std::abs(y), 1e-12));
    }
  }
}

TEST_CASE("relation score is bilinear in the query projection") {
  auto b = testing::tiny_bundle(7);
  const auto& toks = b.vocabulary.tokens();
  const double base = relation_score_by_neuron(b, 0, 1, toks[4], toks[9]);
  for (float& x : b.layers[0].wq[1].data()) x *= 2.0f;
  CHECK(relation_score_by_neuron(b, 0, 1, toks[4], toks[9]) == 2.0 * base);
  for (float& x : b.layers[0].wq[1].data()) x = 0.0f;
  CHECK(relation_score(b, 0, 1, toks[4], toks[9]) == 0.0);
  CHECK_THROWS_AS(relation_score(b, 0, 1, "not-a-token", toks[9]), ValidationError);
}

TEST_CASE("intersection rate examples") {
  std::vector<WordPair> a, b;
  for (int i = 0; i < 100; ++i) a.push_back({"q" + std::to_string(i), "k"});
  for (int i = 50; i < 150; ++i) b.push_back({"q" + std::to_string(i), "k"});
  CHECK(intersection_rate(a, a) == 1.0);
  CHECK(std::abs(intersection_rate(a, b) - 1.0 / 3.0) <= 1e-12);
  std::vector<WordPair> c{{"x", "y"}};
  CHECK(intersection_rate(a, c) == 0.0);
  CHECK_THROWS_AS(intersection_rate(std::vector<WordPair>{}, std::vector<WordPair>{}), ValidationError);
}

TEST_CASE("verb head statistics") {
  ModelPairProfiles pt, ft;
  pt.n_layers = ft.n_layers = 2;
  pt.n_heads = ft.n_heads = 2;
  pt.heads.resize(4);
  ft.heads.resize(4);
  pt.heads[0].pairs = {{{"write", "essay"}, 1}};
  ft.heads[0].pairs = {{{"write", "essay"}, 1}, {{"poem", "write"}, 1}};
  pt.heads[3].pairs = {{{"run", "fast"}, 2}};
  const auto s = verb_head_stats(pt, ft, {"Write", "run", "absent"}, 8);
  CHECK(s.n_bands == 1);
  CHECK(s.at(0, 0).heads_more == 1);
  CHECK(s.at(0, 0).proportion_more() == 100.0);
  CHECK(s.at(0, 1).heads_less == 1);
  CHECK_FALSE(s.at(0, 2).changed());
  const auto sum = summarize_verbs(s, 0);
  CHECK(sum.verbs_counted == 2);
  CHECK(sum.mean == 50.0);

  const auto swapped = verb_head_stats(ft, pt, {"write", "run", "absent"}, 8);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(swapped.at(0, i).heads_more == s.at(0, i).heads_less);
    CHECK(swapped.at(0, i).heads_less == s.at(0, i).heads_more);
  }
  CHECK_THROWS_AS(verb_head_stats(pt, ft, {}, 8), ValidationError);
}

TEST_CASE("planted head gains the planted verb") {
  const auto fx = make_planted_attention_fixture(7);
  ThresholdTable thresholds(fx.glove, 1000);
  AttentionOptions opt;
  opt.k = fx.top_k_words;
  const auto pt = all_head_profiles(fx.pretrained, thresholds, opt);
  const auto ft = all_head_profiles(fx.tuned, thresholds, opt);
  const auto s = verb_head_stats(pt, ft, {fx.planted_verb}, 8);
  const auto& c = s.at(fx.planted_layer / 8, 0);
  CHECK(c.heads_more == 1);
  CHECK(c.heads_less == 0);
  CHECK(verb_pair_count(ft.at(fx.planted_layer, fx.planted_head), fx.planted_verb) >
        verb_pair_count(pt.at(fx.planted_layer, fx.planted_head), fx.planted_verb));
}

TEST_CASE("band labels") {
  CHECK(band_count(12, 8) == 2);
  CHECK(band_label(0, 8, 12) == "1-8");
  CHECK(band_label(1, 8, 12) == "9-12");
  CHECK(band_label(1, 4, 12) == "5-8");
}
