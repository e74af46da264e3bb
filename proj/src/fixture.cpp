#include "alignlens/fixture.hpp"

#include <cmath>

#include "alignlens/random.hpp"

namespace alignlens {

namespace {

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  Matrix m(rows, cols);
  for (float& v : m.data()) v = static_cast<float>(stddev * rng.normal());
  return m;
}

NormParams random_norm(Rng& rng, std::size_t d, bool bias) {
  NormParams p;
  p.weight.resize(d);
  for (float& w : p.weight) w = static_cast<float>(1.0 + 0.1 * rng.normal());
  if (bias) {
    p.bias.resize(d);
    for (float& b : p.bias) b = static_cast<float>(0.1 * rng.normal());
  }
  return p;
}

}  // namespace

std::vector<std::string> toy_tokens(std::size_t count) {
  static const char* const kPool[] = {
      "e", "t", "a", "o", "i", "n", " ", "s", "h", "r", "d", "l", "u", "c", "m", "w", "f", "g",
      "y", "p", "b", "v", "k", "j", "x", "q", "z", ".", ",", "\n", "!", "?", "th", "he", "in",
      "er", "an", "re", "on", "at", "en", "nd", "the", " the", "ing", "ed", "to", "of", "is",
      "it", "ou", "es", "or", " a", " w", " s", "ion", "and", "you", "for", "T", "W", "I", "A"};
  constexpr std::size_t kPoolSize = sizeof(kPool) / sizeof(kPool[0]);
  if (count > kPoolSize) {
    throw ValidationError("toy_tokens: at most " + std::to_string(kPoolSize) + " tokens available");
  }
  return std::vector<std::string>(kPool, kPool + count);
}

ModelBundle make_random_bundle(const FixtureSpec& spec) {
  Rng rng(spec.seed);
  std::vector<std::string> tokens{"<unk>", "<bos>"};
  const auto body = spec.tokens.empty() ? toy_tokens(30) : spec.tokens;
  tokens.insert(tokens.end(), body.begin(), body.end());

  ModelBundle b;
  auto& c = b.config;
  c.n_layers = spec.n_layers;
  c.n_heads = spec.n_heads;
  c.d_model = spec.d_model;
  c.d_head = spec.d_head;
  c.d_ffn = spec.d_ffn;
  c.vocab_size = tokens.size();
  c.activation = spec.activation;
  c.norm_kind = spec.norm_kind;
  c.norm_eps = spec.norm_eps;
  c.attn_scale = std::sqrt(static_cast<double>(spec.d_head));
  c.validate();

  const double in_std = spec.weight_scale / std::sqrt(static_cast<double>(c.d_model));
  b.input_embeddings = random_matrix(rng, c.vocab_size, c.d_model, spec.embed_scale);
  b.output_embeddings = random_matrix(rng, c.vocab_size, c.d_model, spec.embed_scale);
  const bool bias = spec.norm_bias && c.norm_kind == NormKind::layernorm;
  b.layers.resize(c.n_layers);
  for (auto& l : b.layers) {
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      l.wq.push_back(random_matrix(rng, c.d_model, c.d_head, in_std));
      l.wk.push_back(random_matrix(rng, c.d_model, c.d_head, in_std));
      l.wv.push_back(random_matrix(rng, c.d_model, c.d_head, in_std));
    }
    l.wo = random_matrix(rng, c.n_heads * c.d_head, c.d_model,
                         spec.weight_scale / std::sqrt(static_cast<double>(c.n_heads * c.d_head)));
    l.wu = random_matrix(rng, c.d_ffn, c.d_model, in_std);
    l.wp = random_matrix(rng, c.d_ffn, c.d_model,
                         spec.weight_scale / std::sqrt(static_cast<double>(c.d_ffn)));
    l.norm1 = random_norm(rng, c.d_model, bias);
    l.norm2 = random_norm(rng, c.d_model, bias);
  }
  b.final_norm = random_norm(rng, c.d_model, bias);
  b.vocabulary = Vocabulary(std::move(tokens));
  b.validate();
  return b;
}

// ---- planted attention fixture -------------------------------------------------

namespace {

constexpr std::size_t kPartners = 4;
constexpr std::size_t kGloveDim = 50;
// Input-embedding coordinates [0, kReserved) carry the planted cluster only;
// every other word lives in the remaining coordinates.
constexpr std::size_t kReserved = 4;

}  // namespace

PlantedAttentionFixture make_planted_attention_fixture(std::uint64_t seed) {
  PlantedAttentionFixture fx;
  fx.planted_verb = "write";
  fx.instruction_verbs = {"write", "create", "classify"};
  fx.control_verbs = {"make",  "take",    "give",   "find",    "tell",  "ask",  "work",  "seem",
                      "feel",  "try",     "leave",  "call",    "keep",  "hold", "bring", "begin",
                      "show",  "hear",    "play",   "run",     "move",  "live", "believe", "happen",
                      "provide", "sit",   "stand",  "lose",    "pay",   "meet"};
  fx.planted_layer = 5;
  fx.planted_head = 1;
  fx.top_k_words = 16;

  Rng rng(seed);

  // Clusters: each verb with kPartners objects that are GloVe neighbours.
  std::vector<std::vector<std::string>> clusters;
  clusters.push_back({"write", "essay", "letter", "poem", "story"});
  for (std::size_t i = 1; i < fx.instruction_verbs.size(); ++i) {
    std::vector<std::string> c{fx.instruction_verbs[i]};
    for (std::size_t j = 0; j < kPartners; ++j) c.push_back(fx.instruction_verbs[i] + "_obj" + std::to_string(j));
    clusters.push_back(std::move(c));
  }
  for (const auto& v : fx.control_verbs) {
    std::vector<std::string> c{v};
    for (std::size_t j = 0; j < kPartners; ++j) c.push_back(v + "_obj" + std::to_string(j));
    clusters.push_back(std::move(c));
  }

  std::vector<std::string> tokens{"<unk>", "<bos>"};
  fx.glove = EmbeddingTable(kGloveDim);
  for (const auto& cluster : clusters) {
    std::vector<double> center(kGloveDim);
    double norm = 0.0;
    for (double& x : center) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (const auto& word : cluster) {
      std::vector<float> vec(kGloveDim);
      for (std::size_t k = 0; k < kGloveDim; ++k) {
        vec[k] = static_cast<float>(center[k] / norm + 0.35 * rng.normal() / std::sqrt(double(kGloveDim)));
      }
      fx.glove.add(word, std::move(vec));
      tokens.push_back(word);
    }
  }

  FixtureSpec spec;
  spec.seed = seed ^ 0x5eedULL;
  spec.n_layers = 12;
  spec.n_heads = 2;
  spec.d_model = 32;
  spec.d_head = 8;
  spec.d_ffn = 32;
  spec.tokens.assign(tokens.begin() + 2, tokens.end());
  fx.pretrained = make_random_bundle(spec);

  auto& emb = fx.pretrained.input_embeddings;
  const auto& vocab = fx.pretrained.vocabulary;
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    for (std::size_t k = 0; k < kReserved; ++k) emb(id, k) = 0.0f;
  }
  const auto write_id = *vocab.find(fx.planted_verb);
  for (std::size_t k = 0; k < emb.cols(); ++k) emb(write_id, k) = 0.0f;
  emb(write_id, 0) = 3.0f;
  for (std::size_t j = 1; j <= kPartners; ++j) {
    const auto id = *vocab.find(clusters[0][j]);
    for (std::size_t k = 0; k < emb.cols(); ++k) emb(id, k) = 0.0f;
    emb(id, 1) = 3.0f;
  }
  // Query/key projections ignore the reserved coordinates everywhere.
  for (auto& layer : fx.pretrained.layers) {
    for (auto* heads : {&layer.wq, &layer.wk}) {
      for (auto& w : *heads) {
        for (std::size_t k = 0; k < kReserved; ++k)
          for (std::size_t j = 0; j < w.cols(); ++j) w(k, j) = 0.0f;
      }
    }
  }

  fx.tuned = fx.pretrained;
  Rng drift(seed ^ 0xd21f7ULL);
  constexpr double kDrift = 0.1;
  for (std::size_t l = 0; l < fx.tuned.layers.size(); ++l) {
    auto& layer = fx.tuned.layers[l];
    for (std::size_t h = 0; h < layer.wq.size(); ++h) {
      const bool planted = l == fx.planted_layer && h == fx.planted_head;
      for (auto* w : {&layer.wq[h], &layer.wk[h]}) {
        const bool is_query = w == &layer.wq[h];
        for (std::size_t k = 0; k < w->rows(); ++k) {
          for (std::size_t j = 0; j < w->cols(); ++j) {
            float& x = (*w)(k, j);
            if (!planted) {
              if (k >= kReserved) x += static_cast<float>(kDrift * drift.normal() / std::sqrt(32.0));
              continue;
            }
            if (k >= kReserved) {
              x = static_cast<float>(drift.normal() / std::sqrt(32.0));
            } else {
              x = (is_query ? k == 0 : k == 1) ? 10.0f : 0.0f;
            }
          }
        }
      }
    }
  }
  fx.pretrained.validate();
  fx.tuned.validate();
  return fx;
}

}  // namespace alignlens
