#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "alignlens/checkpoint.hpp"

namespace alignlens {

// Seeded synthetic bundles for tests, demos and the acceptance suite.
struct FixtureSpec {
  std::uint64_t seed = 1;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t d_model = 16;
  std::size_t d_head = 8;
  std::size_t d_ffn = 32;
  Activation activation = Activation::silu;
  NormKind norm_kind = NormKind::rmsnorm;
  double norm_eps = 1e-5;
  bool norm_bias = false;
  double embed_scale = 1.0;   // std of embedding entries
  double weight_scale = 1.0;  // multiplies the 1/sqrt(fan_in) init std
  std::vector<std::string> tokens;  // non-reserved tokens; empty -> toy_tokens(30)
};

// Characters, punctuation and a few frequent English fragments, so that
// short English strings tokenize without <unk>.
std::vector<std::string> toy_tokens(std::size_t count);

ModelBundle make_random_bundle(const FixtureSpec& spec);

// A pre-trained/tuned pair where the tuned bundle is the pre-trained one
// plus small drift on every query/key projection, except for one head whose
// projections are rebuilt so that every neuron pairs `planted_verb` with its
// GloVe neighbours.
struct PlantedAttentionFixture {
  ModelBundle pretrained;
  ModelBundle tuned;
  EmbeddingTable glove;
  std::vector<std::string> instruction_verbs;
  std::vector<std::string> control_verbs;
  std::string planted_verb;
  std::size_t planted_layer = 0;
  std::size_t planted_head = 0;
  std::size_t top_k_words = 16;  // neuron word-list length suited to the vocabulary
};

PlantedAttentionFixture make_planted_attention_fixture(std::uint64_t seed);

}  // namespace alignlens
