#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "alignlens/tensor.hpp"

namespace alignlens {

using TokenId = std::uint32_t;

enum class Activation { relu, gelu, silu };
enum class NormKind { layernorm, rmsnorm };

std::string to_string(Activation a);
std::string to_string(NormKind n);

struct ModelConfig {
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t d_model = 0;
  std::size_t d_head = 0;
  std::size_t d_ffn = 0;
  std::size_t vocab_size = 0;
  Activation activation = Activation::silu;
  NormKind norm_kind = NormKind::rmsnorm;
  double attn_scale = 0.0;  // attention logits are divided by this; <= 0 means sqrt(d_head)
  double norm_eps = 1e-5;
  std::size_t max_context = 2048;

  double effective_attn_scale() const;
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

ModelConfig parse_config(std::string_view json_text);
std::string config_to_json(const ModelConfig& config);

// Token strings indexed by id. Ids 0 and 1 are reserved for <unk> and <bos>.
class Vocabulary {
 public:
  static constexpr TokenId kUnk = 0;
  static constexpr TokenId kBos = 1;

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  TokenId unk_id() const { return kUnk; }
  TokenId bos_id() const { return kBos; }
  std::size_t max_token_bytes() const { return max_token_bytes_; }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> id_of_;
  std::size_t max_token_bytes_ = 0;
};

// One line per token; "\n", "\t" and "\\" escapes are decoded.
Vocabulary load_vocabulary(const std::filesystem::path& path);
Vocabulary parse_vocabulary(std::istream& in);
void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path);

struct NormParams {
  std::vector<float> weight;
  std::vector<float> bias;  // empty when the checkpoint carries no bias

  bool operator==(const NormParams&) const = default;
};

struct LayerWeights {
  std::vector<Matrix> wq, wk, wv;  // one D x D' matrix per head
  Matrix wo;                       // (H * D') x D
  Matrix wu, wp;                   // D'' x D
  NormParams norm1, norm2;

  bool operator==(const LayerWeights&) const = default;
};

struct ModelBundle {
  ModelConfig config;
  Matrix input_embeddings;   // |V| x D
  Matrix output_embeddings;  // |V| x D
  std::vector<LayerWeights> layers;
  NormParams final_norm;
  Vocabulary vocabulary;

  // Throws ValidationError on any shape, size or finiteness violation.
  void validate() const;

  bool operator==(const ModelBundle&) const = default;
};

// Raw tensor as stored in the container.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  bool operator==(const Tensor&) const = default;
};

using TensorMap = std::map<std::string, Tensor>;

// Container layout: u64 little-endian header length, JSON header mapping
// name -> {dtype, shape, data_offsets}, then one contiguous f32 buffer.
TensorMap read_container(const std::filesystem::path& path);
TensorMap parse_container(std::span<const char> bytes);
void write_container(const std::filesystem::path& path, const TensorMap& tensors);
std::string serialize_container(const TensorMap& tensors);

TensorMap bundle_to_tensors(const ModelBundle& bundle);
ModelBundle bundle_from_tensors(const ModelConfig& config, Vocabulary vocab, const TensorMap& tensors);

ModelBundle load_bundle(const std::filesystem::path& container_path,
                        const std::filesystem::path& config_path,
                        const std::filesystem::path& vocab_path);

struct BundlePaths {
  std::filesystem::path container, config, vocab;
};

// Conventional file names inside a bundle directory.
BundlePaths bundle_paths(const std::filesystem::path& dir);
ModelBundle load_bundle_dir(const std::filesystem::path& dir);
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir);

// SHA-256 over the serialized container, config and vocabulary.
std::string bundle_digest(const ModelBundle& bundle);

// ---- tokenizer -------------------------------------------------------------

struct TokenPiece {
  TokenId id;
  std::size_t begin;  // byte offsets into the source text
  std::size_t end;
};

// Greedy longest match left to right; an uncovered code point becomes <unk>.
// Reserved tokens never match.
std::vector<TokenPiece> tokenize_with_offsets(const Vocabulary& vocab, std::string_view text);
std::vector<TokenId> tokenize(const Vocabulary& vocab, std::string_view text);
std::string detokenize(const Vocabulary& vocab, std::span<const TokenId> ids);

// ---- word embeddings and word lists ----------------------------------------

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

  // Returns false (and keeps the first vector) when the word is already present.
  bool add(std::string word, std::vector<float> vec);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return order_.size(); }
  bool contains(std::string_view word) const;
  std::optional<std::span<const float>> find(std::string_view word) const;
  const std::vector<std::string>& frequency_order() const { return order_; }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> order_;
  std::vector<std::vector<float>> vectors_;
  std::unordered_map<std::string, std::size_t> index_;
};

// "word v1 ... vd" per line. The first line fixes d.
EmbeddingTable load_glove(const std::filesystem::path& path);
EmbeddingTable parse_glove(std::istream& in);

// One word per line, '#' starts a comment; lowercased and deduplicated.
std::vector<std::string> load_word_list(const std::filesystem::path& path);
std::vector<std::string> parse_word_list(std::istream& in);

struct WordListSet {
  std::vector<std::string> instruction_verbs;
  std::vector<std::string> general_verbs;
  std::optional<std::vector<std::string>> restricted_vocab;
};

std::string to_lower_ascii(std::string_view s);

// Key used to look a model token up in a word-embedding table: surrounding
// whitespace and SentencePiece/byte-BPE space markers are dropped, then
// the token is lowercased.
std::string glove_key(std::string_view token);

}  // namespace alignlens
