#include "alignlens/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <istream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unordered_set>

#include "alignlens/diagnostics.hpp"
#include "alignlens/io.hpp"

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

namespace alignlens {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
    case Activation::silu: return "silu";
  }
  return "?";
}

std::string to_string(NormKind n) {
  return n == NormKind::layernorm ? "layernorm" : "rmsnorm";
}

namespace {

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "gelu") return Activation::gelu;
  if (s == "silu") return Activation::silu;
  throw ValidationError("unknown activation '" + s + "'");
}

NormKind parse_norm(const std::string& s) {
  if (s == "layernorm") return NormKind::layernorm;
  if (s == "rmsnorm") return NormKind::rmsnorm;
  throw ValidationError("unknown norm_kind '" + s + "'");
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t element_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

}  // namespace

// ---- config ------------------------------------------------------------------

double ModelConfig::effective_attn_scale() const {
  return attn_scale > 0.0 ? attn_scale : std::sqrt(static_cast<double>(d_head));
}

void ModelConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || d_model == 0 || d_head == 0 || d_ffn == 0 ||
      vocab_size == 0) {
    throw ValidationError("model config: all counts must be positive");
  }
  if (vocab_size < 2) throw ValidationError("model config: vocabulary needs <unk> and <bos>");
  if (!(norm_eps > 0.0) || !std::isfinite(norm_eps)) {
    throw ValidationError("model config: norm_eps must be positive");
  }
  if (!std::isfinite(attn_scale)) throw ValidationError("model config: attn_scale not finite");
  if (max_context == 0) throw ValidationError("model config: max_context must be positive");
}

ModelConfig parse_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  ModelConfig c;
  try {
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.d_head = j.at("d_head").get<std::size_t>();
    c.d_ffn = j.at("d_ffn").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    if (j.contains("activation")) c.activation = parse_activation(j["activation"].get<std::string>());
    if (j.contains("norm_kind")) c.norm_kind = parse_norm(j["norm_kind"].get<std::string>());
    if (j.contains("attn_scale") && !j["attn_scale"].is_null()) {
      c.attn_scale = j["attn_scale"].get<double>();
    }
    if (j.contains("norm_eps")) c.norm_eps = j["norm_eps"].get<double>();
    if (j.contains("max_context")) c.max_context = j["max_context"].get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  if (c.attn_scale <= 0.0) c.attn_scale = std::sqrt(static_cast<double>(c.d_head));
  c.validate();
  return c;
}

std::string config_to_json(const ModelConfig& c) {
  ordered_json j;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["d_model"] = c.d_model;
  j["d_head"] = c.d_head;
  j["d_ffn"] = c.d_ffn;
  j["vocab_size"] = c.vocab_size;
  j["activation"] = to_string(c.activation);
  j["norm_kind"] = to_string(c.norm_kind);
  j["attn_scale"] = c.effective_attn_scale();
  j["norm_eps"] = c.norm_eps;
  j["max_context"] = c.max_context;
  return j.dump(2) + "\n";
}

// ---- vocabulary --------------------------------------------------------------

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 2 || tokens_[kUnk] != "<unk>" || tokens_[kBos] != "<bos>") {
    throw ValidationError("vocabulary must start with <unk>, <bos>");
  }
  id_of_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw ValidationError("vocabulary: empty token at id " + std::to_string(i));
    if (!id_of_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw ValidationError("vocabulary: duplicate token '" + tokens_[i] + "'");
    }
    max_token_bytes_ = std::max(max_token_bytes_, tokens_[i].size());
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) throw RangeError("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = id_of_.find(std::string(token));
  if (it == id_of_.end()) return std::nullopt;
  return it->second;
}

namespace {

std::string decode_vocab_line(std::string_view line) {
  std::string out;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\\' && i + 1 < line.size()) {
      const char n = line[i + 1];
      if (n == 'n') { out.push_back('\n'); ++i; continue; }
      if (n == 't') { out.push_back('\t'); ++i; continue; }
      if (n == '\\') { out.push_back('\\'); ++i; continue; }
    }
    out.push_back(line[i]);
  }
  return out;
}

std::string encode_vocab_token(std::string_view token) {
  std::string out;
  for (char ch : token) {
    if (ch == '\n') out += "\\n";
    else if (ch == '\t') out += "\\t";
    else if (ch == '\\') out += "\\\\";
    else out.push_back(ch);
  }
  return out;
}

}  // namespace

Vocabulary parse_vocabulary(std::istream& in) {
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(decode_vocab_line(line));
  }
  return Vocabulary(std::move(tokens));
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open vocabulary " + path.string());
  return parse_vocabulary(in);
}

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::string out;
  for (const auto& t : vocab.tokens()) {
    out += encode_vocab_token(t);
    out.push_back('\n');
  }
  write_file(path, out);
}

// ---- container ---------------------------------------------------------------

TensorMap parse_container(std::span<const char> bytes) {
  if (bytes.size() < 8) throw FormatError("container: truncated header length");
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data(), 8);
  if (header_len > bytes.size() - 8) throw FormatError("container: malformed header length");

  json header;
  try {
    header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("container: malformed header: ") + e.what());
  }
  if (!header.is_object()) throw FormatError("container: header is not an object");

  const std::span<const char> buffer = bytes.subspan(8 + header_len);
  TensorMap out;
  for (const auto& [name, entry] : header.items()) {
    if (name == "__metadata__") continue;
    try {
      const auto dtype = to_lower_ascii(entry.at("dtype").get<std::string>());
      if (dtype != "f32") throw FormatError("container: tensor '" + name + "' has dtype " + dtype);
      Tensor t;
      t.shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto offsets = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
      if (offsets.size() != 2 || offsets[0] > offsets[1] || offsets[1] > buffer.size()) {
        throw FormatError("container: tensor '" + name + "' has invalid data_offsets");
      }
      const std::size_t n = element_count(t.shape);
      if (offsets[1] - offsets[0] != n * sizeof(float)) {
        throw FormatError("container: tensor '" + name + "' byte size does not match shape " +
                          shape_str(t.shape));
      }
      t.data.resize(n);
      if (n) std::memcpy(t.data.data(), buffer.data() + offsets[0], n * sizeof(float));
      out.emplace(name, std::move(t));
    } catch (const json::exception& e) {
      throw FormatError("container: bad entry '" + name + "': " + e.what());
    }
  }
  return out;
}

TensorMap read_container(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  return parse_container(std::span<const char>(bytes.data(), bytes.size()));
}

std::string serialize_container(const TensorMap& tensors) {
  ordered_json header = ordered_json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    if (element_count(t.shape) != t.data.size()) {
      throw ValidationError("tensor '" + name + "' data does not match shape " + shape_str(t.shape));
    }
    const std::uint64_t bytes = t.data.size() * sizeof(float);
    header[name] = {{"dtype", "f32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  const std::string header_text = header.dump();
  const std::uint64_t header_len = header_text.size();
  std::string out(8, '\0');
  std::memcpy(out.data(), &header_len, 8);
  out += header_text;
  out.reserve(out.size() + offset);
  for (const auto& [name, t] : tensors) {
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
  }
  return out;
}

void write_container(const std::filesystem::path& path, const TensorMap& tensors) {
  write_file(path, serialize_container(tensors));
}

// ---- bundle <-> tensors --------------------------------------------------------

namespace {

std::string layer_name(std::size_t i, std::string_view suffix) {
  return "layers." + std::to_string(i) + "." + std::string(suffix);
}

Tensor matrix_tensor(const Matrix& m) {
  return Tensor{{m.rows(), m.cols()}, m.storage()};
}

Tensor vector_tensor(const std::vector<float>& v) { return Tensor{{v.size()}, v}; }

Tensor heads_tensor(const std::vector<Matrix>& heads) {
  Tensor t;
  t.shape = {heads.size(), heads.empty() ? 0 : heads[0].rows(), heads.empty() ? 0 : heads[0].cols()};
  for (const auto& h : heads) t.data.insert(t.data.end(), h.storage().begin(), h.storage().end());
  return t;
}

class TensorReader {
 public:
  explicit TensorReader(const TensorMap& tensors) : tensors_(tensors) {}

  const Tensor& take(const std::string& name, const std::vector<std::size_t>& shape) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ValidationError("missing tensor '" + name + "'");
    if (it->second.shape != shape) {
      throw ValidationError("shape mismatch for '" + name + "': expected " + shape_str(shape) +
                            ", got " + shape_str(it->second.shape));
    }
    used_.insert(name);
    return it->second;
  }

  const Tensor* take_optional(const std::string& name, const std::vector<std::size_t>& shape) {
    if (!tensors_.count(name)) return nullptr;
    return &take(name, shape);
  }

  Matrix matrix(const std::string& name, std::size_t rows, std::size_t cols) {
    return Matrix(rows, cols, take(name, {rows, cols}).data);
  }

  std::vector<Matrix> heads(const std::string& name, std::size_t h, std::size_t rows, std::size_t cols) {
    const Tensor& t = take(name, {h, rows, cols});
    std::vector<Matrix> out;
    const std::size_t block = rows * cols;
    for (std::size_t i = 0; i < h; ++i) {
      out.emplace_back(rows, cols,
                       std::vector<float>(t.data.begin() + static_cast<std::ptrdiff_t>(i * block),
                                          t.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * block)));
    }
    return out;
  }

  NormParams norm(const std::string& prefix, std::size_t d, NormKind kind) {
    NormParams p;
    p.weight = take(prefix + ".weight", {d}).data;
    if (const Tensor* b = take_optional(prefix + ".bias", {d})) {
      if (kind == NormKind::rmsnorm) throw ValidationError("rmsnorm does not take '" + prefix + ".bias'");
      p.bias = b->data;
    }
    return p;
  }

  void ensure_all_used() const {
    for (const auto& [name, t] : tensors_) {
      if (!used_.count(name)) throw ValidationError("unexpected tensor '" + name + "'");
    }
  }

 private:
  const TensorMap& tensors_;
  std::unordered_set<std::string> used_;
};

void check_finite(std::span<const float> v, const std::string& what) {
  if (!all_finite(v)) throw ValidationError("non-finite values in " + what);
}

void check_matrix(const Matrix& m, std::size_t rows, std::size_t cols, const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ValidationError("shape mismatch for " + what + ": expected [" + std::to_string(rows) + "," +
                          std::to_string(cols) + "], got [" + std::to_string(m.rows()) + "," +
                          std::to_string(m.cols()) + "]");
  }
  check_finite(m.data(), what);
}

void check_norm(const NormParams& p, const ModelConfig& c, const std::string& what) {
  if (p.weight.size() != c.d_model) throw ValidationError("shape mismatch for " + what + ".weight");
  check_finite(p.weight, what + ".weight");
  if (!p.bias.empty()) {
    if (c.norm_kind == NormKind::rmsnorm) throw ValidationError("rmsnorm does not take " + what + ".bias");
    if (p.bias.size() != c.d_model) throw ValidationError("shape mismatch for " + what + ".bias");
    check_finite(p.bias, what + ".bias");
  }
}

}  // namespace

void ModelBundle::validate() const {
  config.validate();
  const auto& c = config;
  if (vocabulary.size() != c.vocab_size) {
    throw ValidationError("vocabulary has " + std::to_string(vocabulary.size()) +
                          " tokens, config says " + std::to_string(c.vocab_size));
  }
  check_matrix(input_embeddings, c.vocab_size, c.d_model, "embed.input");
  check_matrix(output_embeddings, c.vocab_size, c.d_model, "embed.output");
  if (layers.size() != c.n_layers) throw ValidationError("layer count does not match config");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    for (const auto* heads : {&l.wq, &l.wk, &l.wv}) {
      if (heads->size() != c.n_heads) throw ValidationError(layer_name(i, "attn") + ": head count mismatch");
      for (const auto& h : *heads) check_matrix(h, c.d_model, c.d_head, layer_name(i, "attn.w{q,k,v}"));
    }
    check_matrix(l.wo, c.n_heads * c.d_head, c.d_model, layer_name(i, "attn.wo"));
    check_matrix(l.wu, c.d_ffn, c.d_model, layer_name(i, "ffn.wu"));
    check_matrix(l.wp, c.d_ffn, c.d_model, layer_name(i, "ffn.wp"));
    check_norm(l.norm1, c, layer_name(i, "norm1"));
    check_norm(l.norm2, c, layer_name(i, "norm2"));
  }
  check_norm(final_norm, c, "final_norm");
}

TensorMap bundle_to_tensors(const ModelBundle& b) {
  TensorMap t;
  t["embed.input"] = matrix_tensor(b.input_embeddings);
  t["embed.output"] = matrix_tensor(b.output_embeddings);
  for (std::size_t i = 0; i < b.layers.size(); ++i) {
    const auto& l = b.layers[i];
    t[layer_name(i, "attn.wq")] = heads_tensor(l.wq);
    t[layer_name(i, "attn.wk")] = heads_tensor(l.wk);
    t[layer_name(i, "attn.wv")] = heads_tensor(l.wv);
    t[layer_name(i, "attn.wo")] = matrix_tensor(l.wo);
    t[layer_name(i, "ffn.wu")] = matrix_tensor(l.wu);
    t[layer_name(i, "ffn.wp")] = matrix_tensor(l.wp);
    t[layer_name(i, "norm1.weight")] = vector_tensor(l.norm1.weight);
    t[layer_name(i, "norm2.weight")] = vector_tensor(l.norm2.weight);
    if (!l.norm1.bias.empty()) t[layer_name(i, "norm1.bias")] = vector_tensor(l.norm1.bias);
    if (!l.norm2.bias.empty()) t[layer_name(i, "norm2.bias")] = vector_tensor(l.norm2.bias);
  }
  t["final_norm.weight"] = vector_tensor(b.final_norm.weight);
  if (!b.final_norm.bias.empty()) t["final_norm.bias"] = vector_tensor(b.final_norm.bias);
  return t;
}

ModelBundle bundle_from_tensors(const ModelConfig& config, Vocabulary vocab, const TensorMap& tensors) {
  config.validate();
  const auto& c = config;
  TensorReader r(tensors);
  ModelBundle b;
  b.config = config;
  b.input_embeddings = r.matrix("embed.input", c.vocab_size, c.d_model);
  b.output_embeddings = r.matrix("embed.output", c.vocab_size, c.d_model);
  b.layers.resize(c.n_layers);
  for (std::size_t i = 0; i < c.n_layers; ++i) {
    auto& l = b.layers[i];
    l.wq = r.heads(layer_name(i, "attn.wq"), c.n_heads, c.d_model, c.d_head);
    l.wk = r.heads(layer_name(i, "attn.wk"), c.n_heads, c.d_model, c.d_head);
    l.wv = r.heads(layer_name(i, "attn.wv"), c.n_heads, c.d_model, c.d_head);
    l.wo = r.matrix(layer_name(i, "attn.wo"), c.n_heads * c.d_head, c.d_model);
    l.wu = r.matrix(layer_name(i, "ffn.wu"), c.d_ffn, c.d_model);
    l.wp = r.matrix(layer_name(i, "ffn.wp"), c.d_ffn, c.d_model);
    l.norm1 = r.norm(layer_name(i, "norm1"), c.d_model, c.norm_kind);
    l.norm2 = r.norm(layer_name(i, "norm2"), c.d_model, c.norm_kind);
  }
  b.final_norm = r.norm("final_norm", c.d_model, c.norm_kind);
  r.ensure_all_used();
  b.vocabulary = std::move(vocab);
  b.validate();
  return b;
}

ModelBundle load_bundle(const std::filesystem::path& container_path,
                        const std::filesystem::path& config_path,
                        const std::filesystem::path& vocab_path) {
  const ModelConfig config = parse_config(read_file(config_path));
  Vocabulary vocab = load_vocabulary(vocab_path);
  return bundle_from_tensors(config, std::move(vocab), read_container(container_path));
}

BundlePaths bundle_paths(const std::filesystem::path& dir) {
  return {dir / "weights.bin", dir / "config.json", dir / "vocab.txt"};
}

ModelBundle load_bundle_dir(const std::filesystem::path& dir) {
  const auto p = bundle_paths(dir);
  return load_bundle(p.container, p.config, p.vocab);
}

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir) {
  bundle.validate();
  const auto p = bundle_paths(dir);
  write_container(p.container, bundle_to_tensors(bundle));
  write_file(p.config, config_to_json(bundle.config));
  save_vocabulary(bundle.vocabulary, p.vocab);
}

std::string bundle_digest(const ModelBundle& bundle) {
  std::string blob = serialize_container(bundle_to_tensors(bundle));
  blob += config_to_json(bundle.config);
  for (const auto& t : bundle.vocabulary.tokens()) {
    blob += encode_vocab_token(t);
    blob.push_back('\n');
  }
  return sha256_hex(blob);
}

// ---- tokenizer -------------------------------------------------------------------

namespace {

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xe) return 3;
  if ((lead >> 3) == 0x1e) return 4;
  return 1;
}

}  // namespace

std::vector<TokenPiece> tokenize_with_offsets(const Vocabulary& vocab, std::string_view text) {
  std::vector<TokenPiece> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    bool matched = false;
    const std::size_t longest = std::min(vocab.max_token_bytes(), text.size() - pos);
    for (std::size_t len = longest; len > 0; --len) {
      const auto id = vocab.find(text.substr(pos, len));
      if (id && *id != Vocabulary::kUnk && *id != Vocabulary::kBos) {
        out.push_back({*id, pos, pos + len});
        pos += len;
        matched = true;
        break;
      }
    }
    if (!matched) {
      const std::size_t len =
          std::min(utf8_length(static_cast<unsigned char>(text[pos])), text.size() - pos);
      out.push_back({Vocabulary::kUnk, pos, pos + len});
      pos += len;
    }
  }
  return out;
}

std::vector<TokenId> tokenize(const Vocabulary& vocab, std::string_view text) {
  const auto pieces = tokenize_with_offsets(vocab, text);
  std::vector<TokenId> ids;
  ids.reserve(pieces.size());
  for (const auto& p : pieces) ids.push_back(p.id);
  return ids;
}

std::string detokenize(const Vocabulary& vocab, std::span<const TokenId> ids) {
  std::string out;
  for (TokenId id : ids) out += vocab.token(id);
  return out;
}

// ---- embeddings ----------------------------------------------------------------------

bool EmbeddingTable::add(std::string word, std::vector<float> vec) {
  if (vec.size() != dim_) {
    throw DimensionError("embedding for '" + word + "' has " + std::to_string(vec.size()) +
                         " values, table dim is " + std::to_string(dim_));
  }
  if (index_.count(word)) return false;
  index_.emplace(word, order_.size());
  order_.push_back(std::move(word));
  vectors_.push_back(std::move(vec));
  return true;
}

bool EmbeddingTable::contains(std::string_view word) const {
  return index_.count(std::string(word)) != 0;
}

std::optional<std::span<const float>> EmbeddingTable::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return std::span<const float>(vectors_[it->second]);
}

EmbeddingTable parse_glove(std::istream& in) {
  EmbeddingTable table;
  bool first = true;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;

    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (!rest.empty()) {
      const auto start = rest.find_first_not_of(" \t");
      if (start == std::string_view::npos) break;
      rest.remove_prefix(start);
      const auto end = rest.find_first_of(" \t");
      fields.push_back(rest.substr(0, end));
      if (end == std::string_view::npos) break;
      rest.remove_prefix(end);
    }
    if (fields.size() < 2) throw FormatError("glove line " + std::to_string(line_no) + ": no vector");

    std::vector<float> vec;
    vec.reserve(fields.size() - 1);
    for (std::size_t i = 1; i < fields.size(); ++i) {
      float v = 0.0f;
      const auto* b = fields[i].data();
      const auto* e = b + fields[i].size();
      const auto res = std::from_chars(b, e, v);
      if (res.ec != std::errc() || res.ptr != e || !std::isfinite(v)) {
        throw FormatError("glove line " + std::to_string(line_no) + ": cannot parse '" +
                          std::string(fields[i]) + "'");
      }
      vec.push_back(v);
    }
    if (first) {
      table = EmbeddingTable(vec.size());
      first = false;
    } else if (vec.size() != table.dim()) {
      throw FormatError("glove line " + std::to_string(line_no) + ": expected " +
                        std::to_string(table.dim()) + " values, found " + std::to_string(vec.size()));
    }
    std::string word(fields[0]);
    if (!table.add(word, std::move(vec))) {
      warn("glove line " + std::to_string(line_no) + ": duplicate word '" + word +
           "' ignored (first occurrence kept)");
    }
  }
  if (first) throw FormatError("glove: empty file");
  return table;
}

EmbeddingTable load_glove(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return parse_glove(in);
}

// ---- word lists -------------------------------------------------------------------------

std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& ch : out) {
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
  }
  return out;
}

std::string glove_key(std::string_view token) {
  auto trim = [](std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return std::string_view{};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  };
  std::string_view s = trim(token);
  for (std::string_view marker : {std::string_view("\xE2\x96\x81"), std::string_view("\xC4\xA0")}) {
    while (s.substr(0, marker.size()) == marker) s.remove_prefix(marker.size());
  }
  return to_lower_ascii(trim(s));
}

std::vector<std::string> parse_word_list(std::istream& in) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    std::string word = to_lower_ascii(std::string_view(line).substr(b, e - b + 1));
    if (seen.insert(word).second) out.push_back(std::move(word));
  }
  return out;
}

std::vector<std::string> load_word_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open word list " + path.string());
  auto words = parse_word_list(in);
  if (words.empty()) throw ValidationError("word list " + path.string() + " is empty");
  return words;
}

}  // namespace alignlens
