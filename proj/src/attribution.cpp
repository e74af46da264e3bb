#include "alignlens/attribution.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <fstream>
#include <sstream>

#include "alignlens/error.hpp"
#include "alignlens/parallel.hpp"
#include "json.hpp"

namespace alignlens {

using nlohmann::json;

std::string to_string(AttributionMethod m) {
  return m == AttributionMethod::occlusion ? "occlusion" : "gradient";
}

AttributionMethod parse_attribution_method(std::string_view name) {
  if (name == "occlusion") return AttributionMethod::occlusion;
  if (name == "gradient") return AttributionMethod::gradient;
  throw ValidationError("unknown attribution method '" + std::string(name) + "'");
}

AttributionMethod default_attribution_method(std::size_t prompt_len, std::size_t response_len) {
  return prompt_len * response_len <= 4096 ? AttributionMethod::occlusion : AttributionMethod::gradient;
}

namespace {

std::vector<TokenId> joined_context(std::span<const TokenId> prompt, std::span<const TokenId> response) {
  // The last response token is only ever a target, never context.
  std::vector<TokenId> ids(prompt.begin(), prompt.end());
  ids.insert(ids.end(), response.begin(), response.end() - 1);
  return ids;
}

MatrixD occlusion_importance(const ModelBundle& bundle, std::span<const TokenId> prompt,
                             std::span<const TokenId> response, std::size_t workers) {
  const std::size_t N = prompt.size(), M = response.size();
  const auto ids = joined_context(prompt, response);
  std::vector<std::size_t> rows(M);
  for (std::size_t m = 0; m < M; ++m) rows[m] = N - 1 + m;

  // Causal masking means row N-1+m of a pass over the joined context equals
  // the last row of a pass over Z_m, so one pass per occluded token covers
  // every response position. Slot N holds the unoccluded pass.
  std::vector<std::vector<double>> probs(N + 1);
  parallel_for(N + 1, workers, [&](std::size_t n) {
    const auto zeroed = n < N ? std::optional<std::size_t>(n) : std::nullopt;
    probs[n] = probabilities_at(bundle, embed_tokens(bundle, ids, zeroed), rows, response);
  });

  MatrixD out(N, M);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t m = 0; m < M; ++m) out(n, m) = probs[N][m] - probs[n][m];
  return out;
}

MatrixD gradient_importance(const ModelBundle& bundle, std::span<const TokenId> prompt,
                            std::span<const TokenId> response, const ImportanceOptions& options) {
  const std::size_t N = prompt.size(), M = response.size();
  const std::size_t D = bundle.config.d_model;
  const auto ids = joined_context(prompt, response);
  const ForwardTrace trace = forward(bundle, ids);
  MatrixD out(N, M);
  parallel_for(M, options.workers, [&](std::size_t m) {
    const auto g = backprop(bundle, trace, N - 1 + m, response[m], options.gradient_target);
    for (std::size_t n = 0; n < N; ++n) {
      const auto e = bundle.input_embeddings.row(prompt[n]);
      double acc = 0.0;
      for (std::size_t k = 0; k < D; ++k) acc += g.grads(n, k) * static_cast<double>(e[k]);
      out(n, m) = acc;
    }
  });
  return out;
}

template <typename T>
double density_impl(std::span<const T> row, double p_norm) {
  if (!(p_norm > 0.0)) throw ValidationError("density: p must be positive");
  double mx = 0.0;
  for (T v : row) {
    if (v < 0) throw ValidationError("density: entries must be nonnegative");
    mx = std::max(mx, static_cast<double>(v));
  }
  if (mx == 0.0) return 0.0;
  double l1 = 0.0, lp = 0.0;
  for (T v : row) {
    const double r = static_cast<double>(v) / mx;
    l1 += r;
    lp += std::pow(r, p_norm);
  }
  return l1 / std::pow(lp, 1.0 / p_norm);
}

// Byte offset of code point `cp` in UTF-8 text (text.size() at or past the end).
std::size_t code_point_to_byte(std::string_view text, std::size_t cp) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if ((static_cast<unsigned char>(text[i]) & 0xC0) == 0x80) continue;
    if (count == cp) return i;
    ++count;
  }
  return text.size();
}

std::size_t code_point_count(std::string_view text) {
  std::size_t count = 0;
  for (char ch : text)
    if ((static_cast<unsigned char>(ch) & 0xC0) != 0x80) ++count;
  return count;
}

CharSpan parse_span(const json& j) {
  CharSpan s;
  if (j.is_array() && j.size() == 2) {
    s.begin = j[0].get<std::size_t>();
    s.end = j[1].get<std::size_t>();
  } else if (j.is_object()) {
    s.begin = j.at("begin").get<std::size_t>();
    s.end = j.at("end").get<std::size_t>();
  } else {
    throw FormatError("instruction span must be [begin, end] or {begin, end}");
  }
  return s;
}

}  // namespace

MatrixD importance_matrix(const ModelBundle& bundle, std::span<const TokenId> prompt,
                          std::span<const TokenId> response, AttributionMethod method,
                          const ImportanceOptions& options) {
  if (prompt.empty()) throw ValidationError("importance_matrix: empty prompt");
  if (response.empty()) throw ValidationError("importance_matrix: empty response");
  for (TokenId id : response) {
    if (id >= bundle.config.vocab_size) throw RangeError("response token id out of range");
  }
  if (method == AttributionMethod::occlusion) return occlusion_importance(bundle, prompt, response, options.workers);
  return gradient_importance(bundle, prompt, response, options);
}

Matrix normalize_map(const MatrixD& importance, int level_count, int threshold_b) {
  if (level_count < 1) throw ValidationError("normalize_map: level count must be at least 1");
  if (threshold_b < 0 || threshold_b > level_count) {
    throw ValidationError("normalize_map: threshold must lie in [0, level count]");
  }
  Matrix out(importance.rows(), importance.cols());
  for (std::size_t m = 0; m < importance.cols(); ++m) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < importance.rows(); ++n) mx = std::max(mx, importance(n, m));
    if (!(mx > 0.0)) continue;
    for (std::size_t n = 0; n < importance.rows(); ++n) {
      const double level = std::ceil(level_count * (importance(n, m) / mx));
      out(n, m) = level > threshold_b ? static_cast<float>(level) : 0.0f;
    }
  }
  return out;
}

SalientMap compute_salient_map(const ModelBundle& bundle, std::span<const TokenId> prompt,
                               std::span<const TokenId> response, AttributionMethod method,
                               int level_count, int threshold_b, const ImportanceOptions& options) {
  SalientMap map;
  map.prompt_ids.assign(prompt.begin(), prompt.end());
  map.response_ids.assign(response.begin(), response.end());
  map.importance = importance_matrix(bundle, prompt, response, method, options);
  map.normalized = normalize_map(map.importance, level_count, threshold_b);
  map.level_count = level_count;
  map.threshold_b = threshold_b;
  map.method = method;
  return map;
}

double density(std::span<const float> row, double p_norm) { return density_impl(row, p_norm); }
double density(std::span<const double> row, double p_norm) { return density_impl(row, p_norm); }

DensityProfile density_profile(const Matrix& normalized, double p_norm) {
  DensityProfile prof;
  prof.p_norm = p_norm;
  prof.raw_density.resize(normalized.rows());
  double total = 0.0;
  for (std::size_t n = 0; n < normalized.rows(); ++n) {
    prof.raw_density[n] = density(normalized.row(n), p_norm);
    total += prof.raw_density[n];
  }
  prof.instance_normalized.assign(normalized.rows(), 0.0);
  if (total > 0.0) {
    const double avg = total / static_cast<double>(normalized.rows());
    for (std::size_t n = 0; n < normalized.rows(); ++n) prof.instance_normalized[n] = prof.raw_density[n] / avg;
  }
  return prof;
}

// ---- annotated instances ---------------------------------------------------

std::vector<AnnotatedInstance> parse_instances(std::istream& in) {
  std::vector<AnnotatedInstance> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "instances line " + std::to_string(line_no) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(where + e.what());
    }
    AnnotatedInstance inst;
    try {
      inst.prompt = j.at("prompt").get<std::string>();
      inst.response = j.at("response").get<std::string>();
      inst.followed = j.at("followed").get<bool>();
      inst.dataset = j.value("dataset", std::string());
      for (const auto& s : j.value("instruction_spans", json::array())) inst.instruction_spans.push_back(parse_span(s));
    } catch (const json::exception& e) {
      throw FormatError(where + e.what());
    }
    const std::size_t len = code_point_count(inst.prompt);
    auto spans = inst.instruction_spans;
    std::sort(spans.begin(), spans.end(), [](const CharSpan& a, const CharSpan& b) { return a.begin < b.begin; });
    for (std::size_t i = 0; i < spans.size(); ++i) {
      if (spans[i].begin >= spans[i].end || spans[i].end > len) {
        throw ValidationError(where + "instruction span out of prompt range");
      }
      if (i > 0 && spans[i].begin < spans[i - 1].end) throw ValidationError(where + "instruction spans overlap");
    }
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<AnnotatedInstance> load_instances(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open instance file " + path.string());
  return parse_instances(in);
}

std::vector<bool> span_token_mask(const AnnotatedInstance& instance,
                                  std::span<const TokenPiece> prompt_pieces) {
  std::vector<std::pair<std::size_t, std::size_t>> bytes;
  for (const auto& s : instance.instruction_spans) {
    bytes.emplace_back(code_point_to_byte(instance.prompt, s.begin), code_point_to_byte(instance.prompt, s.end));
  }
  std::vector<bool> mask(prompt_pieces.size(), false);
  for (std::size_t t = 0; t < prompt_pieces.size(); ++t) {
    for (const auto& [b, e] : bytes) {
      if (prompt_pieces[t].begin < e && prompt_pieces[t].end > b) mask[t] = true;
    }
  }
  return mask;
}

std::string to_string(Exclusion e) {
  switch (e) {
    case Exclusion::none: return "none";
    case Exclusion::short_response: return "short_response";
    case Exclusion::zero_density: return "zero_density";
    case Exclusion::empty_span: return "empty_span";
  }
  return "?";
}

InstanceScore score_from_densities(std::span<const double> densities, const std::vector<bool>& in_span) {
  if (in_span.size() != densities.size()) throw DimensionError("score: span mask length differs from prompt");
  InstanceScore s;
  double total = 0.0, span_total = 0.0;
  std::size_t span_count = 0;
  for (std::size_t i = 0; i < densities.size(); ++i) {
    total += densities[i];
    if (in_span[i]) {
      span_total += densities[i];
      ++span_count;
    }
  }
  if (span_count == 0) {
    s.excluded = Exclusion::empty_span;
    return s;
  }
  if (!(total > 0.0)) {
    s.excluded = Exclusion::zero_density;
    return s;
  }
  const double avg = total / static_cast<double>(densities.size());
  s.value = (span_total / static_cast<double>(span_count)) / avg;
  return s;
}

InstanceScore instance_score(const SalientMap& map, const std::vector<bool>& in_span, double p_norm,
                             std::size_t min_response_len) {
  if (map.response_ids.size() < min_response_len) {
    InstanceScore s;
    s.excluded = Exclusion::short_response;
    return s;
  }
  const auto prof = density_profile(map.normalized, p_norm);
  return score_from_densities(prof.raw_density, in_span);
}

// ---- position analysis -----------------------------------------------------

std::vector<std::pair<std::size_t, std::size_t>> split_sentences(std::string_view text) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    bool cut = ch == '\n';
    if (ch == '.' || ch == '!' || ch == '?') {
      cut = i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1]));
    }
    if (cut) {
      out.emplace_back(start, i + 1);
      start = i + 1;
    }
  }
  if (start < text.size()) out.emplace_back(start, text.size());
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> sentence_token_ranges(
    std::string_view text, std::span<const TokenPiece> pieces) {
  const auto sentences = split_sentences(text);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t t = 0;
  for (const auto& [b, e] : sentences) {
    const std::size_t first = t;
    while (t < pieces.size() && pieces[t].begin < e) ++t;
    if (t > first) out.emplace_back(first, t);
  }
  if (t < pieces.size()) {
    if (out.empty()) out.emplace_back(t, pieces.size());
    else out.back().second = pieces.size();
  }
  return out;
}

SegmentProfile segment_profile(std::span<const double> densities,
                               std::span<const std::pair<std::size_t, std::size_t>> sentences) {
  std::size_t expected = 0;
  for (const auto& [b, e] : sentences) {
    if (b != expected || e < b) throw ValidationError("segment_profile: sentences must partition the prompt");
    expected = e;
  }
  if (expected != densities.size()) throw ValidationError("segment_profile: sentences must partition the prompt");

  SegmentProfile prof;
  for (const auto& [b, e] : sentences) {
    const std::size_t n = e - b;
    if (n == 0) continue;
    double mass = 0.0;
    for (std::size_t i = b; i < e; ++i) {
      if (densities[i] < 0.0) throw ValidationError("segment_profile: negative density");
      mass += densities[i];
    }
    if (!(mass > 0.0)) continue;
    std::array<double, 4> seg{};
    for (std::size_t i = 1; i <= n; ++i) {
      // Segment k holds positions ceil((k-1)n/4) < i <= ceil(kn/4).
      std::size_t k = 0;
      while (i > ((k + 1) * n + 3) / 4) ++k;
      seg[k] += densities[b + i - 1] / mass;
    }
    for (std::size_t k = 0; k < 4; ++k) prof.shares[k] += seg[k];
    ++prof.sentences_used;
  }
  if (prof.sentences_used > 0) {
    for (double& s : prof.shares) s /= static_cast<double>(prof.sentences_used);
  }
  return prof;
}

// ---- export ----------------------------------------------------------------

std::string salient_map_tsv(const SalientMap& map) {
  std::ostringstream os;
  for (std::size_t n = 0; n < map.normalized.rows(); ++n) {
    for (std::size_t m = 0; m < map.normalized.cols(); ++m) {
      if (m) os << '\t';
      os << static_cast<long>(map.normalized(n, m));
    }
    os << '\n';
  }
  return os.str();
}

std::string salient_map_json(const SalientMap& map, const Vocabulary& vocab) {
  json j = json::object();
  j["method"] = to_string(map.method);
  j["level_count"] = map.level_count;
  j["threshold_b"] = map.threshold_b;
  json pt = json::array(), rt = json::array();
  for (TokenId id : map.prompt_ids) pt.push_back(vocab.token(id));
  for (TokenId id : map.response_ids) rt.push_back(vocab.token(id));
  j["prompt_tokens"] = pt;
  j["response_tokens"] = rt;
  j["prompt_ids"] = map.prompt_ids;
  j["response_ids"] = map.response_ids;
  json imp = json::array(), norm = json::array();
  for (std::size_t n = 0; n < map.importance.rows(); ++n) {
    imp.push_back(std::vector<double>(map.importance.row(n).begin(), map.importance.row(n).end()));
    json row = json::array();
    for (float v : map.normalized.row(n)) row.push_back(static_cast<long>(v));
    norm.push_back(row);
  }
  j["importance"] = imp;
  j["normalized"] = norm;
  return j.dump(2) + "\n";
}

SalientMapFile parse_salient_map_json(std::string_view json_text) {
  SalientMapFile f;
  try {
    const json j = json::parse(json_text);
    auto& m = f.map;
    m.method = parse_attribution_method(j.at("method").get<std::string>());
    m.level_count = j.at("level_count").get<int>();
    m.threshold_b = j.at("threshold_b").get<int>();
    m.prompt_ids = j.at("prompt_ids").get<std::vector<TokenId>>();
    m.response_ids = j.at("response_ids").get<std::vector<TokenId>>();
    f.prompt_tokens = j.at("prompt_tokens").get<std::vector<std::string>>();
    f.response_tokens = j.at("response_tokens").get<std::vector<std::string>>();
    const std::size_t N = m.prompt_ids.size(), M = m.response_ids.size();
    if (f.prompt_tokens.size() != N || f.response_tokens.size() != M) {
      throw FormatError("salient map: token lists do not match ids");
    }
    m.importance = MatrixD(N, M);
    m.normalized = Matrix(N, M);
    const auto& imp = j.at("importance");
    const auto& norm = j.at("normalized");
    if (imp.size() != N || norm.size() != N) throw FormatError("salient map: wrong number of rows");
    for (std::size_t n = 0; n < N; ++n) {
      if (imp[n].size() != M || norm[n].size() != M) throw FormatError("salient map: wrong number of columns");
      for (std::size_t c = 0; c < M; ++c) {
        m.importance(n, c) = imp[n][c].get<double>();
        m.normalized(n, c) = norm[n][c].get<float>();
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("salient map: ") + e.what());
  }
  return f;
}

}  // namespace alignlens
