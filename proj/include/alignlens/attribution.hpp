#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "alignlens/checkpoint.hpp"
#include "alignlens/runtime.hpp"

namespace alignlens {

enum class AttributionMethod { occlusion, gradient };

std::string to_string(AttributionMethod m);
AttributionMethod parse_attribution_method(std::string_view name);

// Occlusion while N*M stays within 4096 importance entries, gradient beyond.
AttributionMethod default_attribution_method(std::size_t prompt_len, std::size_t response_len);

struct ImportanceOptions {
  std::size_t workers = 1;
  GradientTarget gradient_target = GradientTarget::probability;
};

// I(n, m) for prompt token n and response token m. Response token m is
// predicted from prompt ++ response[0..m).
//   occlusion: p(y_m | Z_m) - p(y_m | Z_m with row n zeroed)
//   gradient:  dp(y_m | Z_m)/dE_i[x_n] . E_i[x_n]
MatrixD importance_matrix(const ModelBundle& bundle, std::span<const TokenId> prompt,
                          std::span<const TokenId> response, AttributionMethod method,
                          const ImportanceOptions& options = {});

// Per column: ceil(levels * I / max I), zeroed where <= threshold. Columns
// whose max is not positive become zero.
Matrix normalize_map(const MatrixD& importance, int level_count, int threshold_b);

struct SalientMap {
  std::vector<TokenId> prompt_ids;
  std::vector<TokenId> response_ids;
  MatrixD importance;  // N x M
  Matrix normalized;   // N x M, integer levels
  int level_count = 10;
  int threshold_b = 0;
  AttributionMethod method = AttributionMethod::occlusion;
};

SalientMap compute_salient_map(const ModelBundle& bundle, std::span<const TokenId> prompt,
                               std::span<const TokenId> response, AttributionMethod method,
                               int level_count, int threshold_b, const ImportanceOptions& options = {});

// l1 / lp of a nonnegative row; 0 for an all-zero row.
double density(std::span<const float> row, double p_norm);
double density(std::span<const double> row, double p_norm);

struct DensityProfile {
  std::vector<double> raw_density;          // one per prompt token
  std::vector<double> instance_normalized;  // raw / mean(raw); zeros when all raw are zero
  double p_norm = 4.0;
};

DensityProfile density_profile(const Matrix& normalized, double p_norm);

// ---- annotated instances ---------------------------------------------------

struct CharSpan {
  std::size_t begin = 0;  // code points, half-open
  std::size_t end = 0;

  bool operator==(const CharSpan&) const = default;
};

struct AnnotatedInstance {
  std::string prompt;
  std::string response;
  std::vector<CharSpan> instruction_spans;
  bool followed = true;
  std::string dataset;
};

// JSON lines with prompt, response, instruction_spans ([[begin, end], ...]),
// followed and dataset. Spans are validated against the prompt.
std::vector<AnnotatedInstance> parse_instances(std::istream& in);
std::vector<AnnotatedInstance> load_instances(const std::filesystem::path& path);

// Marks the prompt tokens that overlap an instruction span.
std::vector<bool> span_token_mask(const AnnotatedInstance& instance,
                                  std::span<const TokenPiece> prompt_pieces);

enum class Exclusion { none, short_response, zero_density, empty_span };

std::string to_string(Exclusion e);

struct InstanceScore {
  double value = 0.0;
  Exclusion excluded = Exclusion::none;

  bool included() const { return excluded == Exclusion::none; }
};

// Mean instance-normalized density over the marked tokens.
InstanceScore score_from_densities(std::span<const double> densities, const std::vector<bool>& in_span);

InstanceScore instance_score(const SalientMap& map, const std::vector<bool>& in_span, double p_norm,
                             std::size_t min_response_len);

// ---- position analysis -----------------------------------------------------

// Byte ranges of sentences covering `text`. A sentence ends after '.', '!'
// or '?' followed by whitespace or end of text, and after a newline.
std::vector<std::pair<std::size_t, std::size_t>> split_sentences(std::string_view text);

// Token index ranges [begin, end) per sentence; a token belongs to the
// sentence holding its first byte. Sentences without tokens are dropped.
std::vector<std::pair<std::size_t, std::size_t>> sentence_token_ranges(
    std::string_view text, std::span<const TokenPiece> pieces);

struct SegmentProfile {
  std::array<double, 4> shares{};
  std::size_t sentences_used = 0;
};

// Sentence k of length n splits at ceil(j*n/4), j = 1..3. Densities are
// normalized per sentence before averaging; zero-mass sentences are skipped.
// `sentences` must partition [0, densities.size()).
SegmentProfile segment_profile(std::span<const double> densities,
                               std::span<const std::pair<std::size_t, std::size_t>> sentences);

// ---- export ----------------------------------------------------------------

std::string salient_map_tsv(const SalientMap& map);
std::string salient_map_json(const SalientMap& map, const Vocabulary& vocab);

struct SalientMapFile {
  SalientMap map;
  std::vector<std::string> prompt_tokens;
  std::vector<std::string> response_tokens;
};

SalientMapFile parse_salient_map_json(std::string_view json_text);

}  // namespace alignlens
