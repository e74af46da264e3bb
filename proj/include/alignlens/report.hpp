#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "alignlens/annotator.hpp"
#include "alignlens/attention.hpp"
#include "alignlens/attribution.hpp"
#include "alignlens/checkpoint.hpp"

namespace alignlens {

std::string tool_version();

using ParamValue = std::variant<std::int64_t, double, bool, std::string>;

struct ReportRow {
  std::string label;
  std::optional<std::string> series;
  double value = 0.0;  // NaN is written as null
  std::optional<double> sd;
  std::optional<double> p_value;
  std::optional<std::int64_t> n;  // samples behind the value

  bool operator==(const ReportRow&) const;
};

struct ReportSection {
  std::string name;
  std::vector<std::pair<std::string, ParamValue>> params;
  std::vector<ReportRow> rows;

  bool operator==(const ReportSection&) const;
};

struct ReportMetadata {
  std::string tool_version;
  std::string bundle_a;  // bundle digests
  std::string bundle_b;
  std::string config_digest;  // digest of the effective parameters

  bool operator==(const ReportMetadata&) const = default;
};

struct DiffReport {
  static constexpr int kSchemaVersion = 1;

  ReportMetadata metadata;
  std::vector<ReportSection> sections;

  std::string to_json() const;
  // section, label, series, value, sd, p_value, n
  std::string to_tsv() const;
  const ReportSection& section(std::string_view name) const;

  bool operator==(const DiffReport&) const;
};

// Parses and validates a report produced by to_json().
DiffReport parse_report(std::string_view json_text);

// Concatenates sections of several reports that share bundle digests.
DiffReport merge_reports(const std::vector<DiffReport>& reports);

// ---- density ----------------------------------------------------------------

struct DensityParams {
  int level_count = 10;
  int threshold_b = 7;
  double p_norm = 4.0;
  std::size_t min_response_len = 5;
  std::optional<AttributionMethod> method;  // per-instance default when unset
  std::size_t workers = 1;
};

// Per-instance result under one bundle.
struct ScoredInstance {
  InstanceScore score;
  std::optional<SegmentProfile> segments;
};

ScoredInstance score_instance(const ModelBundle& bundle, const AnnotatedInstance& instance,
                              const DensityParams& params);

// Sections "density" (per dataset, b > a), "density_followed" (per bundle,
// followed > unfollowed) and "segment_profile".
DiffReport run_density_report(const ModelBundle& bundle_a, const ModelBundle& bundle_b,
                              const std::vector<AnnotatedInstance>& instances, const DensityParams& params);

// ---- attention ----------------------------------------------------------------

struct AttentionDiffParams {
  std::size_t k = 100;
  std::size_t top_n = 100;
  std::size_t reference_count = 1000;
  std::vector<std::string> reference_words;  // overrides reference_count when nonempty
  std::size_t intersection_band = 4;
  std::size_t verb_band = 8;
  std::size_t workers = 1;
};

// Sections "intersection_rate" (1 - M per band, head and neuron series),
// "verb_heads" (instruction vs general per band) and "verb_detail".
DiffReport run_attention_diff(const ModelBundle& bundle_a, const ModelBundle& bundle_b, const EmbeddingTable& glove,
                              const std::vector<std::string>& instruction_verbs,
                              const std::vector<std::string>& general_verbs, const AttentionDiffParams& params);

// ---- ffn ----------------------------------------------------------------------

struct FfnDiffParams {
  std::size_t rank_r = 300;
  std::size_t top_k_words = 15;
  std::size_t layer_band = 4;
  std::size_t workers = 1;
};

// Sections "concept_scenario", "concept_linguistic", "interpretability",
// "linguistic_by_band" and "explained_variance".
DiffReport run_ffn_diff(const ModelBundle& bundle_a, const ModelBundle& bundle_b,
                        const std::vector<ConceptAnnotation>& annotations_a,
                        const std::vector<ConceptAnnotation>& annotations_b, const FfnDiffParams& params);

// ---- salient map rendering ------------------------------------------------------

enum class ImageFormat { ppm, svg };

ImageFormat parse_image_format(std::string_view name);

// N x M grid, brightness proportional to S / level_count. PPM has no labels.
std::string render_heatmap_bytes(const SalientMap& map, const std::vector<std::string>& prompt_tokens,
                                 const std::vector<std::string>& response_tokens, ImageFormat format,
                                 std::size_t cell = 12);
void render_heatmap(const SalientMap& map, const std::vector<std::string>& prompt_tokens,
                    const std::vector<std::string>& response_tokens, const std::filesystem::path& out_path,
                    ImageFormat format, std::size_t cell = 12);

}  // namespace alignlens
