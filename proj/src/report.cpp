#include "alignlens/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "alignlens/error.hpp"
#include "alignlens/ffn.hpp"
#include "alignlens/io.hpp"
#include "alignlens/parallel.hpp"
#include "alignlens/stats.hpp"
#include "json.hpp"

#ifndef ALIGNLENS_VERSION
#define ALIGNLENS_VERSION "0.0.0"
#endif

namespace alignlens {

using nlohmann::ordered_json;

std::string tool_version() { return ALIGNLENS_VERSION; }

namespace {

bool same_double(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

bool same_opt(const std::optional<double>& a, const std::optional<double>& b) {
  if (a.has_value() != b.has_value()) return false;
  return !a || same_double(*a, *b);
}

ordered_json number_or_null(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

ordered_json param_json(const ParamValue& v) {
  return std::visit([](const auto& x) { return ordered_json(x); }, v);
}

ParamValue param_from_json(const ordered_json& j) {
  if (j.is_boolean()) return j.get<bool>();
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  throw FormatError("report: unsupported parameter value");
}

std::string params_digest(const std::vector<std::pair<std::string, ParamValue>>& params) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : params) j[k] = param_json(v);
  return sha256_hex(j.dump());
}

ReportMetadata make_metadata(const ModelBundle& a, const ModelBundle& b,
                             const std::vector<std::pair<std::string, ParamValue>>& params) {
  return {tool_version(), bundle_digest(a), bundle_digest(b), params_digest(params)};
}

ReportRow row(std::string label, std::optional<std::string> series, double value,
              std::optional<double> sd = std::nullopt, std::optional<double> p = std::nullopt,
              std::optional<std::int64_t> n = std::nullopt) {
  return {std::move(label), std::move(series), value, sd, p, n};
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

// Mean/sd row for a sample, NaN value when empty.
ReportRow sample_row(std::string label, std::string series, const std::vector<double>& xs,
                     std::optional<double> p = std::nullopt) {
  if (xs.empty()) return row(std::move(label), std::move(series), nan(), std::nullopt, p, 0);
  return row(std::move(label), std::move(series), mean(xs), sample_sd(xs), p, static_cast<std::int64_t>(xs.size()));
}

std::optional<double> p_greater(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) return std::nullopt;
  return group_compare(a, b, Alternative::greater).p_value;
}

void check_same_architecture(const ModelBundle& a, const ModelBundle& b) {
  const auto& ca = a.config;
  const auto& cb = b.config;
  if (ca.n_layers != cb.n_layers || ca.n_heads != cb.n_heads || ca.d_model != cb.d_model ||
      ca.d_head != cb.d_head || ca.d_ffn != cb.d_ffn) {
    throw DimensionError("bundles have different architectures");
  }
}

}  // namespace

// ---- report model ------------------------------------------------------------

bool ReportRow::operator==(const ReportRow& o) const {
  return label == o.label && series == o.series && same_double(value, o.value) && same_opt(sd, o.sd) &&
         same_opt(p_value, o.p_value) && n == o.n;
}

bool ReportSection::operator==(const ReportSection& o) const {
  return name == o.name && params == o.params && rows == o.rows;
}

bool DiffReport::operator==(const DiffReport& o) const {
  return metadata == o.metadata && sections == o.sections;
}

std::string DiffReport::to_json() const {
  ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["metadata"] = {{"tool_version", metadata.tool_version},
                   {"bundle_a", metadata.bundle_a},
                   {"bundle_b", metadata.bundle_b},
                   {"config_digest", metadata.config_digest}};
  ordered_json secs = ordered_json::object();
  for (const auto& s : sections) {
    ordered_json params = ordered_json::object();
    for (const auto& [k, v] : s.params) params[k] = param_json(v);
    ordered_json rows = ordered_json::array();
    for (const auto& r : s.rows) {
      ordered_json e;
      e["label"] = r.label;
      if (r.series) e["series"] = *r.series;
      e["value"] = number_or_null(r.value);
      if (r.sd) e["sd"] = number_or_null(*r.sd);
      if (r.p_value) e["p_value"] = number_or_null(*r.p_value);
      if (r.n) e["n"] = *r.n;
      rows.push_back(std::move(e));
    }
    secs[s.name] = {{"params", params}, {"rows", rows}};
  }
  j["sections"] = secs;
  return j.dump(2) + "\n";
}

std::string DiffReport::to_tsv() const {
  std::ostringstream os;
  os.precision(17);
  os << "section\tlabel\tseries\tvalue\tsd\tp_value\tn\n";
  auto num = [&](std::optional<double> v) {
    if (v && std::isfinite(*v)) os << *v;
  };
  for (const auto& s : sections) {
    for (const auto& r : s.rows) {
      os << s.name << '\t' << r.label << '\t' << r.series.value_or("") << '\t';
      num(r.value);
      os << '\t';
      num(r.sd);
      os << '\t';
      num(r.p_value);
      os << '\t';
      if (r.n) os << *r.n;
      os << '\n';
    }
  }
  return os.str();
}

const ReportSection& DiffReport::section(std::string_view name) const {
  for (const auto& s : sections) {
    if (s.name == name) return s;
  }
  throw ValidationError("report has no section '" + std::string(name) + "'");
}

DiffReport parse_report(std::string_view json_text) {
  DiffReport rep;
  try {
    const ordered_json j = ordered_json::parse(json_text);
    if (j.at("schema_version").get<int>() != DiffReport::kSchemaVersion) {
      throw FormatError("report: unsupported schema version");
    }
    const auto& m = j.at("metadata");
    rep.metadata = {m.at("tool_version").get<std::string>(), m.at("bundle_a").get<std::string>(),
                    m.at("bundle_b").get<std::string>(), m.at("config_digest").get<std::string>()};
    const auto& secs = j.at("sections");
    if (!secs.is_object()) throw FormatError("report: sections must be an object");
    for (const auto& [name, body] : secs.items()) {
      ReportSection s;
      s.name = name;
      const auto& params = body.at("params");
      if (!params.is_object()) throw FormatError("report: params must be an object");
      for (const auto& [k, v] : params.items()) s.params.emplace_back(k, param_from_json(v));
      for (const auto& r : body.at("rows")) {
        ReportRow out;
        out.label = r.at("label").get<std::string>();
        if (r.contains("series")) out.series = r["series"].get<std::string>();
        const auto& v = r.at("value");
        if (!v.is_null() && !v.is_number()) throw FormatError("report: value must be a number or null");
        out.value = v.is_null() ? nan() : v.get<double>();
        if (r.contains("sd")) out.sd = r["sd"].is_null() ? nan() : r["sd"].get<double>();
        if (r.contains("p_value")) {
          out.p_value = r["p_value"].is_null() ? nan() : r["p_value"].get<double>();
          if (std::isfinite(*out.p_value) && (*out.p_value < 0.0 || *out.p_value > 1.0)) {
            throw FormatError("report: p_value outside [0, 1]");
          }
        }
        if (r.contains("n")) out.n = r["n"].get<std::int64_t>();
        s.rows.push_back(std::move(out));
      }
      if (s.params.empty()) throw FormatError("report: section '" + name + "' lists no parameters");
      rep.sections.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
  return rep;
}

DiffReport merge_reports(const std::vector<DiffReport>& reports) {
  if (reports.empty()) throw ValidationError("merge_reports: nothing to merge");
  DiffReport out;
  out.metadata = reports.front().metadata;
  std::string digests;
  for (const auto& r : reports) {
    if (r.metadata.bundle_a != out.metadata.bundle_a || r.metadata.bundle_b != out.metadata.bundle_b) {
      throw ValidationError("merge_reports: reports refer to different bundles");
    }
    digests += r.metadata.config_digest;
    out.sections.insert(out.sections.end(), r.sections.begin(), r.sections.end());
  }
  if (reports.size() > 1) out.metadata.config_digest = sha256_hex(digests);
  return out;
}

// ---- density ------------------------------------------------------------------

ScoredInstance score_instance(const ModelBundle& bundle, const AnnotatedInstance& instance,
                              const DensityParams& params) {
  ScoredInstance out;
  const auto pieces = tokenize_with_offsets(bundle.vocabulary, instance.prompt);
  const auto response = tokenize(bundle.vocabulary, instance.response);
  if (response.size() < params.min_response_len || response.empty()) {
    out.score.excluded = Exclusion::short_response;
    return out;
  }
  if (pieces.empty()) {
    out.score.excluded = Exclusion::empty_span;
    return out;
  }
  std::vector<TokenId> prompt;
  for (const auto& p : pieces) prompt.push_back(p.id);
  const AttributionMethod method = params.method.value_or(default_attribution_method(prompt.size(), response.size()));
  ImportanceOptions opt;
  opt.workers = 1;
  const SalientMap map =
      compute_salient_map(bundle, prompt, response, method, params.level_count, params.threshold_b, opt);
  out.score = instance_score(map, span_token_mask(instance, pieces), params.p_norm, params.min_response_len);
  const auto prof = density_profile(map.normalized, params.p_norm);
  const auto sentences = sentence_token_ranges(instance.prompt, pieces);
  const auto seg = segment_profile(prof.raw_density, sentences);
  if (seg.sentences_used > 0) out.segments = seg;
  return out;
}

DiffReport run_density_report(const ModelBundle& bundle_a, const ModelBundle& bundle_b,
                              const std::vector<AnnotatedInstance>& instances, const DensityParams& params) {
  std::vector<std::pair<std::string, ParamValue>> p{
      {"L", std::int64_t{params.level_count}},
      {"b", std::int64_t{params.threshold_b}},
      {"p", params.p_norm},
      {"min_response_len", static_cast<std::int64_t>(params.min_response_len)},
      {"method", params.method ? to_string(*params.method) : std::string("auto")},
      {"normalization", std::string("instance_mean")}};

  const std::size_t n = instances.size();
  std::vector<ScoredInstance> sa(n), sb(n);
  parallel_for(2 * n, params.workers, [&](std::size_t job) {
    if (job < n) sa[job] = score_instance(bundle_a, instances[job], params);
    else sb[job - n] = score_instance(bundle_b, instances[job - n], params);
  });

  std::vector<std::string> datasets;
  for (const auto& inst : instances) {
    if (std::find(datasets.begin(), datasets.end(), inst.dataset) == datasets.end()) datasets.push_back(inst.dataset);
  }
  std::sort(datasets.begin(), datasets.end());

  ReportSection dens{"density", p, {}};
  std::size_t included = 0;
  for (const auto& ds : datasets) {
    std::vector<double> a, b;
    for (std::size_t i = 0; i < n; ++i) {
      if (instances[i].dataset != ds) continue;
      if (sa[i].score.included()) a.push_back(sa[i].score.value);
      if (sb[i].score.included()) b.push_back(sb[i].score.value);
    }
    included += a.size() + b.size();
    dens.rows.push_back(sample_row(ds, "a", a));
    dens.rows.push_back(sample_row(ds, "b", b, p_greater(b, a)));
  }
  if (included == 0) throw ValidationError("density report: every instance was excluded");

  ReportSection followed{"density_followed", p, {}};
  for (const auto& [tag, scored] : {std::pair<const char*, const std::vector<ScoredInstance>*>{"a", &sa}, {"b", &sb}}) {
    std::vector<double> yes, no;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(*scored)[i].score.included()) continue;
      (instances[i].followed ? yes : no).push_back((*scored)[i].score.value);
    }
    followed.rows.push_back(sample_row("followed", tag, yes, p_greater(yes, no)));
    followed.rows.push_back(sample_row("unfollowed", tag, no));
  }

  auto seg_params = p;
  seg_params.emplace_back("segments", std::int64_t{4});
  ReportSection segs{"segment_profile", seg_params, {}};
  for (const auto& [tag, scored] : {std::pair<const char*, const std::vector<ScoredInstance>*>{"a", &sa}, {"b", &sb}}) {
    std::array<std::vector<double>, 4> shares;
    for (const auto& s : *scored) {
      if (!s.segments) continue;
      for (std::size_t k = 0; k < 4; ++k) shares[k].push_back(s.segments->shares[k]);
    }
    for (std::size_t k = 0; k < 4; ++k) segs.rows.push_back(sample_row("segment_" + std::to_string(k + 1), tag, shares[k]));
  }

  DiffReport rep;
  rep.metadata = make_metadata(bundle_a, bundle_b, p);
  rep.sections = {std::move(dens), std::move(followed), std::move(segs)};
  return rep;
}

// ---- attention ----------------------------------------------------------------

DiffReport run_attention_diff(const ModelBundle& bundle_a, const ModelBundle& bundle_b, const EmbeddingTable& glove,
                              const std::vector<std::string>& instruction_verbs,
                              const std::vector<std::string>& general_verbs, const AttentionDiffParams& params) {
  check_same_architecture(bundle_a, bundle_b);
  if (instruction_verbs.empty() || general_verbs.empty()) throw ValidationError("attention diff: empty verb list");
  const ThresholdTable thresholds = params.reference_words.empty()
                                        ? ThresholdTable(glove, params.reference_count)
                                        : ThresholdTable(glove, params.reference_words);
  std::vector<std::pair<std::string, ParamValue>> p{
      {"K", static_cast<std::int64_t>(params.k)},
      {"top_n", static_cast<std::int64_t>(params.top_n)},
      {"theta_policy", std::string("mean+1.96sd")},
      {"reference_words", static_cast<std::int64_t>(thresholds.reference_words().size())},
      {"glove_dim", static_cast<std::int64_t>(glove.dim())}};

  AttentionOptions opt;
  opt.k = params.k;
  opt.top_n = params.top_n;
  opt.workers = params.workers;
  const auto pa = all_head_profiles(bundle_a, thresholds, opt);
  const auto pb = all_head_profiles(bundle_b, thresholds, opt);

  const std::size_t L = bundle_a.config.n_layers, H = bundle_a.config.n_heads;
  auto ip = p;
  ip.emplace_back("band_size", static_cast<std::int64_t>(params.intersection_band));
  ReportSection inter{"intersection_rate", ip, {}};
  for (std::size_t band = 0; band < band_count(L, params.intersection_band); ++band) {
    std::vector<double> head_gap, neuron_gap;
    for (std::size_t l = band * params.intersection_band; l < std::min(L, (band + 1) * params.intersection_band); ++l) {
      for (std::size_t h = 0; h < H; ++h) {
        const auto& a = pa.at(l, h);
        const auto& b = pb.at(l, h);
        if (!a.pairs.empty() || !b.pairs.empty()) head_gap.push_back(1.0 - intersection_rate(a, b));
        for (std::size_t d = 0; d < a.neuron_pairs.size(); ++d) {
          if (a.neuron_pairs[d].empty() && b.neuron_pairs[d].empty()) continue;
          neuron_gap.push_back(1.0 - intersection_rate(a.neuron_pairs[d], b.neuron_pairs[d]));
        }
      }
    }
    const std::string label = band_label(band, params.intersection_band, L);
    inter.rows.push_back(sample_row(label, "head", head_gap));
    inter.rows.push_back(sample_row(label, "neuron", neuron_gap));
  }

  std::vector<std::string> verbs = instruction_verbs;
  verbs.insert(verbs.end(), general_verbs.begin(), general_verbs.end());
  const VerbHeadStats stats = verb_head_stats(pa, pb, verbs, params.verb_band);
  auto vp = p;
  vp.emplace_back("band_size", static_cast<std::int64_t>(params.verb_band));
  vp.emplace_back("instruction_verbs", static_cast<std::int64_t>(instruction_verbs.size()));
  vp.emplace_back("general_verbs", static_cast<std::int64_t>(general_verbs.size()));
  ReportSection verb_sec{"verb_heads", vp, {}};
  ReportSection detail{"verb_detail", vp, {}};
  for (std::size_t band = 0; band < stats.n_bands; ++band) {
    std::vector<double> instr, general;
    for (std::size_t i = 0; i < verbs.size(); ++i) {
      const auto& c = stats.at(band, i);
      if (!c.changed()) continue;
      (i < instruction_verbs.size() ? instr : general).push_back(c.proportion_more());
    }
    const std::string label = band_label(band, params.verb_band, L);
    verb_sec.rows.push_back(sample_row(label, "instruction", instr, p_greater(instr, general)));
    verb_sec.rows.push_back(sample_row(label, "general", general));
    for (std::size_t i = 0; i < verbs.size(); ++i) {
      const auto& c = stats.at(band, i);
      if (!c.changed()) continue;
      detail.rows.push_back(row(c.verb, label, c.proportion_more(), std::nullopt, std::nullopt,
                                static_cast<std::int64_t>(c.heads_more + c.heads_less)));
    }
  }

  DiffReport rep;
  rep.metadata = make_metadata(bundle_a, bundle_b, p);
  rep.sections = {std::move(inter), std::move(verb_sec), std::move(detail)};
  return rep;
}

// ---- ffn ----------------------------------------------------------------------

DiffReport run_ffn_diff(const ModelBundle& bundle_a, const ModelBundle& bundle_b,
                        const std::vector<ConceptAnnotation>& annotations_a,
                        const std::vector<ConceptAnnotation>& annotations_b, const FfnDiffParams& params) {
  check_same_architecture(bundle_a, bundle_b);
  if (annotations_a.empty() || annotations_b.empty()) throw ValidationError("ffn diff: missing annotations");
  std::vector<std::pair<std::string, ParamValue>> p{
      {"R", static_cast<std::int64_t>(params.rank_r)},
      {"k", static_cast<std::int64_t>(params.top_k_words)},
      {"band_size", static_cast<std::int64_t>(params.layer_band)},
      {"test", std::string("welch_two_sided")}};

  const DistributionReport dist = aggregate_distribution(annotations_a, annotations_b);
  ReportSection scen{"concept_scenario", p, {}};
  ReportSection ling{"concept_linguistic", p, {}};
  for (const auto& r : dist.rows) {
    auto& sec = r.group == "scenario" ? scen : ling;
    sec.rows.push_back(sample_row(r.category, "a", r.percent_a));
    sec.rows.push_back(sample_row(r.category, "b", r.percent_b, r.p_value));
  }

  ReportSection interp{"interpretability", p, {}};
  {
    std::optional<double> pv;
    if (dist.interpretability_a.size() >= 2 && dist.interpretability_b.size() >= 2) {
      pv = group_compare(dist.interpretability_a, dist.interpretability_b, Alternative::two_sided).p_value;
    }
    interp.rows.push_back(sample_row("all", "a", dist.interpretability_a));
    interp.rows.push_back(sample_row("all", "b", dist.interpretability_b, pv));
  }

  ReportSection by_band{"linguistic_by_band", p, {}};
  for (const auto& [tag, anns] : {std::pair<const char*, const std::vector<ConceptAnnotation>*>{"a", &annotations_a},
                                  {"b", &annotations_b}}) {
    std::vector<LayerLabel> labels;
    std::map<std::size_t, std::pair<std::size_t, std::size_t>> ok_by_band;
    for (const auto& c : *anns) {
      for (const auto& r : c.repeats) {
        auto& [ok, total] = ok_by_band[c.layer / params.layer_band];
        ++total;
        if (r.failed) continue;
        ++ok;
        if (r.linguistic) labels.push_back({c.layer, *r.linguistic});
      }
    }
    const auto summary = layer_group_summary({}, params.rank_r, params.layer_band, labels);
    for (const auto& band : summary) {
      for (const auto& level : linguistic_categories()) {
        const auto it = band.category_percent.find(level);
        by_band.rows.push_back(row(band.label, std::string(tag) + "/" + level,
                                   it == band.category_percent.end() ? 0.0 : it->second));
      }
      const auto [ok, total] = ok_by_band[band.band];
      by_band.rows.push_back(row(band.label, std::string(tag) + "/interpretable",
                                 total ? 100.0 * static_cast<double>(ok) / static_cast<double>(total) : nan(),
                                 std::nullopt, std::nullopt, static_cast<std::int64_t>(total)));
    }
  }

  ReportSection var{"explained_variance", p, {}};
  const auto pca_a = all_layer_pca(bundle_a, params.workers);
  const auto pca_b = all_layer_pca(bundle_b, params.workers);
  for (const auto& [tag, pcas] : {std::pair<const char*, const std::vector<LayerPca>*>{"a", &pca_a}, {"b", &pca_b}}) {
    std::vector<VarianceCurve> curves;
    std::vector<double> at_r;
    for (const auto& pc : *pcas) {
      curves.push_back(pc.curve);
      at_r.push_back(pc.curve.at(params.rank_r));
    }
    var.rows.push_back(sample_row("all", tag, at_r));
    for (const auto& band : layer_group_summary(curves, params.rank_r, params.layer_band)) {
      var.rows.push_back(row(band.label, tag, band.mean_variance_at_rank));
    }
  }

  DiffReport rep;
  rep.metadata = make_metadata(bundle_a, bundle_b, p);
  rep.sections = {std::move(scen), std::move(ling), std::move(interp), std::move(by_band), std::move(var)};
  return rep;
}

// ---- rendering ----------------------------------------------------------------

ImageFormat parse_image_format(std::string_view name) {
  if (name == "ppm") return ImageFormat::ppm;
  if (name == "svg") return ImageFormat::svg;
  throw ValidationError("unknown image format '" + std::string(name) + "'");
}

namespace {

int cell_level(const SalientMap& map, std::size_t n, std::size_t m) {
  const double v = map.normalized(n, m) / static_cast<double>(map.level_count);
  return static_cast<int>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_heatmap_bytes(const SalientMap& map, const std::vector<std::string>& prompt_tokens,
                                 const std::vector<std::string>& response_tokens, ImageFormat format,
                                 std::size_t cell) {
  const std::size_t N = map.normalized.rows(), M = map.normalized.cols();
  if (cell == 0) throw ValidationError("render: cell size must be positive");
  if (map.level_count < 1) throw ValidationError("render: level count must be positive");
  if (format == ImageFormat::ppm) {
    const std::size_t w = M * cell, h = N * cell;
    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + 3 * w * h);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const char v = static_cast<char>(cell_level(map, y / cell, x / cell));
        out.append(3, v);
      }
    }
    return out;
  }

  if (prompt_tokens.size() != N || response_tokens.size() != M) {
    throw DimensionError("render: token labels do not match the map");
  }
  std::size_t left = 0, top = 0;
  for (const auto& t : prompt_tokens) left = std::max(left, xml_escape(t).size());
  for (const auto& t : response_tokens) top = std::max(top, xml_escape(t).size());
  left = left * 7 + 8;
  top = top * 7 + 8;
  const std::size_t w = left + M * cell, h = top + N * cell;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << ' ' << h << "\" font-family=\"monospace\" font-size=\"11\">\n";
  os << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  for (std::size_t n = 0; n < N; ++n) {
    os << "<text x=\"" << left - 4 << "\" y=\"" << top + n * cell + cell - 2 << "\" text-anchor=\"end\">"
       << xml_escape(prompt_tokens[n]) << "</text>\n";
  }
  for (std::size_t m = 0; m < M; ++m) {
    const std::size_t x = left + m * cell + cell - 2;
    os << "<text x=\"" << x << "\" y=\"" << top - 4 << "\" transform=\"rotate(-90 " << x << ' ' << top - 4
       << ")\">" << xml_escape(response_tokens[m]) << "</text>\n";
  }
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t m = 0; m < M; ++m) {
      const int v = cell_level(map, n, m);
      os << "<rect x=\"" << left + m * cell << "\" y=\"" << top + n * cell << "\" width=\"" << cell << "\" height=\""
         << cell << "\" fill=\"rgb(" << v << ',' << v << ',' << v << ")\"/>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

void render_heatmap(const SalientMap& map, const std::vector<std::string>& prompt_tokens,
                    const std::vector<std::string>& response_tokens, const std::filesystem::path& out_path,
                    ImageFormat format, std::size_t cell) {
  write_file(out_path, render_heatmap_bytes(map, prompt_tokens, response_tokens, format, cell));
}

}  // namespace alignlens
