#include <cmath>
#include <set>

#include "alignlens/fixture.hpp"
#include "alignlens/io.hpp"
#include "alignlens/report.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace alignlens;

namespace {

// Prompts mix "span" letters (a-e) with filler letters (p-t); the span is the first word.
std::vector<AnnotatedInstance> letter_instances() {
  const std::vector<std::string> prompts{"abc pqr st", "bad qts rp", "ace ptq sr", "dab rst pq",
                                         "cab spr tq", "eda qrp ts"};
  std::vector<AnnotatedInstance> out;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    AnnotatedInstance inst;
    inst.prompt = prompts[i];
    inst.response = "the cat sat on";
    inst.instruction_spans = {{0, 3}};
    inst.followed = i % 2 == 0;
    inst.dataset = i < 3 ? "alpha" : "beta";
    out.push_back(inst);
  }
  return out;
}

const ReportRow& find_row(const ReportSection& s, const std::string& label, const std::string& series) {
  for (const auto& r : s.rows)
    if (r.label == label && r.series == series) return r;
  throw std::runtime_error("row not found: " + label + "/" + series);
}

std::vector<ConceptAnnotation> labelled(const std::vector<std::string>& scenario_per_concept) {
  std::vector<ConceptAnnotation> out;
  for (std::size_t c = 0; c < scenario_per_concept.size(); ++c) {
    ConceptAnnotation a;
    a.layer = c % 2;
    a.rank = c;
    for (std::size_t r = 0; r < 5; ++r) {
      RepeatAnnotation rep;
      rep.repeat = r;
      rep.description = "x";
      // Repeat r relabels concept r as writing, so the percentages vary across repeats.
      rep.scenarios = {c == r ? std::string("writing") : scenario_per_concept[c]};
      rep.linguistic = c % 3 == 0 ? "syntax" : "semantic";
      a.repeats.push_back(rep);
    }
    out.push_back(a);
  }
  return out;
}

SalientMap point_map(std::size_t n, std::size_t m, std::size_t pn, std::size_t pm) {
  SalientMap map;
  map.level_count = 10;
  map.prompt_ids.assign(n, 2);
  map.response_ids.assign(m, 2);
  map.importance = MatrixD(n, m);
  map.normalized = Matrix(n, m);
  map.normalized(pn, pm) = 10.0f;
  return map;
}

}  // namespace

TEST_CASE("identical bundles give neutral density rows") {
  const auto b = testing::tiny_bundle(1);
  DensityParams params;
  params.threshold_b = 0;
  params.min_response_len = 2;
  const auto rep = run_density_report(b, b, letter_instances(), params);
  const auto& dens = rep.section("density");
  CHECK(dens.rows.size() == 4);
  for (const auto& r : dens.rows) {
    if (r.p_value) CHECK(*r.p_value == doctest::Approx(0.5));
  }
  CHECK(find_row(dens, "alpha", "a").value == find_row(dens, "alpha", "b").value);
  CHECK(rep.metadata.bundle_a == rep.metadata.bundle_b);
  CHECK(rep.section("segment_profile").rows.size() == 8);
}

TEST_CASE("concentrating importance on the span raises the density score") {
  const auto a = testing::tiny_bundle(2);
  auto b = a;
  for (char c : std::string("pqrst ")) {
    const auto id = b.vocabulary.find(std::string(1, c));
    REQUIRE(id.has_value());
    for (float& x : b.input_embeddings.row(*id)) x = 0.0f;
  }
  DensityParams params;
  params.threshold_b = 0;
  params.min_response_len = 2;
  params.method = AttributionMethod::occlusion;
  const auto rep = run_density_report(a, b, letter_instances(), params);
  for (const std::string ds : {"alpha", "beta"}) {
    const auto& ra = find_row(rep.section("density"), ds, "a");
    const auto& rb = find_row(rep.section("density"), ds, "b");
    CHECK(rb.value > ra.value);
  }
}

TEST_CASE("short responses are excluded from the density report") {
  const auto b = testing::tiny_bundle(1);
  DensityParams params;
  params.min_response_len = 50;
  CHECK_THROWS_AS(run_density_report(b, b, letter_instances(), params), ValidationError);
}

TEST_CASE("report json and tsv round-trip") {
  DiffReport rep;
  rep.metadata = {"0.1.0", "aa", "bb", "cc"};
  rep.sections.push_back({"s", {{"K", std::int64_t{3}}, {"p", 4.0}, {"x", std::string("y")}, {"f", true}},
                          {{"r1", "a", 0.25, 0.1, 0.5, 4}, {"r2", std::nullopt, std::nan(""), std::nullopt, std::nullopt, 0}}});
  const auto json = rep.to_json();
  CHECK(json.find("null") != std::string::npos);
  CHECK(parse_report(json) == rep);
  CHECK(rep.to_tsv() == "section\tlabel\tseries\tvalue\tsd\tp_value\tn\ns\tr1\ta\t0.25\t0.10000000000000001\t0.5\t4\ns\tr2\t\t\t\t\t0\n");
  CHECK_THROWS_AS(parse_report("{\"schema_version\": 9}"), FormatError);
  CHECK_THROWS_AS(parse_report("not json"), FormatError);
  CHECK_THROWS_AS(rep.section("missing"), ValidationError);

  auto other = rep;
  other.sections[0].name = "t";
  const auto merged = merge_reports({rep, other});
  CHECK(merged.sections.size() == 2);
  other.metadata.bundle_a = "zz";
  CHECK_THROWS_AS(merge_reports({rep, other}), ValidationError);
}

TEST_CASE("attention diff of a bundle with itself shows no change") {
  const auto fx = make_planted_attention_fixture(3);
  AttentionDiffParams params;
  params.k = fx.top_k_words;
  const auto rep = run_attention_diff(fx.pretrained, fx.pretrained, fx.glove, fx.instruction_verbs, fx.control_verbs, params);
  for (const auto& r : rep.section("intersection_rate").rows) {
    if (r.n && *r.n > 0) CHECK(r.value == 0.0);
  }
  CHECK(rep.section("verb_detail").rows.empty());
  CHECK(parse_report(rep.to_json()) == rep);
}

TEST_CASE("randomizing one head makes its band the most changed") {
  const auto fx = make_planted_attention_fixture(4);
  auto b = fx.pretrained;
  Rng rng(77);
  for (auto* m : {&b.layers[9].wq[0], &b.layers[9].wk[0]})
    for (float& x : m->data()) x = static_cast<float>(rng.normal() * 0.3);
  AttentionDiffParams params;
  params.k = fx.top_k_words;
  const auto rep = run_attention_diff(fx.pretrained, b, fx.glove, fx.instruction_verbs, fx.control_verbs, params);
  const auto& inter = rep.section("intersection_rate");
  const double target = find_row(inter, "9-12", "head").value;
  CHECK(target > 0.0);
  CHECK(find_row(inter, "1-4", "head").value < target);
  CHECK(find_row(inter, "5-8", "head").value < target);
}

TEST_CASE("ffn diff on identical annotations") {
  const auto b = testing::tiny_bundle(3);
  const auto anns = labelled({"coding", "coding", "math", "translation", "coding", "math", "coding", "coding",
                              "math", "coding"});
  FfnDiffParams params;
  params.rank_r = 4;
  params.layer_band = 1;
  const auto rep = run_ffn_diff(b, b, anns, anns, params);
  for (const auto& name : {"concept_scenario", "concept_linguistic"})
    for (const auto& r : rep.section(name).rows)
      if (r.p_value) CHECK(*r.p_value == 1.0);
  for (const auto& r : rep.section("explained_variance").rows) {
    CHECK(r.value > 0.0);
    CHECK(r.value <= 1.0);
  }
  CHECK(find_row(rep.section("linguistic_by_band"), "1-1", "a/interpretable").value == 100.0);
}

TEST_CASE("ffn diff detects a shift from coding to writing") {
  const auto b = testing::tiny_bundle(3);
  std::vector<std::string> base(10, "coding");
  base[1] = "math";
  base[3] = "math";
  auto shifted = base;
  shifted[9] = "writing";
  FfnDiffParams params;
  params.rank_r = 4;
  const auto rep = run_ffn_diff(b, b, labelled(base), labelled(shifted), params);
  const auto& s = rep.section("concept_scenario");
  CHECK(find_row(s, "writing", "b").value > find_row(s, "writing", "a").value);
  CHECK(find_row(s, "coding", "b").value < find_row(s, "coding", "a").value);
}

TEST_CASE("heatmap rendering") {
  const auto dark = render_heatmap_bytes(point_map(2, 3, 0, 0), {}, {}, ImageFormat::ppm, 2);
  const std::string header = "P6\n6 4\n255\n";
  REQUIRE(dark.substr(0, header.size()) == header);
  const std::string pixels = dark.substr(header.size());
  CHECK(pixels.size() == 6 * 4 * 3);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 6; ++x) {
      const unsigned char v = static_cast<unsigned char>(pixels[3 * (y * 6 + x)]);
      CHECK(v == ((y < 2 && x < 2) ? 255 : 0));
    }

  auto zero = point_map(2, 2, 0, 0);
  zero.normalized(0, 0) = 0.0f;
  const auto z = render_heatmap_bytes(zero, {}, {}, ImageFormat::ppm, 1);
  for (std::size_t i = 11; i < z.size(); ++i) CHECK(z[i] == 0);

  CHECK_THROWS_AS(render_heatmap_bytes(zero, {"a"}, {"b", "c"}, ImageFormat::svg), DimensionError);
  CHECK_THROWS_AS(parse_image_format("png"), ValidationError);
}

TEST_CASE("heatmap golden files") {
  SalientMap map = point_map(3, 4, 1, 2);
  map.normalized(0, 0) = 5.0f;
  map.normalized(2, 3) = 3.0f;
  const std::vector<std::string> prompt{"Write", " a", " poem"}, response{"Roses", " are", " red", "\n"};
  CHECK(render_heatmap_bytes(map, prompt, response, ImageFormat::svg) ==
        read_file(testing::data_dir().parent_path() / "golden" / "heatmap.svg"));
  CHECK(render_heatmap_bytes(map, prompt, response, ImageFormat::ppm, 4) ==
        read_file(testing::data_dir().parent_path() / "golden" / "heatmap.ppm"));
}
