#include <cmath>
#include <sstream>

#include "alignlens/attribution.hpp"
#include "alignlens/fixture.hpp"
#include "doctest.h"
#include "reference_forward.hpp"
#include "test_support.hpp"

using namespace alignlens;

namespace {

double brute_force_occlusion(const ModelBundle& b, const std::vector<TokenId>& prompt,
                             const std::vector<TokenId>& response, std::size_t n, std::size_t m) {
  std::vector<TokenId> ctx = prompt;
  ctx.insert(ctx.end(), response.begin(), response.begin() + static_cast<std::ptrdiff_t>(m));
  return oracle::reference_prob(b, ctx, std::nullopt, response[m]) - oracle::reference_prob(b, ctx, n, response[m]);
}

MatrixD column(std::vector<double> v) {
  MatrixD m(v.size(), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(i, 0) = v[i];
  return m;
}

}  // namespace

TEST_CASE("occlusion importance equals the brute-force re-forward") {
  for (std::uint64_t seed : {1, 2}) {
    const auto b = testing::tiny_bundle(seed);
    const std::vector<TokenId> prompt{5, 9, 12, 3}, response{7, 8, 10};
    const auto imp = importance_matrix(b, prompt, response, AttributionMethod::occlusion);
    REQUIRE(imp.rows() == 4);
    REQUIRE(imp.cols() == 3);
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t m = 0; m < 3; ++m) CHECK(imp(n, m) == brute_force_occlusion(b, prompt, response, n, m));
  }
}

TEST_CASE("occlusion importance does not depend on the worker count") {
  const auto b = testing::tiny_bundle(3);
  const std::vector<TokenId> prompt{5, 9, 12, 3, 4}, response{7, 8, 10};
  ImportanceOptions four;
  four.workers = 4;
  CHECK(importance_matrix(b, prompt, response, AttributionMethod::occlusion) ==
        importance_matrix(b, prompt, response, AttributionMethod::occlusion, four));
}

TEST_CASE("zero embedding gives a zero occlusion row") {
  auto b = testing::tiny_bundle(4);
  for (float& x : b.input_embeddings.row(9)) x = 0.0f;
  const std::vector<TokenId> prompt{5, 9, 12}, response{7, 8};
  const auto imp = importance_matrix(b, prompt, response, AttributionMethod::occlusion);
  for (double x : imp.row(1)) CHECK(x == 0.0);
}

TEST_CASE("gradient importance is the directional derivative along the embedding") {
  const auto b = testing::tiny_bundle(5);
  const std::vector<TokenId> prompt{5, 9, 12}, response{7, 8};
  const auto imp = importance_matrix(b, prompt, response, AttributionMethod::gradient);
  const double h = 1e-4;
  for (std::size_t m = 0; m < response.size(); ++m) {
    std::vector<TokenId> ctx = prompt;
    ctx.insert(ctx.end(), response.begin(), response.begin() + static_cast<std::ptrdiff_t>(m));
    const auto base = embed_tokens(b, ctx);
    const std::size_t last = ctx.size() - 1;
    for (std::size_t n = 0; n < prompt.size(); ++n) {
      auto at = [&](double t) {
        MatrixD x = base;
        for (double& v : x.row(n)) v *= 1.0 + t;
        return probabilities_at(b, x, std::span<const std::size_t>(&last, 1),
                                std::span<const TokenId>(&response[m], 1))[0];
      };
      const double fd = (at(h) - at(-h)) / (2 * h);
      CHECK(imp(n, m) == doctest::Approx(fd).epsilon(1e-5).scale(1e-3));
    }
  }
}

TEST_CASE("default method switches on map size") {
  CHECK(default_attribution_method(64, 64) == AttributionMethod::occlusion);
  CHECK(default_attribution_method(64, 65) == AttributionMethod::gradient);
  CHECK(parse_attribution_method("gradient") == AttributionMethod::gradient);
  CHECK_THROWS(parse_attribution_method("saliency"));
}

TEST_CASE("normalize_map examples") {
  const auto s0 = normalize_map(column({0.5, 1.0, 0.25}), 10, 0);
  CHECK(s0.column(0) == std::vector<float>{5, 10, 3});
  const auto s7 = normalize_map(column({0.5, 1.0, 0.25}), 10, 7);
  CHECK(s7.column(0) == std::vector<float>{0, 10, 0});
  const auto z = normalize_map(column({0.0, 0.0}), 10, 0);
  CHECK(z.column(0) == std::vector<float>{0, 0});
  const auto neg = normalize_map(column({-0.5, -0.1}), 10, 0);
  CHECK(neg.column(0) == std::vector<float>{0, 0});
  CHECK_THROWS_AS(normalize_map(column({1.0}), 10, 11), ValidationError);
}

TEST_CASE("density examples") {
  CHECK(density(std::vector<double>{0, 0, 3.5, 0}, 4.0) == doctest::Approx(1.0));
  CHECK(density(std::vector<double>(16, 2.0), 4.0) == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(density(std::vector<double>{10, 10}, 4.0) == doctest::Approx(1.68179).epsilon(1e-5));
  CHECK(density(std::vector<double>{20, 0}, 4.0) == doctest::Approx(1.0));
  CHECK(density(std::vector<double>{0, 0}, 4.0) == 0.0);
  CHECK_THROWS_AS(density(std::vector<double>{-1, 2}, 4.0), ValidationError);
}

TEST_CASE("instance score examples") {
  const std::vector<double> d{2, 2, 1, 1};
  const auto s = score_from_densities(d, {true, true, false, false});
  CHECK(s.included());
  CHECK(s.value == doctest::Approx(4.0 / 3.0));
  CHECK(score_from_densities(d, {true, true, true, true}).value == doctest::Approx(1.0));
  CHECK(score_from_densities(d, {false, false, false, false}).excluded == Exclusion::empty_span);
  CHECK(score_from_densities(std::vector<double>{0, 0}, {true, false}).excluded == Exclusion::zero_density);

  SalientMap map;
  map.response_ids = {1, 2, 3};
  map.normalized = Matrix(2, 3, 1.0f);
  CHECK(instance_score(map, {true, false}, 4.0, 5).excluded == Exclusion::short_response);
}

TEST_CASE("instances parse spans in both notations") {
  std::istringstream in(
      R"({"prompt": "Write a poem.", "response": "Roses.", "instruction_spans": [[0, 5]], "followed": true, "dataset": "d1"})"
      "\n"
      R"({"prompt": "héllo there", "response": "x", "instruction_spans": [{"begin": 6, "end": 11}], "followed": false})"
      "\n");
  const auto inst = parse_instances(in);
  REQUIRE(inst.size() == 2);
  CHECK(inst[0].instruction_spans[0] == CharSpan{0, 5});
  CHECK(inst[0].dataset == "d1");
  CHECK_FALSE(inst[1].followed);

  std::istringstream out_of_range(R"({"prompt": "abc", "response": "x", "instruction_spans": [[1, 9]], "followed": true})");
  CHECK_THROWS_AS(parse_instances(out_of_range), ValidationError);
  std::istringstream overlap(
      R"({"prompt": "abcdef", "response": "x", "instruction_spans": [[0, 3], [2, 4]], "followed": true})");
  CHECK_THROWS_AS(parse_instances(overlap), ValidationError);
  std::istringstream broken("{not json");
  CHECK_THROWS_AS(parse_instances(broken), FormatError);
}

TEST_CASE("span mask uses code points") {
  Vocabulary v({"<unk>", "<bos>", "h", "\xc3\xa9", "l", "o", " ", "t"});
  AnnotatedInstance inst;
  inst.prompt = "h\xc3\xa9llo to";
  inst.instruction_spans = {{1, 2}, {6, 8}};
  const auto pieces = tokenize_with_offsets(v, inst.prompt);
  const auto mask = span_token_mask(inst, pieces);
  CHECK(mask == std::vector<bool>{false, true, false, false, false, false, true, true});
}

TEST_CASE("sentence splitting") {
  const std::string text = "One two. Three? Pi is 3.14 ok\nfive";
  const auto s = split_sentences(text);
  REQUIRE(s.size() == 4);
  CHECK(text.substr(s[0].first, s[0].second - s[0].first) == "One two.");
  CHECK(text.substr(s[1].first, s[1].second - s[1].first) == " Three?");
  CHECK(text.substr(s[2].first, s[2].second - s[2].first) == " Pi is 3.14 ok\n");
  CHECK(text.substr(s[3].first, s[3].second - s[3].first) == "five");
}

TEST_CASE("segment profile examples") {
  const std::vector<std::pair<std::size_t, std::size_t>> one4{{0, 4}}, one5{{0, 5}};
  const auto u = segment_profile(std::vector<double>{1, 1, 1, 1}, one4);
  for (double s : u.shares) CHECK(s == doctest::Approx(0.25));
  const auto e = segment_profile(std::vector<double>{1, 0, 0, 0, 1}, one5);
  CHECK(e.shares == std::array<double, 4>{0.5, 0, 0, 0.5});

  const std::vector<std::pair<std::size_t, std::size_t>> two{{0, 4}, {4, 7}};
  const auto z = segment_profile(std::vector<double>{1, 1, 1, 1, 0, 0, 0}, two);
  CHECK(z.sentences_used == 1);
  for (double s : z.shares) CHECK(s == doctest::Approx(0.25));

  const std::vector<std::pair<std::size_t, std::size_t>> gap{{0, 2}, {3, 5}};
  CHECK_THROWS_AS(segment_profile(std::vector<double>(5, 1.0), gap), ValidationError);
}

TEST_CASE("salient map json round-trip") {
  const auto b = testing::tiny_bundle(6);
  const std::vector<TokenId> prompt{5, 9, 12}, response{7, 8};
  const auto map = compute_salient_map(b, prompt, response, AttributionMethod::occlusion, 10, 0);
  const auto file = parse_salient_map_json(salient_map_json(map, b.vocabulary));
  CHECK(file.map.importance == map.importance);
  CHECK(file.map.normalized == map.normalized);
  CHECK(file.map.prompt_ids == map.prompt_ids);
  CHECK(file.prompt_tokens.size() == 3);
  CHECK(salient_map_tsv(map).find('\t') != std::string::npos);
}
