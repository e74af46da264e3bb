#include <cmath>
#include <numeric>

#include "alignlens/fixture.hpp"
#include "alignlens/runtime.hpp"
#include "doctest.h"
#include "reference_forward.hpp"
#include "test_support.hpp"

using namespace alignlens;

namespace {

double fd_prob(const ModelBundle& b, MatrixD inputs, std::size_t n, std::size_t k, double delta, TokenId target) {
  inputs(n, k) += delta;
  const std::size_t last = inputs.rows() - 1;
  return probabilities_at(b, inputs, std::span<const std::size_t>(&last, 1), std::span<const TokenId>(&target, 1))[0];
}

ModelBundle zero_bundle() {
  auto b = testing::tiny_bundle(1);
  auto zero = [](Matrix& m) { std::fill(m.data().begin(), m.data().end(), 0.0f); };
  zero(b.input_embeddings);
  zero(b.output_embeddings);
  for (auto& l : b.layers) {
    for (auto* hs : {&l.wq, &l.wk, &l.wv})
      for (auto& h : *hs) zero(h);
    zero(l.wo);
    zero(l.wu);
    zero(l.wp);
  }
  return b;
}

}  // namespace

TEST_CASE("single-token context yields one probability row") {
  const auto b = testing::tiny_bundle(2);
  const std::vector<TokenId> ids{5};
  const auto trace = forward(b, ids);
  REQUIRE(trace.probabilities.rows() == 1);
  double s = 0.0;
  for (float p : trace.probabilities.row(0)) {
    CHECK(p >= 0.0f);
    s += p;
  }
  CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("next-token probabilities sum to one and are deterministic") {
  const auto b = testing::tiny_bundle(3);
  const std::vector<TokenId> ctx{4, 9, 2, 17};
  double s = 0.0;
  for (TokenId t = 0; t < b.config.vocab_size; ++t) s += next_token_prob(b, ctx, t);
  CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(next_token_prob(b, ctx, 7) == next_token_prob(b, ctx, 7));
}

TEST_CASE("forward is position sensitive") {
  const auto b = testing::tiny_bundle(4);
  const std::vector<TokenId> x{4, 9, 12}, y{9, 4, 12};
  CHECK(next_token_prob(b, x, 6) != next_token_prob(b, y, 6));
}

TEST_CASE("all-zero weights give the uniform distribution") {
  const auto b = zero_bundle();
  const std::vector<TokenId> ctx{3, 4, 5};
  const double u = 1.0 / static_cast<double>(b.config.vocab_size);
  for (TokenId t = 0; t < b.config.vocab_size; ++t) CHECK(next_token_prob(b, ctx, t) == doctest::Approx(u));
}

TEST_CASE("one-layer forward matches the scalar reference") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto b = testing::tiny_bundle(seed, 1);
    const std::vector<TokenId> ctx{7, 3, 11};
    const auto want = oracle::reference_distribution(b, ctx);
    for (TokenId t = 0; t < b.config.vocab_size; ++t) CHECK(next_token_prob(b, ctx, t) == want[t]);
  }
}

TEST_CASE("occluded probability matches the zero-row reference") {
  const auto b = testing::tiny_bundle(6);
  const std::vector<TokenId> ctx{7, 3, 11, 20};
  for (std::size_t n = 0; n < ctx.size(); ++n)
    CHECK(occluded_prob(b, ctx, n, 9) == oracle::reference_prob(b, ctx, n, 9));
  CHECK(occluded_prob(b, ctx, std::nullopt, 9) == next_token_prob(b, ctx, 9));
}

TEST_CASE("occluding an already-zero embedding changes nothing") {
  auto b = testing::tiny_bundle(6);
  for (float& x : b.input_embeddings.row(8)) x = 0.0f;
  const std::vector<TokenId> ctx{7, 8, 11};
  CHECK(occluded_prob(b, ctx, 1, 4) == next_token_prob(b, ctx, 4));
}

TEST_CASE("occluding a one-token context is still a probability") {
  const auto b = testing::tiny_bundle(6);
  const std::vector<TokenId> ctx{7};
  const double p = occluded_prob(b, ctx, 0, 4);
  CHECK(p > 0.0);
  CHECK(p < 1.0);
}

TEST_CASE("embedding gradient has one row per context token") {
  const auto b = testing::tiny_bundle(7);
  const std::vector<TokenId> ctx{7, 3, 11};
  const auto g = embedding_gradient(b, ctx, 5);
  CHECK(g.grads.rows() == 3);
  CHECK(g.grads.cols() == b.config.d_model);
}

TEST_CASE("embedding gradient matches central differences") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto b = testing::tiny_bundle(seed);
    const std::vector<TokenId> ctx{7, 3, 11, 20};
    const TokenId target = 9;
    const auto g = embedding_gradient(b, ctx, target);
    const auto inputs = embed_tokens(b, ctx);
    const double h = 1e-3;
    for (std::size_t n = 0; n < ctx.size(); ++n)
      for (std::size_t k = 0; k < b.config.d_model; ++k) {
        const double fd = (fd_prob(b, inputs, n, k, h, target) - fd_prob(b, inputs, n, k, -h, target)) / (2 * h);
        const double err = std::abs(fd - g.grads(n, k));
        CHECK((err <= 1e-6 || err <= 1e-4 * std::abs(fd)));
      }
  }
}

TEST_CASE("gradient of the total probability vanishes") {
  const auto b = testing::tiny_bundle(8);
  const std::vector<TokenId> ctx{7, 3, 11};
  const auto trace = forward(b, ctx);
  MatrixD total(ctx.size(), b.config.d_model);
  for (TokenId t = 0; t < b.config.vocab_size; ++t) {
    const auto g = backprop(b, trace, ctx.size() - 1, t);
    for (std::size_t i = 0; i < total.size(); ++i) total.data()[i] += g.grads.data()[i];
  }
  for (double x : total.data()) CHECK(std::abs(x) <= 1e-5);
}

TEST_CASE("backprop rows after the position are zero") {
  const auto b = testing::tiny_bundle(8);
  const std::vector<TokenId> ctx{7, 3, 11, 12};
  const auto trace = forward(b, ctx);
  const auto g = backprop(b, trace, 1, 4);
  for (std::size_t n = 2; n < 4; ++n)
    for (double x : g.grads.row(n)) CHECK(x == 0.0);
}

TEST_CASE("logit gradient mode matches central differences of the logit") {
  const auto b = testing::tiny_bundle(9);
  const std::vector<TokenId> ctx{7, 3, 11};
  const TokenId target = 2;
  const auto g = embedding_gradient(b, ctx, target, GradientTarget::logit);
  const auto inputs = embed_tokens(b, ctx);
  // log p differs from the logit by the log-partition, whose gradient is sum_v p_v dlogit_v.
  const double h = 1e-4;
  auto logit_diff = [&](std::size_t n, std::size_t k) {
    auto lp = [&](double d) { return std::log(fd_prob(b, inputs, n, k, d, target)); };
    return (lp(h) - lp(-h)) / (2 * h);
  };
  const auto trace = forward(b, ctx);
  std::vector<MatrixD> all;
  for (TokenId t = 0; t < b.config.vocab_size; ++t) {
    const auto gt = backprop(b, trace, ctx.size() - 1, t, GradientTarget::logit);
    all.push_back(gt.grads);
  }
  for (std::size_t n = 0; n < ctx.size(); ++n)
    for (std::size_t k = 0; k < b.config.d_model; ++k) {
      double mix = 0.0;
      for (TokenId t = 0; t < b.config.vocab_size; ++t) mix += trace.probabilities(ctx.size() - 1, t) * all[t](n, k);
      CHECK(g.grads(n, k) - mix == doctest::Approx(logit_diff(n, k)).epsilon(1e-3));
    }
}

TEST_CASE("greedy generation is deterministic") {
  const auto b = testing::tiny_bundle(10);
  const std::vector<TokenId> prompt{7, 3};
  const auto a = generate_greedy(b, prompt, 5);
  CHECK(a.size() == 5);
  CHECK(a == generate_greedy(b, prompt, 5));
}
