#pragma once

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "alignlens/checkpoint.hpp"

namespace alignlens {

// Which scalar embedding_gradient differentiates at the target position.
enum class GradientTarget { probability, logit };

namespace detail {
struct ActivationCache;
}

// Result of one forward pass. Copies share the (immutable) activation cache.
struct ForwardTrace {
  std::vector<TokenId> context_ids;
  Matrix probabilities;  // positions x |V|
  std::shared_ptr<const detail::ActivationCache> cache;
};

struct EmbeddingGradient {
  MatrixD grads;  // context length x d_model
};

// Rows of E_i for `ids`; the row at `zeroed` (if any) is replaced by zeros.
MatrixD embed_tokens(const ModelBundle& bundle, std::span<const TokenId> ids,
                     std::optional<std::size_t> zeroed = std::nullopt);

// Causal pre-norm decoder pass. Each block computes
//   y = x + [A^1 N1(x) Wv^1; ...; A^H N1(x) Wv^H] Wo
//   x' = y + act(N2(y) Wu^T) Wp
// and next-token probabilities are softmax(Nf(x_L) E_o^T).
ForwardTrace forward(const ModelBundle& bundle, std::span<const TokenId> ids);

// Same pass starting from caller-supplied input embeddings (one row per
// position); context_ids of the trace stay empty.
ForwardTrace forward_embeddings(const ModelBundle& bundle, const MatrixD& inputs);

double next_token_prob(const ModelBundle& bundle, std::span<const TokenId> context, TokenId target);

// next_token_prob with the input-embedding row at `occluded` zeroed before
// the first block. std::nullopt leaves the context untouched.
double occluded_prob(const ModelBundle& bundle, std::span<const TokenId> context,
                     std::optional<std::size_t> occluded, TokenId target);

// Probability of `target` at every row listed in `rows`, from one pass over
// `inputs`. Causal masking makes row r depend on inputs[0..r] only.
std::vector<double> probabilities_at(const ModelBundle& bundle, const MatrixD& inputs,
                                     std::span<const std::size_t> rows,
                                     std::span<const TokenId> targets);

// d p(target | context) / d E_i[x_n] for every context row n, at the last
// position.
EmbeddingGradient embedding_gradient(const ModelBundle& bundle, std::span<const TokenId> context,
                                     TokenId target,
                                     GradientTarget mode = GradientTarget::probability);

// Gradient of the target's probability (or logit) at `position` with respect
// to the input rows of the trace. Rows after `position` are zero.
EmbeddingGradient backprop(const ModelBundle& bundle, const ForwardTrace& trace, std::size_t position,
                           TokenId target, GradientTarget mode = GradientTarget::probability);

// Greedy continuation, for demos.
std::vector<TokenId> generate_greedy(const ModelBundle& bundle, std::span<const TokenId> prompt,
                                     std::size_t max_new_tokens);

}  // namespace alignlens
