#pragma once

#include <optional>
#include <vector>

#include "alignlens/checkpoint.hpp"

namespace oracle {

// Scalar re-implementation of the decoder, written without the runtime's
// helpers. Sums run from 0.0 in ascending index order so results can be
// compared bit for bit.
std::vector<double> reference_distribution(const alignlens::ModelBundle& bundle,
                                           const std::vector<alignlens::TokenId>& context,
                                           std::optional<std::size_t> zeroed = std::nullopt);

double reference_prob(const alignlens::ModelBundle& bundle, const std::vector<alignlens::TokenId>& context,
                      std::optional<std::size_t> zeroed, alignlens::TokenId target);

// Same forward pass from explicit input rows.
std::vector<double> reference_distribution_from(const alignlens::ModelBundle& bundle,
                                                const std::vector<std::vector<double>>& inputs);

}  // namespace oracle
