#pragma once

// Linear-chain CRF over the two reason tags. The transition matrix has two
// extra virtual states: row kCrfStart scores the first tag and column
// kCrfStop scores the last one.

#include <span>
#include <vector>

#include "reflectdiffu/labels.hpp"
#include "reflectdiffu/tensor.hpp"

namespace rd {

inline constexpr std::size_t kCrfStart = kNumTags;
inline constexpr std::size_t kCrfStop = kNumTags + 1;
inline constexpr std::size_t kCrfStates = kNumTags + 2;

/// Unnormalized log-score of a tag path. emissions [L x 2], transitions [4 x 4].
double crf_path_score(const Tensor& emissions, const Tensor& transitions, std::span<const ReasonTag> tags);

/// log Z via the forward algorithm in log space (not differentiable).
double crf_log_partition(const Tensor& emissions, const Tensor& transitions);

/// -log P(tags | emissions); gradients from forward-backward marginals.
Tensor crf_neg_log_likelihood(const Tensor& emissions, const Tensor& transitions, std::span<const ReasonTag> tags);

/// Highest-scoring path. Ties prefer noem.
std::vector<ReasonTag> viterbi_decode(const Tensor& emissions, const Tensor& transitions);

}  // namespace rd
