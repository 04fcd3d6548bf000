// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "biogen/bpe.hpp"
#include "biogen/corpus.hpp"
#include "biogen/rng.hpp"

namespace biogen {

struct NoiseConfig {
  double mask_ratio = 0.30;
  double poisson_lambda = 3.0;
  bool use_text_infilling = true;
  bool use_sentence_permutation = false;
  std::uint64_t seed = 0;
};

// One pretraining example: corrupted input, original target.
struct NoisedPair {
  std::vector<int> input_ids;
  std::vector<int> target_ids;
};

// Draws Poisson(lambda) span lengths until their sum reaches `budget`;
// the last draw is truncated so the sum is exact. Zero-length draws are
// kept (they become pure mask insertions).
std::vector<int> sample_span_lengths(Rng& rng, int budget, double lambda);

// Replaces each sampled span with a single mask token. Total tokens
// covered by spans is exactly floor(mask_ratio * len(tokens)).
NoisedPair apply_text_infilling(const std::vector<int>& tokens,
                                const NoiseConfig& cfg, Rng& rng);

// Fisher-Yates shuffle of the sentences, then concatenation.
std::vector<int> apply_sentence_permutation(
    const std::vector<std::vector<int>>& sentences, Rng& rng);

// Full pipeline: tokenize, truncate to max_len - 2, permute sentences
// (if enabled) then infill (if enabled), wrap with BOS/EOS. The target
// is always the original-order tokenization.
NoisedPair make_pretraining_example(const Document& doc, const Vocab& vocab,
                                    const NoiseConfig& cfg, int max_len);

}  // namespace biogen
