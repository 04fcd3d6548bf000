// SPDX-License-Identifier: Apache-2.0
#include "biogen/noising.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace biogen {

std::vector<int> sample_span_lengths(Rng& rng, int budget, double lambda) {
  if (budget < 1) throw std::runtime_error("sample_span_lengths: budget must be >= 1");
  std::vector<int> lengths;
  int total = 0;
  while (total < budget) {
    int len = rng.poisson(lambda);
    if (total + len >= budget) len = budget - total;  // truncate final draw
    lengths.push_back(len);  // zero-length draws retained
    total += len;
  }
  return lengths;
}

NoisedPair apply_text_infilling(const std::vector<int>& tokens,
                                const NoiseConfig& cfg, Rng& rng) {
  if (tokens.empty()) throw std::runtime_error("apply_text_infilling: empty input");
  const int n = static_cast<int>(tokens.size());
  const int budget = static_cast<int>(std::floor(cfg.mask_ratio * n));

  NoisedPair pair;
  pair.target_ids = tokens;
  if (budget == 0) {
    pair.input_ids = tokens;
    return pair;
  }

  const std::vector<int> lengths =
      sample_span_lengths(rng, budget, cfg.poisson_lambda);
  const int k = static_cast<int>(lengths.size());
  const int unmasked = n - budget;

  // Uniform non-overlapping placement: choose k slots among unmasked
  // tokens and spans combined; slot rank minus span index gives the
  // number of unmasked tokens preceding each span.
  std::vector<int> slots(unmasked + k);
  for (int i = 0; i < unmasked + k; ++i) slots[i] = i;
  rng.shuffle(slots);
  slots.resize(k);
  std::sort(slots.begin(), slots.end());

  pair.input_ids.reserve(unmasked + k);
  int next = 0;  // next original token to copy or skip
  int copied = 0;
  for (int i = 0; i < k; ++i) {
    const int gap = slots[i] - i;  // unmasked tokens before span i
    while (copied < gap) {
      pair.input_ids.push_back(tokens[next++]);
      ++copied;
    }
    pair.input_ids.push_back(kMaskId);
    next += lengths[i];
  }
  while (next < n) pair.input_ids.push_back(tokens[next++]);
  return pair;
}

std::vector<int> apply_sentence_permutation(
    const std::vector<std::vector<int>>& sentences, Rng& rng) {
  if (sentences.empty()) {
    throw std::runtime_error("apply_sentence_permutation: no sentences");
  }
  std::vector<std::size_t> order(sentences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<int> out;
  for (std::size_t i : order) {
    out.insert(out.end(), sentences[i].begin(), sentences[i].end());
  }
  return out;
}

NoisedPair make_pretraining_example(const Document& doc, const Vocab& vocab,
                                    const NoiseConfig& cfg, int max_len) {
  if (!cfg.use_text_infilling && !cfg.use_sentence_permutation) {
    throw std::runtime_error("make_pretraining_example: no noise enabled");
  }
  if (max_len < 3) throw std::runtime_error("make_pretraining_example: max_len too small");

  std::vector<int> original = encode(vocab, doc.text).ids;
  if (original.empty()) {
    throw std::runtime_error("make_pretraining_example: document " +
                             std::to_string(doc.id) + " tokenizes to nothing");
  }
  const int budget_len = max_len - 2;  // room for BOS/EOS
  if (static_cast<int>(original.size()) > budget_len) original.resize(budget_len);

  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(doc.id)));

  std::vector<int> base;
  if (cfg.use_sentence_permutation) {
    // Per-sentence tokenization concatenates to the full tokenization
    // because BPE is prefix-stable per word.
    std::vector<std::vector<int>> sentences;
    int used = 0;
    for (const std::string& s : split_sentences(doc)) {
      std::vector<int> ids = encode(vocab, s).ids;
      if (ids.empty()) continue;
      if (used + static_cast<int>(ids.size()) > budget_len) {
        ids.resize(budget_len - used);
      }
      used += static_cast<int>(ids.size());
      if (!ids.empty()) sentences.push_back(std::move(ids));
      if (used >= budget_len) break;
    }
    base = apply_sentence_permutation(sentences, rng);
  } else {
    base = original;
  }

  NoisedPair pair;
  if (cfg.use_text_infilling) {
    pair = apply_text_infilling(base, cfg, rng);
  } else {
    pair.input_ids = std::move(base);
  }
  // The denoising target is always the original-order tokenization.
  pair.target_ids = original;

  pair.input_ids.insert(pair.input_ids.begin(), kBosId);
  pair.input_ids.push_back(kEosId);
  pair.target_ids.insert(pair.target_ids.begin(), kBosId);
  pair.target_ids.push_back(kEosId);
  return pair;
}

}  // namespace biogen
