// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace biogen {

struct PrfScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Metric tokenizer: lowercase, punctuation split off as separate tokens,
// whitespace split. Independent of the model BPE.
std::vector<std::string> metric_tokenize(const std::string& text);

PrfScore rouge_n(const std::string& candidate, const std::string& reference, int n);
PrfScore rouge_l(const std::string& candidate, const std::string& reference);

// Corpus-level BLEU, n-grams 1..4, single reference per candidate.
// With smoothing off, any zero clipped precision gives score 0.
double bleu(const std::vector<std::string>& candidates,
            const std::vector<std::string>& references, bool smooth = false);

// 1 iff `gold` is among the first k distinct entries.
int recall_at_k(const std::vector<std::string>& ranked_concepts,
                const std::string& gold, int k);

}  // namespace biogen
