// SPDX-License-Identifier: Apache-2.0
#include "biogen/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

namespace biogen {
namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, long> ngram_counts(const std::vector<std::string>& tokens, int n) {
  std::map<Ngram, long> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[Ngram(tokens.begin() + i, tokens.begin() + i + n)];
  }
  return counts;
}

long clipped_overlap(const std::map<Ngram, long>& cand,
                     const std::map<Ngram, long>& ref) {
  long overlap = 0;
  for (const auto& [gram, count] : cand) {
    const auto it = ref.find(gram);
    if (it != ref.end()) overlap += std::min(count, it->second);
  }
  return overlap;
}

PrfScore prf(long overlap, long cand_total, long ref_total) {
  PrfScore s;
  s.precision = cand_total > 0 ? static_cast<double>(overlap) / cand_total : 0.0;
  s.recall = ref_total > 0 ? static_cast<double>(overlap) / ref_total : 0.0;
  s.f1 = (s.precision + s.recall) > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

}  // namespace

std::vector<std::string> metric_tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  const auto flush = [&] {
    if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  };
  for (char raw : text) {
    const unsigned char c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      tokens.push_back(std::string(1, raw));
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return tokens;
}

PrfScore rouge_n(const std::string& candidate, const std::string& reference, int n) {
  if (n != 1 && n != 2) throw std::runtime_error("rouge_n: n must be 1 or 2");
  const auto cand_tokens = metric_tokenize(candidate);
  const auto ref_tokens = metric_tokenize(reference);
  const auto cand = ngram_counts(cand_tokens, n);
  const auto ref = ngram_counts(ref_tokens, n);
  long cand_total = 0, ref_total = 0;
  for (const auto& [g, c] : cand) cand_total += c;
  for (const auto& [g, c] : ref) ref_total += c;
  return prf(clipped_overlap(cand, ref), cand_total, ref_total);
}

PrfScore rouge_l(const std::string& candidate, const std::string& reference) {
  const auto cand = metric_tokenize(candidate);
  const auto ref = metric_tokenize(reference);
  const std::size_t nc = cand.size(), nr = ref.size();
  std::vector<std::vector<long>> lcs(nc + 1, std::vector<long>(nr + 1, 0));
  for (std::size_t i = 1; i <= nc; ++i) {
    for (std::size_t j = 1; j <= nr; ++j) {
      lcs[i][j] = (cand[i - 1] == ref[j - 1])
                      ? lcs[i - 1][j - 1] + 1
                      : std::max(lcs[i - 1][j], lcs[i][j - 1]);
    }
  }
  return prf(lcs[nc][nr], static_cast<long>(nc), static_cast<long>(nr));
}

double bleu(const std::vector<std::string>& candidates,
            const std::vector<std::string>& references, bool smooth) {
  if (candidates.size() != references.size()) {
    throw std::runtime_error("bleu: candidate/reference count mismatch");
  }
  if (candidates.empty()) return 0.0;

  constexpr int kMaxOrder = 4;
  long overlap[kMaxOrder] = {0, 0, 0, 0};
  long total[kMaxOrder] = {0, 0, 0, 0};
  long cand_len = 0, ref_len = 0;

  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto cand_tokens = metric_tokenize(candidates[i]);
    const auto ref_tokens = metric_tokenize(references[i]);
    cand_len += static_cast<long>(cand_tokens.size());
    ref_len += static_cast<long>(ref_tokens.size());
    for (int n = 1; n <= kMaxOrder; ++n) {
      const auto cand = ngram_counts(cand_tokens, n);
      const auto ref = ngram_counts(ref_tokens, n);
      overlap[n - 1] += clipped_overlap(cand, ref);
      total[n - 1] += std::max<long>(
          0, static_cast<long>(cand_tokens.size()) - n + 1);
    }
  }

  double log_precision_sum = 0.0;
  for (int n = 0; n < kMaxOrder; ++n) {
    double num = static_cast<double>(overlap[n]);
    double den = static_cast<double>(total[n]);
    if (smooth && (num == 0.0 || den == 0.0)) {
      num += 1.0;
      den += 1.0;
    }
    if (num == 0.0 || den == 0.0) return 0.0;
    log_precision_sum += std::log(num / den);
  }
  const double brevity =
      cand_len < ref_len
          ? std::exp(1.0 - static_cast<double>(ref_len) / cand_len)
          : 1.0;
  return brevity * std::exp(log_precision_sum / kMaxOrder);
}

int recall_at_k(const std::vector<std::string>& ranked_concepts,
                const std::string& gold, int k) {
  if (k < 1) throw std::runtime_error("recall_at_k: k must be >= 1");
  std::set<std::string> seen;
  for (const std::string& c : ranked_concepts) {
    if (!seen.insert(c).second) continue;
    if (c == gold) return 1;
    if (static_cast<int>(seen.size()) >= k) break;
  }
  return 0;
}

}  // namespace biogen
