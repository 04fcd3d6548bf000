// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "biogen/bpe.hpp"
#include "biogen/corpus.hpp"
#include "biogen/model.hpp"
#include "biogen/train.hpp"
#include "biogen/transformer.hpp"

namespace biogen {

struct Hypothesis {
  std::vector<int> ids;  // BOS-prefixed
  double log_prob = 0.0;
  bool finished = false;
};

struct TrieNode {
  std::map<int, int> children;  // token id -> node index
  bool terminal = false;
  std::vector<std::string> names;  // names ending at this node
};

// Trie over tokenized knowledge-base names; constrains beam search to
// emit exactly the names it contains.
struct PrefixTrie {
  std::vector<TrieNode> nodes;  // nodes[0] is the root
  int max_depth = 0;
  std::size_t name_count = 0;
};

PrefixTrie build_trie(const KnowledgeBase& kb, const Vocab& vocab);

struct AllowedNext {
  std::vector<int> tokens;  // ascending
  bool eos_allowed = false;
};

// Exactly the children of the node reached by `prefix`; throws if the
// prefix leaves the trie.
AllowedNext allowed_next(const PrefixTrie& trie, const std::vector<int>& prefix);

// True iff `ids` spells a complete inserted name.
bool trie_contains(const PrefixTrie& trie, const std::vector<int>& ids);

namespace detail {

template <class S>
Eigen::Matrix<S, 1, Eigen::Dynamic> last_step_log_probs(
    const ModelParams<S>& p, const EncoderCache<S>& enc,
    const std::vector<int>& prefix) {
  const Mat<S> x0 = token_input_embedding(p, prefix);
  const DecoderCache<S> dec = decoder_forward(p, x0, enc.states, enc.key_allowed,
                                              ForwardCtx{});
  const Mat<S> logits = output_logits(p, dec.states);
  Eigen::Matrix<S, 1, Eigen::Dynamic> row = logits.row(logits.rows() - 1);
  const S mx = row.maxCoeff();
  const S lse = mx + std::log((row.array() - mx).exp().sum());
  return (row.array() - lse).matrix();
}

}  // namespace detail

// Argmax decoding; ties break toward the smallest token id. The returned
// sequence is BOS-prefixed and at most max_len tokens long. Generated
// tokens carry word_start = true (the vocabulary does not encode word
// boundaries, so every subtoken is rendered word-initial).
template <class S>
TokenSeq greedy_decode(const ModelParams<S>& p, const std::vector<int>& source_ids,
                       int max_len) {
  if (max_len < 2) throw std::runtime_error("greedy_decode: max_len must be >= 2");
  const EncoderCache<S> enc = encoder_forward(p, source_ids, ForwardCtx{});
  std::vector<int> ids = {kBosId};
  while (static_cast<int>(ids.size()) < max_len) {
    const auto logp = detail::last_step_log_probs(p, enc, ids);
    int best = 0;
    for (int v = 1; v < logp.cols(); ++v) {
      if (logp(v) > logp(best)) best = v;
    }
    ids.push_back(best);
    if (best == kEosId) break;
  }
  TokenSeq out;
  out.ids = ids;
  for (int id : ids) out.word_start.push_back(id >= kNumSpecials);
  return out;
}

// Beam search with optional trie constraint. Finished hypotheses are set
// aside and never extended; ranking uses log_prob / len^exponent with
// exponent 0 by default (raw sum, no length penalty). Pruning ties break
// by (higher score, shorter length, lexicographic token ids).
template <class S>
std::vector<Hypothesis> beam_search(const ModelParams<S>& p,
                                    const std::vector<int>& source_ids,
                                    int beam_size, int max_len,
                                    const PrefixTrie* constraint = nullptr,
                                    double length_norm_exponent = 0.0) {
  if (beam_size < 1) throw std::runtime_error("beam_search: beam_size must be >= 1");
  if (max_len < 2) throw std::runtime_error("beam_search: max_len must be >= 2");
  if (constraint) {
    if (constraint->name_count == 0) {
      throw std::runtime_error("beam_search: constraint trie is empty");
    }
    if (max_len < constraint->max_depth + 2) {
      throw std::runtime_error(
          "beam_search: max_len too small for the longest constrained name");
    }
  }

  struct Live {
    std::vector<int> ids;
    double log_prob = 0.0;
    int node = 0;  // trie node (constrained mode)
  };
  const auto better = [](const auto& a, const auto& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    if (a.ids.size() != b.ids.size()) return a.ids.size() < b.ids.size();
    return a.ids < b.ids;
  };

  const EncoderCache<S> enc = encoder_forward(p, source_ids, ForwardCtx{});
  std::vector<Live> live = {Live{{kBosId}, 0.0, 0}};
  std::vector<Hypothesis> finished;

  while (!live.empty()) {
    std::vector<Live> expansions;
    for (const Live& hyp : live) {
      const auto logp = detail::last_step_log_probs(p, enc, hyp.ids);
      if (constraint) {
        const TrieNode& node = constraint->nodes[hyp.node];
        for (const auto& [tok, child] : node.children) {
          expansions.push_back(hyp);
          expansions.back().ids.push_back(tok);
          expansions.back().log_prob += static_cast<double>(logp(tok));
          expansions.back().node = child;
        }
        if (node.terminal) {
          Live done = hyp;
          done.ids.push_back(kEosId);
          done.log_prob += static_cast<double>(logp(kEosId));
          expansions.push_back(std::move(done));
        }
      } else {
        for (int tok = 0; tok < logp.cols(); ++tok) {
          expansions.push_back(hyp);
          expansions.back().ids.push_back(tok);
          expansions.back().log_prob += static_cast<double>(logp(tok));
        }
      }
    }

    std::sort(expansions.begin(), expansions.end(), better);
    live.clear();
    // Candidates are consumed in rank order until the live beam is full;
    // EOS candidates inside that window finish without taking a slot.
    // With beam_size 1 this degenerates to greedy decoding.
    for (const Live& cand : expansions) {
      if (static_cast<int>(live.size()) >= beam_size) break;
      if (cand.ids.back() == kEosId) {
        finished.push_back({cand.ids, cand.log_prob, true});
      } else {
        live.push_back(cand);
      }
    }

    // Length cap: anything still live at max_len is abandoned unless
    // nothing has finished, in which case it is returned unfinished.
    if (!live.empty() && static_cast<int>(live.front().ids.size()) >= max_len) {
      if (finished.empty()) {
        for (const Live& hyp : live) finished.push_back({hyp.ids, hyp.log_prob, false});
      }
      break;
    }
    // Early termination: appended log-probs only decrease, so once
    // beam_size hypotheses are finished and the best live one cannot
    // overtake the beam_size-th best finished score, stop.
    if (static_cast<int>(finished.size()) >= beam_size && !live.empty()) {
      std::vector<double> scores;
      scores.reserve(finished.size());
      for (const Hypothesis& h : finished) scores.push_back(h.log_prob);
      std::nth_element(scores.begin(), scores.begin() + (beam_size - 1),
                       scores.end(), std::greater<double>());
      if (live.front().log_prob <= scores[beam_size - 1]) break;
    }
  }

  const auto ranked_better = [&](const Hypothesis& a, const Hypothesis& b) {
    const double sa = length_norm_exponent == 0.0
                          ? a.log_prob
                          : a.log_prob / std::pow(static_cast<double>(a.ids.size()),
                                                  length_norm_exponent);
    const double sb = length_norm_exponent == 0.0
                          ? b.log_prob
                          : b.log_prob / std::pow(static_cast<double>(b.ids.size()),
                                                  length_norm_exponent);
    if (sa != sb) return sa > sb;
    if (a.ids.size() != b.ids.size()) return a.ids.size() < b.ids.size();
    return a.ids < b.ids;
  };
  std::sort(finished.begin(), finished.end(), ranked_better);
  if (static_cast<int>(finished.size()) > beam_size) finished.resize(beam_size);
  return finished;
}

}  // namespace biogen
