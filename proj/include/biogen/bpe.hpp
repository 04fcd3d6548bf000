// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "biogen/corpus.hpp"

namespace biogen {

// Special token ids, fixed across every vocabulary.
enum SpecialToken : int {
  kPadId = 0,
  kBosId = 1,
  kEosId = 2,
  kMaskId = 3,
  kUnkId = 4,
  kNumSpecials = 5,
};

struct Vocab {
  std::vector<std::pair<std::string, std::string>> merges;  // training order
  std::unordered_map<std::string, int> token_to_id;
  std::vector<std::string> id_to_token;
  bool lowercase = true;

  int size() const { return static_cast<int>(id_to_token.size()); }
};

// Token ids plus first-subtoken-of-word flags; the flags drive the
// NER pointer scheme and decode-time spacing.
struct TokenSeq {
  std::vector<int> ids;
  std::vector<bool> word_start;

  std::size_t size() const { return ids.size(); }
};

// Greedy pair-merge BPE over lowercased whitespace-delimited words.
// Ties between equally frequent pairs break lexicographically.
Vocab train_bpe(const std::vector<Document>& corpus, int vocab_size);

TokenSeq encode(const Vocab& vocab, const std::string& text);
std::string decode(const Vocab& vocab, const TokenSeq& seq);

void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);

}  // namespace biogen
