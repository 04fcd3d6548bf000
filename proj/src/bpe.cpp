// SPDX-License-Identifier: Apache-2.0
#include "biogen/bpe.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace biogen {
namespace {

const char* const kSpecialNames[kNumSpecials] = {"<pad>", "<bos>", "<eos>",
                                                 "<mask>", "<unk>"};

std::string lowercase(const std::string& s) {
  std::string out = s;
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> whitespace_words(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

// Splits a word into UTF-8 code point strings (initial BPE symbols).
std::vector<std::string> codepoints(const std::string& word) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < word.size()) {
    const unsigned char c = static_cast<unsigned char>(word[i]);
    std::size_t n = 1;
    if ((c & 0xe0) == 0xc0) n = 2;
    else if ((c & 0xf0) == 0xe0) n = 3;
    else if ((c & 0xf8) == 0xf0) n = 4;
    n = std::min(n, word.size() - i);
    out.push_back(word.substr(i, n));
    i += n;
  }
  return out;
}

void apply_merge(std::vector<std::string>& symbols, const std::string& left,
                 const std::string& right) {
  std::size_t w = 0;
  for (std::size_t r = 0; r < symbols.size();) {
    if (r + 1 < symbols.size() && symbols[r] == left && symbols[r + 1] == right) {
      symbols[w++] = left + right;
      r += 2;
    } else {
      if (w != r) symbols[w] = std::move(symbols[r]);
      ++w;
      ++r;
    }
  }
  symbols.resize(w);
}

std::vector<std::string> tokenize_word(const Vocab& vocab, const std::string& word) {
  std::vector<std::string> symbols = codepoints(word);
  for (const auto& [left, right] : vocab.merges) apply_merge(symbols, left, right);
  return symbols;
}

}  // namespace

Vocab train_bpe(const std::vector<Document>& corpus, int vocab_size) {
  if (corpus.empty()) throw std::runtime_error("train_bpe: empty corpus");

  // Word type frequencies over the lowercased corpus.
  std::map<std::string, long> word_freq;
  for (const Document& doc : corpus) {
    for (const std::string& w : whitespace_words(lowercase(doc.text))) {
      ++word_freq[w];
    }
  }
  if (word_freq.empty()) throw std::runtime_error("train_bpe: no words in corpus");

  std::vector<std::vector<std::string>> words;
  std::vector<long> freqs;
  std::set<std::string> alphabet;
  for (const auto& [word, freq] : word_freq) {
    words.push_back(codepoints(word));
    freqs.push_back(freq);
    for (const auto& sym : words.back()) alphabet.insert(sym);
  }

  if (vocab_size <= kNumSpecials + static_cast<int>(alphabet.size())) {
    throw std::runtime_error(
        "train_bpe: vocab_size " + std::to_string(vocab_size) +
        " does not exceed specials + alphabet size " +
        std::to_string(kNumSpecials + alphabet.size()));
  }

  Vocab vocab;
  for (const char* name : kSpecialNames) {
    vocab.token_to_id[name] = vocab.size();
    vocab.id_to_token.push_back(name);
  }
  for (const std::string& sym : alphabet) {
    vocab.token_to_id[sym] = vocab.size();
    vocab.id_to_token.push_back(sym);
  }

  while (vocab.size() < vocab_size) {
    // Count adjacent pairs within words, weighted by word frequency.
    std::map<std::pair<std::string, std::string>, long> pair_counts;
    for (std::size_t w = 0; w < words.size(); ++w) {
      for (std::size_t i = 0; i + 1 < words[w].size(); ++i) {
        pair_counts[{words[w][i], words[w][i + 1]}] += freqs[w];
      }
    }
    // Max count, lexicographically smallest pair on ties; std::map order
    // makes the first max the tie winner.
    std::pair<std::string, std::string> best;
    long best_count = 0;
    for (const auto& [pair, count] : pair_counts) {
      if (count > best_count) {
        best = pair;
        best_count = count;
      }
    }
    if (best_count < 2) break;

    vocab.merges.push_back(best);
    const std::string merged = best.first + best.second;
    if (!vocab.token_to_id.count(merged)) {
      vocab.token_to_id[merged] = vocab.size();
      vocab.id_to_token.push_back(merged);
    }
    for (auto& symbols : words) apply_merge(symbols, best.first, best.second);
  }
  return vocab;
}

TokenSeq encode(const Vocab& vocab, const std::string& text) {
  TokenSeq seq;
  std::map<std::string, std::vector<std::string>> cache;
  const std::string normalized =
      vocab.lowercase ? lowercase(normalize_whitespace(text))
                      : normalize_whitespace(text);
  for (const std::string& word : whitespace_words(normalized)) {
    auto it = cache.find(word);
    if (it == cache.end()) it = cache.emplace(word, tokenize_word(vocab, word)).first;
    bool first = true;
    for (const std::string& sym : it->second) {
      const auto hit = vocab.token_to_id.find(sym);
      seq.ids.push_back(hit == vocab.token_to_id.end() ? kUnkId : hit->second);
      seq.word_start.push_back(first);
      first = false;
    }
  }
  return seq;
}

std::string decode(const Vocab& vocab, const TokenSeq& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    const int id = seq.ids[i];
    if (id < 0 || id >= vocab.size()) {
      throw std::runtime_error("decode: token id " + std::to_string(id) +
                               " out of range for vocab of size " +
                               std::to_string(vocab.size()));
    }
    if (id < kNumSpecials) continue;
    if (seq.word_start[i] && !out.empty()) out.push_back(' ');
    out += vocab.id_to_token[id];
  }
  return out;
}

void save_vocab(const Vocab& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << "BPEV1 " << vocab.size() << ' ' << (vocab.lowercase ? 1 : 0) << '\n';
  for (const auto& [left, right] : vocab.merges) out << left << ' ' << right << '\n';
  for (const std::string& tok : vocab.id_to_token) out << tok << '\n';
  if (!out) throw std::runtime_error("write failure: " + path);
}

Vocab load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty vocab file");
  std::istringstream header(line);
  std::string magic;
  int size = 0, lower = 0;
  if (!(header >> magic >> size >> lower) || magic != "BPEV1") {
    throw std::runtime_error(path + ": bad vocab header");
  }

  Vocab vocab;
  vocab.lowercase = lower != 0;
  bool in_tokens = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto space = line.find(' ');
    if (!in_tokens && space != std::string::npos) {
      vocab.merges.emplace_back(line.substr(0, space), line.substr(space + 1));
    } else {
      in_tokens = true;
      vocab.token_to_id[line] = vocab.size();
      vocab.id_to_token.push_back(line);
    }
  }
  if (vocab.size() != size) {
    throw std::runtime_error(path + ": token count " +
                             std::to_string(vocab.size()) +
                             " does not match header size " + std::to_string(size));
  }
  return vocab;
}

}  // namespace biogen
