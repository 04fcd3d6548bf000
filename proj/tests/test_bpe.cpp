// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "biogen/bpe.hpp"
#include "biogen/rng.hpp"
#include "doctest.h"

using namespace biogen;

namespace {

std::vector<Document> make_corpus(const std::vector<std::string>& texts) {
  std::vector<Document> docs;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    docs.push_back({static_cast<int>(i), texts[i]});
  }
  return docs;
}

}  // namespace

TEST_CASE("specials occupy fixed ids") {
  const auto vocab = train_bpe(make_corpus({"ab"}), 10);
  CHECK(vocab.id_to_token[kPadId] == "<pad>");
  CHECK(vocab.id_to_token[kBosId] == "<bos>");
  CHECK(vocab.id_to_token[kEosId] == "<eos>");
  CHECK(vocab.id_to_token[kMaskId] == "<mask>");
  CHECK(vocab.id_to_token[kUnkId] == "<unk>");
}

TEST_CASE("train_bpe first merge is the strictly most frequent pair") {
  // "low low lower": pairs l-o (3), o-w (3)? hand count: words low,low,lower.
  // l-o occurs 3 times, o-w occurs 3 times, w-e 1, e-r 1. Tie l-o vs o-w
  // breaks lexicographically in favor of ("l","o").
  const auto vocab = train_bpe(make_corpus({"low low lower"}), 100);
  REQUIRE(!vocab.merges.empty());
  CHECK(vocab.merges[0] == std::make_pair(std::string("l"), std::string("o")));
}

TEST_CASE("train_bpe produces no merges for single-char words") {
  const auto vocab = train_bpe(make_corpus({"a b"}), 10);
  CHECK(vocab.merges.empty());
  CHECK(vocab.size() == kNumSpecials + 2);
}

TEST_CASE("train_bpe stops once no pair occurs twice") {
  const auto vocab = train_bpe(make_corpus({"abc xyz"}), 1000);
  // Every adjacent pair occurs once; count >= 2 required, so no merges.
  CHECK(vocab.merges.empty());
}

TEST_CASE("train_bpe errors") {
  CHECK_THROWS_AS(train_bpe({}, 100), std::runtime_error);
  // vocab_size below 5 + distinct character count
  CHECK_THROWS_AS(train_bpe(make_corpus({"abcdef"}), 8), std::runtime_error);
}

TEST_CASE("train_bpe ids are dense and maps are inverse") {
  const auto vocab = train_bpe(make_corpus({"low lower lowest low low"}), 40);
  CHECK(vocab.size() == static_cast<int>(vocab.token_to_id.size()));
  for (int id = 0; id < vocab.size(); ++id) {
    CHECK(vocab.token_to_id.at(vocab.id_to_token[id]) == id);
  }
}

TEST_CASE("encode applies merges in training order with word_start flags") {
  // Build a vocab whose only merge is ("l","o") by limiting the budget.
  const auto base = train_bpe(make_corpus({"lo lo"}), 100);
  REQUIRE(base.merges.size() == 1);
  REQUIRE(base.merges[0] == std::make_pair(std::string("l"), std::string("o")));
  Vocab vocab = base;
  // Extend with the characters of "lower" so none map to UNK.
  for (const std::string ch : {"w", "e", "r"}) {
    if (!vocab.token_to_id.count(ch)) {
      vocab.token_to_id[ch] = vocab.size();
      vocab.id_to_token.push_back(ch);
    }
  }
  const auto seq = encode(vocab, "lower");
  std::vector<std::string> toks;
  for (int id : seq.ids) toks.push_back(vocab.id_to_token[id]);
  CHECK(toks == std::vector<std::string>{"lo", "w", "e", "r"});
  CHECK(seq.word_start == std::vector<bool>{true, false, false, false});
}

TEST_CASE("encode maps unseen characters to UNK") {
  const auto vocab = train_bpe(make_corpus({"abc abc"}), 100);
  const auto seq = encode(vocab, "axz");
  CHECK(std::count(seq.ids.begin(), seq.ids.end(), kUnkId) == 2);
}

TEST_CASE("encode is case-insensitive when vocab is lowercased") {
  const auto vocab = train_bpe(make_corpus({"chest pain chest pain"}), 100);
  CHECK(encode(vocab, "Chest PAIN").ids == encode(vocab, "chest pain").ids);
}

TEST_CASE("decode round trip and specials handling") {
  const auto vocab = train_bpe(make_corpus({"chest pain chest pain fever"}), 100);
  CHECK(decode(vocab, encode(vocab, "chest pain")) == "chest pain");
  CHECK(decode(vocab, encode(vocab, "  chest   pain ")) == "chest pain");

  TokenSeq specials;
  specials.ids = {kBosId, kPadId, kEosId};
  specials.word_start = {false, false, false};
  CHECK(decode(vocab, specials).empty());

  TokenSeq bad;
  bad.ids = {99999};
  bad.word_start = {true};
  CHECK_THROWS_AS(decode(vocab, bad), std::runtime_error);
}

TEST_CASE("round-trip property over random strings from the training alphabet") {
  const auto vocab =
      train_bpe(make_corpus({"lower upper crust trust low slow slower"}), 200);
  Rng rng(11);
  const std::string alphabet = "lowerupcst ";
  for (int trial = 0; trial < 300; ++trial) {
    std::string text;
    const int len = static_cast<int>(rng.uniform_u64(25));
    for (int i = 0; i < len; ++i) text += alphabet[rng.uniform_u64(alphabet.size())];
    // Normalize to the decoder's canonical form for comparison.
    std::string norm;
    for (char c : text) {
      if (c == ' ') {
        if (!norm.empty() && norm.back() != ' ') norm += ' ';
      } else {
        norm += c;
      }
    }
    while (!norm.empty() && norm.back() == ' ') norm.pop_back();
    CHECK(decode(vocab, encode(vocab, text)) == norm);
  }
}

TEST_CASE("encode is prefix-stable per word") {
  const auto vocab = train_bpe(make_corpus({"low lower lowest low low slow"}), 60);
  const auto alone = encode(vocab, "lower");
  const auto with_context = encode(vocab, "slow lower lowest");
  const auto alone_slow = encode(vocab, "slow");
  const std::size_t off = alone_slow.size();
  REQUIRE(with_context.size() >= off + alone.size());
  for (std::size_t i = 0; i < alone.size(); ++i) {
    CHECK(with_context.ids[off + i] == alone.ids[i]);
  }
}

TEST_CASE("word_start flags sum to word count") {
  const auto vocab = train_bpe(make_corpus({"low lower lowest slow"}), 40);
  const auto seq = encode(vocab, "lowest slow lower");
  int starts = 0;
  for (bool b : seq.word_start) starts += b ? 1 : 0;
  CHECK(starts == 3);
}

TEST_CASE("save_vocab/load_vocab round trip preserves behavior") {
  const auto vocab =
      train_bpe(make_corpus({"low lower lowest low slow slower"}), 50);
  const auto path =
      (std::filesystem::temp_directory_path() / "vocab_round.bpev1").string();
  save_vocab(vocab, path);
  const auto loaded = load_vocab(path);
  CHECK(loaded.merges == vocab.merges);
  CHECK(loaded.id_to_token == vocab.id_to_token);
  CHECK(loaded.lowercase == vocab.lowercase);
  CHECK(encode(loaded, "slower lowest").ids == encode(vocab, "slower lowest").ids);
  std::remove(path.c_str());
}

TEST_CASE("load_vocab rejects garbage") {
  const auto path =
      (std::filesystem::temp_directory_path() / "vocab_bad.bpev1").string();
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("NOTBPE 3 1\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_vocab(path), std::runtime_error);
  std::remove(path.c_str());
}
