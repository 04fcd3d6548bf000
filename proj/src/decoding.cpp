// SPDX-License-Identifier: Apache-2.0
#include "biogen/decoding.hpp"

#include <algorithm>
#include <stdexcept>

namespace biogen {

PrefixTrie build_trie(const KnowledgeBase& kb, const Vocab& vocab) {
  if (kb.entries.empty()) throw std::runtime_error("build_trie: empty knowledge base");
  PrefixTrie trie;
  trie.nodes.emplace_back();
  std::set<std::string> inserted;
  for (const auto& [concept_id, name] : kb.entries) {
    if (!inserted.insert(name).second) continue;
    const std::vector<int> ids = encode(vocab, name).ids;
    if (ids.empty()) {
      throw std::runtime_error("build_trie: name tokenizes to nothing: " + name);
    }
    int node = 0;
    for (int tok : ids) {
      auto& children = trie.nodes[node].children;
      const auto it = children.find(tok);
      if (it == children.end()) {
        children[tok] = static_cast<int>(trie.nodes.size());
        node = static_cast<int>(trie.nodes.size());
        trie.nodes.emplace_back();
      } else {
        node = it->second;
      }
    }
    trie.nodes[node].terminal = true;
    trie.nodes[node].names.push_back(name);
    trie.max_depth = std::max(trie.max_depth, static_cast<int>(ids.size()));
    ++trie.name_count;
  }
  return trie;
}

AllowedNext allowed_next(const PrefixTrie& trie, const std::vector<int>& prefix) {
  int node = 0;
  for (int tok : prefix) {
    const auto& children = trie.nodes[node].children;
    const auto it = children.find(tok);
    if (it == children.end()) {
      throw std::runtime_error("allowed_next: prefix leaves the trie at token " +
                               std::to_string(tok));
    }
    node = it->second;
  }
  AllowedNext out;
  for (const auto& [tok, child] : trie.nodes[node].children) out.tokens.push_back(tok);
  out.eos_allowed = trie.nodes[node].terminal;
  return out;
}

bool trie_contains(const PrefixTrie& trie, const std::vector<int>& ids) {
  int node = 0;
  for (int tok : ids) {
    const auto& children = trie.nodes[node].children;
    const auto it = children.find(tok);
    if (it == children.end()) return false;
    node = it->second;
  }
  return trie.nodes[node].terminal;
}

}  // namespace biogen
