// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace biogen {

struct Document {
  int id = 0;
  std::string text;
};

struct SourceTargetPair {
  std::string source;
  std::string target;
};

struct LinkingExample {
  std::string context_left;
  std::string mention;
  std::string context_right;
  std::string gold_concept;
};

struct EntityAnnotation {
  std::vector<int> word_indices;  // strictly increasing
  std::string entity_type;

  bool operator==(const EntityAnnotation& o) const = default;
};

struct NerExample {
  std::vector<std::string> words;
  std::vector<EntityAnnotation> entities;
};

struct KnowledgeBase {
  std::vector<std::pair<std::string, std::string>> entries;  // (concept_id, name)
  std::map<std::string, std::set<std::string>> name_to_concepts;
};

// Blank-line-separated UTF-8 documents; sequential ids from 0.
std::vector<Document> load_documents(const std::string& path);

// Splits after '.', '!' or '?' followed by whitespace or end of text.
// Deliberately naive: "Dr. Smith" splits after "Dr.".
std::vector<std::string> split_sentences(const Document& doc);

// JSONL with string fields "source" and "target".
std::vector<SourceTargetPair> load_seq2seq_dataset(const std::string& path);

// JSONL with "context_left", "mention", "context_right", "gold_concept".
std::vector<LinkingExample> load_linking_dataset(const std::string& path);

// Two-column TSV "concept_id<TAB>name"; duplicate lines collapsed.
KnowledgeBase load_kb(const std::string& path);

// JSONL {"words":[...], "entities":[{"word_indices":[...], "type":"..."}]}.
std::vector<NerExample> load_ner_dataset(const std::string& path);

// Collapses runs of whitespace to single spaces and trims the ends.
std::string normalize_whitespace(const std::string& s);

}  // namespace biogen
