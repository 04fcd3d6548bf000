// SPDX-License-Identifier: Apache-2.0
#include "biogen/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace biogen {
namespace {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw std::runtime_error("read failure: " + path);
  return buf.str();
}

// Validates UTF-8; throws with the byte offset of the first bad byte.
void require_utf8(const std::string& s, const std::string& path) {
  std::size_t i = 0;
  const auto bad = [&](std::size_t at) {
    throw std::runtime_error("invalid UTF-8 in " + path + " at byte offset " +
                             std::to_string(at));
  };
  while (i < s.size()) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    std::size_t n;
    if (c < 0x80) n = 0;
    else if ((c & 0xe0) == 0xc0 && c >= 0xc2) n = 1;
    else if ((c & 0xf0) == 0xe0) n = 2;
    else if ((c & 0xf8) == 0xf0 && c <= 0xf4) n = 3;
    else { bad(i); return; }
    for (std::size_t k = 1; k <= n; ++k) {
      if (i + k >= s.size() ||
          (static_cast<unsigned char>(s[i + k]) & 0xc0) != 0x80) {
        bad(i + k);
        return;
      }
    }
    i += n + 1;
  }
}

json parse_jsonl_line(const std::string& line, const std::string& path,
                      std::size_t lineno) {
  json rec = json::parse(line, nullptr, false);
  if (rec.is_discarded() || !rec.is_object()) {
    throw std::runtime_error(path + ":" + std::to_string(lineno) +
                             ": malformed record");
  }
  return rec;
}

std::string require_string_field(const json& rec, const char* field,
                                 const std::string& path, std::size_t lineno) {
  if (!rec.contains(field) || !rec[field].is_string()) {
    throw std::runtime_error(path + ":" + std::to_string(lineno) +
                             ": missing or non-string field \"" + field + "\"");
  }
  return rec[field].get<std::string>();
}

template <class Fn>
void for_each_jsonl(const std::string& path, Fn&& fn) {
  const std::string content = read_file(path);
  require_utf8(content, path);
  std::istringstream in(content);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (normalize_whitespace(line).empty()) continue;
    fn(parse_jsonl_line(line, path, lineno), lineno);
  }
}

}  // namespace

std::string normalize_whitespace(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool in_space = true;  // swallows leading whitespace
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_space = true;
    } else {
      if (in_space && !out.empty()) out.push_back(' ');
      out.push_back(c);
      in_space = false;
    }
  }
  return out;
}

std::vector<Document> load_documents(const std::string& path) {
  const std::string content = read_file(path);
  require_utf8(content, path);

  std::vector<Document> docs;
  std::string block;
  std::istringstream in(content);
  std::string line;
  const auto flush = [&] {
    const std::string text = normalize_whitespace(block);
    block.clear();
    if (!text.empty()) docs.push_back({static_cast<int>(docs.size()), text});
  };
  while (std::getline(in, line)) {
    if (normalize_whitespace(line).empty()) {
      flush();
    } else {
      if (!block.empty()) block.push_back(' ');
      block += line;
    }
  }
  flush();
  return docs;
}

std::vector<std::string> split_sentences(const Document& doc) {
  const std::string text = normalize_whitespace(doc.text);
  std::vector<std::string> sentences;
  std::string cur;
  for (std::size_t i = 0; i < text.size(); ++i) {
    cur.push_back(text[i]);
    const char c = text[i];
    const bool terminator = (c == '.' || c == '!' || c == '?');
    const bool at_boundary =
        i + 1 == text.size() ||
        std::isspace(static_cast<unsigned char>(text[i + 1]));
    if (terminator && at_boundary) {
      sentences.push_back(normalize_whitespace(cur));
      cur.clear();
    }
  }
  const std::string tail = normalize_whitespace(cur);
  if (!tail.empty()) sentences.push_back(tail);
  return sentences;
}

std::vector<SourceTargetPair> load_seq2seq_dataset(const std::string& path) {
  std::vector<SourceTargetPair> pairs;
  for_each_jsonl(path, [&](const json& rec, std::size_t lineno) {
    SourceTargetPair p;
    p.source = require_string_field(rec, "source", path, lineno);
    p.target = require_string_field(rec, "target", path, lineno);
    if (p.source.empty() || p.target.empty()) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": empty source or target");
    }
    pairs.push_back(std::move(p));
  });
  return pairs;
}

std::vector<LinkingExample> load_linking_dataset(const std::string& path) {
  std::vector<LinkingExample> examples;
  for_each_jsonl(path, [&](const json& rec, std::size_t lineno) {
    LinkingExample ex;
    ex.context_left = require_string_field(rec, "context_left", path, lineno);
    ex.mention = require_string_field(rec, "mention", path, lineno);
    ex.context_right = require_string_field(rec, "context_right", path, lineno);
    ex.gold_concept = require_string_field(rec, "gold_concept", path, lineno);
    if (ex.mention.empty()) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": empty mention");
    }
    examples.push_back(std::move(ex));
  });
  return examples;
}

KnowledgeBase load_kb(const std::string& path) {
  const std::string content = read_file(path);
  require_utf8(content, path);

  KnowledgeBase kb;
  std::set<std::pair<std::string, std::string>> seen;
  std::istringstream in(content);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto first = line.find('\t');
    if (first == std::string::npos || line.find('\t', first + 1) != std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected exactly one tab");
    }
    const std::string concept_id = line.substr(0, first);
    const std::string name = normalize_whitespace(line.substr(first + 1));
    if (concept_id.empty() || name.empty()) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": empty concept id or name");
    }
    if (!seen.insert({concept_id, name}).second) continue;
    kb.entries.emplace_back(concept_id, name);
    kb.name_to_concepts[name].insert(concept_id);
  }
  return kb;
}

std::vector<NerExample> load_ner_dataset(const std::string& path) {
  std::vector<NerExample> examples;
  for_each_jsonl(path, [&](const json& rec, std::size_t lineno) {
    const std::string where = path + ":" + std::to_string(lineno);
    if (!rec.contains("words") || !rec["words"].is_array() ||
        !rec.contains("entities") || !rec["entities"].is_array()) {
      throw std::runtime_error(where + ": expected \"words\" and \"entities\" arrays");
    }
    NerExample ex;
    for (const auto& w : rec["words"]) {
      if (!w.is_string()) throw std::runtime_error(where + ": non-string word");
      ex.words.push_back(w.get<std::string>());
    }
    for (const auto& e : rec["entities"]) {
      if (!e.is_object() || !e.contains("word_indices") ||
          !e["word_indices"].is_array() || !e.contains("type") ||
          !e["type"].is_string()) {
        throw std::runtime_error(where + ": malformed entity");
      }
      EntityAnnotation ann;
      ann.entity_type = e["type"].get<std::string>();
      for (const auto& idx : e["word_indices"]) {
        if (!idx.is_number_integer()) {
          throw std::runtime_error(where + ": non-integer word index");
        }
        const int i = idx.get<int>();
        if (i < 0 || i >= static_cast<int>(ex.words.size())) {
          throw std::runtime_error(where + ": word index " + std::to_string(i) +
                                   " out of range");
        }
        ann.word_indices.push_back(i);
      }
      std::sort(ann.word_indices.begin(), ann.word_indices.end());
      ann.word_indices.erase(
          std::unique(ann.word_indices.begin(), ann.word_indices.end()),
          ann.word_indices.end());
      if (ann.word_indices.empty()) {
        throw std::runtime_error(where + ": empty entity");
      }
      ex.entities.push_back(std::move(ann));
    }
    examples.push_back(std::move(ex));
  });
  return examples;
}

}  // namespace biogen
