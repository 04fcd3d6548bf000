// SPDX-License-Identifier: Apache-2.0
#include "biogen/tasks.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include "json.hpp"

namespace biogen {

int worker_thread_count() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("BIOGEN_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, cap);
  }
  return n;
}

namespace {

// Index-parallel map with deterministic result placement.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const int workers = static_cast<int>(
      std::min<std::size_t>(static_cast<std::size_t>(worker_thread_count()), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

std::vector<int> wrap_bos_eos(std::vector<int> ids) {
  ids.insert(ids.begin(), kBosId);
  ids.push_back(kEosId);
  return ids;
}

TokenPair tokenize_pair(const Vocab& vocab, const SourceTargetPair& pair) {
  return {wrap_bos_eos(encode(vocab, pair.source).ids),
          wrap_bos_eos(encode(vocab, pair.target).ids)};
}

}  // namespace

// ------------------------------------------------------- entity linking

std::string mark_mention(const LinkingExample& ex) {
  return normalize_whitespace(ex.context_left + " [START] " + ex.mention +
                              " [END] " + ex.context_right);
}

std::string linking_target_name(const KnowledgeBase& kb, const LinkingExample& ex) {
  std::vector<std::string> gold_names;
  for (const auto& [concept_id, name] : kb.entries) {
    if (concept_id == ex.gold_concept) gold_names.push_back(name);
  }
  if (gold_names.empty()) {
    throw std::runtime_error("gold concept " + ex.gold_concept +
                             " has no names in the knowledge base");
  }
  const std::string mention = normalize_whitespace(ex.mention);
  for (const std::string& name : gold_names) {
    if (name == mention) return name;
  }
  return *std::min_element(gold_names.begin(), gold_names.end());
}

LinkingPrediction link_mention(const ModelParams<float>& params,
                               const PrefixTrie& trie, const KnowledgeBase& kb,
                               const Vocab& vocab, const LinkingExample& ex,
                               int beam_size) {
  const std::vector<int> source = wrap_bos_eos(encode(vocab, mark_mention(ex)).ids);
  const int max_len = std::min(params.cfg.max_positions, trie.max_depth + 2);
  const auto hyps = beam_search(params, source, beam_size, max_len, &trie);

  LinkingPrediction pred;
  std::set<std::string> seen_names, seen_concepts;
  for (const Hypothesis& h : hyps) {
    // Strip BOS/EOS, map tokens back to the trie to recover the names.
    std::vector<int> name_ids(h.ids.begin() + 1,
                              h.ids.end() - (h.finished ? 1 : 0));
    int node = 0;
    bool valid = true;
    for (int tok : name_ids) {
      const auto it = trie.nodes[node].children.find(tok);
      if (it == trie.nodes[node].children.end()) {
        valid = false;
        break;
      }
      node = it->second;
    }
    if (!valid || !trie.nodes[node].terminal) continue;
    for (const std::string& name : trie.nodes[node].names) {
      if (!seen_names.insert(name).second) continue;
      pred.ranked_names.push_back(name);
      // Ambiguous names contribute all their concepts in id-sorted order.
      for (const std::string& concept_id : kb.name_to_concepts.at(name)) {
        if (seen_concepts.insert(concept_id).second) {
          pred.ranked_concepts.push_back(concept_id);
        }
      }
    }
  }
  return pred;
}

LinkingReport evaluate_linking(const ModelParams<float>& params, const PrefixTrie& trie,
                               const KnowledgeBase& kb, const Vocab& vocab,
                               const std::vector<LinkingExample>& examples,
                               int beam_size) {
  LinkingReport report;
  report.n_examples = examples.size();
  if (examples.empty()) return report;
  std::vector<int> r1(examples.size()), r5(examples.size());
  parallel_for(examples.size(), [&](std::size_t i) {
    const LinkingPrediction pred =
        link_mention(params, trie, kb, vocab, examples[i], beam_size);
    r1[i] = recall_at_k(pred.ranked_concepts, examples[i].gold_concept, 1);
    r5[i] = recall_at_k(pred.ranked_concepts, examples[i].gold_concept, 5);
  });
  for (std::size_t i = 0; i < examples.size(); ++i) {
    report.recall_at_1 += r1[i];
    report.recall_at_5 += r5[i];
  }
  report.recall_at_1 /= static_cast<double>(examples.size());
  report.recall_at_5 /= static_cast<double>(examples.size());
  return report;
}

// ------------------------------------------------------------------ NER

TokenSeq ner_tokenize(const Vocab& vocab, const NerExample& ex) {
  TokenSeq seq;
  seq.ids.push_back(kBosId);
  seq.word_start.push_back(false);
  for (const std::string& word : ex.words) {
    const TokenSeq toks = encode(vocab, word);
    if (toks.ids.empty()) {
      throw std::runtime_error("NER word tokenizes to nothing: \"" + word + "\"");
    }
    bool first = true;
    for (int id : toks.ids) {
      seq.ids.push_back(id);
      seq.word_start.push_back(first);
      first = false;
    }
  }
  seq.ids.push_back(kEosId);
  seq.word_start.push_back(false);
  return seq;
}

namespace {

// Token position of the first subtoken of every word.
std::vector<int> word_start_positions(const TokenSeq& seq) {
  std::vector<int> positions;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (seq.word_start[t]) positions.push_back(static_cast<int>(t));
  }
  return positions;
}

bool canonical_entity_order(const EntityAnnotation& a, const EntityAnnotation& b) {
  if (a.word_indices.front() != b.word_indices.front()) {
    return a.word_indices.front() < b.word_indices.front();
  }
  if (a.word_indices.back() != b.word_indices.back()) {
    return a.word_indices.back() < b.word_indices.back();
  }
  return a.entity_type < b.entity_type;
}

}  // namespace

std::vector<int> ner_encode_target(const NerExample& ex, const TokenSeq& seq,
                                   const std::vector<std::string>& type_vocab) {
  const std::vector<int> word_pos = word_start_positions(seq);
  if (word_pos.size() != ex.words.size()) {
    throw std::runtime_error("ner_encode_target: word count mismatch between "
                             "example and token sequence");
  }
  std::vector<EntityAnnotation> entities = ex.entities;
  std::sort(entities.begin(), entities.end(), canonical_entity_order);

  const int L = static_cast<int>(seq.size());
  std::vector<int> symbols;
  for (const EntityAnnotation& ent : entities) {
    for (int w : ent.word_indices) symbols.push_back(word_pos[w]);
    const auto it = std::find(type_vocab.begin(), type_vocab.end(), ent.entity_type);
    if (it == type_vocab.end()) {
      throw std::runtime_error("ner_encode_target: unknown entity type " +
                               ent.entity_type);
    }
    symbols.push_back(L + static_cast<int>(it - type_vocab.begin()));
  }
  symbols.push_back(pointer_eos_symbol(seq.size(), static_cast<int>(type_vocab.size())));
  return symbols;
}

std::vector<EntityAnnotation> ner_decode_output(const std::vector<int>& symbols,
                                                const TokenSeq& seq,
                                                const std::vector<std::string>& type_vocab) {
  const int L = static_cast<int>(seq.size());
  const int T = static_cast<int>(type_vocab.size());
  // Map token position -> word index (word starts only).
  std::vector<int> pos_to_word(seq.size(), -1);
  int word = -1;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (seq.word_start[t]) pos_to_word[t] = ++word;
  }

  std::vector<EntityAnnotation> entities;
  std::vector<int> pending;
  bool fragment_ok = true;
  for (int s : symbols) {
    if (s == L + T) break;  // pointer-EOS
    if (s >= 0 && s < L) {
      if (pos_to_word[s] < 0 ||
          std::find(pending.begin(), pending.end(), pos_to_word[s]) != pending.end()) {
        fragment_ok = false;  // non-word-start or duplicate position
      } else {
        pending.push_back(pos_to_word[s]);
      }
    } else if (s >= L && s < L + T) {
      if (fragment_ok && !pending.empty()) {
        EntityAnnotation ann;
        ann.word_indices = pending;
        std::sort(ann.word_indices.begin(), ann.word_indices.end());
        ann.entity_type = type_vocab[s - L];
        entities.push_back(std::move(ann));
      }
      pending.clear();
      fragment_ok = true;
    } else {
      fragment_ok = false;  // out-of-range symbol poisons the fragment
    }
  }
  // Trailing positions without a closing type are dropped.
  return entities;
}

std::vector<int> ner_predict_symbols(const ModelParams<float>& params,
                                     const TokenSeq& source, int max_symbols) {
  const EncoderCache<float> enc = encoder_forward(params, source.ids, ForwardCtx{});
  const int eos = pointer_eos_symbol(source.size(), params.cfg.n_entity_types);
  std::vector<int> symbols;
  while (static_cast<int>(symbols.size()) < max_symbols) {
    const Mat<float> x0 = pointer_input_embedding(params, source, symbols);
    const DecoderCache<float> dec =
        decoder_forward(params, x0, enc.states, enc.key_allowed, ForwardCtx{});
    const Eigen::Matrix<float, 1, Eigen::Dynamic> h =
        dec.states.row(dec.states.rows() - 1);
    const ColVec<float> scores =
        pointer_scores_row(params, enc.states, source.word_start, h);
    int best = 0;
    for (Eigen::Index j = 1; j < scores.size(); ++j) {
      if (scores(j) > scores(best)) best = static_cast<int>(j);
    }
    if (best == eos) break;
    symbols.push_back(best);
  }
  symbols.push_back(eos);
  return symbols;
}

PrfScore evaluate_ner(const std::vector<std::vector<EntityAnnotation>>& preds,
                      const std::vector<std::vector<EntityAnnotation>>& golds) {
  if (preds.size() != golds.size()) {
    throw std::runtime_error("evaluate_ner: prediction/gold length mismatch");
  }
  using Key = std::pair<std::vector<int>, std::string>;
  long tp = 0, n_pred = 0, n_gold = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    std::set<Key> pred_set, gold_set;
    for (const auto& e : preds[i]) pred_set.insert({e.word_indices, e.entity_type});
    for (const auto& e : golds[i]) gold_set.insert({e.word_indices, e.entity_type});
    n_pred += static_cast<long>(pred_set.size());
    n_gold += static_cast<long>(gold_set.size());
    for (const Key& k : pred_set) tp += gold_set.count(k);
  }
  PrfScore s;
  s.precision = n_pred > 0 ? static_cast<double>(tp) / n_pred : 0.0;
  s.recall = n_gold > 0 ? static_cast<double>(tp) / n_gold : 0.0;
  s.f1 = (s.precision + s.recall) > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

// ---------------------------------------------------- seq2seq task flows

double MetricReport::get(const std::string& key) const {
  for (const auto& [k, v] : values) {
    if (k == key) return v;
  }
  throw std::runtime_error("metric report has no field " + key);
}

void write_metric_report(const MetricReport& report, const std::string& txt_path,
                         const std::string& jsonl_path) {
  std::ofstream txt(txt_path, std::ios::trunc);
  std::ofstream jsonl(jsonl_path, std::ios::trunc);
  if (!txt || !jsonl) {
    throw std::runtime_error("cannot write metric report to " + txt_path);
  }
  for (const auto& [k, v] : report.values) {
    txt << k << '\t' << v << '\n';
    jsonl << nlohmann::json{{"metric", k}, {"value", v}} << '\n';
  }
}

namespace {

std::vector<std::string> decode_test_set(const ModelParams<float>& params,
                                         const Vocab& vocab,
                                         const std::vector<SourceTargetPair>& split,
                                         int beam_size, int max_len) {
  std::vector<std::string> outputs(split.size());
  parallel_for(split.size(), [&](std::size_t i) {
    const std::vector<int> source = wrap_bos_eos(encode(vocab, split[i].source).ids);
    const auto hyps = beam_search(params, source, beam_size, max_len);
    TokenSeq seq;
    if (!hyps.empty()) {
      seq.ids = hyps.front().ids;
      for (int id : seq.ids) seq.word_start.push_back(id >= kNumSpecials);
    }
    outputs[i] = decode(vocab, seq);
  });
  return outputs;
}

}  // namespace

MetricReport run_seq2seq_task(const std::vector<SourceTargetPair>& train_split,
                              const std::vector<SourceTargetPair>& dev_split,
                              const std::vector<SourceTargetPair>& test_split,
                              const Vocab& vocab, ModelParams<float> init,
                              const SeqTaskConfig& cfg) {
  if (train_split.empty() || dev_split.empty() || test_split.empty()) {
    throw std::runtime_error("run_seq2seq_task: empty split");
  }
  std::vector<TokenPair> train_pairs;
  for (const auto& pair : train_split) train_pairs.push_back(tokenize_pair(vocab, pair));

  // Validation metric: Rouge-L F over greedy decodes of the dev set.
  const auto eval_hook = [&](const ModelParams<float>& params) {
    double total = 0.0;
    std::vector<double> scores(dev_split.size());
    parallel_for(dev_split.size(), [&](std::size_t i) {
      const std::vector<int> source =
          wrap_bos_eos(encode(vocab, dev_split[i].source).ids);
      const TokenSeq out = greedy_decode(params, source, cfg.decode_max_len);
      scores[i] = rouge_l(decode(vocab, out), dev_split[i].target).f1;
    });
    for (double s : scores) total += s;
    return total / static_cast<double>(dev_split.size());
  };

  const FinetuneResult ft = finetune(train_pairs, std::move(init), cfg.train, eval_hook);

  const std::vector<std::string> outputs = decode_test_set(
      ft.best_params, vocab, test_split, cfg.beam_size, cfg.decode_max_len);
  std::vector<std::string> references;
  for (const auto& pair : test_split) references.push_back(pair.target);

  double r1 = 0, r2 = 0, rl = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    r1 += rouge_n(outputs[i], references[i], 1).f1;
    r2 += rouge_n(outputs[i], references[i], 2).f1;
    rl += rouge_l(outputs[i], references[i]).f1;
  }
  const double n = static_cast<double>(outputs.size());

  MetricReport report;
  report.values = {{"rouge1", r1 / n},
                   {"rouge2", r2 / n},
                   {"rougeL", rl / n},
                   {"bleu", bleu(outputs, references, /*smooth=*/true)}};
  return report;
}

// -------------------------------------------------------------- ablation

AblationResult run_ablation(const std::vector<Document>& corpus, const Vocab& vocab,
                            const NoiseConfig& noise_cfg, const ModelConfig& model_cfg,
                            const TrainConfig& pretrain_cfg, const SeqTaskConfig& task_cfg,
                            int max_len, const std::vector<AblationTask>& tasks,
                            const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  AblationResult result;
  result.ti_dir = out_dir + "/pretrain-ti";
  result.ti_sp_dir = out_dir + "/pretrain-ti_sp";

  NoiseConfig ti = noise_cfg;
  ti.use_text_infilling = true;
  ti.use_sentence_permutation = false;
  NoiseConfig ti_sp = noise_cfg;
  ti_sp.use_text_infilling = true;
  ti_sp.use_sentence_permutation = true;

  const auto echo_config = [&](const NoiseConfig& nc, const std::string& dir) {
    std::ofstream out(dir + "/config.txt", std::ios::trunc);
    out << "noise=" << (nc.use_sentence_permutation ? "ti+sp" : "ti") << '\n'
        << "mask_ratio=" << nc.mask_ratio << '\n'
        << "poisson_lambda=" << nc.poisson_lambda << '\n'
        << "seed=" << nc.seed << '\n'
        << "max_len=" << max_len << '\n'
        << "total_steps=" << pretrain_cfg.total_steps << '\n'
        << "batch_size=" << pretrain_cfg.batch_size << '\n';
  };

  pretrain(corpus, vocab, ti, model_cfg, pretrain_cfg, max_len, result.ti_dir);
  echo_config(ti, result.ti_dir);
  pretrain(corpus, vocab, ti_sp, model_cfg, pretrain_cfg, max_len, result.ti_sp_dir);
  echo_config(ti_sp, result.ti_sp_dir);

  const ModelParams<float> ti_params =
      load_checkpoint(result.ti_dir + "/checkpoint.bin").params;
  const ModelParams<float> ti_sp_params =
      load_checkpoint(result.ti_sp_dir + "/checkpoint.bin").params;

  for (const AblationTask& task : tasks) {
    const MetricReport ti_report = run_seq2seq_task(
        task.train, task.dev, task.test, vocab, ti_params, task_cfg);
    const MetricReport ti_sp_report = run_seq2seq_task(
        task.train, task.dev, task.test, vocab, ti_sp_params, task_cfg);
    for (const auto& [metric, ti_value] : ti_report.values) {
      result.rows.push_back({task.name, metric, ti_value, ti_sp_report.get(metric)});
    }
  }

  std::ofstream csv(out_dir + "/ablation.csv", std::ios::trunc);
  std::ofstream table(out_dir + "/ablation.txt", std::ios::trunc);
  if (!csv || !table) throw std::runtime_error("cannot write ablation report");
  csv << "task,metric,ti_value,ti_sp_value\n";
  table << "task\tmetric\tTI\tTI+SP\n";
  for (const AblationRow& row : result.rows) {
    csv << row.task << ',' << row.metric << ',' << row.ti_value << ','
        << row.ti_sp_value << '\n';
    table << row.task << '\t' << row.metric << '\t' << row.ti_value << '\t'
          << row.ti_sp_value << '\n';
  }
  return result;
}

}  // namespace biogen
