// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "biogen/corpus.hpp"
#include "biogen/decoding.hpp"
#include "biogen/metrics.hpp"
#include "biogen/train.hpp"

namespace biogen {

// ------------------------------------------------------- entity linking

struct LinkingPrediction {
  std::vector<std::string> ranked_names;     // best first, deduplicated
  std::vector<std::string> ranked_concepts;  // induced via name_to_concepts
};

// "ctx_left [START] mention [END] ctx_right", whitespace-normalized.
std::string mark_mention(const LinkingExample& ex);

LinkingPrediction link_mention(const ModelParams<float>& params,
                               const PrefixTrie& trie, const KnowledgeBase& kb,
                               const Vocab& vocab, const LinkingExample& ex,
                               int beam_size = 5);

// Fine-tuning target: the gold concept's name equal to the mention when
// one exists, else its lexicographically smallest name.
std::string linking_target_name(const KnowledgeBase& kb, const LinkingExample& ex);

struct LinkingReport {
  double recall_at_1 = 0.0;
  double recall_at_5 = 0.0;
  std::size_t n_examples = 0;
};

LinkingReport evaluate_linking(const ModelParams<float>& params, const PrefixTrie& trie,
                               const KnowledgeBase& kb, const Vocab& vocab,
                               const std::vector<LinkingExample>& examples,
                               int beam_size = 5);

// ------------------------------------------------------------------ NER

// Pointer targets: entities in (first index, last index, type) order;
// per entity the first-subtoken position of each word, then the type
// symbol; the sequence ends with pointer-EOS. `seq` must be the
// BOS/EOS-wrapped tokenization of the example's words.
std::vector<int> ner_encode_target(const NerExample& ex, const TokenSeq& seq,
                                   const std::vector<std::string>& type_vocab);

// Total inverse parse; malformed fragments are dropped, never errors.
std::vector<EntityAnnotation> ner_decode_output(const std::vector<int>& symbols,
                                                const TokenSeq& seq,
                                                const std::vector<std::string>& type_vocab);

// BOS/EOS-wrapped tokenization of the example's words with word_start
// flags; throws if any word tokenizes to nothing.
TokenSeq ner_tokenize(const Vocab& vocab, const NerExample& ex);

// Greedy pointer decoding for inference.
std::vector<int> ner_predict_symbols(const ModelParams<float>& params,
                                     const TokenSeq& source, int max_symbols);

// Micro-averaged entity-level scores; exact word-index-set + type match.
PrfScore evaluate_ner(const std::vector<std::vector<EntityAnnotation>>& preds,
                      const std::vector<std::vector<EntityAnnotation>>& golds);

// ---------------------------------------------------- seq2seq task flows

struct MetricReport {
  std::vector<std::pair<std::string, double>> values;

  double get(const std::string& key) const;
};

void write_metric_report(const MetricReport& report, const std::string& txt_path,
                         const std::string& jsonl_path);

struct SeqTaskConfig {
  TrainConfig train;
  int beam_size = 5;
  int decode_max_len = 64;
};

// Fine-tune on train, pick the best epoch by dev Rouge-L, decode the test
// set with beam search, report Rouge-1/2/L and BLEU.
MetricReport run_seq2seq_task(const std::vector<SourceTargetPair>& train_split,
                              const std::vector<SourceTargetPair>& dev_split,
                              const std::vector<SourceTargetPair>& test_split,
                              const Vocab& vocab, ModelParams<float> init,
                              const SeqTaskConfig& cfg);

// -------------------------------------------------------------- ablation

struct AblationTask {
  std::string name;
  std::vector<SourceTargetPair> train, dev, test;
};

struct AblationRow {
  std::string task;
  std::string metric;
  double ti_value = 0.0;
  double ti_sp_value = 0.0;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::string ti_dir, ti_sp_dir;  // the two pretraining output directories
};

// Pretrains two models from the same seed (noise=ti and noise=ti+sp),
// fine-tunes both on every task, and writes ablation.csv plus a
// human-readable table under out_dir.
AblationResult run_ablation(const std::vector<Document>& corpus, const Vocab& vocab,
                            const NoiseConfig& noise_cfg, const ModelConfig& model_cfg,
                            const TrainConfig& pretrain_cfg, const SeqTaskConfig& task_cfg,
                            int max_len, const std::vector<AblationTask>& tasks,
                            const std::string& out_dir);

// Bounded worker count for embarrassingly parallel inference; reads
// BIOGEN_THREADS, defaulting to the hardware concurrency.
int worker_thread_count();

}  // namespace biogen
