// SPDX-License-Identifier: Apache-2.0
//
// biogen: single entry point for the whole pipeline. Subcommands cover
// vocabulary training, denoising pretraining, seq2seq fine-tuning and
// evaluation, constrained entity linking, pointer NER scoring, and the
// noising ablation. Exit codes: 0 success, 1 runtime failure, 2 usage.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "biogen/corpus.hpp"
#include "biogen/decoding.hpp"
#include "biogen/metrics.hpp"
#include "biogen/runconfig.hpp"
#include "biogen/tasks.hpp"
#include "biogen/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace biogen;

namespace {

RunConfig load_config(const std::string& path) {
  return path.empty() ? RunConfig() : RunConfig::from_file(path);
}

// Resolved config plus the derived noise flags as comment lines, so the
// echo stays a loadable config file.
std::string config_echo(const RunConfig& cfg) {
  const NoiseConfig nc = cfg.noise_config();
  std::ostringstream out;
  out << cfg.resolved_text();
  out << "# use_text_infilling=" << (nc.use_text_infilling ? "true" : "false") << '\n';
  out << "# use_sentence_permutation="
      << (nc.use_sentence_permutation ? "true" : "false") << '\n';
  return out.str();
}

void write_config(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream out(out_dir + "/config.txt", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + out_dir + "/config.txt");
  out << config_echo(cfg);
}

ModelParams<float> load_params(const std::string& path, const Vocab& vocab) {
  ModelParams<float> params = load_checkpoint(path).params;
  if (params.cfg.vocab_size != vocab.size()) {
    throw std::runtime_error("checkpoint vocab_size " +
                             std::to_string(params.cfg.vocab_size) +
                             " does not match vocabulary of size " +
                             std::to_string(vocab.size()));
  }
  return params;
}

std::vector<SourceTargetPair> load_split(const std::string& data_dir,
                                         const std::string& task,
                                         const std::string& split) {
  return load_seq2seq_dataset(data_dir + "/" + task + "." + split + ".jsonl");
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) throw std::runtime_error("empty list: \"" + s + "\"");
  return out;
}

std::vector<std::string> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open predictions file: " + path);
  std::vector<std::string> preds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto obj = nlohmann::json::parse(line);
    if (!obj.contains("prediction") || !obj["prediction"].is_string()) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected a string field \"prediction\"");
    }
    preds.push_back(obj["prediction"].get<std::string>());
  }
  return preds;
}

void report_to_files(const MetricReport& report, const std::string& out_dir) {
  fs::create_directories(out_dir);
  write_metric_report(report, out_dir + "/metrics.txt", out_dir + "/metrics.jsonl");
  for (const auto& [metric, value] : report.values) {
    std::cout << metric << '\t' << value << '\n';
  }
}

// ----------------------------------------------------------- subcommands

struct BuildVocabArgs {
  std::string corpus, out;
  int vocab_size = 0;
};

void run_build_vocab(const BuildVocabArgs& a) {
  const auto docs = load_documents(a.corpus);
  const Vocab vocab = train_bpe(docs, a.vocab_size);
  if (const fs::path parent = fs::path(a.out).parent_path(); !parent.empty()) {
    fs::create_directories(parent);
  }
  save_vocab(vocab, a.out);
  std::cout << vocab.size() << " tokens\n";
}

struct PretrainArgs {
  std::string config, corpus, vocab, out, noise;
  std::string seed;
};

void run_pretrain(const PretrainArgs& a) {
  RunConfig cfg = load_config(a.config);
  if (!a.noise.empty()) cfg.set("noise", a.noise);
  if (!a.seed.empty()) cfg.set("seed", a.seed);

  const auto docs = load_documents(a.corpus);
  const Vocab vocab = load_vocab(a.vocab);
  write_config(cfg, a.out);
  std::cout << config_echo(cfg);

  const PretrainResult result =
      pretrain(docs, vocab, cfg.noise_config(), cfg.model_config(vocab.size()),
               cfg.train_config(), cfg.max_len(), a.out);
  std::cout << "checkpoint: " << result.checkpoint_path << '\n'
            << "loss curve: " << result.loss_curve_path << '\n';
}

struct FinetuneArgs {
  std::string config, task, data, init, vocab, out;
};

void run_finetune(const FinetuneArgs& a) {
  const RunConfig cfg = load_config(a.config);
  const Vocab vocab = load_vocab(a.vocab);
  const ModelParams<float> init = load_params(a.init, vocab);

  SeqTaskConfig task_cfg;
  task_cfg.train = cfg.train_config();
  task_cfg.beam_size = cfg.beam_size();
  task_cfg.decode_max_len = cfg.max_len();

  const MetricReport report = run_seq2seq_task(
      load_split(a.data, a.task, "train"), load_split(a.data, a.task, "dev"),
      load_split(a.data, a.task, "test"), vocab, init, task_cfg);
  write_config(cfg, a.out);
  report_to_files(report, a.out);
}

struct EvalArgs {
  std::string task, data, preds, out;
};

void run_eval(const EvalArgs& a) {
  const auto dataset = load_seq2seq_dataset(a.data);
  const auto preds = load_predictions(a.preds);
  if (preds.size() != dataset.size()) {
    throw std::runtime_error("prediction count " + std::to_string(preds.size()) +
                             " does not match dataset size " +
                             std::to_string(dataset.size()));
  }
  std::vector<std::string> refs;
  for (const auto& pair : dataset) refs.push_back(pair.target);

  double r1 = 0, r2 = 0, rl = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    r1 += rouge_n(preds[i], refs[i], 1).f1;
    r2 += rouge_n(preds[i], refs[i], 2).f1;
    rl += rouge_l(preds[i], refs[i]).f1;
  }
  const double n = static_cast<double>(preds.size());
  MetricReport report;
  report.values = {{"rouge1", r1 / n},
                   {"rouge2", r2 / n},
                   {"rougeL", rl / n},
                   {"bleu", bleu(preds, refs, /*smooth=*/true)}};
  report_to_files(report, a.out);
}

struct LinkArgs {
  std::string kb, data, init, vocab, out;
  int beam = 5;
};

void run_link(const LinkArgs& a) {
  const KnowledgeBase kb = load_kb(a.kb);
  const auto examples = load_linking_dataset(a.data);
  const Vocab vocab = load_vocab(a.vocab);
  const ModelParams<float> params = load_params(a.init, vocab);
  const PrefixTrie trie = build_trie(kb, vocab);

  const LinkingReport link = evaluate_linking(params, trie, kb, vocab, examples, a.beam);
  MetricReport report;
  report.values = {{"recall@1", link.recall_at_1},
                   {"recall@5", link.recall_at_5},
                   {"n_examples", static_cast<double>(link.n_examples)}};
  report_to_files(report, a.out);
}

struct NerArgs {
  std::string data, preds, init, vocab, types, out;
  int max_symbols = 64;
};

void run_ner(const NerArgs& a) {
  const auto golds = load_ner_dataset(a.data);
  std::vector<std::vector<EntityAnnotation>> gold_entities, pred_entities;
  for (const auto& ex : golds) gold_entities.push_back(ex.entities);

  if (!a.preds.empty()) {
    const auto preds = load_ner_dataset(a.preds);
    if (preds.size() != golds.size()) {
      throw std::runtime_error("prediction count " + std::to_string(preds.size()) +
                               " does not match dataset size " +
                               std::to_string(golds.size()));
    }
    for (const auto& ex : preds) pred_entities.push_back(ex.entities);
  } else {
    if (a.init.empty() || a.vocab.empty() || a.types.empty()) {
      throw std::runtime_error(
          "ner needs either --preds or all of --init, --vocab, --types");
    }
    const Vocab vocab = load_vocab(a.vocab);
    const ModelParams<float> params = load_params(a.init, vocab);
    const auto type_vocab = split_commas(a.types);
    if (params.cfg.n_entity_types != static_cast<int>(type_vocab.size())) {
      throw std::runtime_error("checkpoint was trained with " +
                               std::to_string(params.cfg.n_entity_types) +
                               " entity types, --types lists " +
                               std::to_string(type_vocab.size()));
    }
    for (const auto& ex : golds) {
      const TokenSeq seq = ner_tokenize(vocab, ex);
      const auto symbols = ner_predict_symbols(params, seq, a.max_symbols);
      pred_entities.push_back(ner_decode_output(symbols, seq, type_vocab));
    }
  }

  const PrfScore score = evaluate_ner(pred_entities, gold_entities);
  MetricReport report;
  report.values = {{"precision", score.precision},
                   {"recall", score.recall},
                   {"f1", score.f1}};
  report_to_files(report, a.out);
}

struct AblateArgs {
  std::string config, corpus, vocab, tasks, data_dir, out;
  std::string seed;
};

void run_ablate(const AblateArgs& a) {
  RunConfig cfg = load_config(a.config);
  if (!a.seed.empty()) cfg.set("seed", a.seed);

  const auto docs = load_documents(a.corpus);
  const Vocab vocab = load_vocab(a.vocab);
  std::vector<AblationTask> tasks;
  for (const auto& name : split_commas(a.tasks)) {
    tasks.push_back({name, load_split(a.data_dir, name, "train"),
                     load_split(a.data_dir, name, "dev"),
                     load_split(a.data_dir, name, "test")});
  }

  SeqTaskConfig task_cfg;
  task_cfg.train = cfg.train_config();
  task_cfg.beam_size = cfg.beam_size();
  task_cfg.decode_max_len = cfg.max_len();

  write_config(cfg, a.out);
  const AblationResult result =
      run_ablation(docs, vocab, cfg.noise_config(), cfg.model_config(vocab.size()),
                   cfg.train_config(), task_cfg, cfg.max_len(), tasks, a.out);
  std::cout << "task,metric,ti_value,ti_sp_value\n";
  for (const AblationRow& row : result.rows) {
    std::cout << row.task << ',' << row.metric << ',' << row.ti_value << ','
              << row.ti_sp_value << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BART-style biomedical generation toolkit"};
  app.require_subcommand(1);

  BuildVocabArgs bv;
  auto* cmd_bv = app.add_subcommand("build-vocab", "train a BPE vocabulary");
  cmd_bv->add_option("--corpus", bv.corpus, "blank-line-separated documents")->required();
  cmd_bv->add_option("--vocab-size", bv.vocab_size, "target vocabulary size")->required();
  cmd_bv->add_option("--out", bv.out, "vocabulary output path")->required();

  PretrainArgs pt;
  auto* cmd_pt = app.add_subcommand("pretrain", "denoising pretraining");
  cmd_pt->add_option("--config", pt.config, "key=value config file");
  cmd_pt->add_option("--corpus", pt.corpus, "pretraining documents")->required();
  cmd_pt->add_option("--vocab", pt.vocab, "vocabulary file")->required();
  cmd_pt->add_option("--out", pt.out, "output directory")->required();
  cmd_pt->add_option("--noise", pt.noise, "noising functions")
      ->check(CLI::IsMember({"ti", "sp", "ti+sp"}));
  cmd_pt->add_option("--seed", pt.seed, "seed override");

  FinetuneArgs ft;
  auto* cmd_ft = app.add_subcommand("finetune",
                                    "fine-tune on a seq2seq task and score its test set");
  cmd_ft->add_option("--config", ft.config, "key=value config file");
  cmd_ft->add_option("--task", ft.task, "task name (files <task>.<split>.jsonl)")->required();
  cmd_ft->add_option("--data", ft.data, "directory holding the task splits")->required();
  cmd_ft->add_option("--init", ft.init, "initial checkpoint")->required();
  cmd_ft->add_option("--vocab", ft.vocab, "vocabulary file")->required();
  cmd_ft->add_option("--out", ft.out, "output directory")->required();

  EvalArgs ev;
  auto* cmd_ev = app.add_subcommand("eval", "score predictions against a dataset");
  cmd_ev->add_option("--task", ev.task, "task name (informational)");
  cmd_ev->add_option("--data", ev.data, "reference dataset (jsonl)")->required();
  cmd_ev->add_option("--preds", ev.preds, "predictions jsonl ({\"prediction\": ...})")
      ->required();
  cmd_ev->add_option("--out", ev.out, "output directory")->required();

  LinkArgs lk;
  auto* cmd_lk = app.add_subcommand("link", "constrained entity linking evaluation");
  cmd_lk->add_option("--kb", lk.kb, "knowledge base tsv")->required();
  cmd_lk->add_option("--data", lk.data, "linking dataset (jsonl)")->required();
  cmd_lk->add_option("--init", lk.init, "model checkpoint")->required();
  cmd_lk->add_option("--vocab", lk.vocab, "vocabulary file")->required();
  cmd_lk->add_option("--out", lk.out, "output directory")->required();
  cmd_lk->add_option("--beam", lk.beam, "beam size");

  NerArgs nr;
  auto* cmd_nr = app.add_subcommand("ner", "pointer NER evaluation");
  cmd_nr->add_option("--data", nr.data, "gold dataset (jsonl)")->required();
  cmd_nr->add_option("--preds", nr.preds, "predicted entities (same jsonl schema)");
  cmd_nr->add_option("--init", nr.init, "model checkpoint");
  cmd_nr->add_option("--vocab", nr.vocab, "vocabulary file");
  cmd_nr->add_option("--types", nr.types, "comma-separated entity type list");
  cmd_nr->add_option("--out", nr.out, "output directory")->required();

  AblateArgs ab;
  auto* cmd_ab = app.add_subcommand("ablate", "pretraining-noise ablation");
  cmd_ab->add_option("--config", ab.config, "key=value config file");
  cmd_ab->add_option("--corpus", ab.corpus, "pretraining documents")->required();
  cmd_ab->add_option("--vocab", ab.vocab, "vocabulary file")->required();
  cmd_ab->add_option("--tasks", ab.tasks, "comma-separated task names")->required();
  cmd_ab->add_option("--data-dir", ab.data_dir, "directory holding the task splits")
      ->required();
  cmd_ab->add_option("--out", ab.out, "output directory")->required();
  cmd_ab->add_option("--seed", ab.seed, "seed override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (cmd_bv->parsed()) run_build_vocab(bv);
    if (cmd_pt->parsed()) run_pretrain(pt);
    if (cmd_ft->parsed()) run_finetune(ft);
    if (cmd_ev->parsed()) run_eval(ev);
    if (cmd_lk->parsed()) run_link(lk);
    if (cmd_nr->parsed()) run_ner(nr);
    if (cmd_ab->parsed()) run_ablate(ab);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
