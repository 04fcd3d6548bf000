// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "biogen/bpe.hpp"
#include "biogen/corpus.hpp"
#include "biogen/model.hpp"
#include "biogen/noising.hpp"
#include "biogen/transformer.hpp"

namespace biogen {

struct TrainConfig {
  long total_steps = 1000;
  int batch_size = 8;
  double lr_max = 1e-4;
  double warmup_ratio = 0.02;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;
  int epochs = 20;
  long checkpoint_interval = 0;  // 0: checkpoint only at the end

  void validate() const {
    if (total_steps < 1) throw std::runtime_error("TrainConfig: total_steps < 1");
    if (batch_size < 1) throw std::runtime_error("TrainConfig: batch_size < 1");
    if (lr_max <= 0.0) throw std::runtime_error("TrainConfig: lr_max <= 0");
    if (warmup_ratio < 0.0 || warmup_ratio >= 1.0) {
      throw std::runtime_error("TrainConfig: warmup_ratio outside [0,1)");
    }
    if (epochs < 1) throw std::runtime_error("TrainConfig: epochs < 1");
  }
};

// Linear warmup to lr_max over round(warmup_ratio * total_steps) steps,
// then linear decay to zero at total_steps.
inline double lr_at(long step, const TrainConfig& cfg) {
  if (step < 0) throw std::runtime_error("lr_at: negative step");
  if (step > cfg.total_steps) {
    throw std::runtime_error("lr_at: step " + std::to_string(step) +
                             " beyond total_steps");
  }
  const long warmup = std::lround(cfg.warmup_ratio * static_cast<double>(cfg.total_steps));
  if (step <= warmup) {
    if (warmup == 0) return cfg.lr_max;
    return cfg.lr_max * static_cast<double>(step) / static_cast<double>(warmup);
  }
  return cfg.lr_max * static_cast<double>(cfg.total_steps - step) /
         static_cast<double>(cfg.total_steps - warmup);
}

// ------------------------------------------------------- sequence losses

// Teacher-forced NLL, mean over non-PAD target positions. When `grads`
// is given, accumulates d(loss * grad_scale)/dparams into it.
template <class S>
S seq2seq_nll(const ModelParams<S>& p, const std::vector<int>& source_ids,
              const std::vector<int>& target_ids, const ForwardCtx& ctx = {},
              ModelParams<S>* grads = nullptr, S grad_scale = S(1)) {
  if (target_ids.size() < 2 || target_ids.front() != kBosId) {
    throw std::runtime_error("seq2seq_nll: target must be BOS-wrapped, length >= 2");
  }
  const std::vector<int> dec_input(target_ids.begin(), target_ids.end() - 1);
  const std::vector<int> gold(target_ids.begin() + 1, target_ids.end());

  EncoderCache<S> enc = encoder_forward(p, source_ids, ctx);
  const Mat<S> x0 = token_input_embedding(p, dec_input);
  DecoderCache<S> dec = decoder_forward(p, x0, enc.states, enc.key_allowed, ctx);
  const Mat<S> logits = output_logits(p, dec.states);

  const Eigen::Index steps = logits.rows();
  long counted = 0;
  for (long t = 0; t < steps; ++t) counted += gold[t] != kPadId;
  if (counted == 0) throw std::runtime_error("seq2seq_nll: all-PAD target");

  S loss = 0;
  Mat<S> dlogits;
  if (grads) dlogits = Mat<S>::Zero(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < steps; ++t) {
    if (gold[t] == kPadId) continue;
    const S mx = logits.row(t).maxCoeff();
    const S lse = mx + std::log((logits.row(t).array() - mx).exp().sum());
    loss += lse - logits(t, gold[t]);
    if (grads) {
      dlogits.row(t) =
          ((logits.row(t).array() - lse).exp() * (grad_scale / counted)).matrix();
      dlogits(t, gold[t]) -= grad_scale / counted;
    }
  }
  loss /= static_cast<S>(counted);

  if (grads) {
    Mat<S> dstates = Mat<S>::Zero(dec.states.rows(), dec.states.cols());
    output_logits_backward(p, dec.states, dlogits, *grads, dstates);
    Mat<S> dx0 = Mat<S>::Zero(x0.rows(), x0.cols());
    Mat<S> denc = Mat<S>::Zero(enc.states.rows(), enc.states.cols());
    decoder_backward(p, dec, dstates, *grads, dx0, denc);
    token_input_backward(p, dec_input, dx0, *grads);
    encoder_backward(p, enc, denc, *grads);
  }
  return loss;
}

// Pointer-symbol flat alphabet over a source of length L with T types:
// [0, L) source token positions, [L, L+T) types, L+T is pointer-EOS.
inline int pointer_eos_symbol(std::size_t source_len, int n_types) {
  return static_cast<int>(source_len) + n_types;
}

// Scores for the next pointer symbol given decoder state row `h`:
// positions get scaled dots with encoder states (word starts only),
// types and EOS get dots with the learned type embeddings.
template <class S>
ColVec<S> pointer_scores_row(const ModelParams<S>& p, const Mat<S>& enc_states,
                             const std::vector<bool>& word_start,
                             const Eigen::Matrix<S, 1, Eigen::Dynamic>& h) {
  const Eigen::Index len = enc_states.rows();
  const int n_types = p.cfg.n_entity_types;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(p.cfg.d_model)));
  ColVec<S> scores(len + n_types + 1);
  for (Eigen::Index j = 0; j < len; ++j) {
    scores(j) = word_start[j] ? h.dot(enc_states.row(j)) * scale
                              : -std::numeric_limits<S>::infinity();
  }
  for (int j = 0; j <= n_types; ++j) {
    scores(len + j) = h.dot(p.type_emb.row(j));
  }
  return scores;
}

// Builds the decoder input embedding for a pointer prefix: BOS followed
// by the embeddings of previously emitted symbols (source token for a
// position, type embedding for a type).
template <class S>
Mat<S> pointer_input_embedding(const ModelParams<S>& p, const TokenSeq& source,
                               const std::vector<int>& prefix_symbols) {
  const int L = static_cast<int>(source.size());
  const int n_types = p.cfg.n_entity_types;
  const S scale = static_cast<S>(std::sqrt(static_cast<double>(p.cfg.d_model)));
  const std::size_t n = prefix_symbols.size() + 1;
  if (static_cast<int>(n) > p.cfg.max_positions) {
    throw std::runtime_error("pointer prefix exceeds max_positions");
  }
  Mat<S> x0(static_cast<Eigen::Index>(n), p.cfg.d_model);
  x0.row(0) = p.tok_emb.row(kBosId) * scale + p.pos_emb.row(0);
  for (std::size_t t = 1; t < n; ++t) {
    const int s = prefix_symbols[t - 1];
    if (s >= 0 && s < L) {
      x0.row(t) = p.tok_emb.row(source.ids[s]) * scale + p.pos_emb.row(t);
    } else if (s >= L && s < L + n_types) {
      x0.row(t) = p.type_emb.row(s - L) * scale + p.pos_emb.row(t);
    } else {
      throw std::runtime_error("pointer prefix symbol " + std::to_string(s) +
                               " invalid for source length " + std::to_string(L));
    }
  }
  return x0;
}

// Teacher-forced NLL of a pointer symbol sequence (NER head). The gold
// sequence must terminate with the pointer-EOS symbol.
template <class S>
S pointer_nll(const ModelParams<S>& p, const TokenSeq& source,
              const std::vector<int>& gold_symbols, const ForwardCtx& ctx = {},
              ModelParams<S>* grads = nullptr, S grad_scale = S(1)) {
  const int L = static_cast<int>(source.size());
  const int n_types = p.cfg.n_entity_types;
  if (gold_symbols.empty() || gold_symbols.back() != pointer_eos_symbol(L, n_types)) {
    throw std::runtime_error("pointer_nll: gold must end with pointer-EOS");
  }
  const std::vector<int> prefix(gold_symbols.begin(), gold_symbols.end() - 1);

  EncoderCache<S> enc = encoder_forward(p, source.ids, ctx);
  const Mat<S> x0 = pointer_input_embedding(p, source, prefix);
  DecoderCache<S> dec = decoder_forward(p, x0, enc.states, enc.key_allowed, ctx);

  const Eigen::Index steps = dec.states.rows();
  const S inv_scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(p.cfg.d_model)));
  const S emb_scale = static_cast<S>(std::sqrt(static_cast<double>(p.cfg.d_model)));
  S loss = 0;
  Mat<S> dstates;
  Mat<S> denc = Mat<S>::Zero(enc.states.rows(), enc.states.cols());
  if (grads) dstates = Mat<S>::Zero(steps, p.cfg.d_model);

  for (Eigen::Index t = 0; t < steps; ++t) {
    const Eigen::Matrix<S, 1, Eigen::Dynamic> h = dec.states.row(t);
    ColVec<S> scores = pointer_scores_row(p, enc.states, source.word_start, h);
    const S mx = scores.maxCoeff();
    const S lse = mx + std::log((scores.array() - mx).exp().sum());
    const int gold = gold_symbols[t];
    loss += lse - scores(gold);
    if (grads) {
      ColVec<S> g = ((scores.array() - lse).exp() * (grad_scale / steps)).matrix();
      g(gold) -= grad_scale / steps;
      for (Eigen::Index j = 0; j < enc.states.rows(); ++j) {
        if (!source.word_start[j]) continue;  // masked, g(j) == 0
        dstates.row(t) += g(j) * inv_scale * enc.states.row(j);
        denc.row(j) += g(j) * inv_scale * h;
      }
      for (int j = 0; j <= n_types; ++j) {
        dstates.row(t) += g(enc.states.rows() + j) * p.type_emb.row(j);
        grads->type_emb.row(j) += g(enc.states.rows() + j) * h;
      }
    }
  }
  loss /= static_cast<S>(steps);

  if (grads) {
    Mat<S> dx0 = Mat<S>::Zero(x0.rows(), x0.cols());
    decoder_backward(p, dec, dstates, *grads, dx0, denc);
    grads->tok_emb.row(kBosId) += dx0.row(0) * emb_scale;
    grads->pos_emb.row(0) += dx0.row(0);
    for (std::size_t t = 1; t < prefix.size() + 1; ++t) {
      const int s = prefix[t - 1];
      if (s < L) {
        grads->tok_emb.row(source.ids[s]) += dx0.row(t) * emb_scale;
      } else {
        grads->type_emb.row(s - L) += dx0.row(t) * emb_scale;
      }
      grads->pos_emb.row(t) += dx0.row(t);
    }
    encoder_backward(p, enc, denc, *grads);
  }
  return loss;
}

// Mean loss and exact gradients over a batch of token-id pairs.
template <class S>
S compute_gradients(const ModelParams<S>& p,
                    const std::vector<std::pair<std::vector<int>, std::vector<int>>>& batch,
                    ModelParams<S>& grads, const ForwardCtx& ctx = {}) {
  if (batch.empty()) throw std::runtime_error("compute_gradients: empty batch");
  const S scale = S(1) / static_cast<S>(batch.size());
  S total = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const S loss = seq2seq_nll(p, batch[i].first, batch[i].second, ctx, &grads, scale);
    if (!std::isfinite(static_cast<double>(loss))) {
      throw std::runtime_error("compute_gradients: non-finite loss at batch index " +
                               std::to_string(i));
    }
    total += loss;
  }
  return total * scale;
}

// -------------------------------------------------------------- optimizer

template <class S>
struct OptState {
  ModelParams<S> m, v;
  long step = 0;
};

template <class S>
OptState<S> init_opt_state(ModelParams<S>& params) {
  OptState<S> opt;
  opt.m = zeros_like(params);
  opt.v = zeros_like(params);
  return opt;
}

// Bias-corrected Adam with decoupled weight decay; global-norm gradient
// clipping applied first.
template <class S>
void optimizer_step(ModelParams<S>& params, ModelParams<S>& grads, OptState<S>& opt,
                    double lr, const TrainConfig& cfg) {
  auto pt = params.tensors();
  auto gt = grads.tensors();
  auto mt = opt.m.tensors();
  auto vt = opt.v.tensors();

  double sq_norm = 0.0;
  for (auto& nt : gt) {
    if (!nt.tensor->allFinite()) {
      throw std::runtime_error("optimizer_step: non-finite gradient in " + nt.name);
    }
    sq_norm += static_cast<double>(nt.tensor->squaredNorm());
  }
  const double norm = std::sqrt(sq_norm);
  const S clip_scale = (cfg.grad_clip_norm > 0.0 && norm > cfg.grad_clip_norm)
                           ? static_cast<S>(cfg.grad_clip_norm / norm)
                           : S(1);

  const long t = ++opt.step;
  const S b1 = static_cast<S>(cfg.adam_beta1);
  const S b2 = static_cast<S>(cfg.adam_beta2);
  const S corr1 = S(1) - static_cast<S>(std::pow(cfg.adam_beta1, t));
  const S corr2 = S(1) - static_cast<S>(std::pow(cfg.adam_beta2, t));
  for (std::size_t i = 0; i < pt.size(); ++i) {
    const auto g = (gt[i].tensor->array() * clip_scale).eval();
    auto& m = *mt[i].tensor;
    auto& v = *vt[i].tensor;
    m = (b1 * m.array() + (S(1) - b1) * g).matrix();
    v = (b2 * v.array() + (S(1) - b2) * g.square()).matrix();
    const auto mhat = m.array() / corr1;
    const auto vhat = v.array() / corr2;
    pt[i].tensor->array() -=
        static_cast<S>(lr) * (mhat / (vhat.sqrt() + static_cast<S>(cfg.adam_eps)) +
                              static_cast<S>(cfg.weight_decay) * pt[i].tensor->array());
  }
}

// ------------------------------------------------------------- checkpoint

struct Checkpoint {
  ModelParams<float> params;
  OptState<float> opt;
  bool has_opt = false;
  std::map<std::string, std::string> config;
};

void save_checkpoint(ModelParams<float>& params, OptState<float>* opt,
                     const std::map<std::string, std::string>& config,
                     const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// ---------------------------------------------------------------- loops

struct StepRecord {
  long step;
  double loss;
  double lr;
};

struct PretrainResult {
  std::string checkpoint_path;
  std::string loss_curve_path;
  std::vector<StepRecord> records;  // this run only (resume appends)
};

// Pretraining loop with resume-from-checkpoint. Writes checkpoint.bin
// and loss.csv under out_dir.
PretrainResult pretrain(const std::vector<Document>& corpus, const Vocab& vocab,
                        const NoiseConfig& noise_cfg, const ModelConfig& model_cfg,
                        const TrainConfig& train_cfg, int max_len,
                        const std::string& out_dir);

using TokenPair = std::pair<std::vector<int>, std::vector<int>>;

struct FinetuneResult {
  ModelParams<float> best_params;
  double best_metric = 0.0;
  int best_epoch = -1;
  std::vector<double> epoch_losses;
};

// Epoch-based fine-tuning; keeps the checkpoint with the best validation
// metric (earliest epoch wins ties).
FinetuneResult finetune(const std::vector<TokenPair>& train_pairs,
                        ModelParams<float> init, const TrainConfig& cfg,
                        const std::function<double(const ModelParams<float>&)>& eval_hook);

// Same loop over NER pointer examples.
struct PointerExample {
  TokenSeq source;
  std::vector<int> gold_symbols;
};
FinetuneResult finetune_pointer(const std::vector<PointerExample>& train_examples,
                                ModelParams<float> init, const TrainConfig& cfg,
                                const std::function<double(const ModelParams<float>&)>& eval_hook);

}  // namespace biogen
