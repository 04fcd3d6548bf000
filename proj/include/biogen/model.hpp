// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "biogen/rng.hpp"

namespace biogen {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 0;
  int n_heads = 0;
  int n_enc_layers = 0;
  int n_dec_layers = 0;
  int d_ff = 0;
  int max_positions = 0;
  double dropout_rate = 0.0;
  int n_entity_types = 0;  // pointer-head type inventory; 0 when unused

  void validate() const {
    if (vocab_size < 6) throw std::runtime_error("ModelConfig: vocab_size too small");
    if (d_model <= 0 || n_heads <= 0 || d_ff <= 0 || max_positions <= 0 ||
        n_enc_layers <= 0 || n_dec_layers <= 0) {
      throw std::runtime_error("ModelConfig: dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
      throw std::runtime_error("ModelConfig: d_model not divisible by n_heads");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
      throw std::runtime_error("ModelConfig: dropout_rate outside [0,1)");
    }
    if (n_entity_types < 0) throw std::runtime_error("ModelConfig: negative n_entity_types");
  }
};

template <class S>
struct AttentionParams {
  Mat<S> wq, wk, wv, wo;  // each d_model x d_model
  Mat<S> bq, bk, bv, bo;  // each 1 x d_model
};

template <class S>
struct LayerNormParams {
  Mat<S> gain, bias;  // each 1 x d_model
};

template <class S>
struct FfnParams {
  Mat<S> w1, w2;  // d_model x d_ff, d_ff x d_model
  Mat<S> b1, b2;  // 1 x d_ff, 1 x d_model
};

template <class S>
struct EncLayerParams {
  AttentionParams<S> self;
  LayerNormParams<S> ln1;
  FfnParams<S> ffn;
  LayerNormParams<S> ln2;
};

template <class S>
struct DecLayerParams {
  AttentionParams<S> self;
  LayerNormParams<S> ln1;
  AttentionParams<S> cross;
  LayerNormParams<S> ln2;
  FfnParams<S> ffn;
  LayerNormParams<S> ln3;
};

enum class TensorKind { Embedding, Weight, Bias, Gain };

template <class S>
struct NamedTensor {
  std::string name;
  Mat<S>* tensor;
  TensorKind kind;
};

// All weights of the encoder-decoder transformer. The token embedding is
// shared between encoder input, decoder input, and the output projection.
// type_emb has n_entity_types + 1 rows; the last row scores pointer-EOS.
template <class S>
struct ModelParams {
  ModelConfig cfg;
  Mat<S> tok_emb;   // vocab_size x d_model
  Mat<S> pos_emb;   // max_positions x d_model
  Mat<S> type_emb;  // (n_entity_types + 1) x d_model
  std::vector<EncLayerParams<S>> enc;
  std::vector<DecLayerParams<S>> dec;

  std::vector<NamedTensor<S>> tensors() {
    std::vector<NamedTensor<S>> out;
    out.push_back({"tok_emb", &tok_emb, TensorKind::Embedding});
    out.push_back({"pos_emb", &pos_emb, TensorKind::Embedding});
    out.push_back({"type_emb", &type_emb, TensorKind::Embedding});
    const auto attn = [&](const std::string& prefix, AttentionParams<S>& a) {
      out.push_back({prefix + ".wq", &a.wq, TensorKind::Weight});
      out.push_back({prefix + ".bq", &a.bq, TensorKind::Bias});
      out.push_back({prefix + ".wk", &a.wk, TensorKind::Weight});
      out.push_back({prefix + ".bk", &a.bk, TensorKind::Bias});
      out.push_back({prefix + ".wv", &a.wv, TensorKind::Weight});
      out.push_back({prefix + ".bv", &a.bv, TensorKind::Bias});
      out.push_back({prefix + ".wo", &a.wo, TensorKind::Weight});
      out.push_back({prefix + ".bo", &a.bo, TensorKind::Bias});
    };
    const auto norm = [&](const std::string& prefix, LayerNormParams<S>& n) {
      out.push_back({prefix + ".gain", &n.gain, TensorKind::Gain});
      out.push_back({prefix + ".bias", &n.bias, TensorKind::Bias});
    };
    const auto ffn = [&](const std::string& prefix, FfnParams<S>& f) {
      out.push_back({prefix + ".w1", &f.w1, TensorKind::Weight});
      out.push_back({prefix + ".b1", &f.b1, TensorKind::Bias});
      out.push_back({prefix + ".w2", &f.w2, TensorKind::Weight});
      out.push_back({prefix + ".b2", &f.b2, TensorKind::Bias});
    };
    for (std::size_t i = 0; i < enc.size(); ++i) {
      const std::string p = "enc." + std::to_string(i);
      attn(p + ".self", enc[i].self);
      norm(p + ".ln1", enc[i].ln1);
      ffn(p + ".ffn", enc[i].ffn);
      norm(p + ".ln2", enc[i].ln2);
    }
    for (std::size_t i = 0; i < dec.size(); ++i) {
      const std::string p = "dec." + std::to_string(i);
      attn(p + ".self", dec[i].self);
      norm(p + ".ln1", dec[i].ln1);
      attn(p + ".cross", dec[i].cross);
      norm(p + ".ln2", dec[i].ln2);
      ffn(p + ".ffn", dec[i].ffn);
      norm(p + ".ln3", dec[i].ln3);
    }
    return out;
  }
};

namespace detail {

template <class S>
void alloc_layers(ModelParams<S>& p) {
  const int d = p.cfg.d_model, ff = p.cfg.d_ff;
  const auto attn = [&](AttentionParams<S>& a) {
    a.wq.resize(d, d); a.wk.resize(d, d); a.wv.resize(d, d); a.wo.resize(d, d);
    a.bq.resize(1, d); a.bk.resize(1, d); a.bv.resize(1, d); a.bo.resize(1, d);
  };
  const auto norm = [&](LayerNormParams<S>& n) {
    n.gain.resize(1, d);
    n.bias.resize(1, d);
  };
  const auto ffn = [&](FfnParams<S>& f) {
    f.w1.resize(d, ff); f.b1.resize(1, ff);
    f.w2.resize(ff, d); f.b2.resize(1, d);
  };
  p.tok_emb.resize(p.cfg.vocab_size, d);
  p.pos_emb.resize(p.cfg.max_positions, d);
  p.type_emb.resize(p.cfg.n_entity_types + 1, d);
  p.enc.resize(p.cfg.n_enc_layers);
  p.dec.resize(p.cfg.n_dec_layers);
  for (auto& layer : p.enc) { attn(layer.self); norm(layer.ln1); ffn(layer.ffn); norm(layer.ln2); }
  for (auto& layer : p.dec) {
    attn(layer.self); norm(layer.ln1);
    attn(layer.cross); norm(layer.ln2);
    ffn(layer.ffn); norm(layer.ln3);
  }
}

}  // namespace detail

// Glorot-uniform weights, Normal(0, 0.02) embeddings, identity layer norms.
template <class S>
ModelParams<S> init_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams<S> p;
  p.cfg = cfg;
  detail::alloc_layers(p);
  for (auto& [name, tensor, kind] : p.tensors()) {
    switch (kind) {
      case TensorKind::Embedding:
        for (Eigen::Index i = 0; i < tensor->size(); ++i) {
          tensor->data()[i] = static_cast<S>(0.02 * rng.normal());
        }
        break;
      case TensorKind::Weight: {
        const double bound =
            std::sqrt(6.0 / (tensor->rows() + tensor->cols()));
        for (Eigen::Index i = 0; i < tensor->size(); ++i) {
          tensor->data()[i] = static_cast<S>(rng.uniform_real(-bound, bound));
        }
        break;
      }
      case TensorKind::Bias:
        tensor->setZero();
        break;
      case TensorKind::Gain:
        tensor->setOnes();
        break;
    }
  }
  return p;
}

// Same shapes as `like`, all zeros; the gradient/moment container.
template <class S>
ModelParams<S> zeros_like(ModelParams<S>& like) {
  ModelParams<S> p;
  p.cfg = like.cfg;
  detail::alloc_layers(p);
  for (auto& nt : p.tensors()) nt.tensor->setZero();
  return p;
}

template <class From, class To>
ModelParams<To> cast_params(ModelParams<From>& src) {
  ModelParams<To> dst;
  dst.cfg = src.cfg;
  detail::alloc_layers(dst);
  auto s = src.tensors();
  auto d = dst.tensors();
  for (std::size_t i = 0; i < s.size(); ++i) {
    *d[i].tensor = s[i].tensor->template cast<To>();
  }
  return dst;
}

}  // namespace biogen
