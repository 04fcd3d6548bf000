// SPDX-License-Identifier: Apache-2.0
//
// Hand-written forward and reverse-mode passes for the encoder-decoder
// transformer. Each forward fills a cache struct; the matching backward
// consumes it and accumulates into a ModelParams-shaped gradient holder.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "biogen/model.hpp"
#include "biogen/rng.hpp"

namespace biogen {

inline constexpr double kLayerNormEps = 1e-5;

// Per-call forward settings; dropout is live only in training mode.
struct ForwardCtx {
  bool train = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

template <class S>
using ColVec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------- dropout

template <class S>
struct DropoutCache {
  Mat<S> mask;
  bool active = false;
};

template <class S>
Mat<S> dropout_forward(const Mat<S>& x, const ForwardCtx& ctx, DropoutCache<S>& c) {
  if (!ctx.train || ctx.dropout <= 0.0) {
    c.active = false;
    return x;
  }
  const S keep = static_cast<S>(1.0 - ctx.dropout);
  c.mask.resize(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < c.mask.size(); ++i) {
    c.mask.data()[i] = ctx.rng->uniform_real() < ctx.dropout
                           ? S(0)
                           : S(1) / keep;
  }
  c.active = true;
  return x.cwiseProduct(c.mask);
}

template <class S>
Mat<S> dropout_backward(const Mat<S>& dy, const DropoutCache<S>& c) {
  return c.active ? dy.cwiseProduct(c.mask).eval() : dy;
}

// -------------------------------------------------------------- layernorm

template <class S>
struct LayerNormCache {
  Mat<S> xhat;
  ColVec<S> inv_std;
};

template <class S>
Mat<S> layernorm_forward(const LayerNormParams<S>& p, const Mat<S>& x,
                         LayerNormCache<S>& c) {
  const Eigen::Index d = x.cols();
  c.xhat.resize(x.rows(), d);
  c.inv_std.resize(x.rows());
  Mat<S> out(x.rows(), d);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S mean = x.row(r).mean();
    const S var = (x.row(r).array() - mean).square().mean();
    const S inv = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
    c.inv_std(r) = inv;
    c.xhat.row(r) = (x.row(r).array() - mean) * inv;
    out.row(r) = c.xhat.row(r).cwiseProduct(p.gain.row(0)) + p.bias.row(0);
  }
  return out;
}

template <class S>
void layernorm_backward(const LayerNormParams<S>& p, const LayerNormCache<S>& c,
                        const Mat<S>& dy, Mat<S>& dx, LayerNormParams<S>& g) {
  g.gain.row(0) += dy.cwiseProduct(c.xhat).colwise().sum();
  g.bias.row(0) += dy.colwise().sum();
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const auto h = dy.row(r).cwiseProduct(p.gain.row(0));
    const S mean_h = h.mean();
    const S mean_hx = h.cwiseProduct(c.xhat.row(r)).mean();
    dx.row(r) += (h.array() - mean_h - c.xhat.row(r).array() * mean_hx).matrix() *
                 c.inv_std(r);
  }
}

// ------------------------------------------------------------------- gelu

template <class S>
Mat<S> gelu(const Mat<S>& x) {
  return x.unaryExpr([](S v) {
    return static_cast<S>(0.5) * v *
           (S(1) + static_cast<S>(std::erf(static_cast<double>(v) / std::sqrt(2.0))));
  });
}

template <class S>
Mat<S> gelu_grad(const Mat<S>& x) {
  return x.unaryExpr([](S v) {
    const double z = static_cast<double>(v);
    const double cdf = 0.5 * (1.0 + std::erf(z / std::sqrt(2.0)));
    const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846);
    return static_cast<S>(cdf + z * pdf);
  });
}

// -------------------------------------------------------------- attention

template <class S>
struct AttnCache {
  Mat<S> xq, xkv;
  Mat<S> q, k, v;
  std::vector<Mat<S>> attn;  // one softmax matrix per head
  Mat<S> concat;
};

template <class S>
Mat<S> attention_forward(const AttentionParams<S>& p, int n_heads,
                         const Mat<S>& xq, const Mat<S>& xkv,
                         const std::vector<bool>* key_allowed, bool causal,
                         AttnCache<S>& c) {
  const Eigen::Index d = p.wq.cols();
  const Eigen::Index dh = d / n_heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  const S neg_inf = -std::numeric_limits<S>::infinity();

  c.xq = xq;
  c.xkv = xkv;
  c.q = (xq * p.wq).rowwise() + p.bq.row(0);
  c.k = (xkv * p.wk).rowwise() + p.bk.row(0);
  c.v = (xkv * p.wv).rowwise() + p.bv.row(0);
  c.attn.assign(n_heads, Mat<S>());
  c.concat.resize(xq.rows(), d);

  for (int h = 0; h < n_heads; ++h) {
    Mat<S> scores =
        c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose() * scale;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      for (Eigen::Index j = 0; j < scores.cols(); ++j) {
        if ((causal && j > i) || (key_allowed && !(*key_allowed)[j])) {
          scores(i, j) = neg_inf;
        }
      }
    }
    // Row softmax with max subtraction.
    Mat<S>& a = c.attn[h];
    a.resize(scores.rows(), scores.cols());
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      const S m = scores.row(i).maxCoeff();
      a.row(i) = (scores.row(i).array() - m).exp();
      a.row(i) /= a.row(i).sum();
    }
    c.concat.middleCols(h * dh, dh).noalias() = a * c.v.middleCols(h * dh, dh);
  }
  return ((c.concat * p.wo).rowwise() + p.bo.row(0)).eval();
}

template <class S>
void attention_backward(const AttentionParams<S>& p, int n_heads,
                        const AttnCache<S>& c, const Mat<S>& dout,
                        AttentionParams<S>& g, Mat<S>& dxq, Mat<S>& dxkv) {
  const Eigen::Index d = p.wq.cols();
  const Eigen::Index dh = d / n_heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  g.wo += c.concat.transpose() * dout;
  g.bo.row(0) += dout.colwise().sum();
  const Mat<S> dconcat = dout * p.wo.transpose();

  Mat<S> dq = Mat<S>::Zero(c.q.rows(), d);
  Mat<S> dk = Mat<S>::Zero(c.k.rows(), d);
  Mat<S> dv = Mat<S>::Zero(c.v.rows(), d);

  for (int h = 0; h < n_heads; ++h) {
    const auto a = c.attn[h];
    const auto do_h = dconcat.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh).noalias() = a.transpose() * do_h;
    Mat<S> da = do_h * c.v.middleCols(h * dh, dh).transpose();
    // Softmax backward: ds = a .* (da - rowsum(da .* a)).
    Mat<S> ds(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const S dot = da.row(i).cwiseProduct(a.row(i)).sum();
      ds.row(i) = a.row(i).cwiseProduct((da.row(i).array() - dot).matrix());
    }
    ds *= scale;
    dq.middleCols(h * dh, dh).noalias() = ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = ds.transpose() * c.q.middleCols(h * dh, dh);
  }

  g.wq += c.xq.transpose() * dq;
  g.bq.row(0) += dq.colwise().sum();
  g.wk += c.xkv.transpose() * dk;
  g.bk.row(0) += dk.colwise().sum();
  g.wv += c.xkv.transpose() * dv;
  g.bv.row(0) += dv.colwise().sum();
  dxq += dq * p.wq.transpose();
  dxkv += dk * p.wk.transpose() + dv * p.wv.transpose();
}

// ------------------------------------------------------------ feedforward

template <class S>
struct FfnCache {
  Mat<S> x, pre, act;
};

template <class S>
Mat<S> ffn_forward(const FfnParams<S>& p, const Mat<S>& x, FfnCache<S>& c) {
  c.x = x;
  c.pre = (x * p.w1).rowwise() + p.b1.row(0);
  c.act = gelu(c.pre);
  return ((c.act * p.w2).rowwise() + p.b2.row(0)).eval();
}

template <class S>
void ffn_backward(const FfnParams<S>& p, const FfnCache<S>& c, const Mat<S>& dout,
                  FfnParams<S>& g, Mat<S>& dx) {
  g.w2 += c.act.transpose() * dout;
  g.b2.row(0) += dout.colwise().sum();
  const Mat<S> dpre = (dout * p.w2.transpose()).cwiseProduct(gelu_grad(c.pre));
  g.w1 += c.x.transpose() * dpre;
  g.b1.row(0) += dpre.colwise().sum();
  dx += dpre * p.w1.transpose();
}

// ---------------------------------------------------------------- encoder

template <class S>
struct EncLayerCache {
  AttnCache<S> attn;
  DropoutCache<S> d1;
  LayerNormCache<S> ln1;
  FfnCache<S> ffn;
  DropoutCache<S> d2;
  LayerNormCache<S> ln2;
};

template <class S>
struct EncoderCache {
  std::vector<int> ids;
  std::vector<bool> key_allowed;  // false at PAD positions
  Mat<S> emb_raw;                 // pre-dropout input embedding
  DropoutCache<S> emb_drop;
  std::vector<EncLayerCache<S>> layers;
  Mat<S> states;
};

// Input embedding for token ids: sqrt(d) * tok_emb + learned positions.
template <class S>
Mat<S> token_input_embedding(const ModelParams<S>& p, const std::vector<int>& ids) {
  const ModelConfig& cfg = p.cfg;
  if (ids.empty()) throw std::runtime_error("empty token sequence");
  if (static_cast<int>(ids.size()) > cfg.max_positions) {
    throw std::runtime_error("sequence length " + std::to_string(ids.size()) +
                             " exceeds max_positions");
  }
  const S scale = static_cast<S>(std::sqrt(static_cast<double>(cfg.d_model)));
  Mat<S> x(static_cast<Eigen::Index>(ids.size()), cfg.d_model);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || ids[t] >= cfg.vocab_size) {
      throw std::runtime_error("token id " + std::to_string(ids[t]) +
                               " out of vocabulary");
    }
    x.row(static_cast<Eigen::Index>(t)) =
        p.tok_emb.row(ids[t]) * scale + p.pos_emb.row(static_cast<Eigen::Index>(t));
  }
  return x;
}

template <class S>
EncoderCache<S> encoder_forward(const ModelParams<S>& p, const std::vector<int>& ids,
                                const ForwardCtx& ctx) {
  EncoderCache<S> c;
  c.ids = ids;
  c.key_allowed.resize(ids.size());
  bool any_real = false;
  for (std::size_t t = 0; t < ids.size(); ++t) {
    c.key_allowed[t] = ids[t] != kPadId;
    any_real |= c.key_allowed[t];
  }
  if (!any_real) throw std::runtime_error("encoder_forward: all-PAD input");

  c.emb_raw = token_input_embedding(p, ids);
  Mat<S> x = dropout_forward(c.emb_raw, ctx, c.emb_drop);
  c.layers.resize(p.enc.size());
  for (std::size_t l = 0; l < p.enc.size(); ++l) {
    const EncLayerParams<S>& lp = p.enc[l];
    EncLayerCache<S>& lc = c.layers[l];
    Mat<S> a = attention_forward(lp.self, p.cfg.n_heads, x, x, &c.key_allowed,
                                 /*causal=*/false, lc.attn);
    a = dropout_forward(a, ctx, lc.d1);
    const Mat<S> x1 = layernorm_forward(lp.ln1, (x + a).eval(), lc.ln1);
    Mat<S> f = ffn_forward(lp.ffn, x1, lc.ffn);
    f = dropout_forward(f, ctx, lc.d2);
    x = layernorm_forward(lp.ln2, (x1 + f).eval(), lc.ln2);
  }
  c.states = x;
  return c;
}

// Accumulates parameter gradients; returns nothing (input grads are
// absorbed by the embedding tables).
template <class S>
void encoder_backward(const ModelParams<S>& p, const EncoderCache<S>& c,
                      Mat<S> dstates, ModelParams<S>& g) {
  const S scale = static_cast<S>(std::sqrt(static_cast<double>(p.cfg.d_model)));
  for (std::size_t li = p.enc.size(); li-- > 0;) {
    const EncLayerParams<S>& lp = p.enc[li];
    const EncLayerCache<S>& lc = c.layers[li];
    EncLayerParams<S>& lg = g.enc[li];

    Mat<S> dsum2 = Mat<S>::Zero(dstates.rows(), dstates.cols());
    layernorm_backward(lp.ln2, lc.ln2, dstates, dsum2, lg.ln2);
    const Mat<S> df = dropout_backward(dsum2, lc.d2);
    Mat<S> dx1 = dsum2;
    ffn_backward(lp.ffn, lc.ffn, df, lg.ffn, dx1);

    Mat<S> dsum1 = Mat<S>::Zero(dstates.rows(), dstates.cols());
    layernorm_backward(lp.ln1, lc.ln1, dx1, dsum1, lg.ln1);
    const Mat<S> da = dropout_backward(dsum1, lc.d1);
    Mat<S> dx = dsum1;
    attention_backward(lp.self, p.cfg.n_heads, lc.attn, da, lg.self, dx, dx);
    dstates = dx;
  }
  const Mat<S> demb = dropout_backward(dstates, c.emb_drop);
  for (std::size_t t = 0; t < c.ids.size(); ++t) {
    g.tok_emb.row(c.ids[t]) += demb.row(static_cast<Eigen::Index>(t)) * scale;
    g.pos_emb.row(static_cast<Eigen::Index>(t)) += demb.row(static_cast<Eigen::Index>(t));
  }
}

// ---------------------------------------------------------------- decoder

template <class S>
struct DecLayerCache {
  AttnCache<S> self;
  DropoutCache<S> d1;
  LayerNormCache<S> ln1;
  AttnCache<S> cross;
  DropoutCache<S> d2;
  LayerNormCache<S> ln2;
  FfnCache<S> ffn;
  DropoutCache<S> d3;
  LayerNormCache<S> ln3;
};

template <class S>
struct DecoderCache {
  Mat<S> x0_raw;
  DropoutCache<S> emb_drop;
  std::vector<DecLayerCache<S>> layers;
  Mat<S> states;
};

// x0_raw: caller-built input embeddings (token-based or pointer-based).
template <class S>
DecoderCache<S> decoder_forward(const ModelParams<S>& p, const Mat<S>& x0_raw,
                                const Mat<S>& enc_states,
                                const std::vector<bool>& enc_key_allowed,
                                const ForwardCtx& ctx) {
  DecoderCache<S> c;
  c.x0_raw = x0_raw;
  Mat<S> x = dropout_forward(x0_raw, ctx, c.emb_drop);
  c.layers.resize(p.dec.size());
  for (std::size_t l = 0; l < p.dec.size(); ++l) {
    const DecLayerParams<S>& lp = p.dec[l];
    DecLayerCache<S>& lc = c.layers[l];
    Mat<S> a = attention_forward(lp.self, p.cfg.n_heads, x, x, nullptr,
                                 /*causal=*/true, lc.self);
    a = dropout_forward(a, ctx, lc.d1);
    const Mat<S> x1 = layernorm_forward(lp.ln1, (x + a).eval(), lc.ln1);
    Mat<S> cr = attention_forward(lp.cross, p.cfg.n_heads, x1, enc_states,
                                  &enc_key_allowed, /*causal=*/false, lc.cross);
    cr = dropout_forward(cr, ctx, lc.d2);
    const Mat<S> x2 = layernorm_forward(lp.ln2, (x1 + cr).eval(), lc.ln2);
    Mat<S> f = ffn_forward(lp.ffn, x2, lc.ffn);
    f = dropout_forward(f, ctx, lc.d3);
    x = layernorm_forward(lp.ln3, (x2 + f).eval(), lc.ln3);
  }
  c.states = x;
  return c;
}

// Produces the gradient with respect to the raw input embedding and adds
// the encoder-state gradient contributed through cross-attention.
template <class S>
void decoder_backward(const ModelParams<S>& p, const DecoderCache<S>& c,
                      Mat<S> dstates, ModelParams<S>& g, Mat<S>& dx0_raw,
                      Mat<S>& denc_states) {
  for (std::size_t li = p.dec.size(); li-- > 0;) {
    const DecLayerParams<S>& lp = p.dec[li];
    const DecLayerCache<S>& lc = c.layers[li];
    DecLayerParams<S>& lg = g.dec[li];

    Mat<S> dsum3 = Mat<S>::Zero(dstates.rows(), dstates.cols());
    layernorm_backward(lp.ln3, lc.ln3, dstates, dsum3, lg.ln3);
    const Mat<S> df = dropout_backward(dsum3, lc.d3);
    Mat<S> dx2 = dsum3;
    ffn_backward(lp.ffn, lc.ffn, df, lg.ffn, dx2);

    Mat<S> dsum2 = Mat<S>::Zero(dstates.rows(), dstates.cols());
    layernorm_backward(lp.ln2, lc.ln2, dx2, dsum2, lg.ln2);
    const Mat<S> dcr = dropout_backward(dsum2, lc.d2);
    Mat<S> dx1 = dsum2;
    attention_backward(lp.cross, p.cfg.n_heads, lc.cross, dcr, lg.cross, dx1,
                       denc_states);

    Mat<S> dsum1 = Mat<S>::Zero(dstates.rows(), dstates.cols());
    layernorm_backward(lp.ln1, lc.ln1, dx1, dsum1, lg.ln1);
    const Mat<S> da = dropout_backward(dsum1, lc.d1);
    Mat<S> dx = dsum1;
    attention_backward(lp.self, p.cfg.n_heads, lc.self, da, lg.self, dx, dx);
    dstates = dx;
  }
  dx0_raw += dropout_backward(dstates, c.emb_drop);
}

// Routes the decoder input-embedding gradient back to the shared token
// and position embeddings (token-driven decoder input).
template <class S>
void token_input_backward(const ModelParams<S>& p, const std::vector<int>& ids,
                          const Mat<S>& dx0_raw, ModelParams<S>& g) {
  const S scale = static_cast<S>(std::sqrt(static_cast<double>(p.cfg.d_model)));
  for (std::size_t t = 0; t < ids.size(); ++t) {
    g.tok_emb.row(ids[t]) += dx0_raw.row(static_cast<Eigen::Index>(t)) * scale;
    g.pos_emb.row(static_cast<Eigen::Index>(t)) += dx0_raw.row(static_cast<Eigen::Index>(t));
  }
}

// Tied output projection: logits = states * tok_emb^T.
template <class S>
Mat<S> output_logits(const ModelParams<S>& p, const Mat<S>& states) {
  return states * p.tok_emb.transpose();
}

template <class S>
void output_logits_backward(const ModelParams<S>& p, const Mat<S>& states,
                            const Mat<S>& dlogits, ModelParams<S>& g,
                            Mat<S>& dstates) {
  dstates += dlogits * p.tok_emb;
  g.tok_emb += dlogits.transpose() * states;
}

}  // namespace biogen
