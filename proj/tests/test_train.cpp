// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "biogen/train.hpp"
#include "doctest.h"

using namespace biogen;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.vocab_size = 12;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_enc_layers = 1;
  cfg.n_dec_layers = 1;
  cfg.d_ff = 16;
  cfg.max_positions = 16;
  cfg.n_entity_types = 2;
  return cfg;
}

// Finite differences against the analytic gradient, tensor by tensor,
// in double precision. Central differences at base step h = 1e-3 with
// one Richardson extrapolation to cancel the O(h^2) truncation term.
// Returns the worst relative error over all parameter entries.
template <class LossFn>
double max_grad_rel_error(ModelParams<double>& p, const LossFn& loss_fn) {
  ModelParams<double> grads = zeros_like(p);
  loss_fn(p, &grads);

  const double h = 1e-3;
  double worst = 0.0;
  auto pts = p.tensors();
  auto gts = grads.tensors();
  for (std::size_t ti = 0; ti < pts.size(); ++ti) {
    Mat<double>& t = *pts[ti].tensor;
    const Mat<double>& g = *gts[ti].tensor;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double saved = t.data()[i];
      const auto central = [&](double step) {
        t.data()[i] = saved + step;
        const double up = loss_fn(p, nullptr);
        t.data()[i] = saved - step;
        const double down = loss_fn(p, nullptr);
        t.data()[i] = saved;
        return (up - down) / (2.0 * step);
      };
      const double fd = (4.0 * central(h / 2) - central(h)) / 3.0;
      const double an = g.data()[i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("lr schedule anchors") {
  TrainConfig cfg;
  cfg.total_steps = 120000;
  cfg.warmup_ratio = 0.02;
  cfg.lr_max = 1e-4;
  CHECK(lr_at(0, cfg) == 0.0);
  CHECK(lr_at(2400, cfg) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_at(61200, cfg) == doctest::Approx(5e-5).epsilon(1e-12));
  CHECK(lr_at(120000, cfg) == 0.0);
  CHECK_THROWS_AS(lr_at(120001, cfg), std::runtime_error);
  CHECK_THROWS_AS(lr_at(-1, cfg), std::runtime_error);

  // Piecewise linear: constant slope inside each phase, max at warmup end.
  const double s1 = lr_at(100, cfg) - lr_at(99, cfg);
  const double s2 = lr_at(2000, cfg) - lr_at(1999, cfg);
  CHECK(s1 == doctest::Approx(s2));
  for (long step : {1L, 2399L, 2401L, 100000L}) {
    CHECK(lr_at(step, cfg) <= lr_at(2400, cfg));
    CHECK(lr_at(step, cfg) > 0.0);
  }
}

TEST_CASE("seq2seq gradients match finite differences") {
  Rng rng(21);
  auto p = init_params<double>(tiny_cfg(), rng);
  const std::vector<int> src = {kBosId, 6, 7, 8, kEosId};
  const std::vector<int> tgt = {kBosId, 9, 10, kEosId};
  const auto loss_fn = [&](ModelParams<double>& params, ModelParams<double>* g) {
    return seq2seq_nll(params, src, tgt, {}, g);
  };
  CHECK(max_grad_rel_error(p, loss_fn) < 1e-4);
}

TEST_CASE("pointer gradients match finite differences") {
  Rng rng(22);
  auto p = init_params<double>(tiny_cfg(), rng);
  TokenSeq src;
  src.ids = {kBosId, 6, 7, 8, 9, kEosId};
  src.word_start = {false, true, false, true, true, false};
  const int eos = pointer_eos_symbol(src.size(), p.cfg.n_entity_types);
  // Entity (tokens 1..2, type 0) then EOS: symbols first,last,type,EOS.
  const std::vector<int> gold = {1, 3, static_cast<int>(src.size()) + 0, eos};
  const auto loss_fn = [&](ModelParams<double>& params, ModelParams<double>* g) {
    return pointer_nll(params, src, gold, {}, g);
  };
  CHECK(max_grad_rel_error(p, loss_fn) < 1e-4);
}

TEST_CASE("compute_gradients batch semantics") {
  Rng rng(23);
  auto p = init_params<double>(tiny_cfg(), rng);
  const TokenPair pair{{kBosId, 6, 7, kEosId}, {kBosId, 8, kEosId}};

  auto g1 = zeros_like(p);
  const double l1 = compute_gradients(p, {pair}, g1);
  auto g2 = zeros_like(p);
  const double l2 = compute_gradients(p, {pair, pair}, g2);
  CHECK(l1 == doctest::Approx(l2));
  auto t1 = g1.tensors();
  auto t2 = g2.tensors();
  for (std::size_t i = 0; i < t1.size(); ++i) {
    CHECK((*t1[i].tensor - *t2[i].tensor).cwiseAbs().maxCoeff() < 1e-12);
  }
  // Type embeddings are untouched by the token head.
  CHECK(g1.type_emb.cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(compute_gradients(p, {}, g1), std::runtime_error);
}

TEST_CASE("optimizer_step update rules") {
  Rng rng(24);
  auto p = init_params<float>(tiny_cfg(), rng);
  TrainConfig cfg;

  SUBCASE("zero gradients, no decay: parameters unchanged") {
    cfg.weight_decay = 0.0;
    auto grads = zeros_like(p);
    auto opt = init_opt_state(p);
    const Mat<float> before = p.enc[0].self.wq;
    optimizer_step(p, grads, opt, 1e-3, cfg);
    CHECK(p.enc[0].self.wq == before);
    CHECK(opt.step == 1);
  }

  SUBCASE("zero gradients with decay: decoupled scaling by (1 - lr*decay)") {
    cfg.weight_decay = 0.1;
    const double lr = 0.5;
    auto grads = zeros_like(p);
    auto opt = init_opt_state(p);
    const Mat<float> before = p.enc[0].self.wq;
    optimizer_step(p, grads, opt, lr, cfg);
    const Mat<float> expect = before * static_cast<float>(1.0 - lr * 0.1);
    CHECK((p.enc[0].self.wq - expect).cwiseAbs().maxCoeff() < 1e-7);
  }

  SUBCASE("global-norm clipping scales the moment update") {
    cfg.grad_clip_norm = 1.0;
    auto grads = zeros_like(p);
    // A single entry of 10 gives global norm 10, so the clip factor is 0.1.
    grads.tok_emb(6, 0) = 10.0f;
    auto opt = init_opt_state(p);
    optimizer_step(p, grads, opt, 1e-3, cfg);
    const float expected_m = (1.0f - 0.9f) * (10.0f * 0.1f);
    CHECK(opt.m.tok_emb(6, 0) == doctest::Approx(expected_m));
  }

  SUBCASE("non-finite gradients are rejected with the tensor name") {
    auto grads = zeros_like(p);
    grads.pos_emb(0, 0) = std::numeric_limits<float>::quiet_NaN();
    auto opt = init_opt_state(p);
    CHECK_THROWS_WITH_AS(optimizer_step(p, grads, opt, 1e-3, cfg),
                         doctest::Contains("pos_emb"), std::runtime_error);
  }
}

TEST_CASE("checkpoint round trip is bitwise") {
  Rng rng(25);
  auto p = init_params<float>(tiny_cfg(), rng);
  auto opt = init_opt_state(p);
  opt.step = 17;
  opt.m.tok_emb(1, 1) = 0.25f;
  opt.v.dec[0].ffn.w1(0, 0) = 0.5f;
  const std::map<std::string, std::string> cfg = {{"step", "42"}, {"note", "x"}};

  const std::string path = temp_path("ckpt_round.bin");
  save_checkpoint(p, &opt, cfg, path);
  const Checkpoint loaded = load_checkpoint(path);

  CHECK(loaded.config.at("step") == "42");
  CHECK(loaded.config.at("note") == "x");
  CHECK(loaded.has_opt);
  CHECK(loaded.opt.step == 17);
  auto a = p.tensors();
  auto b = const_cast<Checkpoint&>(loaded).params.tensors();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i].tensor == *b[i].tensor);
  CHECK(loaded.opt.m.tok_emb(1, 1) == 0.25f);
  CHECK(loaded.opt.v.dec[0].ffn.w1(0, 0) == 0.5f);
  std::remove(path.c_str());

  const std::string bare = temp_path("ckpt_bare.bin");
  save_checkpoint(p, nullptr, {}, bare);
  CHECK(!load_checkpoint(bare).has_opt);
  std::remove(bare.c_str());
}

TEST_CASE("checkpoint corruption errors are distinct") {
  Rng rng(26);
  auto p = init_params<float>(tiny_cfg(), rng);
  const std::string path = temp_path("ckpt_corrupt.bin");
  save_checkpoint(p, nullptr, {}, path);

  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.write("XXXX", 4);
    f.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"),
                         std::runtime_error);
  }
  SUBCASE("version mismatch") {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(4);
    f.put(static_cast<char>(9));
    f.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"),
                         std::runtime_error);
  }
  SUBCASE("truncated mid-tensor names the tensor") {
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 40);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("truncated"),
                         std::runtime_error);
  }
  std::remove(path.c_str());
}

TEST_CASE("finetune keeps the earliest best epoch on ties") {
  Rng rng(27);
  auto p = init_params<float>(tiny_cfg(), rng);
  const std::vector<TokenPair> data = {{{kBosId, 6, kEosId}, {kBosId, 7, kEosId}}};
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 1;
  const auto result = finetune(data, p, cfg,
                               [](const ModelParams<float>&) { return 0.5; });
  CHECK(result.best_epoch == 0);
  CHECK(result.best_metric == 0.5);
  CHECK(result.epoch_losses.size() == 4);

  CHECK_THROWS_AS(finetune({}, p, cfg, nullptr), std::runtime_error);
}

TEST_CASE("finetune improves the training loss") {
  Rng rng(28);
  auto p = init_params<float>(tiny_cfg(), rng);
  const std::vector<TokenPair> data = {{{kBosId, 6, 7, kEosId}, {kBosId, 8, 9, kEosId}}};
  TrainConfig cfg;
  cfg.epochs = 100;
  cfg.batch_size = 1;
  cfg.lr_max = 0.01;
  cfg.warmup_ratio = 0.1;
  const auto result = finetune(data, p, cfg, nullptr);
  CHECK(result.epoch_losses.back() < 0.1);
  CHECK(result.epoch_losses.back() < 0.5 * result.epoch_losses.front());
}

TEST_CASE("pretrain smoke run writes loss curve and checkpoint") {
  std::vector<Document> corpus;
  const std::vector<std::string> texts = {
      "alpha beta gamma delta. epsilon zeta.",
      "beta gamma delta alpha. zeta epsilon.",
      "gamma alpha beta. delta epsilon zeta eta.",
      "delta beta alpha gamma. eta zeta."};
  for (int i = 0; i < 8; ++i) {
    corpus.push_back({i, texts[i % texts.size()]});
  }
  const auto vocab = train_bpe(corpus, 80);

  NoiseConfig noise;
  noise.seed = 5;
  ModelConfig mc = tiny_cfg();
  mc.vocab_size = vocab.size();
  mc.max_positions = 64;
  TrainConfig tc;
  tc.total_steps = 6;
  tc.batch_size = 4;
  tc.lr_max = 1e-3;
  tc.warmup_ratio = 0.2;
  tc.seed = 5;

  const std::string out_dir = temp_path("pretrain_smoke");
  std::filesystem::remove_all(out_dir);
  const auto result = pretrain(corpus, vocab, noise, mc, tc, 32, out_dir);
  CHECK(result.records.size() == 6);
  CHECK(std::filesystem::exists(result.checkpoint_path));

  std::ifstream loss(result.loss_curve_path);
  std::string header;
  std::getline(loss, header);
  CHECK(header == "step,loss,lr");
  int lines = 0;
  std::string line;
  while (std::getline(loss, line)) ++lines;
  CHECK(lines == 6);

  const Checkpoint ckpt = load_checkpoint(result.checkpoint_path);
  CHECK(ckpt.config.at("step") == "6");
  CHECK(ckpt.has_opt);

  CHECK_THROWS_AS(pretrain({}, vocab, noise, mc, tc, 32, out_dir),
                  std::runtime_error);
  std::filesystem::remove_all(out_dir);
}
