// SPDX-License-Identifier: Apache-2.0
#include "biogen/train.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace biogen {
namespace {

constexpr char kMagic[4] = {'B', 'G', 'L', '1'};
constexpr unsigned char kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error("checkpoint truncated while reading " + what);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

// float bytes are written little-endian; this build targets LE hosts.
static_assert(sizeof(float) == 4);

void write_tensor(std::ostream& out, const std::string& name, const Mat<float>& t) {
  write_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  out.put(static_cast<char>(2));  // rank
  write_u32(out, static_cast<std::uint32_t>(t.rows()));
  write_u32(out, static_cast<std::uint32_t>(t.cols()));
  for (Eigen::Index r = 0; r < t.rows(); ++r) {
    for (Eigen::Index c = 0; c < t.cols(); ++c) {
      const float v = t(r, c);
      out.write(reinterpret_cast<const char*>(&v), 4);
    }
  }
}

int config_int(const std::map<std::string, std::string>& cfg, const std::string& key) {
  const auto it = cfg.find(key);
  if (it == cfg.end()) {
    throw std::runtime_error("checkpoint config missing key " + key);
  }
  return std::stoi(it->second);
}

ModelConfig model_config_from_map(const std::map<std::string, std::string>& cfg) {
  ModelConfig mc;
  mc.vocab_size = config_int(cfg, "vocab_size");
  mc.d_model = config_int(cfg, "d_model");
  mc.n_heads = config_int(cfg, "n_heads");
  mc.n_enc_layers = config_int(cfg, "n_enc_layers");
  mc.n_dec_layers = config_int(cfg, "n_dec_layers");
  mc.d_ff = config_int(cfg, "d_ff");
  mc.max_positions = config_int(cfg, "max_positions");
  mc.n_entity_types = config_int(cfg, "n_entity_types");
  if (cfg.count("dropout_rate")) mc.dropout_rate = std::stod(cfg.at("dropout_rate"));
  return mc;
}

void put_model_config(std::map<std::string, std::string>& cfg, const ModelConfig& mc) {
  cfg["vocab_size"] = std::to_string(mc.vocab_size);
  cfg["d_model"] = std::to_string(mc.d_model);
  cfg["n_heads"] = std::to_string(mc.n_heads);
  cfg["n_enc_layers"] = std::to_string(mc.n_enc_layers);
  cfg["n_dec_layers"] = std::to_string(mc.n_dec_layers);
  cfg["d_ff"] = std::to_string(mc.d_ff);
  cfg["max_positions"] = std::to_string(mc.max_positions);
  cfg["n_entity_types"] = std::to_string(mc.n_entity_types);
  cfg["dropout_rate"] = std::to_string(mc.dropout_rate);
}

}  // namespace

void save_checkpoint(ModelParams<float>& params, OptState<float>* opt,
                     const std::map<std::string, std::string>& config,
                     const std::string& path) {
  std::map<std::string, std::string> cfg = config;
  put_model_config(cfg, params.cfg);
  cfg["has_opt"] = opt ? "1" : "0";
  if (opt) cfg["opt_step"] = std::to_string(opt->step);

  // Write to a temp file then rename, so an interrupted save never
  // leaves a half-written checkpoint in place.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + tmp);
    out.write(kMagic, 4);
    out.put(static_cast<char>(kVersion));

    std::ostringstream cfg_text;
    for (const auto& [k, v] : cfg) cfg_text << k << '=' << v << '\n';
    const std::string cfg_str = cfg_text.str();
    write_u32(out, static_cast<std::uint32_t>(cfg_str.size()));
    out.write(cfg_str.data(), static_cast<std::streamsize>(cfg_str.size()));

    auto named = params.tensors();
    std::uint32_t count = static_cast<std::uint32_t>(named.size());
    if (opt) count *= 3;
    write_u32(out, count);
    for (auto& nt : named) write_tensor(out, nt.name, *nt.tensor);
    if (opt) {
      for (auto& nt : opt->m.tensors()) write_tensor(out, "opt.m." + nt.name, *nt.tensor);
      for (auto& nt : opt->v.tensors()) write_tensor(out, "opt.v." + nt.name, *nt.tensor);
    }
    if (!out) throw std::runtime_error("write failure: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);

  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error(path + ": bad checkpoint magic");
  }
  const int version = in.get();
  if (version != kVersion) {
    throw std::runtime_error(path + ": unsupported checkpoint version " +
                             std::to_string(version));
  }

  Checkpoint ckpt;
  const std::uint32_t cfg_len = read_u32(in, "config length");
  std::string cfg_str(cfg_len, '\0');
  if (!in.read(cfg_str.data(), cfg_len)) {
    throw std::runtime_error(path + ": truncated config block");
  }
  std::istringstream cfg_in(cfg_str);
  std::string line;
  while (std::getline(cfg_in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) {
      ckpt.config[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }

  const ModelConfig mc = model_config_from_map(ckpt.config);
  Rng dummy(0);
  ckpt.params = init_params<float>(mc, dummy);
  ckpt.has_opt = ckpt.config.count("has_opt") && ckpt.config.at("has_opt") == "1";
  if (ckpt.has_opt) {
    ckpt.opt = init_opt_state(ckpt.params);
    ckpt.opt.step = std::stol(ckpt.config.at("opt_step"));
  }

  std::map<std::string, Mat<float>*> slots;
  for (auto& nt : ckpt.params.tensors()) slots[nt.name] = nt.tensor;
  if (ckpt.has_opt) {
    for (auto& nt : ckpt.opt.m.tensors()) slots["opt.m." + nt.name] = nt.tensor;
    for (auto& nt : ckpt.opt.v.tensors()) slots["opt.v." + nt.name] = nt.tensor;
  }

  const std::uint32_t count = read_u32(in, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(in, "tensor name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) {
      throw std::runtime_error(path + ": truncated tensor name");
    }
    const int rank = in.get();
    if (rank != 2) {
      throw std::runtime_error(path + ": unexpected rank for tensor " + name);
    }
    const std::uint32_t rows = read_u32(in, "dims of " + name);
    const std::uint32_t cols = read_u32(in, "dims of " + name);
    const auto slot = slots.find(name);
    if (slot == slots.end()) {
      throw std::runtime_error(path + ": unknown tensor " + name);
    }
    Mat<float>& t = *slot->second;
    if (t.rows() != static_cast<Eigen::Index>(rows) ||
        t.cols() != static_cast<Eigen::Index>(cols)) {
      throw std::runtime_error(path + ": shape mismatch for tensor " + name);
    }
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) {
        float v;
        if (!in.read(reinterpret_cast<char*>(&v), 4)) {
          throw std::runtime_error(path + ": truncated while reading tensor " + name);
        }
        t(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
      }
    }
  }
  return ckpt;
}

namespace {

// Deterministic epoch ordering of example indices.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, long epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);
  return order;
}

}  // namespace

PretrainResult pretrain(const std::vector<Document>& corpus, const Vocab& vocab,
                        const NoiseConfig& noise_cfg, const ModelConfig& model_cfg,
                        const TrainConfig& train_cfg, int max_len,
                        const std::string& out_dir) {
  if (corpus.empty()) throw std::runtime_error("pretrain: empty corpus");
  if (!noise_cfg.use_text_infilling && !noise_cfg.use_sentence_permutation) {
    throw std::runtime_error("pretrain: no noise function enabled");
  }
  model_cfg.validate();
  train_cfg.validate();
  std::filesystem::create_directories(out_dir);

  const std::string ckpt_path = out_dir + "/checkpoint.bin";
  const std::string loss_path = out_dir + "/loss.csv";

  ModelParams<float> params;
  OptState<float> opt;
  long start_step = 0;
  if (std::filesystem::exists(ckpt_path)) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    params = std::move(ckpt.params);
    if (!ckpt.has_opt) throw std::runtime_error("pretrain: checkpoint lacks optimizer state");
    opt = std::move(ckpt.opt);
    start_step = std::stol(ckpt.config.at("step"));
  } else {
    Rng init_rng(mix_seed(train_cfg.seed, 0x9e1));
    params = init_params<float>(model_cfg, init_rng);
    opt = init_opt_state(params);
  }

  std::ofstream loss_out(loss_path, start_step == 0 ? std::ios::trunc : std::ios::app);
  if (!loss_out) throw std::runtime_error("cannot open for write: " + loss_path);
  if (start_step == 0) loss_out << "step,loss,lr\n";

  const long batches_per_epoch =
      (static_cast<long>(corpus.size()) + train_cfg.batch_size - 1) / train_cfg.batch_size;
  const ForwardCtx ctx{/*train=*/true, model_cfg.dropout_rate, nullptr};
  Rng drop_rng(mix_seed(train_cfg.seed, 0xd0));
  ForwardCtx step_ctx = ctx;
  step_ctx.rng = &drop_rng;

  PretrainResult result{ckpt_path, loss_path, {}};
  ModelParams<float> grads = zeros_like(params);
  for (long step = start_step + 1; step <= train_cfg.total_steps; ++step) {
    const long epoch = (step - 1) / batches_per_epoch;
    const long batch_idx = (step - 1) % batches_per_epoch;
    const auto order = epoch_order(corpus.size(), train_cfg.seed, epoch);

    NoiseConfig epoch_noise = noise_cfg;
    epoch_noise.seed = mix_seed(noise_cfg.seed, static_cast<std::uint64_t>(epoch));

    std::vector<TokenPair> batch;
    for (long i = batch_idx * train_cfg.batch_size;
         i < std::min<long>((batch_idx + 1) * train_cfg.batch_size,
                            static_cast<long>(corpus.size()));
         ++i) {
      NoisedPair pair =
          make_pretraining_example(corpus[order[i]], vocab, epoch_noise, max_len);
      batch.emplace_back(std::move(pair.input_ids), std::move(pair.target_ids));
    }

    for (auto& nt : grads.tensors()) nt.tensor->setZero();
    const double loss = compute_gradients(params, batch, grads, step_ctx);
    const double lr = lr_at(step, train_cfg);
    optimizer_step(params, grads, opt, lr, train_cfg);

    result.records.push_back({step, loss, lr});
    loss_out << step << ',' << loss << ',' << lr << '\n';

    if ((train_cfg.checkpoint_interval > 0 && step % train_cfg.checkpoint_interval == 0) ||
        step == train_cfg.total_steps) {
      std::map<std::string, std::string> cfg;
      cfg["step"] = std::to_string(step);
      save_checkpoint(params, &opt, cfg, ckpt_path);
    }
  }
  loss_out.flush();
  return result;
}

namespace {

template <class Example, class GradFn>
FinetuneResult finetune_impl(const std::vector<Example>& train_examples,
                             ModelParams<float> init, const TrainConfig& cfg,
                             const std::function<double(const ModelParams<float>&)>& eval_hook,
                             GradFn&& batch_grads) {
  if (train_examples.empty()) throw std::runtime_error("finetune: empty training set");
  cfg.validate();

  const long batches_per_epoch =
      (static_cast<long>(train_examples.size()) + cfg.batch_size - 1) / cfg.batch_size;
  TrainConfig sched = cfg;
  sched.total_steps = batches_per_epoch * cfg.epochs;

  ModelParams<float> params = std::move(init);
  OptState<float> opt = init_opt_state(params);
  ModelParams<float> grads = zeros_like(params);
  Rng drop_rng(mix_seed(cfg.seed, 0xd1));
  ForwardCtx ctx{/*train=*/true, params.cfg.dropout_rate, &drop_rng};

  FinetuneResult result;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(train_examples.size(), cfg.seed, epoch);
    double epoch_loss = 0.0;
    for (long b = 0; b < batches_per_epoch; ++b) {
      std::vector<std::size_t> batch;
      for (long i = b * cfg.batch_size;
           i < std::min<long>((b + 1) * cfg.batch_size,
                              static_cast<long>(train_examples.size()));
           ++i) {
        batch.push_back(order[i]);
      }
      for (auto& nt : grads.tensors()) nt.tensor->setZero();
      const double loss = batch_grads(train_examples, batch, params, grads, ctx);
      ++step;
      optimizer_step(params, grads, opt, lr_at(step, sched), cfg);
      epoch_loss += loss;
    }
    result.epoch_losses.push_back(epoch_loss / batches_per_epoch);

    const double metric = eval_hook ? eval_hook(params) : -result.epoch_losses.back();
    if (result.best_epoch < 0 || metric > result.best_metric) {  // ties keep earliest
      result.best_metric = metric;
      result.best_epoch = epoch;
      result.best_params = params;
    }
  }
  return result;
}

}  // namespace

FinetuneResult finetune(const std::vector<TokenPair>& train_pairs,
                        ModelParams<float> init, const TrainConfig& cfg,
                        const std::function<double(const ModelParams<float>&)>& eval_hook) {
  return finetune_impl(
      train_pairs, std::move(init), cfg, eval_hook,
      [](const std::vector<TokenPair>& data, const std::vector<std::size_t>& batch,
         ModelParams<float>& params, ModelParams<float>& grads, const ForwardCtx& ctx) {
        std::vector<TokenPair> pairs;
        for (std::size_t i : batch) pairs.push_back(data[i]);
        return static_cast<double>(compute_gradients(params, pairs, grads, ctx));
      });
}

FinetuneResult finetune_pointer(const std::vector<PointerExample>& train_examples,
                                ModelParams<float> init, const TrainConfig& cfg,
                                const std::function<double(const ModelParams<float>&)>& eval_hook) {
  return finetune_impl(
      train_examples, std::move(init), cfg, eval_hook,
      [](const std::vector<PointerExample>& data, const std::vector<std::size_t>& batch,
         ModelParams<float>& params, ModelParams<float>& grads, const ForwardCtx& ctx) {
        const float scale = 1.0f / static_cast<float>(batch.size());
        double total = 0.0;
        for (std::size_t i : batch) {
          total += pointer_nll(params, data[i].source, data[i].gold_symbols, ctx,
                               &grads, scale);
        }
        return total / static_cast<double>(batch.size());
      });
}

}  // namespace biogen
