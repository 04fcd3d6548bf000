// SPDX-License-Identifier: Apache-2.0
#include "biogen/runconfig.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace biogen {
namespace {

const std::map<std::string, std::string> kDefaults = {
    // noising
    {"mask_ratio", "0.3"},
    {"poisson_lambda", "3.0"},
    {"noise", "ti"},
    {"seed", "0"},
    {"max_len", "128"},
    // model
    {"d_model", "64"},
    {"n_heads", "4"},
    {"n_enc_layers", "2"},
    {"n_dec_layers", "2"},
    {"d_ff", "128"},
    {"max_positions", "128"},
    {"dropout_rate", "0.0"},
    {"n_entity_types", "0"},
    // training
    {"total_steps", "1000"},
    {"batch_size", "8"},
    {"lr_max", "1e-4"},
    {"warmup_ratio", "0.02"},
    {"weight_decay", "0.01"},
    {"adam_beta1", "0.9"},
    {"adam_beta2", "0.999"},
    {"adam_eps", "1e-8"},
    {"grad_clip_norm", "1.0"},
    {"epochs", "20"},
    {"checkpoint_interval", "0"},
    // decoding
    {"beam_size", "5"},
};

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

RunConfig::RunConfig() : values_(kDefaults) {}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  RunConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected key=value");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!kDefaults.count(key)) {
    throw std::runtime_error("unknown config key: " + key);
  }
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw std::runtime_error("unknown config key: " + key);
  return it->second;
}

NoiseConfig RunConfig::noise_config() const {
  NoiseConfig nc;
  nc.mask_ratio = std::stod(get("mask_ratio"));
  nc.poisson_lambda = std::stod(get("poisson_lambda"));
  nc.seed = std::stoull(get("seed"));
  const std::string& noise = get("noise");
  if (noise == "ti") {
    nc.use_text_infilling = true;
    nc.use_sentence_permutation = false;
  } else if (noise == "sp") {
    nc.use_text_infilling = false;
    nc.use_sentence_permutation = true;
  } else if (noise == "ti+sp") {
    nc.use_text_infilling = true;
    nc.use_sentence_permutation = true;
  } else {
    throw std::runtime_error("config: noise must be ti, sp, or ti+sp (got \"" +
                             noise + "\")");
  }
  if (nc.mask_ratio <= 0.0 || nc.mask_ratio > 1.0) {
    throw std::runtime_error("config: mask_ratio outside (0,1]");
  }
  if (nc.poisson_lambda <= 0.0) {
    throw std::runtime_error("config: poisson_lambda must be positive");
  }
  return nc;
}

ModelConfig RunConfig::model_config(int vocab_size) const {
  ModelConfig mc;
  mc.vocab_size = vocab_size;
  mc.d_model = std::stoi(get("d_model"));
  mc.n_heads = std::stoi(get("n_heads"));
  mc.n_enc_layers = std::stoi(get("n_enc_layers"));
  mc.n_dec_layers = std::stoi(get("n_dec_layers"));
  mc.d_ff = std::stoi(get("d_ff"));
  mc.max_positions = std::stoi(get("max_positions"));
  mc.dropout_rate = std::stod(get("dropout_rate"));
  mc.n_entity_types = std::stoi(get("n_entity_types"));
  mc.validate();
  return mc;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig tc;
  tc.total_steps = std::stol(get("total_steps"));
  tc.batch_size = std::stoi(get("batch_size"));
  tc.lr_max = std::stod(get("lr_max"));
  tc.warmup_ratio = std::stod(get("warmup_ratio"));
  tc.weight_decay = std::stod(get("weight_decay"));
  tc.adam_beta1 = std::stod(get("adam_beta1"));
  tc.adam_beta2 = std::stod(get("adam_beta2"));
  tc.adam_eps = std::stod(get("adam_eps"));
  tc.grad_clip_norm = std::stod(get("grad_clip_norm"));
  tc.seed = std::stoull(get("seed"));
  tc.epochs = std::stoi(get("epochs"));
  tc.checkpoint_interval = std::stol(get("checkpoint_interval"));
  tc.validate();
  return tc;
}

int RunConfig::max_len() const { return std::stoi(get("max_len")); }
int RunConfig::beam_size() const { return std::stoi(get("beam_size")); }

std::string RunConfig::resolved_text() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << '=' << v << '\n';
  return out.str();
}

void RunConfig::write_resolved(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write resolved config: " + path);
  out << resolved_text();
}

}  // namespace biogen
