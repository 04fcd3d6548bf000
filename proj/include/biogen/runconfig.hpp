// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "biogen/model.hpp"
#include "biogen/noising.hpp"
#include "biogen/train.hpp"

namespace biogen {

// Flat key=value run configuration ('#' comments, one pair per line).
// Unknown keys are rejected; command-line overrides win over the file.
class RunConfig {
 public:
  RunConfig();

  static RunConfig from_file(const std::string& path);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;

  NoiseConfig noise_config() const;
  ModelConfig model_config(int vocab_size) const;
  TrainConfig train_config() const;
  int max_len() const;
  int beam_size() const;

  // Round-trippable resolved config text (itself a valid config file).
  std::string resolved_text() const;
  void write_resolved(const std::string& path) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace biogen
