#pragma once

#include "fous/synthetic.hpp"

#include <cstdint>
#include <string>

namespace fous {

/// Full run configuration. Serialized as strict JSON with a version key;
/// unknown keys are rejected on load.
struct RunConfig {
  int version = 1;

  SceneConfig data;

  // model
  long backbone_channels = 32;
  long feature_dim = 64;
  long attention_branches = 1;

  // optimizer
  double learning_rate = 0.003;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  long batch_size = 4;

  // adaptation
  long n_random_prototypes = 300;
  double tau = 0.05;
  double memory_momentum = 0.2;
  double neighbor_threshold = 0.7;
  double consistency_weight = 0.1;
  long pretrain_epochs = 3;
  long adapt_epochs = 5;
  long proposals_background = 2;
  double proposal_jitter = 0.08;

  std::uint64_t seed = 7;
  std::string output_dir = "runs/default";
};

std::string to_json(const RunConfig& config);
RunConfig config_from_json(const std::string& text);

void save_config(const RunConfig& config, const std::string& path);
RunConfig load_config(const std::string& path);

/// Range checks on every numeric field. Throws std::invalid_argument naming
/// the offending key.
void validate(const RunConfig& config);

}  // namespace fous
