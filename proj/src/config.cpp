#include "fous/config.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>
#include <stdexcept>

namespace fous {

using json = nlohmann::json;

namespace {

const std::set<std::string> kKnownKeys = {
    "version",
    "image_height",
    "image_width",
    "identities",
    "scenes",
    "persons_min",
    "persons_max",
    "domain_shift",
    "backbone_channels",
    "feature_dim",
    "attention_branches",
    "learning_rate",
    "momentum",
    "weight_decay",
    "batch_size",
    "n_random_prototypes",
    "tau",
    "memory_momentum",
    "neighbor_threshold",
    "consistency_weight",
    "pretrain_epochs",
    "adapt_epochs",
    "proposals_background",
    "proposal_jitter",
    "seed",
    "output_dir",
};

void require_range(bool ok, const std::string& key) {
  if (!ok) throw std::invalid_argument("config value out of range: " + key);
}

}  // namespace

void validate(const RunConfig& c) {
  require_range(c.version == 1, "version");
  require_range(c.data.image_height >= 16 && c.data.image_height <= 2048, "image_height");
  require_range(c.data.image_width >= 16 && c.data.image_width <= 2048, "image_width");
  require_range(c.data.identities >= 1 && c.data.identities <= 100000, "identities");
  require_range(c.data.scenes >= 1 && c.data.scenes <= 1000000, "scenes");
  require_range(c.data.persons_min >= 1, "persons_min");
  require_range(c.data.persons_max >= c.data.persons_min, "persons_max");
  require_range(c.data.domain_shift >= 0.0 && c.data.domain_shift <= 4.0, "domain_shift");
  require_range(c.backbone_channels >= 4 && c.backbone_channels <= 1024, "backbone_channels");
  require_range(c.feature_dim >= 2 && c.feature_dim <= 4096, "feature_dim");
  require_range(c.attention_branches >= 1 && c.attention_branches <= 8, "attention_branches");
  require_range(c.learning_rate > 0.0 && c.learning_rate <= 1.0, "learning_rate");
  require_range(c.momentum >= 0.0 && c.momentum < 1.0, "momentum");
  require_range(c.weight_decay >= 0.0 && c.weight_decay <= 0.1, "weight_decay");
  require_range(c.batch_size >= 1 && c.batch_size <= 1024, "batch_size");
  require_range(c.n_random_prototypes >= 1, "n_random_prototypes");
  require_range(c.tau > 0.0 && c.tau <= 10.0, "tau");
  require_range(c.memory_momentum > 0.0 && c.memory_momentum <= 1.0, "memory_momentum");
  require_range(c.neighbor_threshold >= 0.0 && c.neighbor_threshold <= 2.0,
                "neighbor_threshold");
  require_range(c.consistency_weight >= 0.0 && c.consistency_weight <= 10.0,
                "consistency_weight");
  require_range(c.pretrain_epochs >= 0 && c.pretrain_epochs <= 10000, "pretrain_epochs");
  require_range(c.adapt_epochs >= 0 && c.adapt_epochs <= 10000, "adapt_epochs");
  require_range(c.proposals_background >= 0 && c.proposals_background <= 64,
                "proposals_background");
  require_range(c.proposal_jitter >= 0.0 && c.proposal_jitter < 0.5, "proposal_jitter");
  require_range(!c.output_dir.empty(), "output_dir");
}

std::string to_json(const RunConfig& c) {
  json j;
  j["version"] = c.version;
  j["image_height"] = c.data.image_height;
  j["image_width"] = c.data.image_width;
  j["identities"] = c.data.identities;
  j["scenes"] = c.data.scenes;
  j["persons_min"] = c.data.persons_min;
  j["persons_max"] = c.data.persons_max;
  j["domain_shift"] = c.data.domain_shift;
  j["backbone_channels"] = c.backbone_channels;
  j["feature_dim"] = c.feature_dim;
  j["attention_branches"] = c.attention_branches;
  j["learning_rate"] = c.learning_rate;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["batch_size"] = c.batch_size;
  j["n_random_prototypes"] = c.n_random_prototypes;
  j["tau"] = c.tau;
  j["memory_momentum"] = c.memory_momentum;
  j["neighbor_threshold"] = c.neighbor_threshold;
  j["consistency_weight"] = c.consistency_weight;
  j["pretrain_epochs"] = c.pretrain_epochs;
  j["adapt_epochs"] = c.adapt_epochs;
  j["proposals_background"] = c.proposals_background;
  j["proposal_jitter"] = c.proposal_jitter;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  return j.dump(2);
}

RunConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("malformed config: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("malformed config: not an object");
  for (const auto& item : j.items())
    if (!kKnownKeys.count(item.key()))
      throw std::invalid_argument("unknown config key: " + item.key());

  RunConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) {
      try {
        field = j.at(key).get<std::decay_t<decltype(field)>>();
      } catch (const json::exception&) {
        throw std::invalid_argument(std::string("bad type for config key: ") + key);
      }
    }
  };
  get("version", c.version);
  get("image_height", c.data.image_height);
  get("image_width", c.data.image_width);
  get("identities", c.data.identities);
  get("scenes", c.data.scenes);
  get("persons_min", c.data.persons_min);
  get("persons_max", c.data.persons_max);
  get("domain_shift", c.data.domain_shift);
  get("backbone_channels", c.backbone_channels);
  get("feature_dim", c.feature_dim);
  get("attention_branches", c.attention_branches);
  get("learning_rate", c.learning_rate);
  get("momentum", c.momentum);
  get("weight_decay", c.weight_decay);
  get("batch_size", c.batch_size);
  get("n_random_prototypes", c.n_random_prototypes);
  get("tau", c.tau);
  get("memory_momentum", c.memory_momentum);
  get("neighbor_threshold", c.neighbor_threshold);
  get("consistency_weight", c.consistency_weight);
  get("pretrain_epochs", c.pretrain_epochs);
  get("adapt_epochs", c.adapt_epochs);
  get("proposals_background", c.proposals_background);
  get("proposal_jitter", c.proposal_jitter);
  get("seed", c.seed);
  get("output_dir", c.output_dir);
  validate(c);
  return c;
}

void save_config(const RunConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config: " + path);
  out << to_json(c) << "\n";
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return config_from_json(text);
}

}  // namespace fous
