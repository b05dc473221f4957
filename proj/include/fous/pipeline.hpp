#pragma once

#include "fous/config.hpp"
#include "fous/memory.hpp"
#include "fous/metrics.hpp"
#include "fous/model.hpp"

#include <string>
#include <vector>

namespace fous {

struct EpochRecord {
  long epoch = 0;
  std::string phase;  // "pretrain" or "adapt"
  double l_ins = 0.0;
  double l_c_t = 0.0;
  double l_c_s = 0.0;
  double l_t_e = 0.0;
  double l_s_e = 0.0;
  double total = 0.0;
  double pseudo_acc = 0.0;
};

std::string epoch_record_json(const EpochRecord& record);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochRecord> log;
};

ModelConfig model_config_from(const RunConfig& config);

/// Purity of an assignment against withheld ground-truth ids: instances are
/// grouped by assigned label; each group votes for its majority true id.
double pseudo_label_accuracy(const std::vector<long>& assigned,
                             const std::vector<long>& truth);

/// Source pretraining followed by adversarial adaptation with per-epoch
/// relabeling. Writes checkpoint.bin and metrics.jsonl into run_dir after
/// every epoch; `resume` continues epoch numbering from a saved checkpoint.
/// A non-finite loss aborts with the last per-epoch checkpoint intact.
TrainResult train_adaptation(const RunConfig& config,
                             const std::vector<SceneSample>& source,
                             const std::vector<SceneSample>& target,
                             const std::string& run_dir,
                             const Checkpoint* resume = nullptr);

/// Retrieval and detection metrics on the target split. The gallery is the
/// model's features over generated proposals; queries are the first
/// occurrence of each identity, embedded from the ground-truth box.
EvalReport evaluate_model(const SearchModel& model, const RunConfig& config,
                          const std::vector<SceneSample>& target);

/// Same proposals and protocol with seeded random unit embeddings in place
/// of the model's features.
EvalReport random_embedding_baseline(const RunConfig& config,
                                     const std::vector<SceneSample>& target,
                                     std::uint64_t seed);

}  // namespace fous
