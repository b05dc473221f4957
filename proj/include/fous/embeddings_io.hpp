#pragma once

#include "fous/prototypes.hpp"

#include <string>
#include <vector>

namespace fous {

/// Binary embedding file: little-endian records of
/// (int64 image_id, int64 box_id, int64 D, D doubles).
void write_embeddings(const std::string& path, const std::vector<InstanceFeature>& features);
std::vector<InstanceFeature> read_embeddings(const std::string& path);

/// Tab-separated label file with a header row:
/// instance_id, l_source, l_random, d_source, d_random.
void write_label_file(const std::string& path, const PseudoLabelSet& source_labels,
                      const PseudoLabelSet& random_labels);

struct LabelRow {
  long instance_id = -1;
  long l_source = -1;
  long l_random = -1;
  double d_source = 0.0;
  double d_random = 0.0;
};

std::vector<LabelRow> read_label_file(const std::string& path);

}  // namespace fous
