#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace fous {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// L2-normalized embedding of one detected person box.
struct InstanceFeature {
  Vector vector;
  long source_image_id = -1;
  long box_id = -1;
};

InstanceFeature make_instance_feature(Vector v, long image_id = -1, long box_id = -1);

enum class BankKind { source, random };

struct PrototypeBank {
  Matrix vectors;               // K x D
  std::vector<long> labels;     // K identity labels, unique within the bank
  BankKind kind = BankKind::source;

  long size() const { return vectors.rows(); }
  long dim() const { return vectors.cols(); }
};

struct PseudoLabel {
  long label = -1;
  double distance = 0.0;
};

struct PseudoLabelSet {
  std::vector<PseudoLabel> assignments;  // one per instance, against one bank
};

/// Counts pairwise distance evaluations; monotone within a labeling pass.
struct DistanceCounter {
  std::uint64_t evaluations = 0;
};

/// Per-label mean of source features (raw means, not re-normalized).
PrototypeBank init_source_prototypes(const std::vector<InstanceFeature>& features,
                                     const std::vector<long>& labels);

/// n_random distinct feature vectors drawn without replacement; labels are
/// fresh ids 0..n_random-1.
PrototypeBank sample_random_prototypes(const std::vector<InstanceFeature>& features,
                                       long n_random, std::uint64_t seed);

/// Nearest-prototype assignment (k = 1), ties broken toward the lowest
/// prototype index. Adds exactly N*K to the counter.
PseudoLabelSet assign_pseudo_labels(const std::vector<InstanceFeature>& features,
                                    const PrototypeBank& bank, DistanceCounter& counter);

/// Replaces each prototype with the mean of the features assigned to it;
/// prototypes with no assignments are dropped.
PrototypeBank update_source_prototypes(const std::vector<InstanceFeature>& features,
                                       const PseudoLabelSet& pseudo_labels,
                                       const PrototypeBank& bank);

/// Naive all-pairs similarity pass used by the bench command as the
/// clustering-cost reference. Returns the number of distance evaluations,
/// which is always N*(N-1)/2.
std::uint64_t pairwise_reference_pass(const std::vector<InstanceFeature>& features,
                                      DistanceCounter& counter);

}  // namespace fous
