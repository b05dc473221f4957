#pragma once

#include "fous/autodiff.hpp"
#include "fous/prototypes.hpp"

#include <string>
#include <vector>

namespace fous {

/// Cluster-level contrastive memory: one L2-normalized centroid per
/// pseudo-label cluster.
struct ClusterMemory {
  Matrix centroids;          // K x D, unit rows
  std::vector<long> labels;  // K ids
  double momentum = 0.2;
  double tau = 0.05;

  long size() const { return centroids.rows(); }
  long find(long label) const;  // row index or -1
};

/// Instance-level memory: one unit row per target instance.
struct InstanceMemory {
  Matrix entries;  // N x D, unit rows
  double threshold = 0.7;

  long size() const { return entries.rows(); }
};

ClusterMemory init_cluster_memory(const std::vector<InstanceFeature>& features,
                                  const std::vector<long>& labels, double tau,
                                  double momentum);

double cluster_contrastive_loss(const InstanceFeature& query, const ClusterMemory& memory,
                                long positive_label);

void momentum_update_memory(ClusterMemory& memory, const InstanceFeature& query,
                            long label);

InstanceMemory init_instance_memory(const std::vector<InstanceFeature>& features,
                                    double threshold);

void momentum_update_instance(InstanceMemory& memory, long row, const Vector& feature,
                              double momentum);

/// v_j^i = 1 iff i != j and ||row_i - row_j|| < threshold.
std::vector<int> select_reliable_neighbors(const InstanceMemory& memory, long j,
                                           double threshold);

/// -(1/N) sum_j sum_{i != j} v_j^i log softmax_{i != j}(sim(m_j, m_i)/tau).
double instance_invariance_loss(const InstanceMemory& memory,
                                const std::vector<std::vector<int>>& masks, double tau);

/// Plain sum of the five terms with a finite check naming the bad term.
double total_loss(double l_ins, double l_c_t, double l_c_s, double l_t_e, double l_s_e);

// Autodiff counterparts with a live query against a frozen memory snapshot.
ad::Var cluster_contrastive_loss_ad(const ad::Var& query_unit, const ClusterMemory& memory,
                                    long positive_label);
ad::Var instance_invariance_loss_ad(const ad::Var& query_unit, const InstanceMemory& memory,
                                    long self_row, const std::vector<int>& mask, double tau);

}  // namespace fous
