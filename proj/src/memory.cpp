#include "fous/memory.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace fous {

long ClusterMemory::find(long label) const {
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) return static_cast<long>(i);
  return -1;
}

ClusterMemory init_cluster_memory(const std::vector<InstanceFeature>& features,
                                  const std::vector<long>& labels, double tau,
                                  double momentum) {
  if (features.empty() || features.size() != labels.size())
    throw std::invalid_argument("empty cluster");
  if (tau <= 0.0) throw std::invalid_argument("tau must be positive");
  const long d = features[0].vector.size();

  std::map<long, std::pair<Vector, long>> sums;
  for (size_t i = 0; i < features.size(); ++i) {
    auto it = sums.find(labels[i]);
    if (it == sums.end())
      sums.emplace(labels[i], std::make_pair(features[i].vector, 1L));
    else {
      it->second.first += features[i].vector;
      it->second.second += 1;
    }
  }

  ClusterMemory mem;
  mem.tau = tau;
  mem.momentum = momentum;
  mem.centroids.resize(static_cast<long>(sums.size()), d);
  long row = 0;
  for (const auto& [label, sum_count] : sums) {
    Vector m = sum_count.first / static_cast<double>(sum_count.second);
    const double norm = m.norm();
    if (norm < 1e-8) throw std::runtime_error("degenerate centroid");
    mem.centroids.row(row) = m / norm;
    mem.labels.push_back(label);
    ++row;
  }
  return mem;
}

double cluster_contrastive_loss(const InstanceFeature& query, const ClusterMemory& memory,
                                long positive_label) {
  const long pos = memory.find(positive_label);
  if (pos < 0) throw std::invalid_argument("label not in memory");
  Vector logits = memory.centroids * query.vector / memory.tau;
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return lse - logits[pos];
}

void momentum_update_memory(ClusterMemory& memory, const InstanceFeature& query,
                            long label) {
  const long pos = memory.find(label);
  if (pos < 0) throw std::invalid_argument("label not in memory");
  Vector m = memory.momentum * memory.centroids.row(pos).transpose() +
             (1.0 - memory.momentum) * query.vector;
  const double norm = m.norm();
  if (norm < 1e-8) throw std::runtime_error("degenerate centroid");
  memory.centroids.row(pos) = m / norm;
}

InstanceMemory init_instance_memory(const std::vector<InstanceFeature>& features,
                                    double threshold) {
  if (features.empty()) throw std::invalid_argument("empty instance memory");
  InstanceMemory mem;
  mem.threshold = threshold;
  mem.entries.resize(static_cast<long>(features.size()), features[0].vector.size());
  for (size_t i = 0; i < features.size(); ++i)
    mem.entries.row(static_cast<long>(i)) = features[i].vector;
  return mem;
}

void momentum_update_instance(InstanceMemory& memory, long row, const Vector& feature,
                              double momentum) {
  Vector m = momentum * memory.entries.row(row).transpose() + (1.0 - momentum) * feature;
  const double norm = m.norm();
  if (norm < 1e-8) throw std::runtime_error("degenerate instance entry");
  memory.entries.row(row) = m / norm;
}

std::vector<int> select_reliable_neighbors(const InstanceMemory& memory, long j,
                                           double threshold) {
  if (j < 0 || j >= memory.size()) throw std::invalid_argument("row out of range");
  std::vector<int> mask(static_cast<size_t>(memory.size()), 0);
  for (long i = 0; i < memory.size(); ++i) {
    if (i == j) continue;
    const double dist = (memory.entries.row(i) - memory.entries.row(j)).norm();
    if (dist < threshold) mask[static_cast<size_t>(i)] = 1;
  }
  return mask;
}

double instance_invariance_loss(const InstanceMemory& memory,
                                const std::vector<std::vector<int>>& masks, double tau) {
  const long n = memory.size();
  if (static_cast<long>(masks.size()) != n)
    throw std::invalid_argument("one mask per instance expected");
  if (n < 2) return 0.0;
  double total = 0.0;
  for (long j = 0; j < n; ++j) {
    const auto& v = masks[static_cast<size_t>(j)];
    bool any = false;
    for (long i = 0; i < n; ++i)
      if (i != j && v[static_cast<size_t>(i)]) any = true;
    if (!any) continue;

    Vector logits(n - 1);
    std::vector<long> cand;
    for (long i = 0; i < n; ++i) {
      if (i == j) continue;
      logits[static_cast<long>(cand.size())] =
          memory.entries.row(j).dot(memory.entries.row(i)) / tau;
      cand.push_back(i);
    }
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    for (size_t q = 0; q < cand.size(); ++q)
      if (v[static_cast<size_t>(cand[q])])
        total += lse - logits[static_cast<long>(q)];
  }
  return total / static_cast<double>(n);
}

double total_loss(double l_ins, double l_c_t, double l_c_s, double l_t_e, double l_s_e) {
  const std::pair<const char*, double> terms[] = {
      {"l_ins", l_ins}, {"l_c_t", l_c_t}, {"l_c_s", l_c_s},
      {"l_t_e", l_t_e}, {"l_s_e", l_s_e}};
  double total = 0.0;
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("non-finite loss term: ") + name);
    total += v;
  }
  return total;
}

ad::Var cluster_contrastive_loss_ad(const ad::Var& query_unit, const ClusterMemory& memory,
                                    long positive_label) {
  const long pos = memory.find(positive_label);
  if (pos < 0) throw std::invalid_argument("label not in memory");
  const long k = memory.size();
  const long d = memory.centroids.cols();
  ad::Array cent = Eigen::Map<const ad::Array>(memory.centroids.data(), k * d);
  ad::Var centroids = ad::Var::constant(cent, {k, d});
  ad::Var logits = ad::mul_scalar(
      ad::reshape(ad::matmul(centroids, ad::reshape(query_unit, {d, 1})), {k}),
      1.0 / memory.tau);
  ad::Var pos_logit = ad::gather(logits, std::vector<long>{pos}, {1});
  return ad::logsumexp(logits) - pos_logit;
}

ad::Var instance_invariance_loss_ad(const ad::Var& query_unit, const InstanceMemory& memory,
                                    long self_row, const std::vector<int>& mask, double tau) {
  const long n = memory.size();
  const long d = memory.entries.cols();
  if (n < 2) return ad::Var::constant(0.0);
  bool any = false;
  for (long i = 0; i < n; ++i)
    if (i != self_row && mask[static_cast<size_t>(i)]) any = true;
  if (!any) return ad::Var::constant(0.0);

  // Rows other than self, as a constant snapshot.
  Matrix others(n - 1, d);
  std::vector<long> cand;
  for (long i = 0; i < n; ++i) {
    if (i == self_row) continue;
    others.row(static_cast<long>(cand.size())) = memory.entries.row(i);
    cand.push_back(i);
  }
  ad::Array flat = Eigen::Map<const ad::Array>(others.data(), (n - 1) * d);
  ad::Var rows = ad::Var::constant(flat, {n - 1, d});
  ad::Var logits = ad::mul_scalar(
      ad::reshape(ad::matmul(rows, ad::reshape(query_unit, {d, 1})), {n - 1}),
      1.0 / tau);
  ad::Var lse = ad::logsumexp(logits);
  ad::Var total = ad::Var::constant(0.0);
  for (size_t q = 0; q < cand.size(); ++q) {
    if (!mask[static_cast<size_t>(cand[q])]) continue;
    total = total + (lse - ad::gather(logits, std::vector<long>{static_cast<long>(q)}, {1}));
  }
  return total;
}

}  // namespace fous
