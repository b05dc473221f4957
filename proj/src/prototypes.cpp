#include "fous/prototypes.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <stdexcept>

namespace fous {

InstanceFeature make_instance_feature(Vector v, long image_id, long box_id) {
  const double norm = v.norm();
  if (norm < 1e-12) throw std::invalid_argument("zero embedding");
  InstanceFeature f;
  f.vector = v / norm;
  f.source_image_id = image_id;
  f.box_id = box_id;
  return f;
}

PrototypeBank init_source_prototypes(const std::vector<InstanceFeature>& features,
                                     const std::vector<long>& labels) {
  if (features.empty() || features.size() != labels.size())
    throw std::invalid_argument("no labeled features");
  const long d = features[0].vector.size();

  std::map<long, std::pair<Vector, long>> sums;  // label -> (sum, count)
  for (size_t i = 0; i < features.size(); ++i) {
    if (features[i].vector.size() != d)
      throw std::invalid_argument("dimension mismatch");
    auto it = sums.find(labels[i]);
    if (it == sums.end())
      sums.emplace(labels[i], std::make_pair(features[i].vector, 1L));
    else {
      it->second.first += features[i].vector;
      it->second.second += 1;
    }
  }

  PrototypeBank bank;
  bank.kind = BankKind::source;
  bank.vectors.resize(static_cast<long>(sums.size()), d);
  long row = 0;
  for (const auto& [label, sum_count] : sums) {
    bank.vectors.row(row) = sum_count.first / static_cast<double>(sum_count.second);
    bank.labels.push_back(label);
    ++row;
  }
  return bank;
}

PrototypeBank sample_random_prototypes(const std::vector<InstanceFeature>& features,
                                       long n_random, std::uint64_t seed) {
  const long n = static_cast<long>(features.size());
  if (n_random < 1) throw std::invalid_argument("need at least one prototype");
  if (n_random > n) throw std::invalid_argument("not enough target features");

  std::vector<long> order(n);
  for (long i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  // Fisher-Yates prefix shuffle; std::shuffle is not cross-stdlib stable.
  for (long i = 0; i < n_random; ++i) {
    std::uniform_int_distribution<long> dist(i, n - 1);
    std::swap(order[i], order[dist(rng)]);
  }

  PrototypeBank bank;
  bank.kind = BankKind::random;
  bank.vectors.resize(n_random, features[0].vector.size());
  for (long i = 0; i < n_random; ++i) {
    bank.vectors.row(i) = features[order[i]].vector;
    bank.labels.push_back(i);
  }
  return bank;
}

PseudoLabelSet assign_pseudo_labels(const std::vector<InstanceFeature>& features,
                                    const PrototypeBank& bank, DistanceCounter& counter) {
  if (bank.size() < 1) throw std::invalid_argument("empty prototype bank");
  PseudoLabelSet out;
  out.assignments.reserve(features.size());
  for (const auto& f : features) {
    if (f.vector.size() != bank.dim()) throw std::invalid_argument("dimension mismatch");
    long best = 0;
    double best_dist = (f.vector.transpose() - bank.vectors.row(0)).norm();
    ++counter.evaluations;
    for (long k = 1; k < bank.size(); ++k) {
      const double dist = (f.vector.transpose() - bank.vectors.row(k)).norm();
      ++counter.evaluations;
      if (dist < best_dist) {
        best_dist = dist;
        best = k;
      }
    }
    out.assignments.push_back({bank.labels[static_cast<size_t>(best)], best_dist});
  }
  return out;
}

PrototypeBank update_source_prototypes(const std::vector<InstanceFeature>& features,
                                       const PseudoLabelSet& pseudo_labels,
                                       const PrototypeBank& bank) {
  if (features.size() != pseudo_labels.assignments.size())
    throw std::invalid_argument("assignment count mismatch");
  const long d = bank.dim();

  std::map<long, std::pair<Vector, long>> sums;
  for (size_t i = 0; i < features.size(); ++i) {
    const long label = pseudo_labels.assignments[i].label;
    auto it = sums.find(label);
    if (it == sums.end())
      sums.emplace(label, std::make_pair(features[i].vector, 1L));
    else {
      it->second.first += features[i].vector;
      it->second.second += 1;
    }
  }

  PrototypeBank updated;
  updated.kind = bank.kind;
  std::vector<std::pair<long, Vector>> rows;
  for (long k = 0; k < bank.size(); ++k) {
    auto it = sums.find(bank.labels[static_cast<size_t>(k)]);
    if (it == sums.end()) continue;  // empty prototypes are dropped
    rows.emplace_back(bank.labels[static_cast<size_t>(k)],
                      Vector(it->second.first / static_cast<double>(it->second.second)));
  }
  if (rows.empty()) throw std::runtime_error("labeling collapsed");
  updated.vectors.resize(static_cast<long>(rows.size()), d);
  for (size_t i = 0; i < rows.size(); ++i) {
    updated.labels.push_back(rows[i].first);
    updated.vectors.row(static_cast<long>(i)) = rows[i].second;
  }
  return updated;
}

std::uint64_t pairwise_reference_pass(const std::vector<InstanceFeature>& features,
                                      DistanceCounter& counter) {
  const size_t n = features.size();
  std::uint64_t count = 0;
  volatile double sink = 0.0;  // keep the distance computations live
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      sink = sink + (features[i].vector - features[j].vector).squaredNorm();
      ++count;
    }
  counter.evaluations += count;
  return count;
}

}  // namespace fous
