#include <doctest.h>

#include "fous/memory.hpp"
#include "fous/model.hpp"

#include <cmath>
#include <random>

using namespace fous;

namespace {

std::vector<InstanceFeature> unit_features(long n, long d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<InstanceFeature> out;
  for (long i = 0; i < n; ++i) {
    Vector v(d);
    for (long j = 0; j < d; ++j) v[j] = g(rng);
    out.push_back(make_instance_feature(v));
  }
  return out;
}

InstanceFeature unit(std::initializer_list<double> vals) {
  Vector v(static_cast<long>(vals.size()));
  long i = 0;
  for (double x : vals) v[i++] = x;
  return make_instance_feature(v);
}

}  // namespace

TEST_CASE("cluster memory init: centroids are normalized means") {
  auto feats = unit_features(100, 16, 1);
  std::vector<long> labels(100);
  for (size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<long>(i % 8);
  ClusterMemory mem = init_cluster_memory(feats, labels, 0.05, 0.2);
  REQUIRE(mem.size() == 8);
  for (long k = 0; k < 8; ++k) {
    Vector sum = Vector::Zero(16);
    long count = 0;
    for (size_t i = 0; i < feats.size(); ++i)
      if (labels[i] == k) {
        sum += feats[i].vector;
        ++count;
      }
    Vector expected = sum / count;
    expected /= expected.norm();
    CHECK((mem.centroids.row(k).transpose() - expected).norm() < 1e-10);
    CHECK(std::abs(mem.centroids.row(k).norm() - 1.0) < 1e-6);
  }

  ClusterMemory single = init_cluster_memory({unit({1, 0})}, {3}, 0.05, 0.2);
  CHECK((single.centroids.row(0).transpose() - unit({1, 0}).vector).norm() < 1e-12);

  // two antipodal unit features in one cluster
  CHECK_THROWS_WITH(init_cluster_memory({unit({1, 0}), unit({-1, 0})}, {0, 0}, 0.05, 0.2),
                    "degenerate centroid");
  CHECK_THROWS_WITH(init_cluster_memory({}, {}, 0.05, 0.2), "empty cluster");
}

TEST_CASE("InfoNCE closed forms") {
  // K = 1 -> exactly zero
  ClusterMemory one = init_cluster_memory({unit({1, 0})}, {0}, 0.05, 0.2);
  CHECK(cluster_contrastive_loss(unit({0, 1}), one, 0) == 0.0);

  // equal similarities -> ln K
  for (long k : {2L, 4L, 16L}) {
    ClusterMemory mem;
    mem.tau = 0.05;
    mem.centroids = Matrix::Zero(k, k + 1);
    for (long i = 0; i < k; ++i) {
      mem.centroids(i, i) = 1.0;
      mem.labels.push_back(i);
    }
    Vector q = Vector::Zero(k + 1);
    q[k] = 1.0;  // orthogonal to every centroid
    InstanceFeature f;
    f.vector = q;
    CHECK(cluster_contrastive_loss(f, mem, 0) ==
          doctest::Approx(std::log(static_cast<double>(k))).epsilon(1e-6));
  }

  // query equal to the positive, others orthogonal, tau = 0.05
  ClusterMemory mem;
  mem.tau = 0.05;
  mem.centroids = Matrix::Zero(4, 4);
  for (long i = 0; i < 4; ++i) {
    mem.centroids(i, i) = 1.0;
    mem.labels.push_back(i);
  }
  InstanceFeature q;
  q.vector = Vector::Zero(4);
  q.vector[0] = 1.0;
  CHECK(cluster_contrastive_loss(q, mem, 0) < 1e-8);
  CHECK(cluster_contrastive_loss(q, mem, 0) >= 0.0);

  CHECK_THROWS_WITH(cluster_contrastive_loss(q, mem, 99), "label not in memory");
}

TEST_CASE("InfoNCE bounds and uniform-shift invariance") {
  auto feats = unit_features(20, 8, 7);
  std::vector<long> labels(20);
  for (size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<long>(i % 4);
  ClusterMemory mem = init_cluster_memory(feats, labels, 0.05, 0.2);
  for (const auto& f : feats) {
    const double l = cluster_contrastive_loss(f, mem, 0);
    Vector sims = mem.centroids * f.vector;
    const double bound =
        std::log(4.0) + (sims.maxCoeff() - sims.minCoeff()) / mem.tau;
    CHECK(l >= 0.0);
    CHECK(l <= bound + 1e-12);
  }

  // shifting every similarity by a constant leaves the softmax loss unchanged:
  // realized by checking the stabilized path equals a naive direct evaluation
  InstanceFeature q = feats[0];
  Vector logits = mem.centroids * q.vector / mem.tau;
  double naive = std::log((logits.array()).exp().sum()) - logits[0];
  CHECK(cluster_contrastive_loss(q, mem, mem.labels[0]) ==
        doctest::Approx(naive).epsilon(1e-10));
}

TEST_CASE("momentum update") {
  ClusterMemory mem = init_cluster_memory({unit({1, 0}), unit({0, 1})}, {0, 1}, 0.05, 0.2);
  InstanceFeature q = unit({0.6, 0.8});

  ClusterMemory frozen = mem;
  frozen.momentum = 1.0;
  momentum_update_memory(frozen, q, 0);
  CHECK((frozen.centroids.row(0).transpose() - unit({1, 0}).vector).norm() < 1e-12);

  ClusterMemory replace = mem;
  replace.momentum = 0.0;
  momentum_update_memory(replace, q, 0);
  CHECK((replace.centroids.row(0).transpose() - q.vector).norm() < 1e-12);

  // mu = 0.2 hand computation
  momentum_update_memory(mem, q, 0);
  Vector expected(2);
  expected << 0.2 * 1.0 + 0.8 * 0.6, 0.2 * 0.0 + 0.8 * 0.8;
  expected /= expected.norm();
  CHECK((mem.centroids.row(0).transpose() - expected).norm() < 1e-12);
  CHECK((mem.centroids.row(1).transpose() - unit({0, 1}).vector).norm() == 0.0);

  // unit norm maintained over many updates
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    auto f = unit_features(1, 2, rng())[0];
    momentum_update_memory(mem, f, t % 2);
  }
  CHECK(std::abs(mem.centroids.row(0).norm() - 1.0) < 1e-6);
  CHECK(std::abs(mem.centroids.row(1).norm() - 1.0) < 1e-6);
}

TEST_CASE("reliable neighbor selection") {
  auto feats = unit_features(10, 6, 13);
  InstanceMemory mem = init_instance_memory(feats, 0.8);

  // threshold 0 -> empty mask
  std::vector<int> empty = select_reliable_neighbors(mem, 3, 0.0);
  for (int v : empty) CHECK(v == 0);

  // threshold 3 covers the unit-sphere diameter
  std::vector<int> full = select_reliable_neighbors(mem, 3, 3.0);
  for (long i = 0; i < 10; ++i) CHECK(full[static_cast<size_t>(i)] == (i == 3 ? 0 : 1));

  // brute-force oracle at threshold 0.8
  for (long j = 0; j < 10; ++j) {
    std::vector<int> mask = select_reliable_neighbors(mem, j, 0.8);
    for (long i = 0; i < 10; ++i) {
      const bool expected =
          i != j && (mem.entries.row(i) - mem.entries.row(j)).norm() < 0.8;
      CHECK(mask[static_cast<size_t>(i)] == (expected ? 1 : 0));
    }
  }

  // symmetry
  for (long j = 0; j < 10; ++j) {
    std::vector<int> mj = select_reliable_neighbors(mem, j, 0.9);
    for (long i = 0; i < 10; ++i) {
      std::vector<int> mi = select_reliable_neighbors(mem, i, 0.9);
      if (i != j) CHECK(mj[static_cast<size_t>(i)] == mi[static_cast<size_t>(j)]);
    }
  }
}

TEST_CASE("instance invariance loss") {
  auto feats = unit_features(4, 8, 17);
  InstanceMemory mem = init_instance_memory(feats, 0.7);

  // all-zero masks -> exactly 0
  std::vector<std::vector<int>> zero_masks(4, std::vector<int>(4, 0));
  CHECK(instance_invariance_loss(mem, zero_masks, 0.05) == 0.0);

  // N=2, mutual masks, symmetric rows -> single-candidate softmax -> 0
  InstanceMemory two = init_instance_memory({feats[0], feats[0]}, 0.7);
  std::vector<std::vector<int>> mutual{{0, 1}, {1, 0}};
  CHECK(instance_invariance_loss(two, mutual, 0.05) == doctest::Approx(0.0).epsilon(1e-12));

  // dense N=4 case vs an independent dense-softmax oracle
  std::vector<std::vector<int>> masks(4, std::vector<int>(4, 1));
  for (int j = 0; j < 4; ++j) masks[static_cast<size_t>(j)][static_cast<size_t>(j)] = 0;
  const double tau = 0.1;
  double expected = 0.0;
  for (long j = 0; j < 4; ++j) {
    for (long i = 0; i < 4; ++i) {
      if (i == j) continue;
      double denom = 0.0;
      for (long k = 0; k < 4; ++k) {
        if (k == j) continue;
        denom += std::exp(mem.entries.row(j).dot(mem.entries.row(k)) / tau);
      }
      const double p = std::exp(mem.entries.row(j).dot(mem.entries.row(i)) / tau) / denom;
      expected -= std::log(p);
    }
  }
  expected /= 4.0;
  CHECK(instance_invariance_loss(mem, masks, tau) == doctest::Approx(expected).epsilon(1e-8));
}

TEST_CASE("autodiff losses agree with plain ones and support training descent") {
  auto feats = unit_features(24, 8, 23);
  std::vector<long> labels(24);
  for (size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<long>(i % 4);
  ClusterMemory mem = init_cluster_memory(feats, labels, 0.05, 0.2);

  ad::Var q = ad::Var::constant(
      Eigen::Map<const ad::Array>(feats[3].vector.data(), 8), {8});
  CHECK(cluster_contrastive_loss_ad(q, mem, labels[3]).value()[0] ==
        doctest::Approx(cluster_contrastive_loss(feats[3], mem, labels[3])).epsilon(1e-10));

  // 50 gradient steps on a free query strictly decrease the loss
  ad::Array qv = Eigen::Map<const ad::Array>(feats[5].vector.data(), 8);
  ad::Var free_q = ad::Var::leaf(qv, {8});
  double initial = -1.0, final_loss = -1.0;
  for (int t = 0; t < 50; ++t) {
    ad::Var normed = ad::reshape(
        l2_normalize_rows(ad::reshape(free_q, {1, 8})), {8});
    ad::Var loss = cluster_contrastive_loss_ad(normed, mem, labels[5]);
    if (t == 0) initial = loss.value()[0];
    final_loss = loss.value()[0];
    const auto pass = loss.backward();
    (void)pass;
    free_q.node()->value -= 0.5 * free_q.grad();
  }
  CHECK(final_loss < initial);
}

TEST_CASE("total loss") {
  CHECK(total_loss(0, 0, 0, 0, 0) == 0.0);
  CHECK(total_loss(1, 1, 1, 1, 1) == 5.0);
  CHECK(total_loss(0.1, -0.2, 0.3, 0.4, 0.5) ==
        doctest::Approx(0.1 - 0.2 + 0.3 + 0.4 + 0.5).epsilon(1e-12));
  CHECK_THROWS_WITH(total_loss(1, std::nan(""), 1, 1, 1), "non-finite loss term: l_c_t");

  // gradient of the sum w.r.t. each term is 1
  std::vector<ad::Var> terms;
  ad::Var total = ad::Var::constant(0.0);
  for (int i = 0; i < 5; ++i) {
    terms.push_back(ad::Var::leaf(ad::Array::Constant(1, 0.3 * i), {1}));
    total = total + terms.back();
  }
  total.backward();
  for (const auto& t : terms) CHECK(t.grad()[0] == doctest::Approx(1.0));
}
