#include <doctest.h>

#include "fous/alignment.hpp"
#include "gradcheck.hpp"

#include <cmath>
#include <random>

using namespace fous;
using fous::testing::finite_difference_gradient;
using fous::testing::relative_error;

namespace {
double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
}

TEST_CASE("balance factor: equal counts, closed forms, complement identity") {
  for (long n : {1L, 4L, 100L, 5532L}) CHECK(balance_factor(n, n) == 0.5);
  CHECK(balance_factor(100, 200) == doctest::Approx(sigmoid(4.0)).epsilon(1e-9));
  CHECK(balance_factor(100, 200) == doctest::Approx(0.982014).epsilon(1e-6));
  CHECK(balance_factor(200, 100) == doctest::Approx(0.017986).epsilon(1e-4));

  std::mt19937_64 rng(9);
  for (int t = 0; t < 20; ++t) {
    const long a = 1 + static_cast<long>(rng() % 1000);
    const long b = 1 + static_cast<long>(rng() % 1000);
    CHECK(balance_factor(a, b) + balance_factor(b, a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(balance_factor(a, b) > 0.0);
    CHECK(balance_factor(a, b) < 1.0);
  }
}

TEST_CASE("balance factor is monotone in the target count") {
  for (long ns : {3L, 50L, 400L}) {
    double prev = -1.0;
    for (long nt = 1; nt <= 800; nt += 7) {
      const double l = balance_factor(ns, nt);
      CHECK(l >= prev);
      prev = l;
    }
  }
  CHECK_THROWS_WITH(balance_factor(0, 5), "empty domain");
  CHECK_THROWS_WITH(balance_factor(5, -1), "empty domain");
}

TEST_CASE("image domain loss closed forms") {
  // p_i = 0.5 for all N images -> N ln 2
  std::vector<std::vector<double>> half(6, std::vector<double>{0.5});
  std::vector<int> labels{0, 1, 0, 1, 0, 1};
  CHECK(image_domain_loss(half, labels) == doctest::Approx(6.0 * std::log(2.0)).epsilon(1e-12));

  // two images, d=[0,1], p=[0.2,0.7]
  std::vector<std::vector<double>> preds{{0.2}, {0.7}};
  std::vector<int> d{0, 1};
  CHECK(image_domain_loss(preds, d) ==
        doctest::Approx(-(std::log(0.8) + std::log(0.7))).epsilon(1e-12));
  CHECK(image_domain_loss(preds, d) == doctest::Approx(0.57982).epsilon(1e-4));

  // perfect predictions reach ~0 through clamping
  std::vector<std::vector<double>> perfect{{0.0}, {1.0}};
  CHECK(image_domain_loss(perfect, d) < 1e-6);
  CHECK(image_domain_loss(perfect, d) > 0.0);
}

TEST_CASE("image domain loss averages the patch grid") {
  std::vector<std::vector<double>> preds{{0.1, 0.3, 0.2}};  // mean 0.2
  std::vector<int> d{0};
  CHECK(image_domain_loss(preds, d) == doctest::Approx(-std::log(0.8)).epsilon(1e-12));
}

TEST_CASE("instance domain loss: hand case, empty sets, lambda structure") {
  // one image, d=1, det p=0.7, reid p=0.6, lambda = sigmoid(4)
  const double lambda = balance_factor(100, 200);
  std::vector<int> d{1};
  const double loss = instance_domain_loss(d, {{0.7}}, {{0.6}}, lambda);
  CHECK(loss == doctest::Approx(-lambda * std::log(0.7) -
                                (1 - lambda) * std::log(0.6)).epsilon(1e-12));
  CHECK(loss == doctest::Approx(0.35944).epsilon(1e-4));

  CHECK(instance_domain_loss({0, 1}, {{}, {}}, {{}, {}}, 0.5) == 0.0);

  // lambda = 0.5 with identical branches equals the unweighted mean
  const double det_only = instance_domain_loss(d, {{0.7}}, {{}}, 1.0);
  const double both = instance_domain_loss(d, {{0.7}}, {{0.7}}, 0.5);
  CHECK(both == doctest::Approx(det_only).epsilon(1e-12));

  CHECK_THROWS_WITH(instance_domain_loss({0, 1}, {{0.5}}, {{0.5}, {0.5}}, 0.5),
                    "instance/prediction mismatch");
}

TEST_CASE("instance domain loss is linear in lambda") {
  std::vector<int> d{0, 1};
  std::vector<std::vector<double>> det{{0.2, 0.4}, {0.8}};
  std::vector<std::vector<double>> reid{{0.3}, {0.9, 0.7}};
  const double l0 = instance_domain_loss(d, det, reid, 0.1);
  const double l1 = instance_domain_loss(d, det, reid, 0.5);
  const double l2 = instance_domain_loss(d, det, reid, 0.9);
  CHECK(l1 == doctest::Approx(0.5 * (l0 + l2)).epsilon(1e-12));  // collinear
}

TEST_CASE("consistency regularizer") {
  CHECK(consistency_regularizer({0.8}, {{0.6, 1.0}}) == doctest::Approx(0.0));
  CHECK(consistency_regularizer({0.9}, {{0.5}}) == doctest::Approx(0.16).epsilon(1e-12));
  CHECK(consistency_regularizer({0.9}, {{}}) == 0.0);  // no instances
  CHECK(consistency_regularizer({0.3, 0.7}, {{0.3}, {0.7}}) == 0.0);
}

TEST_CASE("gradient reversal: identity forward, negated backward") {
  ad::Array xv(2);
  xv << 1.0, -2.0;
  ad::Var x = ad::Var::leaf(xv, {2});
  ad::Var rev = ad::gradient_reverse(x);
  CHECK(rev.value()[0] == 1.0);
  CHECK(rev.value()[1] == -2.0);

  ad::sum(rev).backward();
  CHECK(x.grad()[0] == doctest::Approx(-1.0));
  CHECK(x.grad()[1] == doctest::Approx(-1.0));
}

TEST_CASE("gradient reversal equals negated pass-through on compositions") {
  std::mt19937_64 rng(77);
  for (int t = 0; t < 10; ++t) {
    ad::Array xv(6);
    for (long i = 0; i < 6; ++i)
      xv[i] = std::uniform_real_distribution<double>(-1, 1)(rng);

    auto loss_of = [](const ad::Var& v) {
      return ad::mean(ad::sigmoid(v * v + ad::mul_scalar(v, 0.3)));
    };

    ad::Var a = ad::Var::leaf(xv, {6});
    loss_of(ad::gradient_reverse(a)).backward();
    ad::Array reversed = a.grad();

    ad::Var b = ad::Var::leaf(xv, {6});
    loss_of(b).backward();
    ad::Array straight = b.grad();

    CHECK((reversed + straight).abs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("gradient reversal composed loss matches finite differences") {
  ad::Array xv(4);
  xv << 0.3, -0.4, 0.9, 0.1;
  ad::Var x = ad::Var::leaf(xv, {4});
  ad::mean(ad::sigmoid(ad::gradient_reverse(x))).backward();
  ad::Array fd = finite_difference_gradient(
      [](const ad::Array& v) {
        return ad::mean(ad::sigmoid(ad::Var::constant(v, {4}))).value()[0];
      },
      xv, 1e-6);
  CHECK(relative_error(fd, -x.grad()) < 1e-6);
}

TEST_CASE("autodiff alignment losses agree with the scalar versions") {
  std::vector<int> d{0, 1};
  std::vector<std::vector<double>> det{{0.2, 0.4}, {0.8}};
  std::vector<std::vector<double>> reid{{0.3}, {0.9}};
  const double lambda = 0.7;

  auto wrap = [](const std::vector<std::vector<double>>& vals) {
    std::vector<std::vector<ad::Var>> out;
    for (const auto& grp : vals) {
      std::vector<ad::Var> g;
      for (double v : grp) g.push_back(ad::Var::constant(v));
      out.push_back(g);
    }
    return out;
  };
  CHECK(instance_domain_loss_ad(d, wrap(det), wrap(reid), lambda).value()[0] ==
        doctest::Approx(instance_domain_loss(d, det, reid, lambda)).epsilon(1e-12));

  std::vector<ad::Var> img{ad::Var::constant(0.9), ad::Var::constant(0.2)};
  CHECK(bce_domain_loss(img, d).value()[0] ==
        doctest::Approx(image_domain_loss({{0.9}, {0.2}}, d)).epsilon(1e-12));

  std::vector<std::vector<ad::Var>> inst{{ad::Var::constant(0.5)}, {}};
  CHECK(consistency_regularizer_ad(img, inst).value()[0] ==
        doctest::Approx(consistency_regularizer({0.9, 0.2}, {{0.5}, {}})).epsilon(1e-12));
}
