#include "fous/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fous {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double clamp_prob(double p) {
  return std::min(std::max(p, kProbClamp), 1.0 - kProbClamp);
}

double bce(double p, int d) {
  p = clamp_prob(p);
  return -(d * std::log(p) + (1 - d) * std::log(1.0 - p));
}

// Clamp to [eps, 1-eps] built from relu so gradients pass through in-range.
ad::Var clamp_prob_ad(const ad::Var& p) {
  ad::Var lo = ad::add_scalar(ad::relu(ad::add_scalar(p, -kProbClamp)), kProbClamp);
  ad::Var hi = ad::add_scalar(
      ad::neg(ad::relu(ad::add_scalar(ad::neg(lo), 1.0 - kProbClamp))),
      1.0 - kProbClamp);
  return hi;
}

}  // namespace

double balance_factor(long n_source, long n_target) {
  if (n_source < 1 || n_target < 1) throw std::invalid_argument("empty domain");
  const double hi = static_cast<double>(std::max(n_source, n_target));
  const double lo = static_cast<double>(std::min(n_source, n_target));
  const int sign = (n_target > n_source) - (n_target < n_source);
  const double lambda = sigmoid(4.0 * sign * (hi / lo - 1.0));
  // keep the open interval (0,1) even when the sigmoid saturates in double
  return std::min(std::max(lambda, 1e-15), 1.0 - 1e-15);
}

double image_domain_loss(const std::vector<std::vector<double>>& patch_predictions,
                         const std::vector<int>& domain_labels) {
  if (patch_predictions.size() != domain_labels.size())
    throw std::invalid_argument("one patch grid per image expected");
  double loss = 0.0;
  for (size_t i = 0; i < patch_predictions.size(); ++i) {
    const auto& patches = patch_predictions[i];
    if (patches.empty()) throw std::invalid_argument("empty patch grid");
    double p = 0.0;
    for (double v : patches) p += v;
    p /= static_cast<double>(patches.size());
    loss += bce(p, domain_labels[i]);
  }
  return loss;
}

double instance_domain_loss(const std::vector<int>& domain_labels,
                            const std::vector<std::vector<double>>& predictions_det,
                            const std::vector<std::vector<double>>& predictions_reid,
                            double lambda) {
  if (predictions_det.size() != domain_labels.size() ||
      predictions_reid.size() != domain_labels.size())
    throw std::invalid_argument("instance/prediction mismatch");
  double det = 0.0, reid = 0.0;
  for (size_t i = 0; i < domain_labels.size(); ++i) {
    for (double p : predictions_det[i]) det += bce(p, domain_labels[i]);
    for (double p : predictions_reid[i]) reid += bce(p, domain_labels[i]);
  }
  return lambda * det + (1.0 - lambda) * reid;
}

double consistency_regularizer(const std::vector<double>& image_level_predictions,
                               const std::vector<std::vector<double>>& instance_level_predictions) {
  if (image_level_predictions.size() != instance_level_predictions.size())
    throw std::invalid_argument("instance/prediction mismatch");
  double total = 0.0;
  for (size_t i = 0; i < image_level_predictions.size(); ++i) {
    const auto& inst = instance_level_predictions[i];
    if (inst.empty()) continue;
    double m = 0.0;
    for (double v : inst) m += v;
    m /= static_cast<double>(inst.size());
    const double d = image_level_predictions[i] - m;
    total += d * d;
  }
  return total;
}

ad::Var bce_term(const ad::Var& p, int label) {
  ad::Var pc = clamp_prob_ad(p);
  if (label == 1) return ad::neg(ad::log_op(pc));
  return ad::neg(ad::log_op(ad::add_scalar(ad::neg(pc), 1.0)));
}

ad::Var bce_domain_loss(const std::vector<ad::Var>& mean_probs,
                        const std::vector<int>& domain_labels) {
  if (mean_probs.size() != domain_labels.size())
    throw std::invalid_argument("one prediction per image expected");
  ad::Var total = ad::Var::constant(0.0);
  for (size_t i = 0; i < mean_probs.size(); ++i)
    total = total + bce_term(mean_probs[i], domain_labels[i]);
  return total;
}

ad::Var instance_domain_loss_ad(const std::vector<int>& domain_labels,
                                const std::vector<std::vector<ad::Var>>& det_probs,
                                const std::vector<std::vector<ad::Var>>& reid_probs,
                                double lambda) {
  if (det_probs.size() != domain_labels.size() ||
      reid_probs.size() != domain_labels.size())
    throw std::invalid_argument("instance/prediction mismatch");
  ad::Var det = ad::Var::constant(0.0);
  ad::Var reid = ad::Var::constant(0.0);
  for (size_t i = 0; i < domain_labels.size(); ++i) {
    for (const auto& p : det_probs[i]) det = det + bce_term(p, domain_labels[i]);
    for (const auto& p : reid_probs[i]) reid = reid + bce_term(p, domain_labels[i]);
  }
  return ad::mul_scalar(det, lambda) + ad::mul_scalar(reid, 1.0 - lambda);
}

ad::Var consistency_regularizer_ad(const std::vector<ad::Var>& image_probs,
                                   const std::vector<std::vector<ad::Var>>& instance_probs) {
  if (image_probs.size() != instance_probs.size())
    throw std::invalid_argument("instance/prediction mismatch");
  ad::Var total = ad::Var::constant(0.0);
  for (size_t i = 0; i < image_probs.size(); ++i) {
    const auto& inst = instance_probs[i];
    if (inst.empty()) continue;
    ad::Var m = ad::Var::constant(0.0);
    for (const auto& p : inst) m = m + p;
    m = ad::mul_scalar(m, 1.0 / static_cast<double>(inst.size()));
    ad::Var d = image_probs[i] - m;
    total = total + d * d;
  }
  return total;
}

}  // namespace fous
