#pragma once

#include "fous/autodiff.hpp"

#include <vector>

namespace fous {

inline constexpr double kProbClamp = 1e-7;

/// Sigmoid balance between detection and reid alignment:
/// sigmoid(4 * sign(n_t - n_s) * (max/min - 1)). Throws "empty domain" on
/// non-positive counts.
double balance_factor(long n_source, long n_target);

/// Binary cross-entropy sum over images; p_i is the mean of the image's
/// patch probabilities, clamped to [eps, 1-eps].
double image_domain_loss(const std::vector<std::vector<double>>& patch_predictions,
                         const std::vector<int>& domain_labels);

/// Instance-level alignment loss, lambda-weighted over the detection and
/// reid branches. Outer index: image; inner: instances of that image.
double instance_domain_loss(const std::vector<int>& domain_labels,
                            const std::vector<std::vector<double>>& predictions_det,
                            const std::vector<std::vector<double>>& predictions_reid,
                            double lambda);

/// Squared L2 gap between each image-level prediction and the mean of its
/// instance-level predictions; images without instances contribute 0.
double consistency_regularizer(const std::vector<double>& image_level_predictions,
                               const std::vector<std::vector<double>>& instance_level_predictions);

// Autodiff counterparts used inside the training graph. Probabilities are
// clamped the same way before the log terms.
ad::Var bce_domain_loss(const std::vector<ad::Var>& mean_probs,
                        const std::vector<int>& domain_labels);
ad::Var instance_domain_loss_ad(const std::vector<int>& domain_labels,
                                const std::vector<std::vector<ad::Var>>& det_probs,
                                const std::vector<std::vector<ad::Var>>& reid_probs,
                                double lambda);
ad::Var consistency_regularizer_ad(const std::vector<ad::Var>& image_probs,
                                   const std::vector<std::vector<ad::Var>>& instance_probs);

/// Clamped -[d log p + (1-d) log(1-p)] on a scalar Var.
ad::Var bce_term(const ad::Var& p, int label);

}  // namespace fous
