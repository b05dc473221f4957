#pragma once

#include "fous/attention.hpp"
#include "fous/autodiff.hpp"
#include "fous/synthetic.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace fous {

/// 2-D convolution over channel-fastest H x W x C maps, im2col + matmul.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(long in_c, long out_c, long kernel, long stride, long pad,
         std::mt19937_64& rng);
  FeatureMap forward(const FeatureMap& x) const;

  ad::Var weight;  // (k*k*in_c) x out_c
  ad::Var bias;    // out_c

 private:
  long in_c_ = 0, out_c_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
  // im2col index cache keyed by input H,W
  mutable std::map<std::pair<long, long>, std::shared_ptr<const std::vector<long>>> idx_cache_;
};

class Linear {
 public:
  Linear() = default;
  Linear(long in_dim, long out_dim, std::mt19937_64& rng);
  ad::Var forward(const ad::Var& rows) const;  // {n, in} -> {n, out}

  ad::Var weight;  // in x out
  ad::Var bias;    // out
};

ad::Var l2_normalize_rows(const ad::Var& rows);

struct ModelConfig {
  long image_height = 96;
  long image_width = 160;
  long backbone_channels = 32;
  long feature_dim = 64;
  long attention_branches = 1;
  long stride = 8;
  std::uint64_t seed = 7;
};

/// Backbone + attention + embedding head + domain classifiers.
struct SearchModel {
  ModelConfig cfg;
  Conv2d conv1, conv2, conv3, conv4;
  std::vector<AttentionParams> attention;
  Linear embed;                       // backbone_channels -> feature_dim
  Conv2d patch_cls1, patch_cls2;      // 1x1 patch domain classifier
  Linear det_cls1, det_cls2;          // pooled-feature domain classifier (det branch)
  Linear reid_cls1, reid_cls2;        // embedding domain classifier (reid branch)

  explicit SearchModel(const ModelConfig& config);

  FeatureMap backbone(const SceneSample& scene) const;
  FeatureMap attend(const FeatureMap& fm) const;

  /// Mean sigmoid patch probability of the (gradient-reversed) map plus the
  /// per-patch grid.
  std::pair<ad::Var, ad::Var> patch_domain_probs(const FeatureMap& fm) const;

  ad::Var det_domain_prob(const ad::Var& pooled) const;   // {1,C} -> scalar prob
  ad::Var reid_domain_prob(const ad::Var& embedding) const;

  /// Region-mean pool of `box` on the map; {1, C}. Returns an invalid Var for
  /// boxes that collapse under the stride mapping.
  ad::Var roi_pool(const FeatureMap& fm, const Box& box) const;

  /// Region pool minus the whole-map pool. Removes the scene-wide activation
  /// component that otherwise dominates every normalized embedding.
  ad::Var centered_roi(const FeatureMap& fm, const Box& box) const;

  /// Pooled region -> projected, L2-normalized embedding {feature_dim}.
  ad::Var embed_pooled(const ad::Var& pooled) const;

  std::vector<std::pair<std::string, ad::Var>> named_parameters() const;
  std::vector<ad::Var> parameters() const;
};

struct ExtractedFeature {
  Eigen::VectorXd vector;  // unit norm
  long box_index = -1;
};

struct ExtractionResult {
  std::vector<ExtractedFeature> features;
  std::vector<long> skipped;  // box indices dropped as degenerate
};

/// Non-differentiating path used for labeling and evaluation.
ExtractionResult extract_instance_features(const SearchModel& model,
                                           const FeatureMap& attended,
                                           const std::vector<Box>& boxes);

inline constexpr double kGradClipNorm = 5.0;

/// SGD with momentum and weight decay over a fixed parameter list.
/// Gradients are jointly rescaled when their global norm exceeds
/// kGradClipNorm; contrastive losses on freshly normalized embeddings
/// spike early in training otherwise.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<ad::Var> params, double lr, double momentum,
               double weight_decay);
  void step(std::uint64_t pass);

  double lr;

 private:
  std::vector<ad::Var> params_;
  std::vector<ad::Array> velocity_;
  double momentum_, weight_decay_;
};

// Checkpoints: single binary file, versioned, named parameter blobs.
struct Checkpoint {
  std::uint32_t format_version = 1;
  long completed_pretrain_epochs = 0;
  long completed_adapt_epochs = 0;
  std::map<std::string, std::pair<std::vector<long>, ad::Array>> blobs;
};

Checkpoint snapshot_model(const SearchModel& model, long pretrain_epochs,
                          long adapt_epochs);
void restore_model(SearchModel& model, const Checkpoint& ckpt);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace fous
