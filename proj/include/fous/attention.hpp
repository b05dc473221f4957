#pragma once

#include "fous/autodiff.hpp"

#include <cstdint>
#include <vector>

namespace fous {

/// H x W x C activation grid, channel-fastest layout:
/// index = (h * W + w) * C + c.
struct FeatureMap {
  ad::Var data;
  long h = 0, w = 0, c = 0;

  FeatureMap() = default;
  FeatureMap(ad::Var d, long H, long W, long C);
  long spatial() const { return h * w; }
};

FeatureMap make_feature_map(const ad::Array& values, long h, long w, long c,
                            bool trainable = false);

/// Learnable state of one attention branch: the fusion coefficients
/// alpha/beta plus the two grouped transforms with their normalization
/// scale/shift. Spatial weights are tied to the H*W the params were
/// built for.
struct AttentionParams {
  long channels = 0;
  long spatial = 0;       // H*W the spatial-driven weights were sized for
  long channel_groups = 2;
  long spatial_groups = 2;

  ad::Var alpha;  // length C
  ad::Var beta;   // length C

  // Channel-driven interaction: per group, a (2C/g_c) x out_g weight and
  // per-output-channel norm scale/shift.
  std::vector<ad::Var> cdii_weights;
  std::vector<ad::Var> cdii_gamma;
  std::vector<ad::Var> cdii_shift;
  std::vector<long> cdii_out_channels;

  // Spatial-driven interaction: per group, a (HW/g_s) x (HW/g_s) weight and
  // scalar norm scale/shift.
  std::vector<ad::Var> sdii_weights;
  std::vector<ad::Var> sdii_gamma;
  std::vector<ad::Var> sdii_shift;

  std::vector<ad::Var> parameters() const;
};

/// Builds params for a map of the given geometry. Group counts of 0 pick
/// the default: 2 when it divides the grouped axis, 1 otherwise. Explicit
/// non-dividing counts throw "invalid grouping".
AttentionParams init_attention_params(long h, long w, long c, std::uint64_t seed,
                                      long channel_groups = 0,
                                      long spatial_groups = 0);

inline constexpr long kSpatialCovarianceCap = 4096;

// Pooling statistics used by information aggregation. Exposed separately
// so their algebraic properties can be checked in isolation.
ad::Var channel_gap(const FeatureMap& x);  // length C
ad::Var spatial_gap(const FeatureMap& x);  // length H*W

ad::Var cross_channel_covariance(const FeatureMap& x);  // C x C
ad::Var cross_spatial_covariance(const FeatureMap& x);  // HW x HW

/// Information aggregation: interleaved concat of the channel-level and
/// spatial-level branches, H x W x 2C.
FeatureMap aggregate_information(const FeatureMap& x);

/// Information interaction: alpha * f_cdii + beta * f_sdii, H x W x C.
FeatureMap interact_information(const FeatureMap& xcs, const AttentionParams& params);

/// x gated by sigmoid(interact(aggregate(x))).
FeatureMap apply_attention(const FeatureMap& x, const AttentionParams& params);

/// Multi-branch variant: channels split into `branches` contiguous
/// sub-features, each gated by its own params, then re-concatenated.
FeatureMap apply_attention_branched(const FeatureMap& x,
                                    const std::vector<AttentionParams>& branch_params);

}  // namespace fous
