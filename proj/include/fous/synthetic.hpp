#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace fous {

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // pixel coords, x2 > x1, y2 > y1
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
};

double iou(const Box& a, const Box& b);

/// Panoramic scene with ground truth. Image is H x W x 3 in [0,1],
/// channel-fastest layout.
struct SceneSample {
  Eigen::ArrayXd image;
  long height = 0, width = 0;
  std::vector<Box> boxes;
  std::vector<long> identities;
  int domain = 0;  // 0 = source, 1 = target
};

struct SceneConfig {
  long image_height = 96;
  long image_width = 160;
  long identities = 24;       // per domain
  long scenes = 200;          // per domain
  long persons_min = 2;
  long persons_max = 4;
  double domain_shift = 1.0;  // 0 disables the target color/background shift
};

/// Deterministic two-domain benchmark. Source identities and target
/// identities are disjoint; every identity appears in at least two scenes.
std::pair<std::vector<SceneSample>, std::vector<SceneSample>>
generate_synthetic_domain_pair(const SceneConfig& config, std::uint64_t seed);

struct Proposal {
  Box box;
  double score = 0.0;
  long matched_gt = -1;  // index of the jittered GT box, -1 for background
};

/// RPN stand-in: IoU-preserving jitter of the ground-truth boxes plus
/// sampled background boxes with low objectness.
std::vector<Proposal> generate_proposals(const SceneSample& scene, double jitter,
                                         long n_background, std::uint64_t seed);

// Dataset on disk: <dir>/{source,target}/index.jsonl + images/*.ppm.
void write_dataset(const std::string& dir, const std::vector<SceneSample>& source,
                   const std::vector<SceneSample>& target);
std::vector<SceneSample> read_split(const std::string& split_dir);

}  // namespace fous
