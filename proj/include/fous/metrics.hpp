#pragma once

#include "fous/synthetic.hpp"

#include <Eigen/Dense>

#include <vector>

namespace fous {

/// Single-class detection AP (precision envelope, IoU >= threshold) and
/// recall. Outer index: scene. Throws "no ground truth" when every scene
/// is empty.
std::pair<double, double> evaluate_detection(
    const std::vector<std::vector<Proposal>>& predictions,
    const std::vector<std::vector<Box>>& ground_truth, double iou_threshold = 0.5);

struct GalleryItem {
  long scene_index = -1;
  Box box;
  double score = 0.0;
  Eigen::VectorXd feature;
};

struct QueryItem {
  long scene_index = -1;
  long identity = -1;
  Eigen::VectorXd feature;
};

struct QueryResult {
  long identity = -1;
  double ap = 0.0;
  bool top1 = false;
  bool excluded = false;  // identity absent from the gallery
};

struct EvalReport {
  double map = 0.0;
  double top1 = 0.0;
  double det_ap = 0.0;
  double det_recall = 0.0;
  long queries_evaluated = 0;
  long queries_excluded = 0;
  std::vector<QueryResult> per_query;
};

/// Retrieval metrics over detected gallery boxes ranked by feature
/// similarity. A detection matches a query when it overlaps (IoU >= 0.5 by
/// default) a ground-truth box carrying the query identity. The query's own
/// scene is not part of its gallery.
EvalReport person_search_metrics(const std::vector<QueryItem>& queries,
                                 const std::vector<GalleryItem>& gallery,
                                 const std::vector<SceneSample>& scenes,
                                 double iou_threshold = 0.5);

}  // namespace fous
