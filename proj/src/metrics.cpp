#include "fous/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace fous {

namespace {

// Area under the precision envelope over the score-ranked TP/FP sequence.
double envelope_ap(const std::vector<char>& is_tp, long total_positives) {
  if (total_positives == 0) return 0.0;
  std::vector<double> precision, recall;
  long tp = 0, seen = 0;
  for (char t : is_tp) {
    ++seen;
    if (t) ++tp;
    precision.push_back(static_cast<double>(tp) / seen);
    recall.push_back(static_cast<double>(tp) / total_positives);
  }
  // make precision monotone nonincreasing from the right
  for (long i = static_cast<long>(precision.size()) - 2; i >= 0; --i)
    precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

}  // namespace

std::pair<double, double> evaluate_detection(
    const std::vector<std::vector<Proposal>>& predictions,
    const std::vector<std::vector<Box>>& ground_truth, double iou_threshold) {
  if (predictions.size() != ground_truth.size())
    throw std::invalid_argument("predictions/ground truth scene count mismatch");
  long total_gt = 0;
  for (const auto& gt : ground_truth) total_gt += static_cast<long>(gt.size());
  if (total_gt == 0) throw std::invalid_argument("no ground truth");

  struct Flat {
    double score;
    long scene;
    long index;
  };
  std::vector<Flat> all;
  for (size_t s = 0; s < predictions.size(); ++s)
    for (size_t i = 0; i < predictions[s].size(); ++i)
      all.push_back({predictions[s][i].score, static_cast<long>(s), static_cast<long>(i)});
  std::stable_sort(all.begin(), all.end(), [](const Flat& a, const Flat& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.scene != b.scene) return a.scene < b.scene;
    return a.index < b.index;
  });

  std::vector<std::vector<char>> gt_used(ground_truth.size());
  for (size_t s = 0; s < ground_truth.size(); ++s)
    gt_used[s].assign(ground_truth[s].size(), 0);

  std::vector<char> is_tp;
  long matched = 0;
  for (const Flat& f : all) {
    const Box& p = predictions[static_cast<size_t>(f.scene)][static_cast<size_t>(f.index)].box;
    long best = -1;
    double best_iou = iou_threshold;
    const auto& gts = ground_truth[static_cast<size_t>(f.scene)];
    for (size_t g = 0; g < gts.size(); ++g) {
      if (gt_used[static_cast<size_t>(f.scene)][g]) continue;
      const double v = iou(p, gts[g]);
      if (v >= best_iou) {
        best_iou = v;
        best = static_cast<long>(g);
      }
    }
    if (best >= 0) {
      gt_used[static_cast<size_t>(f.scene)][static_cast<size_t>(best)] = 1;
      is_tp.push_back(1);
      ++matched;
    } else {
      is_tp.push_back(0);
    }
  }

  const double ap = envelope_ap(is_tp, total_gt);
  const double recall = static_cast<double>(matched) / total_gt;
  return {ap, recall};
}

EvalReport person_search_metrics(const std::vector<QueryItem>& queries,
                                 const std::vector<GalleryItem>& gallery,
                                 const std::vector<SceneSample>& scenes,
                                 double iou_threshold) {
  EvalReport report;
  double ap_sum = 0.0;
  long top1_hits = 0;

  for (const QueryItem& q : queries) {
    QueryResult result;
    result.identity = q.identity;

    // ground-truth occurrences of this identity outside the query scene
    long total_positives = 0;
    for (size_t s = 0; s < scenes.size(); ++s) {
      if (static_cast<long>(s) == q.scene_index) continue;
      for (long id : scenes[s].identities)
        if (id == q.identity) ++total_positives;
    }
    if (total_positives == 0) {
      result.excluded = true;
      report.per_query.push_back(result);
      ++report.queries_excluded;
      continue;
    }

    struct Ranked {
      double sim;
      long gallery_index;
    };
    std::vector<Ranked> ranked;
    for (size_t g = 0; g < gallery.size(); ++g) {
      if (gallery[g].scene_index == q.scene_index) continue;
      ranked.push_back({q.feature.dot(gallery[g].feature), static_cast<long>(g)});
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
      if (a.sim != b.sim) return a.sim > b.sim;
      return a.gallery_index < b.gallery_index;
    });

    // greedy per-GT matching in rank order: the first detection on a
    // ground-truth occurrence counts, later duplicates rank as negatives
    std::vector<std::vector<char>> gt_used(scenes.size());
    for (size_t s = 0; s < scenes.size(); ++s) gt_used[s].assign(scenes[s].boxes.size(), 0);

    long tp = 0, seen = 0;
    double ap = 0.0;
    bool first_checked = false;
    for (const Ranked& r : ranked) {
      const GalleryItem& item = gallery[static_cast<size_t>(r.gallery_index)];
      const auto& scene = scenes[static_cast<size_t>(item.scene_index)];
      bool hit = false;
      for (size_t b = 0; b < scene.boxes.size(); ++b) {
        if (scene.identities[b] != q.identity) continue;
        if (gt_used[static_cast<size_t>(item.scene_index)][b]) continue;
        if (iou(item.box, scene.boxes[b]) >= iou_threshold) {
          gt_used[static_cast<size_t>(item.scene_index)][b] = 1;
          hit = true;
          break;
        }
      }
      ++seen;
      if (!first_checked) {
        result.top1 = hit;
        first_checked = true;
      }
      if (hit) {
        ++tp;
        ap += static_cast<double>(tp) / seen;
      }
    }
    result.ap = ap / total_positives;

    ap_sum += result.ap;
    if (result.top1) ++top1_hits;
    ++report.queries_evaluated;
    report.per_query.push_back(result);
  }

  if (report.queries_evaluated > 0) {
    report.map = ap_sum / report.queries_evaluated;
    report.top1 = static_cast<double>(top1_hits) / report.queries_evaluated;
  }
  return report;
}

}  // namespace fous
