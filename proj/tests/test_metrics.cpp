#include <doctest.h>

#include "fous/metrics.hpp"

#include <cmath>
#include <stdexcept>

using namespace fous;

namespace {

Box box(double x1, double y1, double x2, double y2) { return {x1, y1, x2, y2}; }

Eigen::VectorXd vec2(double a, double b) {
  Eigen::VectorXd v(2);
  v << a, b;
  return v;
}

SceneSample scene_with(const std::vector<Box>& boxes, const std::vector<long>& ids) {
  SceneSample s;
  s.height = 96;
  s.width = 160;
  s.boxes = boxes;
  s.identities = ids;
  return s;
}

}  // namespace

TEST_CASE("detection: predictions identical to ground truth score perfectly") {
  std::vector<std::vector<Box>> gt = {
      {box(0, 0, 10, 10), box(20, 0, 30, 10)},
      {box(5, 5, 25, 45)},
  };
  std::vector<std::vector<Proposal>> preds(2);
  for (size_t s = 0; s < gt.size(); ++s)
    for (size_t g = 0; g < gt[s].size(); ++g)
      preds[s].push_back({gt[s][g], 1.0, static_cast<long>(g)});

  auto [ap, recall] = evaluate_detection(preds, gt);
  CHECK(ap == doctest::Approx(1.0));
  CHECK(recall == doctest::Approx(1.0));
}

TEST_CASE("detection: no predictions gives zero AP and recall") {
  std::vector<std::vector<Box>> gt = {{box(0, 0, 10, 10)}};
  std::vector<std::vector<Proposal>> preds(1);
  auto [ap, recall] = evaluate_detection(preds, gt);
  CHECK(ap == 0.0);
  CHECK(recall == 0.0);
}

TEST_CASE("detection: empty ground truth is rejected") {
  std::vector<std::vector<Box>> gt = {{}, {}};
  std::vector<std::vector<Proposal>> preds(2);
  CHECK_THROWS_WITH_AS(evaluate_detection(preds, gt), "no ground truth",
                       std::invalid_argument);
}

TEST_CASE("detection: 3 ground truth, 4 predictions, 2 matches, staircase by hand") {
  // one scene, GT at A, B, C
  std::vector<std::vector<Box>> gt = {
      {box(0, 0, 10, 10), box(20, 0, 30, 10), box(40, 0, 50, 10)}};
  std::vector<std::vector<Proposal>> preds(1);
  preds[0].push_back({box(0, 0, 10, 10), 0.9, 0});    // TP on A
  preds[0].push_back({box(60, 0, 70, 10), 0.8, -1});  // FP
  preds[0].push_back({box(20, 0, 30, 10), 0.7, 1});   // TP on B
  preds[0].push_back({box(80, 0, 90, 10), 0.6, -1});  // FP

  // precision at ranks: 1, 1/2, 2/3, 1/2; recall: 1/3, 1/3, 2/3, 2/3
  // envelope: 1, 2/3, 2/3, 1/2 -> AP = (1/3)*1 + (1/3)*(2/3) = 5/9
  auto [ap, recall] = evaluate_detection(preds, gt);
  CHECK(ap == doctest::Approx(5.0 / 9.0));
  CHECK(recall == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("detection: duplicate hits on one ground-truth box count once") {
  std::vector<std::vector<Box>> gt = {{box(0, 0, 10, 10)}};
  std::vector<std::vector<Proposal>> preds(1);
  preds[0].push_back({box(0, 0, 10, 10), 0.9, 0});
  preds[0].push_back({box(0, 0, 10, 10), 0.8, 0});  // same box again
  auto [ap, recall] = evaluate_detection(preds, gt);
  CHECK(ap == doctest::Approx(1.0));
  CHECK(recall == doctest::Approx(1.0));
}

TEST_CASE("search metrics: hand-built 4-image gallery, 2 queries") {
  // gallery scenes 0..3, query scenes 4 and 5
  std::vector<SceneSample> scenes;
  scenes.push_back(scene_with({box(0, 0, 10, 30)}, {1}));
  scenes.push_back(scene_with({box(0, 0, 10, 30)}, {2}));
  scenes.push_back(scene_with({box(0, 0, 10, 30)}, {1}));
  scenes.push_back(scene_with({box(0, 0, 10, 30)}, {3}));
  scenes.push_back(scene_with({box(0, 0, 10, 30)}, {1}));  // query scene, id 1
  scenes.push_back(scene_with({box(0, 0, 10, 30)}, {2}));  // query scene, id 2

  std::vector<GalleryItem> gallery = {
      {0, box(0, 0, 10, 30), 1.0, vec2(0.9, 0.1)},
      {1, box(0, 0, 10, 30), 1.0, vec2(0.5, 0.5)},
      {2, box(0, 0, 10, 30), 1.0, vec2(0.7, 0.3)},
      {3, box(0, 0, 10, 30), 1.0, vec2(0.2, 0.8)},
  };
  std::vector<QueryItem> queries = {
      {4, 1, vec2(1.0, 0.0)},
      {5, 2, vec2(0.0, 1.0)},
  };

  // query 1 ranking: scenes 0, 2, 1, 3 -> hits at ranks 1 and 2 of 2 positives
  //   AP = (1/1 + 2/2) / 2 = 1.0, top-1 hit
  // query 2 ranking: scenes 3, 1, 2, 0 -> hit at rank 2 of 1 positive
  //   AP = (1/2) / 1 = 0.5, top-1 miss
  EvalReport report = person_search_metrics(queries, gallery, scenes);
  REQUIRE(report.queries_evaluated == 2);
  CHECK(report.per_query[0].ap == doctest::Approx(1.0));
  CHECK(report.per_query[0].top1);
  CHECK(report.per_query[1].ap == doctest::Approx(0.5));
  CHECK_FALSE(report.per_query[1].top1);
  CHECK(report.map == doctest::Approx(0.75));
  CHECK(report.top1 == doctest::Approx(0.5));
}

TEST_CASE("search metrics: one-hot features with exact boxes retrieve perfectly") {
  std::vector<SceneSample> scenes;
  scenes.push_back(scene_with({box(0, 0, 10, 30), box(40, 0, 50, 30)}, {1, 2}));
  scenes.push_back(scene_with({box(0, 0, 10, 30), box(40, 0, 50, 30)}, {2, 3}));
  scenes.push_back(scene_with({box(0, 0, 10, 30), box(40, 0, 50, 30)}, {3, 1}));

  auto onehot = [](long id) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(3);
    v[id - 1] = 1.0;
    return v;
  };
  std::vector<GalleryItem> gallery;
  for (long s = 0; s < 3; ++s)
    for (size_t b = 0; b < scenes[static_cast<size_t>(s)].boxes.size(); ++b)
      gallery.push_back({s, scenes[static_cast<size_t>(s)].boxes[b], 1.0,
                         onehot(scenes[static_cast<size_t>(s)].identities[b])});

  std::vector<QueryItem> queries = {
      {0, 1, onehot(1)},  // id 1 also in scene 2
      {1, 2, onehot(2)},  // id 2 also in scene 0
      {2, 3, onehot(3)},  // id 3 also in scene 1
  };
  EvalReport report = person_search_metrics(queries, gallery, scenes);
  CHECK(report.queries_evaluated == 3);
  CHECK(report.map == doctest::Approx(1.0));
  CHECK(report.top1 == doctest::Approx(1.0));
}

TEST_CASE("search metrics: queries with no gallery occurrence are excluded") {
  std::vector<SceneSample> scenes;
  scenes.push_back(scene_with({box(0, 0, 10, 30)}, {1}));
  scenes.push_back(scene_with({box(0, 0, 10, 30)}, {7}));  // query scene

  std::vector<GalleryItem> gallery = {{0, box(0, 0, 10, 30), 1.0, vec2(1.0, 0.0)}};
  std::vector<QueryItem> queries = {{1, 7, vec2(1.0, 0.0)}};

  EvalReport report = person_search_metrics(queries, gallery, scenes);
  CHECK(report.queries_evaluated == 0);
  CHECK(report.queries_excluded == 1);
  REQUIRE(report.per_query.size() == 1);
  CHECK(report.per_query[0].excluded);
}

TEST_CASE("search metrics: mAP does not increase when distractors join the gallery") {
  std::vector<SceneSample> scenes;
  scenes.push_back(scene_with({box(0, 0, 10, 30)}, {1}));
  scenes.push_back(scene_with({box(0, 0, 10, 30)}, {2}));
  scenes.push_back(scene_with({box(0, 0, 10, 30)}, {1}));  // query scene

  std::vector<GalleryItem> gallery = {
      {0, box(0, 0, 10, 30), 1.0, vec2(0.8, 0.2)},
      {1, box(0, 0, 10, 30), 1.0, vec2(0.3, 0.7)},
  };
  std::vector<QueryItem> queries = {{2, 1, vec2(1.0, 0.0)}};

  const double base = person_search_metrics(queries, gallery, scenes).map;

  // background detections whose features outrank the true match
  std::vector<GalleryItem> crowded = gallery;
  crowded.push_back({1, box(100, 10, 120, 50), 0.9, vec2(1.0, 0.0)});
  crowded.push_back({0, box(100, 10, 120, 50), 0.9, vec2(0.95, 0.05)});
  const double with_distractors = person_search_metrics(queries, crowded, scenes).map;

  CHECK(base == doctest::Approx(1.0));
  CHECK(with_distractors <= base + 1e-12);
  CHECK(with_distractors < base);  // these distractors rank first by construction
}

TEST_CASE("search metrics: the query's own scene never contributes matches") {
  std::vector<SceneSample> scenes;
  scenes.push_back(scene_with({box(0, 0, 10, 30)}, {1}));
  scenes.push_back(scene_with({box(0, 0, 10, 30)}, {1}));  // query scene

  std::vector<GalleryItem> gallery = {
      {0, box(0, 0, 10, 30), 1.0, vec2(0.0, 1.0)},  // poor similarity, only valid match
      {1, box(0, 0, 10, 30), 1.0, vec2(1.0, 0.0)},  // perfect but in the query scene
  };
  std::vector<QueryItem> queries = {{1, 1, vec2(1.0, 0.0)}};

  EvalReport report = person_search_metrics(queries, gallery, scenes);
  REQUIRE(report.queries_evaluated == 1);
  CHECK(report.per_query[0].ap == doctest::Approx(1.0));  // 1 positive, ranked alone
  CHECK(report.per_query[0].top1);
}
