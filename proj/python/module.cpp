#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fous/alignment.hpp"
#include "fous/attention.hpp"
#include "fous/memory.hpp"
#include "fous/metrics.hpp"
#include "fous/prototypes.hpp"
#include "fous/synthetic.hpp"

namespace py = pybind11;
using namespace fous;

namespace {

using Cube = py::array_t<double, py::array::c_style | py::array::forcecast>;

FeatureMap map_from_numpy(const Cube& x) {
  if (x.ndim() != 3) throw std::invalid_argument("expected an H x W x C array");
  const long h = x.shape(0), w = x.shape(1), c = x.shape(2);
  ad::Array values = Eigen::Map<const ad::Array>(x.data(), h * w * c);
  return make_feature_map(values, h, w, c);
}

py::array_t<double> numpy_from_map(const FeatureMap& fm) {
  py::array_t<double> out({fm.h, fm.w, fm.c});
  Eigen::Map<ad::Array>(out.mutable_data(), fm.data.size()) = fm.data.value();
  return out;
}

Eigen::MatrixXd matrix_from_var(const ad::Var& v) {
  const long r = v.shape()[0], c = v.shape()[1];
  return Eigen::Map<const Matrix>(v.value().data(), r, c);
}

std::vector<InstanceFeature> features_from_matrix(const Matrix& rows) {
  std::vector<InstanceFeature> out;
  for (long i = 0; i < rows.rows(); ++i)
    out.push_back(make_instance_feature(rows.row(i).transpose(), i, 0));
  return out;
}

using PyBox = std::tuple<double, double, double, double>;

Box box_from_tuple(const PyBox& b) {
  return {std::get<0>(b), std::get<1>(b), std::get<2>(b), std::get<3>(b)};
}

}  // namespace

PYBIND11_MODULE(_fous, m) {
  m.doc() = "Unsupervised person-search building blocks";

  m.def("cross_channel_covariance",
        [](const Cube& x) { return matrix_from_var(cross_channel_covariance(map_from_numpy(x))); },
        py::arg("feature_map"));
  m.def("cross_spatial_covariance",
        [](const Cube& x) { return matrix_from_var(cross_spatial_covariance(map_from_numpy(x))); },
        py::arg("feature_map"));
  m.def("apply_attention",
        [](const Cube& x, std::uint64_t seed) {
          FeatureMap fm = map_from_numpy(x);
          AttentionParams params = init_attention_params(fm.h, fm.w, fm.c, seed);
          return numpy_from_map(apply_attention(fm, params));
        },
        py::arg("feature_map"), py::arg("seed") = 0);

  m.def("balance_factor", &balance_factor, py::arg("n_source"), py::arg("n_target"));
  m.def("image_domain_loss", &image_domain_loss, py::arg("patch_predictions"),
        py::arg("domain_labels"));
  m.def("instance_domain_loss", &instance_domain_loss, py::arg("domain_labels"),
        py::arg("predictions_det"), py::arg("predictions_reid"), py::arg("lambda_"));
  m.def("consistency_regularizer", &consistency_regularizer,
        py::arg("image_level_predictions"), py::arg("instance_level_predictions"));

  m.def("init_source_prototypes",
        [](const Matrix& features, const std::vector<long>& labels) {
          PrototypeBank bank = init_source_prototypes(features_from_matrix(features), labels);
          return std::make_pair(Matrix(bank.vectors), bank.labels);
        },
        py::arg("features"), py::arg("labels"));
  m.def("sample_random_prototypes",
        [](const Matrix& features, long n_random, std::uint64_t seed) {
          PrototypeBank bank =
              sample_random_prototypes(features_from_matrix(features), n_random, seed);
          return std::make_pair(Matrix(bank.vectors), bank.labels);
        },
        py::arg("features"), py::arg("n_random"), py::arg("seed") = 0);
  m.def("assign_pseudo_labels",
        [](const Matrix& features, const Matrix& prototypes,
           const std::vector<long>& prototype_labels) {
          PrototypeBank bank;
          bank.vectors = prototypes;
          bank.labels = prototype_labels;
          DistanceCounter counter;
          PseudoLabelSet set =
              assign_pseudo_labels(features_from_matrix(features), bank, counter);
          std::vector<long> labels;
          std::vector<double> distances;
          for (const PseudoLabel& p : set.assignments) {
            labels.push_back(p.label);
            distances.push_back(p.distance);
          }
          return std::make_tuple(labels, distances, counter.evaluations);
        },
        py::arg("features"), py::arg("prototypes"), py::arg("prototype_labels"));

  m.def("cluster_contrastive_loss",
        [](const Vector& query, const Matrix& centroids, const std::vector<long>& labels,
           long positive_label, double tau) {
          ClusterMemory mem;
          mem.centroids = centroids;
          mem.labels = labels;
          mem.tau = tau;
          return cluster_contrastive_loss(make_instance_feature(query), mem, positive_label);
        },
        py::arg("query"), py::arg("centroids"), py::arg("labels"),
        py::arg("positive_label"), py::arg("tau") = 0.05);
  m.def("instance_invariance_loss",
        [](const Matrix& entries, const std::vector<std::vector<int>>& masks, double tau) {
          InstanceMemory mem;
          mem.entries = entries;
          return instance_invariance_loss(mem, masks, tau);
        },
        py::arg("entries"), py::arg("masks"), py::arg("tau") = 0.05);
  m.def("total_loss", &total_loss, py::arg("l_ins"), py::arg("l_c_t"), py::arg("l_c_s"),
        py::arg("l_t_e"), py::arg("l_s_e"));

  m.def("evaluate_detection",
        [](const std::vector<std::vector<std::tuple<double, double, double, double, double>>>&
               predictions,
           const std::vector<std::vector<PyBox>>& ground_truth, double iou_threshold) {
          std::vector<std::vector<Proposal>> preds(predictions.size());
          for (size_t s = 0; s < predictions.size(); ++s)
            for (const auto& p : predictions[s])
              preds[s].push_back({{std::get<0>(p), std::get<1>(p), std::get<2>(p),
                                   std::get<3>(p)},
                                  std::get<4>(p),
                                  -1});
          std::vector<std::vector<Box>> gt(ground_truth.size());
          for (size_t s = 0; s < ground_truth.size(); ++s)
            for (const auto& b : ground_truth[s]) gt[s].push_back(box_from_tuple(b));
          return evaluate_detection(preds, gt, iou_threshold);
        },
        py::arg("predictions"), py::arg("ground_truth"), py::arg("iou_threshold") = 0.5);

  m.def("iou",
        [](const PyBox& a, const PyBox& b) { return iou(box_from_tuple(a), box_from_tuple(b)); },
        py::arg("a"), py::arg("b"));
}
