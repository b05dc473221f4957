#include "fous/pipeline.hpp"

#include "fous/alignment.hpp"
#include "fous/prototypes.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>

namespace fous {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string epoch_record_json(const EpochRecord& r) {
  json j;
  j["epoch"] = r.epoch;
  j["phase"] = r.phase;
  j["l_ins"] = r.l_ins;
  j["l_c_t"] = r.l_c_t;
  j["l_c_s"] = r.l_c_s;
  j["l_t_e"] = r.l_t_e;
  j["l_s_e"] = r.l_s_e;
  j["total"] = r.total;
  j["pseudo_acc"] = r.pseudo_acc;
  return j.dump();
}

ModelConfig model_config_from(const RunConfig& c) {
  ModelConfig m;
  m.image_height = c.data.image_height;
  m.image_width = c.data.image_width;
  m.backbone_channels = c.backbone_channels;
  m.feature_dim = c.feature_dim;
  m.attention_branches = c.attention_branches;
  m.seed = c.seed;
  return m;
}

double pseudo_label_accuracy(const std::vector<long>& assigned,
                             const std::vector<long>& truth) {
  if (assigned.size() != truth.size())
    throw std::invalid_argument("assignment/truth length mismatch");
  if (assigned.empty()) return 0.0;
  std::map<long, std::map<long, long>> groups;
  for (size_t i = 0; i < assigned.size(); ++i) ++groups[assigned[i]][truth[i]];
  long correct = 0;
  for (const auto& [label, votes] : groups) {
    long best = 0;
    for (const auto& [id, count] : votes) best = std::max(best, count);
    correct += best;
  }
  return static_cast<double>(correct) / static_cast<double>(assigned.size());
}

namespace {

void fisher_yates(std::vector<long>& order, std::mt19937_64& rng) {
  for (long i = static_cast<long>(order.size()) - 1; i > 0; --i) {
    std::uniform_int_distribution<long> d(0, i);
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(d(rng))]);
  }
}

Vector detach(const ad::Var& v) {
  return Eigen::Map<const Vector>(v.value().data(), v.size());
}

// One detected person in the target split: its scene, box, row in the
// per-epoch feature/memory tables, and the withheld true identity used only
// to score the labeling pass.
struct TargetInstance {
  long scene = -1;
  long row = -1;
  Box box;
  long true_identity = -1;
};

struct EpochTables {
  std::vector<InstanceFeature> features;
  std::vector<TargetInstance> instances;
  std::vector<std::vector<long>> rows_by_scene;
};

std::uint64_t proposal_seed(const RunConfig& cfg, long epoch, long scene) {
  return cfg.seed + 7919ull * static_cast<std::uint64_t>(epoch + 1) +
         static_cast<std::uint64_t>(scene);
}

EpochTables extract_target_tables(const SearchModel& model, const RunConfig& cfg,
                                  const std::vector<SceneSample>& target, long epoch) {
  EpochTables t;
  t.rows_by_scene.resize(target.size());
  for (size_t s = 0; s < target.size(); ++s) {
    auto proposals = generate_proposals(target[s], cfg.proposal_jitter, 0,
                                        proposal_seed(cfg, epoch, static_cast<long>(s)));
    std::vector<Box> boxes;
    std::vector<long> ids;
    for (const Proposal& p : proposals) {
      boxes.push_back(p.box);
      ids.push_back(target[s].identities[static_cast<size_t>(p.matched_gt)]);
    }
    FeatureMap fm = model.attend(model.backbone(target[s]));
    ExtractionResult ex = extract_instance_features(model, fm, boxes);
    for (const ExtractedFeature& f : ex.features) {
      const long row = static_cast<long>(t.features.size());
      t.features.push_back(
          make_instance_feature(f.vector, static_cast<long>(s), f.box_index));
      t.instances.push_back({static_cast<long>(s), row, boxes[static_cast<size_t>(f.box_index)],
                             ids[static_cast<size_t>(f.box_index)]});
      t.rows_by_scene[s].push_back(row);
    }
  }
  return t;
}

std::vector<InstanceFeature> extract_source_features(const SearchModel& model,
                                                     const std::vector<SceneSample>& source,
                                                     std::vector<long>& labels_out) {
  std::vector<InstanceFeature> features;
  labels_out.clear();
  for (size_t s = 0; s < source.size(); ++s) {
    FeatureMap fm = model.attend(model.backbone(source[s]));
    ExtractionResult ex = extract_instance_features(model, fm, source[s].boxes);
    for (const ExtractedFeature& f : ex.features) {
      features.push_back(make_instance_feature(f.vector, static_cast<long>(s), f.box_index));
      labels_out.push_back(source[s].identities[static_cast<size_t>(f.box_index)]);
    }
  }
  return features;
}

void append_record(const std::string& run_dir, const EpochRecord& record,
                   std::vector<EpochRecord>& log) {
  std::ofstream out(fs::path(run_dir) / "metrics.jsonl", std::ios::app);
  if (!out) throw std::runtime_error("cannot write metric log in " + run_dir);
  out << epoch_record_json(record) << "\n";
  log.push_back(record);
}

void save_epoch_checkpoint(const std::string& run_dir, const SearchModel& model,
                           long pretrain_done, long adapt_done, Checkpoint& out) {
  out = snapshot_model(model, pretrain_done, adapt_done);
  save_checkpoint((fs::path(run_dir) / "checkpoint.bin").string(), out);
}

// Source-only warmup: contrastive pull toward ground-truth class centroids.
EpochRecord run_pretrain_epoch(SearchModel& model, SgdOptimizer& opt, const RunConfig& cfg,
                               const std::vector<SceneSample>& source, long epoch) {
  std::vector<long> labels;
  std::vector<InstanceFeature> feats = extract_source_features(model, source, labels);
  if (feats.empty()) throw std::runtime_error("no source instances");
  ClusterMemory memory = init_cluster_memory(feats, labels, cfg.tau, cfg.memory_momentum);

  std::vector<long> order(source.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<long>(i);
  std::mt19937_64 rng(cfg.seed ^ (0xabcdull + static_cast<std::uint64_t>(epoch)));
  fisher_yates(order, rng);

  double loss_sum = 0.0;
  long batches = 0;
  const long bs = std::max<long>(1, cfg.batch_size);
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(bs)) {
    ad::Var loss = ad::Var::constant(0.0);
    long count = 0;
    std::vector<std::pair<Vector, long>> fresh;
    for (size_t k = start; k < std::min(order.size(), start + static_cast<size_t>(bs)); ++k) {
      const SceneSample& scene = source[static_cast<size_t>(order[k])];
      FeatureMap fm = model.attend(model.backbone(scene));
      for (size_t b = 0; b < scene.boxes.size(); ++b) {
        ad::Var pooled = model.centered_roi(fm, scene.boxes[b]);
        if (!pooled.valid()) continue;
        ad::Var emb = model.embed_pooled(pooled);
        loss = loss + cluster_contrastive_loss_ad(emb, memory, scene.identities[b]);
        fresh.emplace_back(detach(emb), scene.identities[b]);
        ++count;
      }
    }
    if (count == 0) continue;
    loss = ad::mul_scalar(loss, 1.0 / count);
    const double value = loss.value()[0];
    if (!std::isfinite(value)) throw std::runtime_error("non-finite loss term: l_c_s");
    opt.step(loss.backward());
    for (const auto& [vec, label] : fresh)
      momentum_update_memory(memory, make_instance_feature(vec), label);
    loss_sum += value;
    ++batches;
  }

  EpochRecord rec;
  rec.epoch = epoch;
  rec.phase = "pretrain";
  rec.l_c_s = batches ? loss_sum / batches : 0.0;
  rec.total = rec.l_c_s;
  return rec;
}

struct AdaptState {
  PrototypeBank source_bank;
  bool bank_ready = false;
};

EpochRecord run_adapt_epoch(SearchModel& model, SgdOptimizer& opt, const RunConfig& cfg,
                            const std::vector<SceneSample>& source,
                            const std::vector<SceneSample>& target, long epoch,
                            AdaptState& state) {
  // labeling pass over frozen epoch-start features
  EpochTables t = extract_target_tables(model, cfg, target, epoch);
  if (t.features.empty()) throw std::runtime_error("no target instances");

  std::vector<long> source_labels;
  std::vector<InstanceFeature> source_feats =
      extract_source_features(model, source, source_labels);
  if (!state.bank_ready) {
    state.source_bank = init_source_prototypes(source_feats, source_labels);
    state.bank_ready = true;
  }

  DistanceCounter counter;
  PseudoLabelSet src_assign = assign_pseudo_labels(t.features, state.source_bank, counter);
  state.source_bank = update_source_prototypes(t.features, src_assign, state.source_bank);

  const long n_random =
      std::min<long>(cfg.n_random_prototypes, static_cast<long>(t.features.size()));
  PrototypeBank random_bank = sample_random_prototypes(
      t.features, n_random, cfg.seed + 31ull * static_cast<std::uint64_t>(epoch));
  PseudoLabelSet rnd_assign = assign_pseudo_labels(t.features, random_bank, counter);

  std::vector<long> src_labels(t.features.size()), rnd_labels(t.features.size());
  std::vector<long> true_ids(t.features.size());
  for (size_t i = 0; i < t.features.size(); ++i) {
    src_labels[i] = src_assign.assignments[i].label;
    rnd_labels[i] = rnd_assign.assignments[i].label;
    true_ids[i] = t.instances[i].true_identity;
  }
  const double pseudo_acc = pseudo_label_accuracy(src_labels, true_ids);

  ClusterMemory target_memory =
      init_cluster_memory(t.features, rnd_labels, cfg.tau, cfg.memory_momentum);
  ClusterMemory source_memory =
      init_cluster_memory(t.features, src_labels, cfg.tau, cfg.memory_momentum);
  InstanceMemory instance_memory = init_instance_memory(t.features, cfg.neighbor_threshold);

  std::vector<long> order(target.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<long>(i);
  std::mt19937_64 rng(cfg.seed ^ (0x51edull + static_cast<std::uint64_t>(epoch)));
  fisher_yates(order, rng);

  const long per_domain = std::max<long>(1, cfg.batch_size / 2);
  double sum_ins = 0.0, sum_ct = 0.0, sum_cs = 0.0, sum_te = 0.0, sum_se = 0.0;
  long batches = 0;

  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(per_domain)) {
    std::vector<long> tgt_scenes(
        order.begin() + static_cast<long>(start),
        order.begin() +
            static_cast<long>(std::min(order.size(), start + static_cast<size_t>(per_domain))));
    std::vector<long> src_scenes;
    for (size_t k = 0; k < tgt_scenes.size(); ++k)
      src_scenes.push_back(static_cast<long>((start + k) % source.size()));

    // phase 1: adversarial alignment on the mixed batch
    {
      std::vector<ad::Var> image_probs;
      std::vector<int> domains;
      std::vector<std::vector<ad::Var>> det_probs, reid_probs;
      long n_src_inst = 0, n_tgt_inst = 0;

      auto add_scene = [&](const SceneSample& scene, int domain,
                           const std::vector<Box>& boxes) {
        FeatureMap fm = model.attend(model.backbone(scene));
        FeatureMap reversed(ad::gradient_reverse(fm.data), fm.h, fm.w, fm.c);
        auto [mean_prob, grid] = model.patch_domain_probs(reversed);
        image_probs.push_back(mean_prob);
        domains.push_back(domain);
        std::vector<ad::Var> det, reid;
        for (const Box& box : boxes) {
          ad::Var pooled = model.roi_pool(fm, box);
          if (!pooled.valid()) continue;
          det.push_back(
              ad::reshape(model.det_domain_prob(ad::gradient_reverse(pooled)), {1}));
          ad::Var emb = model.embed_pooled(model.centered_roi(fm, box));
          reid.push_back(
              ad::reshape(model.reid_domain_prob(ad::gradient_reverse(emb)), {1}));
          if (domain == 0)
            ++n_src_inst;
          else
            ++n_tgt_inst;
        }
        det_probs.push_back(std::move(det));
        reid_probs.push_back(std::move(reid));
      };

      for (long s : src_scenes) add_scene(source[static_cast<size_t>(s)], 0,
                                          source[static_cast<size_t>(s)].boxes);
      for (long s : tgt_scenes) {
        std::vector<Box> boxes;
        for (long row : t.rows_by_scene[static_cast<size_t>(s)])
          boxes.push_back(t.instances[static_cast<size_t>(row)].box);
        add_scene(target[static_cast<size_t>(s)], 1, boxes);
      }

      if (n_src_inst > 0 && n_tgt_inst > 0) {
        const double lambda = balance_factor(n_src_inst, n_tgt_inst);
        ad::Var l_ins = bce_domain_loss(image_probs, domains) +
                        instance_domain_loss_ad(domains, det_probs, reid_probs, lambda);
        if (cfg.consistency_weight > 0.0)
          l_ins = l_ins + ad::mul_scalar(consistency_regularizer_ad(image_probs, det_probs),
                                         cfg.consistency_weight);
        l_ins = ad::mul_scalar(l_ins, 1.0 / static_cast<double>(image_probs.size()));
        const double value = l_ins.value()[0];
        if (!std::isfinite(value)) throw std::runtime_error("non-finite loss term: l_ins");
        opt.step(l_ins.backward());
        sum_ins += value;
      }
    }

    // phase 2: contrastive training on the target instances
    {
      ad::Var l_c_t = ad::Var::constant(0.0), l_c_s = ad::Var::constant(0.0);
      ad::Var l_t_e = ad::Var::constant(0.0), l_s_e = ad::Var::constant(0.0);
      long count = 0;
      std::vector<std::pair<long, Vector>> fresh;  // row, embedding

      for (long s : tgt_scenes) {
        const auto& rows = t.rows_by_scene[static_cast<size_t>(s)];
        if (rows.empty()) continue;
        FeatureMap fm = model.attend(model.backbone(target[static_cast<size_t>(s)]));
        for (long row : rows) {
          const TargetInstance& inst = t.instances[static_cast<size_t>(row)];
          ad::Var pooled = model.centered_roi(fm, inst.box);
          if (!pooled.valid()) continue;
          ad::Var emb = model.embed_pooled(pooled);
          l_c_t = l_c_t + cluster_contrastive_loss_ad(emb, target_memory,
                                                      rnd_labels[static_cast<size_t>(row)]);
          l_c_s = l_c_s + cluster_contrastive_loss_ad(emb, source_memory,
                                                      src_labels[static_cast<size_t>(row)]);
          std::vector<int> near =
              select_reliable_neighbors(instance_memory, row, cfg.neighbor_threshold);
          l_t_e = l_t_e + instance_invariance_loss_ad(emb, instance_memory, row, near, cfg.tau);
          std::vector<int> same(t.features.size(), 0);
          for (size_t i = 0; i < t.features.size(); ++i)
            same[i] = (static_cast<long>(i) != row &&
                       src_labels[i] == src_labels[static_cast<size_t>(row)])
                          ? 1
                          : 0;
          l_s_e = l_s_e + instance_invariance_loss_ad(emb, instance_memory, row, same, cfg.tau);
          fresh.emplace_back(row, detach(emb));
          ++count;
        }
      }
      if (count > 0) {
        // Contrastive terms keep unit weight per query; invariance terms
        // average over the whole instance memory. The relative weighting lets
        // the prototype losses spread the space faster than the neighbor
        // terms contract it, which is what sheds unreliable neighbors.
        const double inv_n = 1.0 / static_cast<double>(t.features.size());
        l_t_e = ad::mul_scalar(l_t_e, inv_n);
        l_s_e = ad::mul_scalar(l_s_e, inv_n);
        total_loss(0.0, l_c_t.value()[0], l_c_s.value()[0], l_t_e.value()[0],
                   l_s_e.value()[0]);
        ad::Var phase2 = l_c_t + l_c_s + l_t_e + l_s_e;
        opt.step(phase2.backward());
        for (const auto& [row, vec] : fresh) {
          InstanceFeature f = make_instance_feature(vec);
          momentum_update_memory(target_memory, f, rnd_labels[static_cast<size_t>(row)]);
          momentum_update_memory(source_memory, f, src_labels[static_cast<size_t>(row)]);
          momentum_update_instance(instance_memory, row, f.vector, cfg.memory_momentum);
        }
        sum_ct += l_c_t.value()[0];
        sum_cs += l_c_s.value()[0];
        sum_te += l_t_e.value()[0];
        sum_se += l_s_e.value()[0];
      }
    }
    ++batches;
  }

  EpochRecord rec;
  rec.epoch = epoch;
  rec.phase = "adapt";
  if (batches > 0) {
    rec.l_ins = sum_ins / batches;
    // Contrastive sums accumulate over all target instances; invariance
    // sums are already memory-size averages. Both are epoch totals.
    rec.l_c_t = sum_ct;
    rec.l_c_s = sum_cs;
    rec.l_t_e = sum_te;
    rec.l_s_e = sum_se;
  }
  rec.total = total_loss(rec.l_ins, rec.l_c_t, rec.l_c_s, rec.l_t_e, rec.l_s_e);
  rec.pseudo_acc = pseudo_acc;
  return rec;
}

}  // namespace

TrainResult train_adaptation(const RunConfig& cfg, const std::vector<SceneSample>& source,
                             const std::vector<SceneSample>& target,
                             const std::string& run_dir, const Checkpoint* resume) {
  validate(cfg);
  if (source.empty()) throw std::invalid_argument("empty source split");
  fs::create_directories(run_dir);

  SearchModel model(model_config_from(cfg));
  long pretrain_done = 0, adapt_done = 0;
  if (resume) {
    restore_model(model, *resume);
    pretrain_done = resume->completed_pretrain_epochs;
    adapt_done = resume->completed_adapt_epochs;
  } else {
    std::ofstream clear(fs::path(run_dir) / "metrics.jsonl", std::ios::trunc);
  }

  SgdOptimizer opt(model.parameters(), cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  TrainResult result;
  save_epoch_checkpoint(run_dir, model, pretrain_done, adapt_done, result.checkpoint);

  while (pretrain_done < cfg.pretrain_epochs) {
    EpochRecord rec = run_pretrain_epoch(model, opt, cfg, source, pretrain_done + 1);
    ++pretrain_done;
    save_epoch_checkpoint(run_dir, model, pretrain_done, adapt_done, result.checkpoint);
    append_record(run_dir, rec, result.log);
  }

  AdaptState state;
  while (adapt_done < cfg.adapt_epochs) {
    if (target.empty()) throw std::invalid_argument("empty target split");
    EpochRecord rec = run_adapt_epoch(model, opt, cfg, source, target,
                                      cfg.pretrain_epochs + adapt_done + 1, state);
    ++adapt_done;
    save_epoch_checkpoint(run_dir, model, pretrain_done, adapt_done, result.checkpoint);
    append_record(run_dir, rec, result.log);
  }
  return result;
}

namespace {

std::uint64_t eval_proposal_seed(const RunConfig& cfg, long scene) {
  return cfg.seed * 131ull + 17ull + static_cast<std::uint64_t>(scene);
}

std::map<long, long> first_occurrence(const std::vector<SceneSample>& scenes) {
  std::map<long, long> first;  // identity -> scene index
  for (size_t s = 0; s < scenes.size(); ++s)
    for (long id : scenes[s].identities)
      if (!first.count(id)) first[id] = static_cast<long>(s);
  return first;
}

}  // namespace

EvalReport evaluate_model(const SearchModel& model, const RunConfig& cfg,
                          const std::vector<SceneSample>& target) {
  if (target.empty()) throw std::invalid_argument("empty target split");
  const std::map<long, long> first = first_occurrence(target);

  std::vector<std::vector<Proposal>> proposals(target.size());
  std::vector<std::vector<Box>> gt(target.size());
  std::vector<GalleryItem> gallery;
  std::vector<QueryItem> queries;

  for (size_t s = 0; s < target.size(); ++s) {
    proposals[s] = generate_proposals(target[s], cfg.proposal_jitter,
                                      cfg.proposals_background,
                                      eval_proposal_seed(cfg, static_cast<long>(s)));
    gt[s] = target[s].boxes;

    FeatureMap fm = model.attend(model.backbone(target[s]));
    std::vector<Box> boxes;
    for (const Proposal& p : proposals[s]) boxes.push_back(p.box);
    ExtractionResult ex = extract_instance_features(model, fm, boxes);
    for (const ExtractedFeature& f : ex.features)
      gallery.push_back({static_cast<long>(s), boxes[static_cast<size_t>(f.box_index)],
                         proposals[s][static_cast<size_t>(f.box_index)].score, f.vector});

    for (size_t b = 0; b < target[s].boxes.size(); ++b) {
      const long id = target[s].identities[b];
      if (first.at(id) != static_cast<long>(s)) continue;
      ExtractionResult q = extract_instance_features(model, fm, {target[s].boxes[b]});
      if (q.features.empty()) continue;
      queries.push_back({static_cast<long>(s), id, q.features[0].vector});
    }
  }

  EvalReport report = person_search_metrics(queries, gallery, target);
  auto [ap, recall] = evaluate_detection(proposals, gt);
  report.det_ap = ap;
  report.det_recall = recall;
  return report;
}

EvalReport random_embedding_baseline(const RunConfig& cfg,
                                     const std::vector<SceneSample>& target,
                                     std::uint64_t seed) {
  if (target.empty()) throw std::invalid_argument("empty target split");
  const std::map<long, long> first = first_occurrence(target);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto random_unit = [&]() {
    Vector v(cfg.feature_dim);
    for (long i = 0; i < v.size(); ++i) v[i] = gauss(rng);
    return Vector(v / v.norm());
  };

  std::vector<std::vector<Proposal>> proposals(target.size());
  std::vector<std::vector<Box>> gt(target.size());
  std::vector<GalleryItem> gallery;
  std::vector<QueryItem> queries;
  for (size_t s = 0; s < target.size(); ++s) {
    proposals[s] = generate_proposals(target[s], cfg.proposal_jitter,
                                      cfg.proposals_background,
                                      eval_proposal_seed(cfg, static_cast<long>(s)));
    gt[s] = target[s].boxes;
    for (const Proposal& p : proposals[s])
      gallery.push_back({static_cast<long>(s), p.box, p.score, random_unit()});
    for (size_t b = 0; b < target[s].boxes.size(); ++b) {
      const long id = target[s].identities[b];
      if (first.at(id) != static_cast<long>(s)) continue;
      queries.push_back({static_cast<long>(s), id, random_unit()});
    }
  }

  EvalReport report = person_search_metrics(queries, gallery, target);
  auto [ap, recall] = evaluate_detection(proposals, gt);
  report.det_ap = ap;
  report.det_recall = recall;
  return report;
}

}  // namespace fous
