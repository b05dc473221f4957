#include "fous/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

namespace fous {

using ad::Var;

namespace {

// gain sqrt(6) keeps activation variance stable through conv+ReLU stacks;
// sqrt(3) does the same for plain linear maps.
ad::Array uniform_init(long rows, long cols, std::mt19937_64& rng, double gain) {
  const double bound = gain / std::sqrt(static_cast<double>(rows));
  std::uniform_real_distribution<double> dist(-bound, bound);
  ad::Array a(rows * cols);
  for (long i = 0; i < a.size(); ++i) a[i] = dist(rng);
  return a;
}

Var ones_row(long n) { return Var::constant(ad::Array::Ones(n), {1, n}); }

}  // namespace

Conv2d::Conv2d(long in_c, long out_c, long kernel, long stride, long pad,
               std::mt19937_64& rng)
    : in_c_(in_c), out_c_(out_c), kernel_(kernel), stride_(stride), pad_(pad) {
  const long fan_in = kernel * kernel * in_c;
  weight = Var::leaf(uniform_init(fan_in, out_c, rng, std::sqrt(6.0)), {fan_in, out_c});
  bias = Var::leaf(ad::Array::Zero(out_c), {out_c});
}

FeatureMap Conv2d::forward(const FeatureMap& x) const {
  if (x.c != in_c_) throw std::invalid_argument("conv channel mismatch");
  const long out_h = (x.h + 2 * pad_ - kernel_) / stride_ + 1;
  const long out_w = (x.w + 2 * pad_ - kernel_) / stride_ + 1;
  const long cols = kernel_ * kernel_ * in_c_;

  auto key = std::make_pair(x.h, x.w);
  auto it = idx_cache_.find(key);
  if (it == idx_cache_.end()) {
    auto idx = std::make_shared<std::vector<long>>(out_h * out_w * cols);
    long at = 0;
    for (long oy = 0; oy < out_h; ++oy)
      for (long ox = 0; ox < out_w; ++ox)
        for (long ky = 0; ky < kernel_; ++ky)
          for (long kx = 0; kx < kernel_; ++kx)
            for (long ci = 0; ci < in_c_; ++ci) {
              const long iy = oy * stride_ - pad_ + ky;
              const long ix = ox * stride_ - pad_ + kx;
              (*idx)[at++] = (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w)
                                 ? -1
                                 : (iy * x.w + ix) * in_c_ + ci;
            }
    it = idx_cache_.emplace(key, std::move(idx)).first;
  }

  Var patches = ad::gather(x.data, it->second, {out_h * out_w, cols});
  Var out = ad::matmul(patches, weight);
  std::vector<long> bidx(out_h * out_w * out_c_);
  for (long p = 0; p < out_h * out_w; ++p)
    for (long c = 0; c < out_c_; ++c) bidx[p * out_c_ + c] = c;
  out = out + ad::gather(bias, std::move(bidx), {out_h * out_w, out_c_});
  return FeatureMap(ad::reshape(out, {out_h, out_w, out_c_}), out_h, out_w, out_c_);
}

Linear::Linear(long in_dim, long out_dim, std::mt19937_64& rng) {
  weight = Var::leaf(uniform_init(in_dim, out_dim, rng, std::sqrt(3.0)), {in_dim, out_dim});
  bias = Var::leaf(ad::Array::Zero(out_dim), {out_dim});
}

ad::Var Linear::forward(const ad::Var& rows) const {
  const long n = rows.shape()[0];
  const long out_dim = weight.shape()[1];
  Var out = ad::matmul(rows, weight);
  std::vector<long> bidx(n * out_dim);
  for (long p = 0; p < n; ++p)
    for (long c = 0; c < out_dim; ++c) bidx[p * out_dim + c] = c;
  return out + ad::gather(bias, std::move(bidx), {n, out_dim});
}

ad::Var l2_normalize_rows(const ad::Var& rows) {
  const long n = rows.shape()[0], d = rows.shape()[1];
  Var sq = rows * rows;
  Var norms = ad::sqrt_op(ad::add_scalar(
      ad::matmul(sq, Var::constant(ad::Array::Ones(d), {d, 1})), 1e-12));  // {n,1}
  std::vector<long> idx(n * d);
  for (long p = 0; p < n; ++p)
    for (long c = 0; c < d; ++c) idx[p * d + c] = p;
  return ad::div(rows, ad::gather(norms, std::move(idx), {n, d}));
}

SearchModel::SearchModel(const ModelConfig& config) : cfg(config) {
  std::mt19937_64 rng(cfg.seed);
  const long c = cfg.backbone_channels;
  conv1 = Conv2d(3, 16, 3, 2, 1, rng);
  conv2 = Conv2d(16, c, 3, 2, 1, rng);
  conv3 = Conv2d(c, c, 3, 2, 1, rng);
  conv4 = Conv2d(c, c, 3, 1, 1, rng);

  const long mh = (cfg.image_height + 7) / 8;
  const long mw = (cfg.image_width + 7) / 8;
  if (cfg.attention_branches < 1 || c % cfg.attention_branches != 0)
    throw std::invalid_argument("invalid branch count");
  for (long b = 0; b < cfg.attention_branches; ++b)
    attention.push_back(init_attention_params(mh, mw, c / cfg.attention_branches,
                                              cfg.seed + 1000 + b));

  embed = Linear(c, cfg.feature_dim, rng);
  patch_cls1 = Conv2d(c, 16, 1, 1, 0, rng);
  patch_cls2 = Conv2d(16, 1, 1, 1, 0, rng);
  det_cls1 = Linear(c, 16, rng);
  det_cls2 = Linear(16, 1, rng);
  reid_cls1 = Linear(cfg.feature_dim, 16, rng);
  reid_cls2 = Linear(16, 1, rng);
}

FeatureMap SearchModel::backbone(const SceneSample& scene) const {
  if (scene.height != cfg.image_height || scene.width != cfg.image_width)
    throw std::invalid_argument("scene size does not match model config");
  // Per-image, per-channel standardization cancels global color/contrast
  // offsets between domains before any learned layer sees them.
  ad::Array pixels = scene.image;
  const long npix = scene.height * scene.width;
  for (long c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (long p = 0; p < npix; ++p) mean += pixels[p * 3 + c];
    mean /= static_cast<double>(npix);
    double var = 0.0;
    for (long p = 0; p < npix; ++p) {
      const double d = pixels[p * 3 + c] - mean;
      var += d * d;
    }
    const double inv_std = 1.0 / std::sqrt(var / static_cast<double>(npix) + 1e-8);
    for (long p = 0; p < npix; ++p) pixels[p * 3 + c] = (pixels[p * 3 + c] - mean) * inv_std;
  }
  FeatureMap x = make_feature_map(pixels, scene.height, scene.width, 3);
  auto relu_map = [](FeatureMap m) {
    return FeatureMap(ad::relu(m.data), m.h, m.w, m.c);
  };
  x = relu_map(conv1.forward(x));
  x = relu_map(conv2.forward(x));
  x = relu_map(conv3.forward(x));
  x = relu_map(conv4.forward(x));
  return x;
}

FeatureMap SearchModel::attend(const FeatureMap& fm) const {
  return apply_attention_branched(fm, attention);
}

std::pair<ad::Var, ad::Var> SearchModel::patch_domain_probs(const FeatureMap& fm) const {
  FeatureMap hidden(ad::relu(patch_cls1.forward(fm).data), fm.h, fm.w, 16);
  FeatureMap logits = patch_cls2.forward(hidden);
  Var probs = ad::sigmoid(ad::reshape(logits.data, {fm.h * fm.w}));
  return {ad::mean(probs), probs};
}

ad::Var SearchModel::det_domain_prob(const ad::Var& pooled) const {
  Var h = ad::relu(det_cls1.forward(pooled));
  return ad::sigmoid(ad::reshape(det_cls2.forward(h), {1}));
}

ad::Var SearchModel::reid_domain_prob(const ad::Var& embedding) const {
  Var rows = ad::reshape(embedding, {1, cfg.feature_dim});
  Var h = ad::relu(reid_cls1.forward(rows));
  return ad::sigmoid(ad::reshape(reid_cls2.forward(h), {1}));
}

ad::Var SearchModel::roi_pool(const FeatureMap& fm, const Box& box) const {
  const long s = cfg.stride;
  long x1 = static_cast<long>(std::floor(box.x1 / s));
  long y1 = static_cast<long>(std::floor(box.y1 / s));
  long x2 = static_cast<long>(std::ceil(box.x2 / s));
  long y2 = static_cast<long>(std::ceil(box.y2 / s));
  x1 = std::max(0L, std::min(x1, fm.w - 1));
  y1 = std::max(0L, std::min(y1, fm.h - 1));
  x2 = std::max(0L, std::min(x2, fm.w));
  y2 = std::max(0L, std::min(y2, fm.h));
  if (x2 <= x1 || y2 <= y1) return Var();  // degenerate under stride mapping

  const long npix = (x2 - x1) * (y2 - y1);
  std::vector<long> idx(npix * fm.c);
  long at = 0;
  for (long y = y1; y < y2; ++y)
    for (long x = x1; x < x2; ++x)
      for (long c = 0; c < fm.c; ++c) idx[at++] = (y * fm.w + x) * fm.c + c;
  Var region = ad::gather(fm.data, std::move(idx), {npix, fm.c});
  return ad::mul_scalar(ad::matmul(ones_row(npix), region), 1.0 / npix);
}

ad::Var SearchModel::centered_roi(const FeatureMap& fm, const Box& box) const {
  Var pooled = roi_pool(fm, box);
  if (!pooled.valid()) return pooled;
  Box whole{0.0, 0.0, static_cast<double>(fm.w * cfg.stride),
            static_cast<double>(fm.h * cfg.stride)};
  return ad::sub(pooled, roi_pool(fm, whole));
}

ad::Var SearchModel::embed_pooled(const ad::Var& pooled) const {
  // Unit-normalize the input so the projection bias cannot dominate the
  // small pooled activations.
  Var projected = embed.forward(l2_normalize_rows(pooled));  // {1, D}
  return ad::reshape(l2_normalize_rows(projected), {cfg.feature_dim});
}

std::vector<std::pair<std::string, ad::Var>> SearchModel::named_parameters() const {
  std::vector<std::pair<std::string, ad::Var>> out;
  auto add_conv = [&out](const std::string& name, const Conv2d& conv) {
    out.emplace_back(name + ".weight", conv.weight);
    out.emplace_back(name + ".bias", conv.bias);
  };
  auto add_linear = [&out](const std::string& name, const Linear& lin) {
    out.emplace_back(name + ".weight", lin.weight);
    out.emplace_back(name + ".bias", lin.bias);
  };
  add_conv("conv1", conv1);
  add_conv("conv2", conv2);
  add_conv("conv3", conv3);
  add_conv("conv4", conv4);
  for (size_t b = 0; b < attention.size(); ++b) {
    const std::string prefix = "attention" + std::to_string(b);
    const AttentionParams& p = attention[b];
    out.emplace_back(prefix + ".alpha", p.alpha);
    out.emplace_back(prefix + ".beta", p.beta);
    for (size_t k = 0; k < p.cdii_weights.size(); ++k) {
      if (!p.cdii_weights[k].valid()) continue;
      const std::string g = std::to_string(k);
      out.emplace_back(prefix + ".cdii_w" + g, p.cdii_weights[k]);
      out.emplace_back(prefix + ".cdii_g" + g, p.cdii_gamma[k]);
      out.emplace_back(prefix + ".cdii_s" + g, p.cdii_shift[k]);
    }
    for (size_t k = 0; k < p.sdii_weights.size(); ++k) {
      const std::string g = std::to_string(k);
      out.emplace_back(prefix + ".sdii_w" + g, p.sdii_weights[k]);
      out.emplace_back(prefix + ".sdii_g" + g, p.sdii_gamma[k]);
      out.emplace_back(prefix + ".sdii_s" + g, p.sdii_shift[k]);
    }
  }
  add_linear("embed", embed);
  add_conv("patch_cls1", patch_cls1);
  add_conv("patch_cls2", patch_cls2);
  add_linear("det_cls1", det_cls1);
  add_linear("det_cls2", det_cls2);
  add_linear("reid_cls1", reid_cls1);
  add_linear("reid_cls2", reid_cls2);
  return out;
}

std::vector<ad::Var> SearchModel::parameters() const {
  std::vector<ad::Var> out;
  for (auto& [name, v] : named_parameters()) out.push_back(v);
  return out;
}

ExtractionResult extract_instance_features(const SearchModel& model,
                                           const FeatureMap& attended,
                                           const std::vector<Box>& boxes) {
  ExtractionResult result;
  for (size_t i = 0; i < boxes.size(); ++i) {
    Var pooled = model.centered_roi(attended, boxes[i]);
    if (!pooled.valid()) {
      result.skipped.push_back(static_cast<long>(i));
      continue;
    }
    Var emb = model.embed_pooled(pooled);
    ExtractedFeature f;
    f.vector = Eigen::Map<const Eigen::VectorXd>(emb.value().data(), emb.size());
    f.box_index = static_cast<long>(i);
    result.features.push_back(std::move(f));
  }
  return result;
}

SgdOptimizer::SgdOptimizer(std::vector<ad::Var> params, double lr_in, double momentum,
                           double weight_decay)
    : lr(lr_in), params_(std::move(params)), momentum_(momentum),
      weight_decay_(weight_decay) {
  for (const auto& p : params_) velocity_.push_back(ad::Array::Zero(p.size()));
}

void SgdOptimizer::step(std::uint64_t pass) {
  std::vector<ad::Array> grads(params_.size());
  double sq_norm = 0.0;
  for (size_t i = 0; i < params_.size(); ++i) {
    auto node = params_[i].node();
    grads[i] = (node->pass == pass && node->grad.size() == node->value.size())
                   ? node->grad
                   : ad::Array::Zero(node->value.size());
    sq_norm += grads[i].square().sum();
  }
  const double norm = std::sqrt(sq_norm);
  const double scale = norm > kGradClipNorm ? kGradClipNorm / norm : 1.0;
  for (size_t i = 0; i < params_.size(); ++i) {
    auto node = params_[i].node();
    ad::Array g = scale * grads[i] + weight_decay_ * node->value;
    velocity_[i] = momentum_ * velocity_[i] + g;
    node->value -= lr * velocity_[i];
  }
}

Checkpoint snapshot_model(const SearchModel& model, long pretrain_epochs,
                          long adapt_epochs) {
  Checkpoint ckpt;
  ckpt.completed_pretrain_epochs = pretrain_epochs;
  ckpt.completed_adapt_epochs = adapt_epochs;
  for (const auto& [name, v] : model.named_parameters())
    ckpt.blobs[name] = {v.shape(), v.value()};
  return ckpt;
}

void restore_model(SearchModel& model, const Checkpoint& ckpt) {
  for (auto& [name, v] : model.named_parameters()) {
    auto it = ckpt.blobs.find(name);
    if (it == ckpt.blobs.end() || it->second.second.size() != v.size())
      throw std::runtime_error("dimension mismatch: " + name);
    v.node()->value = it->second.second;
  }
}

namespace {
template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("truncated checkpoint");
  return v;
}
constexpr char kCkptMagic[8] = {'F', 'O', 'U', 'S', 'C', 'K', 'P', 'T'};
}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kCkptMagic, sizeof(kCkptMagic));
  write_pod(out, ckpt.format_version);
  write_pod(out, static_cast<std::int64_t>(ckpt.completed_pretrain_epochs));
  write_pod(out, static_cast<std::int64_t>(ckpt.completed_adapt_epochs));
  write_pod(out, static_cast<std::uint32_t>(ckpt.blobs.size()));
  for (const auto& [name, blob] : ckpt.blobs) {
    write_pod(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(out, static_cast<std::uint32_t>(blob.first.size()));
    for (long d : blob.first) write_pod(out, static_cast<std::int64_t>(d));
    out.write(reinterpret_cast<const char*>(blob.second.data()),
              static_cast<std::streamsize>(blob.second.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  Checkpoint ckpt;
  ckpt.format_version = read_pod<std::uint32_t>(in);
  if (ckpt.format_version != 1) throw std::runtime_error("unsupported checkpoint version");
  ckpt.completed_pretrain_epochs = static_cast<long>(read_pod<std::int64_t>(in));
  ckpt.completed_adapt_epochs = static_cast<long>(read_pod<std::int64_t>(in));
  const std::uint32_t count = read_pod<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t ndims = read_pod<std::uint32_t>(in);
    std::vector<long> shape;
    long total = 1;
    for (std::uint32_t d = 0; d < ndims; ++d) {
      shape.push_back(static_cast<long>(read_pod<std::int64_t>(in)));
      total *= shape.back();
    }
    ad::Array values(total);
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(total * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint");
    ckpt.blobs[name] = {std::move(shape), std::move(values)};
  }
  return ckpt;
}

}  // namespace fous
