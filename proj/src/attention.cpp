#include "fous/attention.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace fous {

using ad::Var;

namespace {

constexpr double kNormEps = 1e-5;

// Broadcast a length-n vector over `rows` rows -> {rows, n}.
Var broadcast_over_rows(const Var& v, long rows, long n) {
  std::vector<long> idx(rows * n);
  for (long p = 0; p < rows; ++p)
    for (long j = 0; j < n; ++j) idx[p * n + j] = j;
  return ad::gather(v, std::move(idx), {rows, n});
}

// Broadcast a length-m vector over `cols` columns -> {m, cols}.
Var broadcast_over_cols(const Var& v, long m, long cols) {
  std::vector<long> idx(m * cols);
  for (long p = 0; p < m; ++p)
    for (long j = 0; j < cols; ++j) idx[p * cols + j] = p;
  return ad::gather(v, std::move(idx), {m, cols});
}

Var broadcast_scalar(const Var& s, long count) {
  return ad::gather(s, std::vector<long>(count, 0), {count});
}

Var ones_row(long n) { return Var::constant(ad::Array::Ones(n), {1, n}); }

Var as_matrix(const FeatureMap& x) {
  return ad::reshape(x.data, {x.spatial(), x.c});
}

long resolve_groups(long requested, long axis) {
  if (requested == 0) return (axis % 2 == 0) ? 2 : 1;
  if (requested < 1 || axis % requested != 0)
    throw std::invalid_argument("invalid grouping");
  return requested;
}

}  // namespace

FeatureMap::FeatureMap(ad::Var d, long H, long W, long C) : data(std::move(d)), h(H), w(W), c(C) {
  if (H < 1 || W < 1 || C < 1) throw std::invalid_argument("feature map dims must be >= 1");
  if (data.size() != H * W * C) throw std::invalid_argument("feature map size mismatch");
}

FeatureMap make_feature_map(const ad::Array& values, long h, long w, long c,
                            bool trainable) {
  Var v = trainable ? Var::leaf(values, {h, w, c}) : Var::constant(values, {h, w, c});
  return FeatureMap(v, h, w, c);
}

std::vector<ad::Var> AttentionParams::parameters() const {
  std::vector<ad::Var> out{alpha, beta};
  for (const auto& v : cdii_weights) out.push_back(v);
  for (const auto& v : cdii_gamma) out.push_back(v);
  for (const auto& v : cdii_shift) out.push_back(v);
  for (const auto& v : sdii_weights) out.push_back(v);
  for (const auto& v : sdii_gamma) out.push_back(v);
  for (const auto& v : sdii_shift) out.push_back(v);
  return out;
}

AttentionParams init_attention_params(long h, long w, long c, std::uint64_t seed,
                                      long channel_groups, long spatial_groups) {
  if (h < 1 || w < 1 || c < 1) throw std::invalid_argument("bad attention geometry");
  AttentionParams p;
  p.channels = c;
  p.spatial = h * w;
  p.channel_groups = resolve_groups(channel_groups, 2 * c);
  p.spatial_groups = resolve_groups(spatial_groups, p.spatial);

  std::mt19937_64 rng(seed);
  auto uniform_init = [&rng](long rows, long cols) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    std::uniform_real_distribution<double> dist(-bound, bound);
    ad::Array a(rows * cols);
    for (long i = 0; i < a.size(); ++i) a[i] = dist(rng);
    return a;
  };

  p.alpha = Var::leaf(ad::Array::Constant(c, 0.5), {c});
  p.beta = Var::leaf(ad::Array::Constant(c, 0.5), {c});

  const long gc = p.channel_groups;
  const long in_g = 2 * c / gc;
  for (long k = 0; k < gc; ++k) {
    const long out_k = c / gc + (k < c % gc ? 1 : 0);
    p.cdii_out_channels.push_back(out_k);
    if (out_k == 0) {
      p.cdii_weights.emplace_back();
      p.cdii_gamma.emplace_back();
      p.cdii_shift.emplace_back();
      continue;
    }
    p.cdii_weights.push_back(Var::leaf(uniform_init(in_g, out_k), {in_g, out_k}));
    p.cdii_gamma.push_back(Var::leaf(ad::Array::Ones(out_k), {out_k}));
    p.cdii_shift.push_back(Var::leaf(ad::Array::Zero(out_k), {out_k}));
  }

  const long gs = p.spatial_groups;
  const long rows_g = p.spatial / gs;
  for (long k = 0; k < gs; ++k) {
    p.sdii_weights.push_back(Var::leaf(uniform_init(rows_g, rows_g), {rows_g, rows_g}));
    p.sdii_gamma.push_back(Var::leaf(ad::Array::Ones(1), {1}));
    p.sdii_shift.push_back(Var::leaf(ad::Array::Zero(1), {1}));
  }
  return p;
}

Var channel_gap(const FeatureMap& x) {
  Var m = ad::matmul(ones_row(x.spatial()), as_matrix(x));
  return ad::reshape(ad::mul_scalar(m, 1.0 / x.spatial()), {x.c});
}

Var spatial_gap(const FeatureMap& x) {
  Var ones = Var::constant(ad::Array::Ones(x.c), {x.c, 1});
  Var m = ad::matmul(as_matrix(x), ones);
  return ad::reshape(ad::mul_scalar(m, 1.0 / x.c), {x.spatial()});
}

Var cross_channel_covariance(const FeatureMap& x) {
  ad::check_finite(x.data.value(), "non-finite feature");
  const long hw = x.spatial();
  Var X = as_matrix(x);
  Var centered = X - broadcast_over_rows(channel_gap(x), hw, x.c);
  return ad::mul_scalar(ad::matmul(ad::transpose(centered), centered), 1.0 / hw);
}

Var cross_spatial_covariance(const FeatureMap& x) {
  ad::check_finite(x.data.value(), "non-finite feature");
  const long hw = x.spatial();
  if (hw > kSpatialCovarianceCap)
    throw std::runtime_error("spatial covariance too large");
  Var X = as_matrix(x);
  Var centered = X - broadcast_over_cols(spatial_gap(x), hw, x.c);
  return ad::mul_scalar(ad::matmul(centered, ad::transpose(centered)), 1.0 / x.c);
}

FeatureMap aggregate_information(const FeatureMap& x) {
  ad::check_finite(x.data.value(), "non-finite feature");
  const long hw = x.spatial(), c = x.c;

  Var clia_vec = ad::matmul(cross_channel_covariance(x),
                            ad::reshape(channel_gap(x), {c, 1}));  // {C,1}
  Var clia = broadcast_over_rows(ad::reshape(clia_vec, {c}), hw, c);

  Var slia_vec = ad::matmul(ad::reshape(spatial_gap(x), {1, hw}),
                            cross_spatial_covariance(x));  // {1,HW}
  Var slia = broadcast_over_cols(ad::reshape(slia_vec, {hw}), hw, c);

  // Cross-concatenation: channel interleave (clia_0, slia_0, clia_1, ...).
  Var both = ad::concat({clia, slia}, {2 * hw * c});
  std::vector<long> idx(hw * 2 * c);
  for (long p = 0; p < hw; ++p)
    for (long ch = 0; ch < c; ++ch) {
      idx[p * 2 * c + 2 * ch] = p * c + ch;
      idx[p * 2 * c + 2 * ch + 1] = hw * c + p * c + ch;
    }
  Var out = ad::gather(both, std::move(idx), {x.h, x.w, 2 * c});
  return FeatureMap(out, x.h, x.w, 2 * c);
}

namespace {

// Standardize columns of a {rows, cols} matrix, then scale/shift per column.
Var column_norm(const Var& m, long rows, long cols, const Var& gamma, const Var& shift) {
  Var mu = ad::mul_scalar(ad::matmul(ones_row(rows), m), 1.0 / rows);  // {1,cols}
  Var centered = m - broadcast_over_rows(ad::reshape(mu, {cols}), rows, cols);
  Var var = ad::mul_scalar(ad::matmul(ones_row(rows), centered * centered), 1.0 / rows);
  Var denom = ad::sqrt_op(ad::add_scalar(var, kNormEps));
  Var normed = ad::div(centered, broadcast_over_rows(ad::reshape(denom, {cols}), rows, cols));
  return normed * broadcast_over_rows(gamma, rows, cols) +
         broadcast_over_rows(shift, rows, cols);
}

// Standardize a whole block with scalar scale/shift.
Var block_norm(const Var& m, const Var& gamma, const Var& shift) {
  const long n = m.size();
  Var centered = m - ad::reshape(broadcast_scalar(ad::mean(m), n), m.shape());
  Var var = ad::mean(centered * centered);
  Var denom = ad::sqrt_op(ad::add_scalar(var, kNormEps));
  Var normed = ad::div(centered, ad::reshape(broadcast_scalar(denom, n), m.shape()));
  return normed * ad::reshape(broadcast_scalar(gamma, n), m.shape()) +
         ad::reshape(broadcast_scalar(shift, n), m.shape());
}

Var channel_driven_interaction(const Var& m, long hw, long c2,
                               const AttentionParams& p) {
  const long g = p.channel_groups;
  const long in_g = c2 / g;
  const long c = c2 / 2;
  std::vector<Var> group_out;
  std::vector<long> out_sizes;
  for (long k = 0; k < g; ++k) {
    const long out_k = p.cdii_out_channels[k];
    if (out_k == 0) continue;
    std::vector<long> col_idx(hw * in_g);
    for (long row = 0; row < hw; ++row)
      for (long j = 0; j < in_g; ++j)
        col_idx[row * in_g + j] = row * c2 + k * in_g + j;
    Var mk = ad::gather(m, std::move(col_idx), {hw, in_g});
    Var ok = ad::matmul(mk, p.cdii_weights[k]);
    group_out.push_back(ad::relu(column_norm(ok, hw, out_k, p.cdii_gamma[k], p.cdii_shift[k])));
    out_sizes.push_back(out_k);
  }
  // Stitch the group outputs back into contiguous channel blocks.
  long total = 0;
  std::vector<long> bases;
  for (size_t k = 0; k < group_out.size(); ++k) {
    bases.push_back(total * hw);
    total += out_sizes[k];
  }
  Var flat = ad::concat(group_out, {hw * total});
  std::vector<long> idx(hw * total);
  long off = 0;
  for (size_t k = 0; k < group_out.size(); ++k) {
    for (long row = 0; row < hw; ++row)
      for (long q = 0; q < out_sizes[k]; ++q)
        idx[row * total + off + q] = bases[k] + row * out_sizes[k] + q;
    off += out_sizes[k];
  }
  (void)c;
  return ad::gather(flat, std::move(idx), {hw, total});
}

Var spatial_driven_interaction(const Var& m, long hw, long c2,
                               const AttentionParams& p) {
  const long g = p.spatial_groups;
  const long rows_g = hw / g;
  const long c = c2 / 2;
  std::vector<Var> blocks;
  for (long k = 0; k < g; ++k) {
    std::vector<long> row_idx(rows_g * c2);
    for (long r = 0; r < rows_g; ++r)
      for (long j = 0; j < c2; ++j)
        row_idx[r * c2 + j] = (k * rows_g + r) * c2 + j;
    Var bk = ad::gather(m, std::move(row_idx), {rows_g, c2});
    Var tk = ad::matmul(p.sdii_weights[k], bk);
    Var yk = ad::relu(block_norm(tk, p.sdii_gamma[k], p.sdii_shift[k]));
    // Row-wise summation of each interleaved channel pair: 2C -> C.
    std::vector<long> even(rows_g * c), odd(rows_g * c);
    for (long r = 0; r < rows_g; ++r)
      for (long ch = 0; ch < c; ++ch) {
        even[r * c + ch] = r * c2 + 2 * ch;
        odd[r * c + ch] = r * c2 + 2 * ch + 1;
      }
    blocks.push_back(ad::gather(yk, std::move(even), {rows_g, c}) +
                     ad::gather(yk, std::move(odd), {rows_g, c}));
  }
  return ad::concat(blocks, {hw, c});
}

}  // namespace

FeatureMap interact_information(const FeatureMap& xcs, const AttentionParams& params) {
  if (xcs.c % 2 != 0) throw std::invalid_argument("expected 2C channels");
  const long c = xcs.c / 2;
  const long hw = xcs.spatial();
  if (params.channels != c || params.spatial != hw)
    throw std::invalid_argument("attention params sized for a different map");

  Var m = ad::reshape(xcs.data, {hw, 2 * c});
  Var cdii = channel_driven_interaction(m, hw, 2 * c, params);
  Var sdii = spatial_driven_interaction(m, hw, 2 * c, params);
  Var a = broadcast_over_rows(params.alpha, hw, c);
  Var b = broadcast_over_rows(params.beta, hw, c);
  Var fused = a * cdii + b * sdii;
  return FeatureMap(ad::reshape(fused, {xcs.h, xcs.w, c}), xcs.h, xcs.w, c);
}

FeatureMap apply_attention(const FeatureMap& x, const AttentionParams& params) {
  FeatureMap fused = interact_information(aggregate_information(x), params);
  Var gate = ad::sigmoid(fused.data);
  return FeatureMap(x.data * gate, x.h, x.w, x.c);
}

FeatureMap apply_attention_branched(const FeatureMap& x,
                                    const std::vector<AttentionParams>& branch_params) {
  const long b = static_cast<long>(branch_params.size());
  if (b == 0) throw std::invalid_argument("need at least one branch");
  if (b == 1) return apply_attention(x, branch_params[0]);
  if (x.c % b != 0) throw std::invalid_argument("invalid branch count");
  const long cb = x.c / b;
  const long hw = x.spatial();
  std::vector<Var> gated;
  for (long k = 0; k < b; ++k) {
    std::vector<long> idx(hw * cb);
    for (long p = 0; p < hw; ++p)
      for (long ch = 0; ch < cb; ++ch)
        idx[p * cb + ch] = p * x.c + k * cb + ch;
    FeatureMap sub(ad::gather(x.data, std::move(idx), {x.h, x.w, cb}), x.h, x.w, cb);
    gated.push_back(apply_attention(sub, branch_params[k]).data);
  }
  Var flat = ad::concat(gated, {b * hw * cb});
  std::vector<long> idx(hw * x.c);
  for (long k = 0; k < b; ++k)
    for (long p = 0; p < hw; ++p)
      for (long ch = 0; ch < cb; ++ch)
        idx[p * x.c + k * cb + ch] = k * hw * cb + p * cb + ch;
  return FeatureMap(ad::gather(flat, std::move(idx), {x.h, x.w, x.c}), x.h, x.w, x.c);
}

}  // namespace fous
