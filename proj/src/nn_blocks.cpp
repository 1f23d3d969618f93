#include "pgnet/nn_blocks.hpp"

#include <cmath>

namespace pgnet {

void ForwardProbe::note_attention(const Mat& weights) {
  for (int i = 0; i < weights.rows(); ++i) {
    double sum = 0.0;
    for (int j = 0; j < weights.cols(); ++j) sum += weights(i, j);
    max_attention_row_error = std::max(max_attention_row_error, std::fabs(sum - 1.0));
  }
  attention_rows_seen += weights.rows();
}

void ForwardProbe::note_cardinality(int n) {
  if (expected_cardinalities.empty()) {
    cardinalities.push_back(n);
    return;
  }
  if (cardinality_cursor_ == 0) ++forwards_seen;
  if (n != expected_cardinalities[cardinality_cursor_]) ++cardinality_violations;
  cardinality_cursor_ = (cardinality_cursor_ + 1) % expected_cardinalities.size();
}

void ForwardProbe::note_gate(const Mat& a, const Mat& x, const Mat& out) {
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double lo = std::min(a[k], x[k]);
    const double hi = std::max(a[k], x[k]);
    double excess = 0.0;
    if (out[k] < lo) excess = lo - out[k];
    if (out[k] > hi) excess = out[k] - hi;
    max_gate_excess = std::max(max_gate_excess, excess);
  }
}

void ForwardProbe::merge_from(const ForwardProbe& other) {
  max_attention_row_error = std::max(max_attention_row_error, other.max_attention_row_error);
  max_gate_excess = std::max(max_gate_excess, other.max_gate_excess);
  attention_rows_seen += other.attention_rows_seen;
  cardinalities.insert(cardinalities.end(), other.cardinalities.begin(),
                       other.cardinalities.end());
  cardinality_violations += other.cardinality_violations;
  forwards_seen += other.forwards_seen;
}

LinearParams declare_linear(ParamStore& store, const std::string& prefix, int in_dim,
                            int out_dim, Rng& rng) {
  LinearParams p;
  p.weight = store.declare(prefix + ".weight", in_dim, out_dim);
  p.bias = store.declare(prefix + ".bias", 1, out_dim);
  const double bound = 1.0 / std::sqrt(double(in_dim));
  Mat& w = store.tensor(p.weight);
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = rng.uniform(-bound, bound);
  return p;
}

Value linear_apply(Ctx& ctx, const LinearParams& p, Value x) {
  Tape& t = ctx.tape();
  Value wx = t.matmul(x, ctx.params[p.weight]);
  Value bias = t.repeat_rows(ctx.params[p.bias], t.value(wx).rows());
  return t.add(wx, bias);
}

MlpParams declare_mlp(ParamStore& store, const std::string& prefix,
                      const std::vector<int>& widths, Rng& rng) {
  MlpParams p;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    p.layers.push_back(declare_linear(store, prefix + "." + std::to_string(i), widths[i],
                                      widths[i + 1], rng));
  return p;
}

Value mlp_apply(Ctx& ctx, const MlpParams& p, Value x) {
  Value h = x;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    h = linear_apply(ctx, p.layers[i], h);
    if (i + 1 < p.layers.size()) h = ctx.tape().relu(h);
  }
  return h;
}

AttentionParams declare_attention(ParamStore& store, const std::string& prefix, int heads,
                                  int dim, Rng& rng) {
  if (dim % heads != 0)
    throw std::invalid_argument("attention: dim " + std::to_string(dim) +
                                " not divisible by heads " + std::to_string(heads));
  AttentionParams p;
  p.heads = heads;
  p.dim = dim;
  p.q = declare_linear(store, prefix + ".q", dim, dim, rng);
  p.k = declare_linear(store, prefix + ".k", dim, dim, rng);
  p.v = declare_linear(store, prefix + ".v", dim, dim, rng);
  p.o = declare_linear(store, prefix + ".o", dim, dim, rng);
  return p;
}

Value attention_apply(Ctx& ctx, const AttentionParams& p, Value q_set, Value kv_set) {
  Tape& t = ctx.tape();
  const int head_dim = p.dim / p.heads;
  Value q = linear_apply(ctx, p.q, q_set);
  Value k = linear_apply(ctx, p.k, kv_set);
  Value v = linear_apply(ctx, p.v, kv_set);

  Value merged;
  for (int h = 0; h < p.heads; ++h) {
    const int c0 = h * head_dim;
    const int c1 = c0 + head_dim;
    Value qh = t.slice_cols(q, c0, c1);
    Value kh = t.slice_cols(k, c0, c1);
    Value vh = t.slice_cols(v, c0, c1);
    Value logits = t.scale(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(double(head_dim)));
    Value weights = t.softmax_rows(logits);
    if (ctx.probe) ctx.probe->note_attention(t.value(weights));
    Value out_h = t.matmul(weights, vh);
    merged = h == 0 ? out_h : t.concat_cols(merged, out_h);
  }
  return linear_apply(ctx, p.o, merged);
}

MlpParams declare_pos_embed(ParamStore& store, const std::string& prefix, int dim, Rng& rng) {
  return declare_mlp(store, prefix, {3, dim, dim}, rng);
}

SalienceGateParams declare_salience_gate(ParamStore& store, const std::string& prefix, int dim,
                                         Rng& rng) {
  return SalienceGateParams{declare_mlp(store, prefix + ".mlp", {2 * dim, dim, dim}, rng)};
}

Value salience_fuse(Ctx& ctx, const SalienceGateParams& p, Value a, Value x) {
  Tape& t = ctx.tape();
  const Mat& av = t.value(a);
  const Mat& xv = t.value(x);
  if (!av.same_shape(xv))
    throw std::invalid_argument("salience_fuse: shape mismatch " + av.shape_str() + " vs " +
                                xv.shape_str());
  Value gate = t.sigmoid(mlp_apply(ctx, p.mlp, t.concat_cols(a, x)));
  Value one_minus = t.offset(t.scale(gate, -1.0), 1.0);
  Value fused = t.add(t.mul(one_minus, a), t.mul(gate, x));
  if (ctx.probe) ctx.probe->note_gate(av, xv, t.value(fused));
  return fused;
}

}  // namespace pgnet
