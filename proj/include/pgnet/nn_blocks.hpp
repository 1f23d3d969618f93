#pragma once

#include <string>
#include <vector>

#include "pgnet/params.hpp"
#include "pgnet/rng.hpp"
#include "pgnet/tape.hpp"

namespace pgnet {

// Collects structural evidence during a forward pass: attention row sums,
// gate convexity, and emitted cloud sizes. Optional; attach one to a Ctx to
// audit every softmax and gate the model evaluates.
struct ForwardProbe {
  double max_attention_row_error = 0.0;  // max |sum(row) - 1| over all softmaxes
  double max_gate_excess = 0.0;          // max distance of a gate output outside [min,max]
  long attention_rows_seen = 0;
  std::vector<int> cardinalities;        // coarse + per-level point counts, in order

  // When set, emitted cloud sizes are checked against this cycle instead of
  // being recorded, so a long training run can be audited in O(1) memory.
  std::vector<int> expected_cardinalities;
  long cardinality_violations = 0;
  long forwards_seen = 0;

  void note_attention(const Mat& weights);
  void note_gate(const Mat& a, const Mat& x, const Mat& out);
  void note_cardinality(int n);

  // Folds another probe's evidence into this one: maxima of the error fields,
  // sums of the counters, recorded cardinalities appended. Lets each worker
  // audit with a private probe and combine results after joining.
  void merge_from(const ForwardProbe& other);

 private:
  std::size_t cardinality_cursor_ = 0;
};

// Everything a forward function needs: parameter bindings (which carry the
// tape) and an optional probe.
struct Ctx {
  Binder& params;
  ForwardProbe* probe = nullptr;

  Tape& tape() const { return params.tape(); }
  const Mat& value(Value v) const { return params.tape().value(v); }
};

struct LinearParams {
  int weight = -1;
  int bias = -1;
};

// Weight init: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); biases zero. Draws
// happen in declaration order, so a fixed seed fixes every initial tensor.
LinearParams declare_linear(ParamStore& store, const std::string& prefix, int in_dim,
                            int out_dim, Rng& rng);
Value linear_apply(Ctx& ctx, const LinearParams& p, Value x);

// Plain MLP: linear layers with ReLU between them, none after the last.
struct MlpParams {
  std::vector<LinearParams> layers;
};
MlpParams declare_mlp(ParamStore& store, const std::string& prefix,
                      const std::vector<int>& widths, Rng& rng);
Value mlp_apply(Ctx& ctx, const MlpParams& p, Value x);

// Scaled dot-product multi-head attention with learned Q/K/V/output
// projections. Self-attention is the q_set == kv_set case.
struct AttentionParams {
  int heads = 0;
  int dim = 0;
  LinearParams q, k, v, o;
};
AttentionParams declare_attention(ParamStore& store, const std::string& prefix, int heads,
                                  int dim, Rng& rng);
Value attention_apply(Ctx& ctx, const AttentionParams& p, Value q_set, Value kv_set);

// Positional embedding: 2-layer MLP 3 -> D -> D over coordinates or offsets.
MlpParams declare_pos_embed(ParamStore& store, const std::string& prefix, int dim, Rng& rng);

// Salience gate fusion: G = sigmoid(MLP([a, x])) with MLP 2D -> D -> D,
// output (1-G)*a + G*x. Elementwise convex, so the result stays between the
// branch values.
struct SalienceGateParams {
  MlpParams mlp;
};
SalienceGateParams declare_salience_gate(ParamStore& store, const std::string& prefix, int dim,
                                         Rng& rng);
Value salience_fuse(Ctx& ctx, const SalienceGateParams& p, Value a, Value x);

}  // namespace pgnet
