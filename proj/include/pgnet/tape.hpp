#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pgnet/mat.hpp"

namespace pgnet {

// Handle to a node on a Tape. Only meaningful for the tape that created it.
struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff over dense 2-D double tensors. Nodes are append-only;
// backward walks them in reverse. Index selections (gather rows, group ids,
// argmax inside max-pool) are constants of the forward pass: gradients flow
// through the gathered values, never through the selection itself.
class Tape {
 public:
  // Leaves. `leaf` participates in differentiation, `constant` does not.
  Value leaf(Mat m);
  Value constant(Mat m);

  // Elementwise, same shape.
  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);

  // Elementwise with a compile-time constant.
  Value offset(Value a, double c);
  Value scale(Value a, double c);

  // Elementwise unary.
  Value reciprocal(Value a);
  Value abs(Value a);
  Value relu(Value a);
  Value sigmoid(Value a);
  Value sqrt(Value a);

  // Row-wise softmax (softmax over the last axis).
  Value softmax_rows(Value a);

  // Linear algebra.
  Value matmul(Value a, Value b);
  Value transpose(Value a);

  // Layout.
  Value concat_cols(Value a, Value b);
  Value slice_cols(Value a, int col_begin, int col_end);
  Value reshape(Value a, int rows, int cols);

  // Row selection and replication.
  Value gather_rows(Value a, std::vector<int> rows);
  Value repeat_rows(Value a, int times);       // each row repeated `times` consecutively
  Value broadcast_cols(Value a, int cols);     // Nx1 -> NxC

  // Reductions.
  Value row_sum(Value a);                      // NxC -> Nx1
  Value sum_all(Value a);                      // -> 1x1
  Value mean_all(Value a);                     // -> 1x1
  Value group_sum(Value a, std::vector<int> groups, int group_count);
  Value group_max(Value a, std::vector<int> groups, int group_count);

  // Max-pool over all rows: NxC -> 1xC.
  Value max_rows(Value a) { return group_max(a, std::vector<int>(value(a).rows(), 0), 1); }

  const Mat& value(Value v) const;
  // Gradient of the last backward() root w.r.t. node v; zero matrix when the
  // node was not reached.
  Mat grad(Value v) const;

  // Root must be 1x1. Populates gradients for every differentiable node.
  void backward(Value root);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op {
    kLeaf, kConstant,
    kAdd, kSub, kMul, kOffset, kScale,
    kReciprocal, kAbs, kRelu, kSigmoid, kSqrt,
    kSoftmaxRows,
    kMatmul, kTranspose,
    kConcatCols, kSliceCols, kReshape,
    kGatherRows, kRepeatRows, kBroadcastCols,
    kRowSum, kSumAll, kMeanAll, kGroupSum, kGroupMax,
  };

  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    double scalar = 0.0;
    int i0 = 0;
    int i1 = 0;
    std::vector<int> idx;      // gather rows / group ids
    std::vector<int> argmax;   // group_max: winning row per (group, col)
    Mat val;
    bool needs_grad = false;
  };

  Value push(Node n);
  const Node& node(Value v) const;
  void check(Value v, const char* op) const;
  static void require(bool cond, const std::string& msg);
  void backward_node(int i, std::vector<Mat>& grads) const;

  std::vector<Node> nodes_;
  std::vector<Mat> grads_;
};

}  // namespace pgnet
