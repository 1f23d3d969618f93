#include "pgnet/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pgnet {

namespace {

void matmul_into(const Mat& a, const Mat& b, Mat& out) {
  const int n = a.rows(), k = a.cols(), m = b.cols();
  for (int i = 0; i < n; ++i) {
    double* out_row = out.row(i);
    const double* a_row = a.row(i);
    for (int p = 0; p < k; ++p) {
      const double av = a_row[p];
      const double* b_row = b.row(p);
      for (int j = 0; j < m; ++j) out_row[j] += av * b_row[j];
    }
  }
}

// dA += dC * B^T, laid out as dot products over contiguous rows.
void matmul_bt_into(const Mat& dc, const Mat& b, Mat& da) {
  const int n = dc.rows(), m = dc.cols(), k = b.rows();
  for (int i = 0; i < n; ++i) {
    const double* dc_row = dc.row(i);
    double* da_row = da.row(i);
    for (int p = 0; p < k; ++p) {
      const double* b_row = b.row(p);
      double acc = 0.0;
      for (int j = 0; j < m; ++j) acc += dc_row[j] * b_row[j];
      da_row[p] += acc;
    }
  }
}

// dB += A^T * dC.
void matmul_at_into(const Mat& a, const Mat& dc, Mat& db) {
  const int n = a.rows(), k = a.cols(), m = dc.cols();
  for (int i = 0; i < n; ++i) {
    const double* a_row = a.row(i);
    const double* dc_row = dc.row(i);
    for (int p = 0; p < k; ++p) {
      const double av = a_row[p];
      double* db_row = db.row(p);
      for (int j = 0; j < m; ++j) db_row[j] += av * dc_row[j];
    }
  }
}

}  // namespace

void Tape::require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument("tape: " + msg);
}

void Tape::check(Value v, const char* op) const {
  require(v.id >= 0 && v.id < static_cast<int>(nodes_.size()),
          std::string(op) + ": invalid value handle");
}

const Tape::Node& Tape::node(Value v) const { return nodes_[v.id]; }

Value Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Value{static_cast<int>(nodes_.size()) - 1};
}

const Mat& Tape::value(Value v) const {
  check(v, "value");
  return nodes_[v.id].val;
}

Value Tape::leaf(Mat m) {
  Node n{Op::kLeaf};
  n.val = std::move(m);
  n.needs_grad = true;
  return push(std::move(n));
}

Value Tape::constant(Mat m) {
  Node n{Op::kConstant};
  n.val = std::move(m);
  return push(std::move(n));
}

Value Tape::add(Value a, Value b) {
  check(a, "add");
  check(b, "add");
  const Mat& x = node(a).val;
  const Mat& y = node(b).val;
  require(x.same_shape(y), "add: shape mismatch " + x.shape_str() + " vs " + y.shape_str());
  Node n{Op::kAdd, a.id, b.id};
  n.val = x;
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] += y[i];
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(n));
}

Value Tape::sub(Value a, Value b) {
  check(a, "sub");
  check(b, "sub");
  const Mat& x = node(a).val;
  const Mat& y = node(b).val;
  require(x.same_shape(y), "sub: shape mismatch " + x.shape_str() + " vs " + y.shape_str());
  Node n{Op::kSub, a.id, b.id};
  n.val = x;
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] -= y[i];
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(n));
}

Value Tape::mul(Value a, Value b) {
  check(a, "mul");
  check(b, "mul");
  const Mat& x = node(a).val;
  const Mat& y = node(b).val;
  require(x.same_shape(y), "mul: shape mismatch " + x.shape_str() + " vs " + y.shape_str());
  Node n{Op::kMul, a.id, b.id};
  n.val = x;
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] *= y[i];
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(n));
}

Value Tape::offset(Value a, double c) {
  check(a, "offset");
  Node n{Op::kOffset, a.id};
  n.scalar = c;
  n.val = node(a).val;
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] += c;
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Tape::scale(Value a, double c) {
  check(a, "scale");
  Node n{Op::kScale, a.id};
  n.scalar = c;
  n.val = node(a).val;
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] *= c;
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Tape::reciprocal(Value a) {
  check(a, "reciprocal");
  Node n{Op::kReciprocal, a.id};
  n.val = node(a).val;
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = 1.0 / n.val[i];
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Tape::abs(Value a) {
  check(a, "abs");
  Node n{Op::kAbs, a.id};
  n.val = node(a).val;
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = std::fabs(n.val[i]);
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Tape::relu(Value a) {
  check(a, "relu");
  Node n{Op::kRelu, a.id};
  n.val = node(a).val;
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = std::max(0.0, n.val[i]);
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Tape::sigmoid(Value a) {
  check(a, "sigmoid");
  Node n{Op::kSigmoid, a.id};
  n.val = node(a).val;
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = 1.0 / (1.0 + std::exp(-n.val[i]));
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Tape::sqrt(Value a) {
  check(a, "sqrt");
  Node n{Op::kSqrt, a.id};
  n.val = node(a).val;
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = std::sqrt(n.val[i]);
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Tape::softmax_rows(Value a) {
  check(a, "softmax_rows");
  const Mat& x = node(a).val;
  Node n{Op::kSoftmaxRows, a.id};
  n.val = Mat(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    const double* in = x.row(i);
    double* out = n.val.row(i);
    double max_v = in[0];
    for (int j = 1; j < x.cols(); ++j) max_v = std::max(max_v, in[j]);
    double denom = 0.0;
    for (int j = 0; j < x.cols(); ++j) {
      out[j] = std::exp(in[j] - max_v);
      denom += out[j];
    }
    for (int j = 0; j < x.cols(); ++j) out[j] /= denom;
  }
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Tape::matmul(Value a, Value b) {
  check(a, "matmul");
  check(b, "matmul");
  const Mat& x = node(a).val;
  const Mat& y = node(b).val;
  require(x.cols() == y.rows(),
          "matmul: inner dimension mismatch " + x.shape_str() + " vs " + y.shape_str());
  Node n{Op::kMatmul, a.id, b.id};
  n.val = Mat(x.rows(), y.cols());
  matmul_into(x, y, n.val);
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(n));
}

Value Tape::transpose(Value a) {
  check(a, "transpose");
  const Mat& x = node(a).val;
  Node n{Op::kTranspose, a.id};
  n.val = Mat(x.cols(), x.rows());
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) n.val(j, i) = x(i, j);
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Tape::concat_cols(Value a, Value b) {
  check(a, "concat_cols");
  check(b, "concat_cols");
  const Mat& x = node(a).val;
  const Mat& y = node(b).val;
  require(x.rows() == y.rows(),
          "concat_cols: row mismatch " + x.shape_str() + " vs " + y.shape_str());
  Node n{Op::kConcatCols, a.id, b.id};
  n.i0 = x.cols();
  n.val = Mat(x.rows(), x.cols() + y.cols());
  for (int i = 0; i < x.rows(); ++i) {
    double* out = n.val.row(i);
    const double* xa = x.row(i);
    const double* xb = y.row(i);
    std::copy(xa, xa + x.cols(), out);
    std::copy(xb, xb + y.cols(), out + x.cols());
  }
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(n));
}

Value Tape::slice_cols(Value a, int col_begin, int col_end) {
  check(a, "slice_cols");
  const Mat& x = node(a).val;
  require(0 <= col_begin && col_begin < col_end && col_end <= x.cols(),
          "slice_cols: range out of bounds for " + x.shape_str());
  Node n{Op::kSliceCols, a.id};
  n.i0 = col_begin;
  n.i1 = col_end;
  n.val = Mat(x.rows(), col_end - col_begin);
  for (int i = 0; i < x.rows(); ++i) {
    const double* in = x.row(i) + col_begin;
    std::copy(in, in + n.val.cols(), n.val.row(i));
  }
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Tape::reshape(Value a, int rows, int cols) {
  check(a, "reshape");
  const Mat& x = node(a).val;
  require(std::size_t(rows) * std::size_t(cols) == x.size(),
          "reshape: element count mismatch for " + x.shape_str());
  Node n{Op::kReshape, a.id};
  n.i0 = x.rows();
  n.i1 = x.cols();
  n.val = Mat(rows, cols);
  std::copy(x.data(), x.data() + x.size(), n.val.data());
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Tape::gather_rows(Value a, std::vector<int> rows) {
  check(a, "gather_rows");
  const Mat& x = node(a).val;
  for (int r : rows)
    require(0 <= r && r < x.rows(), "gather_rows: index out of range for " + x.shape_str());
  Node n{Op::kGatherRows, a.id};
  n.val = Mat(static_cast<int>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* in = x.row(rows[i]);
    std::copy(in, in + x.cols(), n.val.row(static_cast<int>(i)));
  }
  n.idx = std::move(rows);
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Tape::repeat_rows(Value a, int times) {
  check(a, "repeat_rows");
  require(times >= 1, "repeat_rows: times must be positive");
  const Mat& x = node(a).val;
  Node n{Op::kRepeatRows, a.id};
  n.i0 = times;
  n.val = Mat(x.rows() * times, x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    const double* in = x.row(i);
    for (int t = 0; t < times; ++t)
      std::copy(in, in + x.cols(), n.val.row(i * times + t));
  }
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Tape::broadcast_cols(Value a, int cols) {
  check(a, "broadcast_cols");
  const Mat& x = node(a).val;
  require(x.cols() == 1, "broadcast_cols: input must be Nx1, got " + x.shape_str());
  require(cols >= 1, "broadcast_cols: cols must be positive");
  Node n{Op::kBroadcastCols, a.id};
  n.val = Mat(x.rows(), cols);
  for (int i = 0; i < x.rows(); ++i) {
    double* out = n.val.row(i);
    std::fill(out, out + cols, x(i, 0));
  }
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Tape::row_sum(Value a) {
  check(a, "row_sum");
  const Mat& x = node(a).val;
  Node n{Op::kRowSum, a.id};
  n.val = Mat(x.rows(), 1);
  for (int i = 0; i < x.rows(); ++i) {
    const double* in = x.row(i);
    double acc = 0.0;
    for (int j = 0; j < x.cols(); ++j) acc += in[j];
    n.val(i, 0) = acc;
  }
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Tape::sum_all(Value a) {
  check(a, "sum_all");
  const Mat& x = node(a).val;
  Node n{Op::kSumAll, a.id};
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
  n.val = Mat::scalar(acc);
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Tape::mean_all(Value a) {
  check(a, "mean_all");
  const Mat& x = node(a).val;
  require(!x.empty(), "mean_all: empty input");
  Node n{Op::kMeanAll, a.id};
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
  n.val = Mat::scalar(acc / double(x.size()));
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Tape::group_sum(Value a, std::vector<int> groups, int group_count) {
  check(a, "group_sum");
  const Mat& x = node(a).val;
  require(static_cast<int>(groups.size()) == x.rows(),
          "group_sum: group list length mismatch for " + x.shape_str());
  for (int g : groups)
    require(0 <= g && g < group_count, "group_sum: group id out of range");
  Node n{Op::kGroupSum, a.id};
  n.val = Mat(group_count, x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    double* out = n.val.row(groups[i]);
    const double* in = x.row(i);
    for (int j = 0; j < x.cols(); ++j) out[j] += in[j];
  }
  n.idx = std::move(groups);
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Tape::group_max(Value a, std::vector<int> groups, int group_count) {
  check(a, "group_max");
  const Mat& x = node(a).val;
  require(static_cast<int>(groups.size()) == x.rows(),
          "group_max: group list length mismatch for " + x.shape_str());
  std::vector<int> counts(group_count, 0);
  for (int g : groups) {
    require(0 <= g && g < group_count, "group_max: group id out of range");
    ++counts[g];
  }
  for (int c : counts) require(c > 0, "group_max: empty group");
  Node n{Op::kGroupMax, a.id};
  n.val = Mat(group_count, x.cols());
  n.argmax.assign(std::size_t(group_count) * x.cols(), -1);
  for (int i = 0; i < x.rows(); ++i) {
    const int g = groups[i];
    const double* in = x.row(i);
    double* out = n.val.row(g);
    int* am = n.argmax.data() + std::size_t(g) * x.cols();
    for (int j = 0; j < x.cols(); ++j) {
      if (am[j] < 0 || in[j] > out[j]) {
        out[j] = in[j];
        am[j] = i;
      }
    }
  }
  n.idx = std::move(groups);
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

void Tape::backward_node(int i, std::vector<Mat>& grads) const {
  const Node& n = nodes_[i];
  const Mat& dc = grads[i];
  if (dc.empty()) return;

  auto accumulate = [&](int target, auto&& fill) {
    if (target < 0 || !nodes_[target].needs_grad) return;
    Mat& g = grads[target];
    if (g.empty()) g = Mat(nodes_[target].val.rows(), nodes_[target].val.cols());
    fill(g);
  };

  switch (n.op) {
    case Op::kLeaf:
    case Op::kConstant:
      break;
    case Op::kAdd:
      accumulate(n.a, [&](Mat& g) {
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += dc[k];
      });
      accumulate(n.b, [&](Mat& g) {
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += dc[k];
      });
      break;
    case Op::kSub:
      accumulate(n.a, [&](Mat& g) {
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += dc[k];
      });
      accumulate(n.b, [&](Mat& g) {
        for (std::size_t k = 0; k < g.size(); ++k) g[k] -= dc[k];
      });
      break;
    case Op::kMul:
      accumulate(n.a, [&](Mat& g) {
        const Mat& other = nodes_[n.b].val;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += dc[k] * other[k];
      });
      accumulate(n.b, [&](Mat& g) {
        const Mat& other = nodes_[n.a].val;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += dc[k] * other[k];
      });
      break;
    case Op::kOffset:
      accumulate(n.a, [&](Mat& g) {
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += dc[k];
      });
      break;
    case Op::kScale:
      accumulate(n.a, [&](Mat& g) {
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += dc[k] * n.scalar;
      });
      break;
    case Op::kReciprocal:
      accumulate(n.a, [&](Mat& g) {
        for (std::size_t k = 0; k < g.size(); ++k) g[k] -= dc[k] * n.val[k] * n.val[k];
      });
      break;
    case Op::kAbs:
      accumulate(n.a, [&](Mat& g) {
        const Mat& x = nodes_[n.a].val;
        for (std::size_t k = 0; k < g.size(); ++k) {
          if (x[k] > 0.0)
            g[k] += dc[k];
          else if (x[k] < 0.0)
            g[k] -= dc[k];
        }
      });
      break;
    case Op::kRelu:
      accumulate(n.a, [&](Mat& g) {
        const Mat& x = nodes_[n.a].val;
        for (std::size_t k = 0; k < g.size(); ++k)
          if (x[k] > 0.0) g[k] += dc[k];
      });
      break;
    case Op::kSigmoid:
      accumulate(n.a, [&](Mat& g) {
        for (std::size_t k = 0; k < g.size(); ++k)
          g[k] += dc[k] * n.val[k] * (1.0 - n.val[k]);
      });
      break;
    case Op::kSqrt:
      // Clamp the denominator so coincident points (distance exactly zero)
      // yield a finite, zero-ward gradient instead of Inf.
      accumulate(n.a, [&](Mat& g) {
        for (std::size_t k = 0; k < g.size(); ++k)
          g[k] += dc[k] * 0.5 / std::max(n.val[k], 1e-12);
      });
      break;
    case Op::kSoftmaxRows:
      accumulate(n.a, [&](Mat& g) {
        for (int r = 0; r < n.val.rows(); ++r) {
          const double* y = n.val.row(r);
          const double* d = dc.row(r);
          double dot = 0.0;
          for (int j = 0; j < n.val.cols(); ++j) dot += d[j] * y[j];
          double* out = g.row(r);
          for (int j = 0; j < n.val.cols(); ++j) out[j] += y[j] * (d[j] - dot);
        }
      });
      break;
    case Op::kMatmul:
      accumulate(n.a, [&](Mat& g) { matmul_bt_into(dc, nodes_[n.b].val, g); });
      accumulate(n.b, [&](Mat& g) { matmul_at_into(nodes_[n.a].val, dc, g); });
      break;
    case Op::kTranspose:
      accumulate(n.a, [&](Mat& g) {
        for (int r = 0; r < dc.rows(); ++r)
          for (int c = 0; c < dc.cols(); ++c) g(c, r) += dc(r, c);
      });
      break;
    case Op::kConcatCols:
      accumulate(n.a, [&](Mat& g) {
        for (int r = 0; r < g.rows(); ++r) {
          const double* in = dc.row(r);
          double* out = g.row(r);
          for (int c = 0; c < g.cols(); ++c) out[c] += in[c];
        }
      });
      accumulate(n.b, [&](Mat& g) {
        for (int r = 0; r < g.rows(); ++r) {
          const double* in = dc.row(r) + n.i0;
          double* out = g.row(r);
          for (int c = 0; c < g.cols(); ++c) out[c] += in[c];
        }
      });
      break;
    case Op::kSliceCols:
      accumulate(n.a, [&](Mat& g) {
        for (int r = 0; r < dc.rows(); ++r) {
          const double* in = dc.row(r);
          double* out = g.row(r) + n.i0;
          for (int c = 0; c < dc.cols(); ++c) out[c] += in[c];
        }
      });
      break;
    case Op::kReshape:
      accumulate(n.a, [&](Mat& g) {
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += dc[k];
      });
      break;
    case Op::kGatherRows:
      accumulate(n.a, [&](Mat& g) {
        for (std::size_t r = 0; r < n.idx.size(); ++r) {
          const double* in = dc.row(static_cast<int>(r));
          double* out = g.row(n.idx[r]);
          for (int c = 0; c < dc.cols(); ++c) out[c] += in[c];
        }
      });
      break;
    case Op::kRepeatRows:
      accumulate(n.a, [&](Mat& g) {
        for (int r = 0; r < g.rows(); ++r) {
          double* out = g.row(r);
          for (int t = 0; t < n.i0; ++t) {
            const double* in = dc.row(r * n.i0 + t);
            for (int c = 0; c < g.cols(); ++c) out[c] += in[c];
          }
        }
      });
      break;
    case Op::kBroadcastCols:
      accumulate(n.a, [&](Mat& g) {
        for (int r = 0; r < dc.rows(); ++r) {
          const double* in = dc.row(r);
          double acc = 0.0;
          for (int c = 0; c < dc.cols(); ++c) acc += in[c];
          g(r, 0) += acc;
        }
      });
      break;
    case Op::kRowSum:
      accumulate(n.a, [&](Mat& g) {
        for (int r = 0; r < g.rows(); ++r) {
          const double d = dc(r, 0);
          double* out = g.row(r);
          for (int c = 0; c < g.cols(); ++c) out[c] += d;
        }
      });
      break;
    case Op::kSumAll:
      accumulate(n.a, [&](Mat& g) {
        const double d = dc(0, 0);
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += d;
      });
      break;
    case Op::kMeanAll:
      accumulate(n.a, [&](Mat& g) {
        const double d = dc(0, 0) / double(g.size());
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += d;
      });
      break;
    case Op::kGroupSum:
      accumulate(n.a, [&](Mat& g) {
        for (std::size_t r = 0; r < n.idx.size(); ++r) {
          const double* in = dc.row(n.idx[r]);
          double* out = g.row(static_cast<int>(r));
          for (int c = 0; c < dc.cols(); ++c) out[c] += in[c];
        }
      });
      break;
    case Op::kGroupMax:
      accumulate(n.a, [&](Mat& g) {
        for (int gr = 0; gr < n.val.rows(); ++gr) {
          const int* am = n.argmax.data() + std::size_t(gr) * n.val.cols();
          const double* in = dc.row(gr);
          for (int c = 0; c < n.val.cols(); ++c) g(am[c], c) += in[c];
        }
      });
      break;
  }
}

void Tape::backward(Value root) {
  check(root, "backward");
  const Node& r = nodes_[root.id];
  require(r.val.rows() == 1 && r.val.cols() == 1,
          "backward: root must be a scalar, got " + r.val.shape_str());
  grads_.assign(nodes_.size(), Mat());
  grads_[root.id] = Mat::scalar(1.0);
  for (int i = root.id; i >= 0; --i) backward_node(i, grads_);
}

Mat Tape::grad(Value v) const {
  check(v, "grad");
  if (v.id < static_cast<int>(grads_.size()) && !grads_[v.id].empty()) return grads_[v.id];
  const Mat& x = nodes_[v.id].val;
  return Mat(x.rows(), x.cols());
}

}  // namespace pgnet
