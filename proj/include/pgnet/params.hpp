#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "pgnet/mat.hpp"
#include "pgnet/tape.hpp"

namespace pgnet {

// Owns every learnable tensor of a model, addressed by a unique name path.
// Declaration order is fixed at model construction and doubles as the
// checkpoint order, so identical configs produce identical files.
class ParamStore {
 public:
  int declare(const std::string& name, int rows, int cols);

  int index_of(const std::string& name) const;
  int count() const { return static_cast<int>(tensors_.size()); }
  const std::string& name(int i) const { return names_[i]; }
  Mat& tensor(int i) { return tensors_[i]; }
  const Mat& tensor(int i) const { return tensors_[i]; }
  Mat& tensor(const std::string& name) { return tensors_[index_of(name)]; }

  std::size_t scalar_count() const;

  // Binary checkpoint ("PGNK"). Load requires the file to carry exactly the
  // declared parameter set with matching shapes; anything else is a StateError.
  void save(const std::string& path) const;
  void load(const std::string& path);

 private:
  std::vector<std::string> names_;
  std::vector<Mat> tensors_;
  std::unordered_map<std::string, int> by_name_;
};

// Per-tape view of a ParamStore: binds each parameter as a leaf on first use,
// so one forward pass touches each tensor exactly once and gradients can be
// pulled back out by store index after backward().
class Binder {
 public:
  Binder(ParamStore& store, Tape& tape) : store_(&store), tape_(&tape) {}

  Value operator[](int param_index);
  Value operator[](const std::string& name) { return (*this)[store_->index_of(name)]; }

  Tape& tape() { return *tape_; }

  // Adds scale * d(root)/d(param) into accum[i] for every parameter bound on
  // this tape. Parameters never bound (unreachable from the root) are left
  // untouched, which keeps their accumulated gradient at zero.
  void accumulate_gradients(double scale, std::vector<Mat>& accum) const;

 private:
  ParamStore* store_;
  Tape* tape_;
  std::unordered_map<int, Value> bound_;
};

// Zero-filled gradient accumulator matching the store layout.
std::vector<Mat> make_gradient_buffer(const ParamStore& store);

}  // namespace pgnet
