#pragma once

#include <vector>

#include "pgnet/params.hpp"

namespace pgnet {

// AdamW with bias-corrected moments and decoupled weight decay, on a cosine
// schedule annealing the learning rate to zero at total_steps.
class AdamW {
 public:
  struct Options {
    double base_lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-2;
    int total_steps = 2000;
  };

  AdamW(const ParamStore& store, Options opt);

  double lr_at(int step) const;

  // Applies one update using lr_at(step_index). A NaN/Inf gradient aborts
  // with the parameter's name.
  void step(ParamStore& store, const std::vector<Mat>& grads, int step_index);

 private:
  Options opt_;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  long updates_done_ = 0;
};

}  // namespace pgnet
