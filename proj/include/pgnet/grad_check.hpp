#pragma once

#include <functional>
#include <string>

#include "pgnet/params.hpp"

namespace pgnet {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_entry;  // "param.name[k]" of the max, for diagnostics
  int checked = 0;
  int excluded = 0;
};

// Compares analytic gradients of a scalar function against central finite
// differences, entry by entry over every parameter in the store.
//
// Relative error per entry: |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
//
// Two kinds of entries are excluded (and counted, never silently dropped):
//   - kink straddles: the one-sided difference quotients disagree, meaning a
//     non-smooth point (ReLU corner, |.| at zero, max-pool tie, nearest-
//     neighbor flip) lies inside the probe interval, where no single
//     derivative exists;
//   - sub-resolution entries: both derivatives are below 1e-7, under the
//     noise floor of finite differences at this step size. A disconnected
//     entry still yields an exact zero on both sides, so systematic backward
//     bugs (a path whose gradient is wrongly zero or wrongly nonzero) remain
//     visible through the non-tiny side.
GradCheckResult grad_check(ParamStore& store,
                           const std::function<Value(Binder&)>& build,
                           double eps = 1e-5);

}  // namespace pgnet
