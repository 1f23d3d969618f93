#include "pgnet/grad_check.hpp"

#include <cmath>

namespace pgnet {

namespace {

double evaluate(ParamStore& store, const std::function<Value(Binder&)>& build) {
  Tape tape;
  Binder binder(store, tape);
  Value root = build(binder);
  const Mat& v = tape.value(root);
  if (v.rows() != 1 || v.cols() != 1)
    throw std::invalid_argument("grad_check: function must return a scalar");
  return v(0, 0);
}

}  // namespace

GradCheckResult grad_check(ParamStore& store,
                           const std::function<Value(Binder&)>& build,
                           double eps) {
  std::vector<Mat> analytic = make_gradient_buffer(store);
  {
    Tape tape;
    Binder binder(store, tape);
    Value root = build(binder);
    const Mat& v = tape.value(root);
    if (v.rows() != 1 || v.cols() != 1)
      throw std::invalid_argument("grad_check: function must return a scalar");
    tape.backward(root);
    binder.accumulate_gradients(1.0, analytic);
  }
  const double f0 = evaluate(store, build);

  GradCheckResult result;
  for (int p = 0; p < store.count(); ++p) {
    Mat& tensor = store.tensor(p);
    for (std::size_t k = 0; k < tensor.size(); ++k) {
      const double original = tensor[k];
      tensor[k] = original + eps;
      const double f_plus = evaluate(store, build);
      tensor[k] = original - eps;
      const double f_minus = evaluate(store, build);
      tensor[k] = original;

      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double slope_up = (f_plus - f0) / eps;
      const double slope_down = (f0 - f_minus) / eps;
      const double a = analytic[p](static_cast<int>(k) / tensor.cols(),
                                   static_cast<int>(k) % tensor.cols());

      const bool kink =
          std::fabs(slope_up - slope_down) >
          std::max(1e-4, 1e-3 * (std::fabs(slope_up) + std::fabs(slope_down)));
      const bool sub_resolution = std::fabs(a) < 1e-7 && std::fabs(numeric) < 1e-7;
      if (kink || sub_resolution) {
        ++result.excluded;
        continue;
      }

      const double rel = std::fabs(a - numeric) /
                         std::max(1e-8, std::fabs(a) + std::fabs(numeric));
      ++result.checked;
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_entry = store.name(p) + "[" + std::to_string(k) + "]";
      }
    }
  }
  return result;
}

}  // namespace pgnet
