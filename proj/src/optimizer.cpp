#include "pgnet/optimizer.hpp"

#include <cmath>

#include "pgnet/errors.hpp"

namespace pgnet {

AdamW::AdamW(const ParamStore& store, Options opt) : opt_(opt) {
  m_.reserve(store.count());
  v_.reserve(store.count());
  for (int i = 0; i < store.count(); ++i) {
    const Mat& t = store.tensor(i);
    m_.emplace_back(t.rows(), t.cols());
    v_.emplace_back(t.rows(), t.cols());
  }
}

double AdamW::lr_at(int step) const {
  const double phase = 3.14159265358979323846 * double(step) / double(opt_.total_steps);
  return opt_.base_lr * 0.5 * (1.0 + std::cos(phase));
}

void AdamW::step(ParamStore& store, const std::vector<Mat>& grads, int step_index) {
  const double lr = lr_at(step_index);
  ++updates_done_;
  const double bias1 = 1.0 - std::pow(opt_.beta1, double(updates_done_));
  const double bias2 = 1.0 - std::pow(opt_.beta2, double(updates_done_));

  for (int i = 0; i < store.count(); ++i) {
    Mat& p = store.tensor(i);
    const Mat& g = grads[i];
    Mat& m = m_[i];
    Mat& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (!std::isfinite(g[k]))
        throw NumericalError("optimizer: non-finite gradient in " + store.name(i));
      m[k] = opt_.beta1 * m[k] + (1.0 - opt_.beta1) * g[k];
      v[k] = opt_.beta2 * v[k] + (1.0 - opt_.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bias1;
      const double v_hat = v[k] / bias2;
      p[k] -= lr * (m_hat / (std::sqrt(v_hat) + opt_.epsilon) + opt_.weight_decay * p[k]);
    }
  }
}

}  // namespace pgnet
