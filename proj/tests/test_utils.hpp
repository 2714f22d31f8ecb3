#pragma once

#include "unimov/autodiff.hpp"
#include "unimov/rng.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace unimov::testutil {

using ad::Mat;
using ad::ParamStore;
using ad::Parameter;

// Central finite differences against analytic gradients for every entry of
// every parameter touched by `loss_fn` (or a sampled subset when `stride`
// > 1). Returns the worst relative error seen.
inline double gradient_check(ParamStore& store,
                             const std::function<double(bool)>& loss_fn,
                             double step = 1e-5, int stride = 1) {
  // loss_fn(true) must run forward+backward and leave gradients in the
  // store; loss_fn(false) must only evaluate the loss.
  store.zero_grads();
  loss_fn(true);

  double worst = 0.0;
  int cursor = 0;
  store.for_each([&](Parameter& p) {
    const Mat analytic = p.grad;
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
        if (stride > 1 && (cursor++ % stride) != 0) continue;
        const double saved = p.value(r, c);
        p.value(r, c) = saved + step;
        const double hi = loss_fn(false);
        p.value(r, c) = saved - step;
        const double lo = loss_fn(false);
        p.value(r, c) = saved;
        const double fd = (hi - lo) / (2.0 * step);
        const double an = analytic(r, c);
        const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
        worst = std::max(worst, std::fabs(fd - an) / denom);
      }
    }
  });
  return worst;
}

inline Mat random_mat(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
  return m;
}

}  // namespace unimov::testutil
