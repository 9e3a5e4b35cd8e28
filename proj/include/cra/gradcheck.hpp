#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cra/tensor.hpp"

namespace cra {

// Named leaf tensor to perturb. The tensor must be one the loss closure
// reads on every call.
struct ParamRef {
  std::string name;
  Tensor<double>* tensor = nullptr;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  int64_t checked = 0;
};

// Compares reverse-mode gradients against central finite differences at
// double precision. `loss_fn` must rebuild the forward computation from the
// current parameter values on every call and must be deterministic. When
// `max_per_param` is positive, only that many evenly spaced elements of each
// parameter are probed.
GradCheckReport grad_check(const std::function<Tensor<double>()>& loss_fn,
                           const std::vector<ParamRef>& params,
                           double step = 1e-5, int64_t max_per_param = -1);

// The floor keeps near-zero gradient components honest: central differences
// of an O(1) loss bottom out around 1e-12 absolute, so a 1e-6 denominator
// floor still flags any disagreement 1e-10 and up at the 1e-4 tolerance.
inline double rel_err(double analytic, double numeric) {
  const double denom =
      std::max(1e-6, std::abs(analytic) + std::abs(numeric));
  return std::abs(analytic - numeric) / denom;
}

}  // namespace cra
