#include "cra/gradcheck.hpp"

#include <cmath>

namespace cra {

GradCheckReport grad_check(const std::function<Tensor<double>()>& loss_fn,
                           const std::vector<ParamRef>& params,
                           double step, int64_t max_per_param) {
  check<ConfigError>(step > 0.0, "finite-difference step must be positive");
  for (const ParamRef& p : params)
    check<ContractError>(p.tensor && p.tensor->defined(),
                         "gradcheck parameter '", p.name, "' is undefined");

  std::vector<std::vector<double>> analytic(params.size());
  {
    Graph<double> g;
    for (const ParamRef& p : params) {
      p.tensor->zero_grad();
      g.attach(*p.tensor);
    }
    Tensor<double> loss = loss_fn();
    g.backward(loss);
    for (size_t i = 0; i < params.size(); ++i)
      analytic[i] = params[i].tensor->grads();
  }

  GradCheckReport report;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double>& t = *params[pi].tensor;
    const int64_t n = t.numel();
    int64_t stride = 1;
    if (max_per_param > 0 && n > max_per_param)
      stride = (n + max_per_param - 1) / max_per_param;
    for (int64_t i = 0; i < n; i += stride) {
      const double saved = t.vals()[i];
      t.vals()[i] = saved + step;
      const double lp = loss_fn().item();
      t.vals()[i] = saved - step;
      const double lm = loss_fn().item();
      t.vals()[i] = saved;
      const double numeric = (lp - lm) / (2.0 * step);
      const double err = rel_err(analytic[pi][i], numeric);
      ++report.checked;
      if (err > report.max_rel_err) {
        report.max_rel_err = err;
        report.worst_param = params[pi].name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace cra
