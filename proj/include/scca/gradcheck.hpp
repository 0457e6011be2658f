#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "scca/error.hpp"
#include "scca/tensor.hpp"

namespace scca {

struct GradCheckResult {
  bool passed = false;
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::vector<std::pair<std::string, double>> group_errors;  // max error per parameter
  std::string failure_note;                                  // set on non-finite evaluations
};

/// Central-difference check of reverse-mode gradients. `f` must be a
/// deterministic scalar function of the listed parameters; relative error
/// is |g_ad − g_fd| / max(1, |g_ad| + |g_fd|).
template <typename F>
GradCheckResult finite_diff_check(F&& f,
                                  const std::vector<std::pair<std::string, Tensor<double>*>>& params,
                                  double h = 1e-5, double tol = 1e-4) {
  GradCheckResult result;
  for (auto& [name, p] : params) p->zero_grad();
  Tensor<double> loss = f();
  if (loss.size() != 1) throw ContractError("finite_diff_check: f must return a scalar");
  loss.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, p] : params) analytic.push_back(p->grad());

  auto eval = [&]() -> double {
    NoGradGuard guard;
    return f().value();
  };

  for (std::size_t g = 0; g < params.size(); ++g) {
    const std::string& name = params[g].first;
    Tensor<double>& p = *params[g].second;
    double group_max = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.mut_values()[i];
      double fp = 0.0, fm = 0.0;
      bool finite = true;
      try {
        p.mut_values()[i] = saved + h;
        fp = eval();
        p.mut_values()[i] = saved - h;
        fm = eval();
      } catch (const NumericError&) {
        finite = false;
      }
      p.mut_values()[i] = saved;
      if (!finite || !std::isfinite(fp) || !std::isfinite(fm)) {
        result.failure_note =
            "non-finite evaluation while perturbing " + name + "[" + std::to_string(i) + "]";
        result.passed = false;
        result.max_rel_err = std::numeric_limits<double>::infinity();
        result.worst_param = name;
        result.worst_index = i;
        return result;
      }
      const double g_fd = (fp - fm) / (2.0 * h);
      const double g_ad = analytic[g][i];
      const double rel = std::abs(g_ad - g_fd) / std::max(1.0, std::abs(g_ad) + std::abs(g_fd));
      group_max = std::max(group_max, rel);
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_param = name;
        result.worst_index = i;
      }
    }
    result.group_errors.emplace_back(name, group_max);
  }
  result.passed = result.max_rel_err < tol;
  return result;
}

}  // namespace scca
