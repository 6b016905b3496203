#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vulnmatch/autodiff.hpp"

namespace vulnmatch {
namespace ad {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  // Location of the worst coordinate, for debugging.
  int input_index = -1;
  Eigen::Index row = -1;
  Eigen::Index col = -1;

  std::string describe() const {
    return "max_rel_err=" + std::to_string(max_rel_err) + " at input " +
           std::to_string(input_index) + " (" + std::to_string(row) + "," +
           std::to_string(col) + ")";
  }
};

// Central finite differences per coordinate against reverse-mode gradients.
// `build` must be deterministic (dropout off) and return a scalar node built
// from the supplied leaves. Relative error uses max(1, |a|, |n|) so exact
// zeros compare absolutely.
template <typename S, typename BuildFn>
GradCheckReport grad_check(BuildFn&& build, const std::vector<MatT<S>>& inputs,
                           double eps = 1e-5) {
  using Mat = MatT<S>;

  auto eval = [&](const std::vector<Mat>& xs) -> double {
    Tape<S> tape(/*recording=*/false);
    std::vector<Var<S>> vars;
    vars.reserve(xs.size());
    for (const Mat& x : xs) vars.push_back(tape.leaf(x));
    Var<S> out = build(tape, vars);
    return static_cast<double>(tape.val(out)(0, 0));
  };

  // Reverse-mode gradients.
  Tape<S> tape;
  std::vector<Var<S>> vars;
  vars.reserve(inputs.size());
  for (const Mat& x : inputs) vars.push_back(tape.leaf(x));
  Var<S> loss = build(tape, vars);
  tape.backward(loss);
  std::vector<Mat> analytic;
  analytic.reserve(inputs.size());
  for (const Var<S>& v : vars) analytic.push_back(tape.grad(v));

  GradCheckReport report;
  std::vector<Mat> xs = inputs;
  for (size_t m = 0; m < xs.size(); ++m) {
    for (Eigen::Index i = 0; i < xs[m].rows(); ++i) {
      for (Eigen::Index j = 0; j < xs[m].cols(); ++j) {
        S saved = xs[m](i, j);
        xs[m](i, j) = saved + static_cast<S>(eps);
        double up = eval(xs);
        xs[m](i, j) = saved - static_cast<S>(eps);
        double down = eval(xs);
        xs[m](i, j) = saved;
        double numeric = (up - down) / (2.0 * eps);
        double a = static_cast<double>(analytic[m](i, j));
        double abs_err = std::abs(a - numeric);
        double rel = abs_err / std::max({1.0, std::abs(a), std::abs(numeric)});
        if (rel > report.max_rel_err) {
          report.max_rel_err = rel;
          report.max_abs_err = abs_err;
          report.input_index = static_cast<int>(m);
          report.row = i;
          report.col = j;
        }
      }
    }
  }
  return report;
}

}  // namespace ad
}  // namespace vulnmatch
