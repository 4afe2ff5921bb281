#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "popdiff/ndarray.hpp"
#include "popdiff/tape.hpp"

namespace popdiff {

struct GradcheckEntry {
  std::string name;
  double max_abs_error = 0.0;
  /// max |analytic - numeric| over the tensor, divided by the larger of the
  /// two gradients' max-norms (floored at 1e-6, so tensors whose true gradient
  /// vanishes compare on absolute error).
  double relative_error = 0.0;
  bool passed = true;
};

struct GradcheckReport {
  double tolerance = 0.0;
  std::vector<GradcheckEntry> entries;

  bool passed() const {
    return std::all_of(entries.begin(), entries.end(),
                       [](const GradcheckEntry& e) { return e.passed; });
  }
  double worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.relative_error);
    return w;
  }
};

/// Scalar function of tape leaves, built from registered primitives.
using ScalarFunction =
    std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

/// Compares reverse-mode gradients of `fn` at `inputs` against central
/// finite differences with step `h`.
inline GradcheckReport gradcheck(const ScalarFunction& fn,
                                 const std::vector<NdArray<double>>& inputs,
                                 double h = 1e-5, double tolerance = 1e-4,
                                 std::vector<std::string> names = {}) {
  std::vector<NdArray<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> leaves;
    for (const auto& in : inputs) leaves.push_back(tape.leaf(in));
    Var<double> loss = fn(tape, leaves);
    tape.backward(loss);
    for (const auto& v : leaves) analytic.push_back(tape.grad_of(v));
  }

  auto evaluate = [&](const std::vector<NdArray<double>>& at) {
    Tape<double> tape;
    tape.set_grad_enabled(false);
    std::vector<Var<double>> leaves;
    for (const auto& in : at) leaves.push_back(tape.leaf(in));
    return fn(tape, leaves).value().item();
  };

  GradcheckReport report;
  report.tolerance = tolerance;
  std::vector<NdArray<double>> work = inputs;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    double max_diff = 0.0, max_a = 0.0, max_n = 0.0;
    for (std::size_t i = 0; i < inputs[p].size(); ++i) {
      const double x0 = inputs[p][i];
      work[p][i] = x0 + h;
      const double fp = evaluate(work);
      work[p][i] = x0 - h;
      const double fm = evaluate(work);
      work[p][i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[p][i];
      max_diff = std::max(max_diff, std::abs(a - numeric));
      max_a = std::max(max_a, std::abs(a));
      max_n = std::max(max_n, std::abs(numeric));
    }
    GradcheckEntry e;
    e.name = p < names.size() ? names[p] : "input" + std::to_string(p);
    e.max_abs_error = max_diff;
    e.relative_error = max_diff / std::max({max_a, max_n, 1e-6});
    e.passed = e.relative_error <= tolerance;
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace popdiff
