#include "spatialrl/diff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace spatialrl::diff {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  const Tensor y = f();
  if (y.size() != 1) throw ShapeError("finite_diff_check: f must return a scalar, got " + shape_string(y.shape()));
  const double v = y.item();
  if (!std::isfinite(v)) throw std::domain_error("finite_diff_check: f produced a non-finite value");
  return v;
}

}  // namespace

GradCheckResult finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                  const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  if (options.stencil != 2 && options.stencil != 4) throw std::invalid_argument("finite_diff_check: stencil must be 2 or 4");

  std::vector<bool> previous_flags;
  for (auto& p : params) {
    previous_flags.push_back(p.requires_grad());
    p.set_requires_grad(true);
    p.clear_grad();
  }

  {
    Tape tape;
    const Tensor y = f();
    if (y.size() != 1) throw ShapeError("finite_diff_check: f must return a scalar, got " + shape_string(y.shape()));
    if (!std::isfinite(y.item())) throw std::domain_error("finite_diff_check: f produced a non-finite value");
    tape.backward(y);
  }

  Rng rng(options.entry_seed);
  GradCheckResult result;
  const double h = options.step;
  for (std::size_t ti = 0; ti < params.size(); ++ti) {
    Tensor& p = params[ti];
    std::vector<double> analytic(p.size(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());

    std::vector<std::size_t> entries(p.size());
    std::iota(entries.begin(), entries.end(), 0);
    if (options.max_entries_per_tensor && entries.size() > *options.max_entries_per_tensor) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(*options.max_entries_per_tensor);
    }

    auto values = p.mutable_data();
    for (std::size_t e : entries) {
      const double saved = values[e];
      auto at = [&](double offset) {
        values[e] = saved + offset;
        return evaluate(f);
      };
      double numeric = 0.0;
      if (options.stencil == 2) {
        numeric = (at(h) - at(-h)) / (2.0 * h);
      } else {
        numeric = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
      }
      values[e] = saved;
      const double denom = std::max({std::abs(analytic[e]), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic[e] - numeric) / denom;
      ++result.entries_checked;
      if (rel > result.max_relative_error || result.entries_checked == 1) {
        result.max_relative_error = std::max(rel, result.max_relative_error);
        result.worst_tensor = ti;
        result.worst_entry = e;
        result.worst_analytic = analytic[e];
        result.worst_numeric = numeric;
      }
    }
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].clear_grad();
    params[i].set_requires_grad(previous_flags[i]);
  }
  return result;
}

}  // namespace spatialrl::diff
