#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "spatialrl/diff/parameters.hpp"
#include "spatialrl/diff/tensor.hpp"

namespace spatialrl::diff {

struct GradCheckOptions {
  double step = 1e-5;
  // 2: (f(x+h) - f(x-h)) / 2h. 4: the fourth-order central stencil
  // (f(x-2h) - 8 f(x-h) + 8 f(x+h) - f(x+2h)) / 12h, which tolerates a larger
  // step and so resolves much smaller gradients above rounding noise.
  int stencil = 2;
  // Check at most this many randomly chosen entries per tensor (all when unset).
  std::optional<std::size_t> max_entries_per_tensor;
  std::uint64_t entry_seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t entries_checked = 0;
  std::size_t worst_tensor = 0;
  std::size_t worst_entry = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares the reverse-mode gradient of the scalar f() with respect to every
// tensor in params against central differences. f must be deterministic and
// build its graph from the given leaves. Relative error per entry is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
GradCheckResult finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                  const GradCheckOptions& options = {});

}  // namespace spatialrl::diff
