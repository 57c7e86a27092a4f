#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "fd/tensor.hpp"

namespace fd {

struct GradCheckOptions {
  double eps = 1e-6;
  /// Check at most this many entries per parameter tensor (seeded sample);
  /// negative means every entry. Whole-model checks subsample, primitive-op
  /// checks run exhaustively.
  int64_t max_entries_per_param = -1;
  uint64_t seed = 0;
};

/// Compare analytic gradients of the scalar built by `f` against central
/// finite differences. Returns the max over checked entries of
/// |analytic - numeric| / max(1e-8, |numeric|). `f` must be deterministic
/// for fixed parameter values.
double finite_difference_check(const std::function<Tensor()>& f,
                               std::span<Tensor> params,
                               const GradCheckOptions& opts = {});

}  // namespace fd
