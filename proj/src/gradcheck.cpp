#include "fd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "fd/error.hpp"
#include "fd/rng.hpp"

namespace fd {

double finite_difference_check(const std::function<Tensor()>& f,
                               std::span<Tensor> params,
                               const GradCheckOptions& opts) {
  if (!(opts.eps > 0.0)) {
    throw ConfigError("finite_difference_check: eps must be positive");
  }

  // Analytic pass on a fresh tape.
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  {
    for (Tensor& p : params) {
      p.zero_grad();
    }
    Tape tape;
    TapeScope scope(tape);
    Tensor y = f();
    if (y.size() != 1) {
      throw UsageError("finite_difference_check: f must return a scalar");
    }
    tape.backward(y);
    for (Tensor& p : params) {
      if (p.has_grad()) {
        analytic.push_back(p.grad_buffer());
      } else {
        analytic.emplace_back(static_cast<size_t>(p.size()), 0.0);
      }
    }
  }

  // Numeric pass: central differences, no recording.
  NoGradGuard no_grad;
  double max_rel = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    const int64_t n = p.size();
    std::vector<int64_t> indices;
    if (opts.max_entries_per_param >= 0 && n > opts.max_entries_per_param) {
      std::vector<int64_t> all(static_cast<size_t>(n));
      std::iota(all.begin(), all.end(), 0);
      Rng rng(mix_seed(opts.seed, static_cast<uint64_t>(pi)));
      for (int64_t i = 0; i < opts.max_entries_per_param; ++i) {
        const int64_t j = rng.uniform_int(i, n - 1);
        std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(j)]);
      }
      indices.assign(all.begin(), all.begin() + opts.max_entries_per_param);
    } else {
      indices.resize(static_cast<size_t>(n));
      std::iota(indices.begin(), indices.end(), 0);
    }
    double* data = p.data();
    for (int64_t idx : indices) {
      const double saved = data[idx];
      data[idx] = saved + opts.eps;
      const double hi = f().item();
      data[idx] = saved - opts.eps;
      const double lo = f().item();
      data[idx] = saved;
      const double numeric = (hi - lo) / (2.0 * opts.eps);
      const double rel = std::abs(analytic[pi][static_cast<size_t>(idx)] -
                                  numeric) /
                         std::max(1e-8, std::abs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace fd
