#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <vector>

#include "soat/nn/tape.hpp"

namespace soat::nn {

// Central-difference check of reverse-mode gradients.
//
// `loss_fn(with_grad)` recomputes the scalar loss from the parameters' current
// values; when `with_grad` it must also run backward and accumulate into each
// parameter's grad buffer. Returns the max over checked entries of
// |analytic - fd| / max(|analytic|, |fd|, 1e-8).
//
// `samples_per_tensor` <= 0 checks every entry; otherwise a deterministic
// random subset of that size per tensor.
template <class T>
double grad_check(const std::function<double(bool with_grad)>& loss_fn,
                  const std::vector<Parameter<T>*>& params, double epsilon,
                  int samples_per_tensor = 0, uint64_t seed = 17) {
  if (!(epsilon > 0.0) || epsilon > 1e-3) {
    throw util::ConfigError("grad_check: epsilon must be in (0, 1e-3]");
  }
  for (Parameter<T>* p : params) p->zero_grad();
  const double base = loss_fn(true);
  if (!std::isfinite(base)) throw util::NumericError("grad_check: non-finite loss");

  util::Rng rng(seed);
  double max_rel = 0.0;
  for (Parameter<T>* p : params) {
    const int n = static_cast<int>(p->value.size());
    std::vector<int> entries;
    if (samples_per_tensor <= 0 || samples_per_tensor >= n) {
      entries.resize(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) entries[static_cast<size_t>(i)] = i;
    } else {
      std::set<int> chosen;
      while (static_cast<int>(chosen.size()) < samples_per_tensor) {
        chosen.insert(rng.uniform_int(n));
      }
      entries.assign(chosen.begin(), chosen.end());
    }
    for (int idx : entries) {
      const T original = p->value.data[static_cast<size_t>(idx)];
      p->value.data[static_cast<size_t>(idx)] = original + static_cast<T>(epsilon);
      const double lp = loss_fn(false);
      p->value.data[static_cast<size_t>(idx)] = original - static_cast<T>(epsilon);
      const double lm = loss_fn(false);
      p->value.data[static_cast<size_t>(idx)] = original;
      if (!std::isfinite(lp) || !std::isfinite(lm)) {
        throw util::NumericError("grad_check: non-finite loss during perturbation");
      }
      const double fd = (lp - lm) / (2.0 * epsilon);
      const double analytic = static_cast<double>(p->grad.data[static_cast<size_t>(idx)]);
      const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-8});
      max_rel = std::max(max_rel, std::abs(analytic - fd) / denom);
    }
  }
  return max_rel;
}

}  // namespace soat::nn
