#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "xst/numerics/tensor.hpp"

namespace xst {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // When set, only this many coordinates (drawn uniformly) are probed.
  std::optional<std::size_t> max_coordinates;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  std::size_t coordinates = 0;
  double max_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = true;
};

// Compares the tape gradient of the scalar `f` with respect to every
// element of `inputs` against central differences
//   (f(x+h) - f(x-h)) / 2h,
// scoring |analytic - numeric| / max(1, |analytic|). Inputs are perturbed
// in place and restored; f must read them on every call.
GradCheckReport finite_difference_check(const std::function<Tensor<double>()>& f,
                                        std::vector<Tensor<double>> inputs,
                                        const GradCheckOptions& options = {});

}  // namespace xst
