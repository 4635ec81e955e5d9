#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "agln/graph.hpp"

namespace agln {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t elements_checked = 0;
  bool pass = false;
};

// Builds the op under test from graph-resident inputs; any output shape is accepted.
using GradCheckOp = std::function<Var<double>(Graph<double>&, std::span<const Var<double>>)>;

// Compares reverse-mode gradients against central differences. The op output is reduced
// to a scalar through a fixed random projection so every output element contributes.
// Per-element step is h * max(1, |x|); error is |analytic - numeric| / max(1, |analytic|, |numeric|).
GradCheckReport grad_check(const GradCheckOp& op, const std::vector<Tensor<double>>& inputs, double h, double tol,
                           std::uint64_t projection_seed = 0x5eed);

}  // namespace agln
