#pragma once

#include <cmath>

#include "agln/ops.hpp"

namespace agln {

// Least-squares adversarial terms.

// mean((logits - 1)^2)
template <typename T>
Var<T> adv_loss_generator(Var<T> logits_fake) {
  return mse_loss(logits_fake, full_like(logits_fake, T{1}));
}

// 0.5 * mean((real - 1)^2) + 0.5 * mean(fake^2)
template <typename T>
Var<T> adv_loss_discriminator(Var<T> logits_real, Var<T> logits_fake) {
  if (logits_real.shape() != logits_fake.shape()) {
    throw ShapeError("adv_loss_discriminator: logit maps differ " + shape_str(logits_real.shape()) + " vs " +
                     shape_str(logits_fake.shape()));
  }
  return scale(add(mse_loss(logits_real, full_like(logits_real, T{1})),
                   mse_loss(logits_fake, full_like(logits_fake, T{0}))),
               0.5);
}

// mean|d - A(R(d))| + mean|h - R(A(h))|
template <typename T>
Var<T> cycle_loss(Var<T> d, Var<T> d_cyc, Var<T> h, Var<T> h_cyc) {
  return add(l1_loss(d, d_cyc), l1_loss(h, h_cyc));
}

template <typename T>
Var<T> full_objective(Var<T> adv_r, Var<T> adv_a, Var<T> cyc, double lambda) {
  for (const auto& v : {adv_r, adv_a, cyc}) {
    if (!v.value().all_finite()) throw NumericError("full_objective: non-finite term");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw NumericError("full_objective: lambda must be finite and >= 0");
  // lambda = 0 drops the cycle term from the graph entirely.
  if (lambda == 0.0) return add(adv_r, adv_a);
  return add(add(adv_r, adv_a), scale(cyc, lambda));
}

}  // namespace agln
