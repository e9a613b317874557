#pragma once
#include <functional>

#include "vidswap/numcore/tape.hpp"

namespace vidswap::numcore {

// Central-finite-difference verification of the tape's reverse-mode
// gradients. f maps an input var to a scalar-valued var on the given tape.
// Returns max over coordinates of |analytic - central| / (|central| + 1e-8).
template <typename T>
double grad_check(const std::function<typename Tape<T>::Var(Tape<T>&, typename Tape<T>::Var)>& f,
                  const Tensor<T>& x, T eps) {
  if (eps < static_cast<T>(1e-6) || eps > static_cast<T>(1e-3))
    throw ValidationError("grad_check: eps must lie in [1e-6, 1e-3]");

  Tape<T> tape;
  auto vx = tape.input(x, /*requires_grad=*/true);
  auto loss = f(tape, vx);
  if (tape.value(loss).numel() != 1) throw ValidationError("grad_check: f must be scalar-valued");
  tape.backward(loss);
  const Tensor<T>& analytic = tape.grad(vx);

  auto eval = [&](const Tensor<T>& xp) -> double {
    Tape<T> t(/*grad_enabled=*/false);
    auto v = t.input(xp, false);
    auto l = f(t, v);
    return static_cast<double>(t.value(l)[0]);
  };

  double max_rel = 0;
  Tensor<T> xp = x;
  for (index_t i = 0; i < x.numel(); ++i) {
    const T orig = xp[i];
    xp[i] = orig + eps;
    const double fp = eval(xp);
    xp[i] = orig - eps;
    const double fm = eval(xp);
    xp[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("grad_check: non-finite intermediate");
    const double central = (fp - fm) / (2.0 * static_cast<double>(eps));
    const double rel =
        std::abs(static_cast<double>(analytic[i]) - central) / (std::abs(central) + 1e-8);
    if (rel > max_rel) max_rel = rel;
  }
  return max_rel;
}

}  // namespace vidswap::numcore
