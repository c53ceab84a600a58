#pragma once

// Central finite-difference gradient checking, shared by the op and loss
// suites. Independent of the tape's backward path: numeric derivatives come
// from re-running the forward closure at perturbed inputs.

#include <cmath>
#include <vector>

#include "mpgraf/rng.hpp"
#include "mpgraf/tape.hpp"

namespace gradcheck {

using mpgraf::Parameter;
using mpgraf::Tape;
using mpgraf::Tensor;
using mpgraf::Var;

// fn: (Tape&) -> scalar loss Var, reading the given parameters via
// tape.param(). Returns the worst relative error over all elements.
template <class Fn>
double max_rel_err(std::vector<Parameter<double>*> params, Fn fn,
                   double h = 1e-5) {
  // analytic
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    Var loss = fn(tape);
    tape.backward(loss);
  }
  auto eval = [&]() {
    Tape<double> tape;
    Var loss = fn(tape);
    return tape.val(loss).data[0];
  };
  double worst = 0.0;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double x = p->value.data[i];
      const double hh = h * std::max(1.0, std::abs(x));
      p->value.data[i] = x + hh;
      const double f1 = eval();
      p->value.data[i] = x - hh;
      const double f2 = eval();
      p->value.data[i] = x;
      const double numeric = (f1 - f2) / (2.0 * hh);
      const double analytic = p->has_grad() ? p->grad.data[i] : 0.0;
      const double denom =
          std::max({std::abs(analytic), std::abs(numeric), 1e-2});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

inline Tensor<double> random_tensor(mpgraf::Shape shape, mpgraf::Rng& rng,
                                    double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = mpgraf::uniform_real(rng, lo, hi);
  return t;
}

}  // namespace gradcheck
