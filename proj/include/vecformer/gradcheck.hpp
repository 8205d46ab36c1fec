#pragma once

// Central finite-difference gradient oracle. Independent of the tape's
// backward pass: it only re-evaluates forward values at perturbed inputs.

#include <functional>
#include <vector>

#include "vecformer/tape.hpp"
#include "vecformer/tensor.hpp"

namespace vecformer {

// Builds a scalar loss from one input. The function must construct the same
// graph on every call (re-seed any internal randomness from fixed state).
using ScalarFn = std::function<Var(Tape&, Var)>;
using MultiScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// eps must lie in [1e-7, 1e-2]. Non-finite values during evaluation raise
// NumericError naming the coordinate being probed.
double grad_check(const ScalarFn& f, const Tensor& x, double eps);

// Same, jointly over several inputs; returns the max across all coordinates
// of all inputs.
double grad_check_multi(const MultiScalarFn& f, const std::vector<Tensor>& xs, double eps);

}  // namespace vecformer
