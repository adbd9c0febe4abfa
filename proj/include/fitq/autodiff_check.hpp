#pragma once

#include <functional>

#include "fitq/tape.hpp"

namespace fitq {

// Builds a scalar loss node from leaf vars placed on the tape, one per input
// tensor, in order.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Max relative discrepancy between reverse-mode gradients and central finite
// differences over every element of every input. epsilon must be in (0, 1e-2].
double grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double epsilon);

// H·v for the scalar loss built by f over `params`; v is the flattened
// parameter vector. Computed by differentiating <grad, v> a second time.
Tensor hessian_vector_product(const ScalarFn& f, const std::vector<Tensor>& params, const Tensor& v);

struct HessianResult {
    Tensor matrix;         // [n,n], symmetrized
    double max_asymmetry;  // max |H - H^T| before averaging
};

// Dense Hessian assembled column-by-column from Hessian-vector products.
// Oracle-scale only: total parameter count must not exceed 2000.
HessianResult exact_hessian(const ScalarFn& f, const std::vector<Tensor>& params);

inline constexpr int64_t kExactHessianLimit = 2000;

}  // namespace fitq
