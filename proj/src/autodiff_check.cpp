#include "fitq/autodiff_check.hpp"

#include <cmath>

namespace fitq {

namespace {

double eval_scalar(const ScalarFn& f, const std::vector<Tensor>& inputs) {
    Tape t;
    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (const auto& x : inputs) leaves.push_back(t.leaf(x, false));
    Var out = f(t, leaves);
    return t.value(out).item();
}

std::vector<Var> build_with_grads(Tape& t, const ScalarFn& f, const std::vector<Tensor>& params, Var& loss_out) {
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const auto& p : params) leaves.push_back(t.leaf(p, true));
    loss_out = f(t, leaves);
    if (t.value(loss_out).size() != 1)
        throw ValidationError("loss must be scalar, got shape " + shape_str(t.value(loss_out).shape()));
    return leaves;
}

}  // namespace

double grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double epsilon) {
    if (!(epsilon > 0.0) || epsilon > 1e-2)
        throw ValidationError("grad_check: epsilon must be in (0, 1e-2], got " + std::to_string(epsilon));
    for (const auto& x : inputs)
        if (!x.all_finite()) throw ValidationError("grad_check: non-finite input");

    Tape t;
    Var loss{};
    std::vector<Var> leaves = build_with_grads(t, f, inputs, loss);
    if (!t.value(loss).all_finite()) throw ValidationError("grad_check: non-finite loss");
    std::vector<Var> gvars = t.grad(loss, leaves);

    double worst = 0.0;
    std::vector<Tensor> probe = inputs;
    for (size_t p = 0; p < inputs.size(); ++p) {
        const Tensor& g = t.value(gvars[p]);
        if (!g.all_finite()) throw ValidationError("grad_check: non-finite gradient");
        for (int64_t i = 0; i < inputs[p].size(); ++i) {
            const double saved = probe[p][i];
            probe[p][i] = saved + epsilon;
            const double fp = eval_scalar(f, probe);
            probe[p][i] = saved - epsilon;
            const double fm = eval_scalar(f, probe);
            probe[p][i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw ValidationError("grad_check: non-finite perturbed loss");
            const double fd = (fp - fm) / (2.0 * epsilon);
            const double scale = std::max({1.0, std::fabs(fd), std::fabs(g[i])});
            worst = std::max(worst, std::fabs(fd - g[i]) / scale);
        }
    }
    return worst;
}

Tensor hessian_vector_product(const ScalarFn& f, const std::vector<Tensor>& params, const Tensor& v) {
    int64_t total = 0;
    for (const auto& p : params) total += p.size();
    if (v.size() != total)
        throw ValidationError("hessian_vector_product: v has " + std::to_string(v.size()) +
                              " elements, parameters have " + std::to_string(total));

    Tape t;
    Var loss{};
    std::vector<Var> leaves = build_with_grads(t, f, params, loss);
    std::vector<Var> gvars = t.grad(loss, leaves);

    std::vector<Shape> shapes;
    shapes.reserve(params.size());
    for (const auto& p : params) shapes.push_back(p.shape());
    std::vector<Tensor> v_parts = unflatten_all(v, shapes);

    // inner = <grad, v>, then one more reverse pass
    Var inner{};
    for (size_t p = 0; p < params.size(); ++p) {
        Var vp = t.leaf(v_parts[p], false);
        Var term = t.sum_all(t.mul(gvars[p], vp));
        inner = (p == 0) ? term : t.add(inner, term);
    }
    std::vector<Var> hv = t.grad(inner, leaves);
    return flatten_all(t.values(hv));
}

HessianResult exact_hessian(const ScalarFn& f, const std::vector<Tensor>& params) {
    int64_t n = 0;
    for (const auto& p : params) n += p.size();
    if (n > kExactHessianLimit)
        throw ValidationError("exact_hessian: " + std::to_string(n) + " parameters exceeds oracle limit " +
                              std::to_string(kExactHessianLimit));

    Tensor H(Shape{n, n});
    Tensor e(Shape{n});
    for (int64_t j = 0; j < n; ++j) {
        e[j] = 1.0;
        Tensor col = hessian_vector_product(f, params, e);
        e[j] = 0.0;
        for (int64_t i = 0; i < n; ++i) H[i * n + j] = col[i];
    }

    double asym = 0.0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = i + 1; j < n; ++j) {
            asym = std::max(asym, std::fabs(H[i * n + j] - H[j * n + i]));
            const double avg = 0.5 * (H[i * n + j] + H[j * n + i]);
            H[i * n + j] = avg;
            H[j * n + i] = avg;
        }
    return {std::move(H), asym};
}

}  // namespace fitq
