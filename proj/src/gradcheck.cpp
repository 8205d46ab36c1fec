#include "vecformer/gradcheck.hpp"

#include <cmath>

#include "vecformer/errors.hpp"

namespace vecformer {

static void check_eps(double eps) {
    if (eps < 1e-7 || eps > 1e-2)
        throw DomainError("grad_check: eps must be in [1e-7, 1e-2], got " + std::to_string(eps));
}

static double eval_scalar(const MultiScalarFn& f, const std::vector<Tensor>& xs) {
    Tape t;
    std::vector<Var> vs;
    vs.reserve(xs.size());
    for (const auto& x : xs) vs.push_back(t.constant(x));
    Var y = f(t, vs);
    const Tensor& v = t.value(y);
    if (v.numel() != 1) throw ContractError("grad_check: function must return a scalar, got " + v.shape_str());
    return v[0];
}

double grad_check_multi(const MultiScalarFn& f, const std::vector<Tensor>& xs, double eps) {
    check_eps(eps);

    // Analytic gradients in one reverse pass.
    std::vector<Tensor> analytic;
    {
        Tape t;
        std::vector<Var> vs;
        vs.reserve(xs.size());
        for (const auto& x : xs) vs.push_back(t.leaf(x, true));
        Var y = f(t, vs);
        if (t.value(y).numel() != 1)
            throw ContractError("grad_check: function must return a scalar, got " + t.value(y).shape_str());
        t.backward(y);
        for (Var v : vs) analytic.push_back(t.grad(v));
    }

    double worst = 0.0;
    std::vector<Tensor> probe = xs;
    for (std::size_t ti = 0; ti < xs.size(); ++ti) {
        for (std::int64_t i = 0; i < xs[ti].numel(); ++i) {
            const double orig = probe[ti][i];
            double fp, fm;
            try {
                probe[ti][i] = orig + eps;
                fp = eval_scalar(f, probe);
                probe[ti][i] = orig - eps;
                fm = eval_scalar(f, probe);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " (while probing input " + std::to_string(ti) +
                                   " coordinate " + std::to_string(i) + ")");
            }
            probe[ti][i] = orig;
            const double cd = (fp - fm) / (2.0 * eps);
            if (!std::isfinite(cd))
                throw NumericError("grad_check: non-finite central difference at input " + std::to_string(ti) +
                                   " coordinate " + std::to_string(i));
            const double a = analytic[ti][i];
            const double err = std::abs(a - cd) / std::max(1.0, std::abs(a));
            if (err > worst) worst = err;
        }
    }
    return worst;
}

double grad_check(const ScalarFn& f, const Tensor& x, double eps) {
    return grad_check_multi([&f](Tape& t, const std::vector<Var>& vs) { return f(t, vs[0]); }, {x}, eps);
}

}  // namespace vecformer
