#include "saanet/grad_check.hpp"

#include <algorithm>
#include <cmath>

SAANET_BEGIN_NAMESPACE

namespace {

double evaluate(const ScalarFn& f) {
    NoGradGuard guard;
    const Tensor out = f();
    if (out.numel() != 1) throw ContractError("grad_check: function output must be scalar, got " + to_string(out.shape()));
    return static_cast<double>(out[0]);
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensor> params, double step, double tol,
                           std::size_t max_entries_per_param) {
    if (!(step > 0)) throw ContractError("grad_check: step must be positive");
    std::vector<bool> previous;
    for (auto& p : params) {
        previous.push_back(p.requires_grad());
        p.set_requires_grad(true);
        p.zero_grad();
    }
    Tape::current().clear();
    const Tensor out = f();
    if (out.numel() != 1) {
        Tape::current().clear();
        throw ContractError("grad_check: function output must be scalar, got " + to_string(out.shape()));
    }
    backward(out);

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi];
        const Tensor analytic = p.grad();
        const std::size_t n = p.numel();
        const std::size_t stride = (max_entries_per_param == 0 || n <= max_entries_per_param)
                                       ? 1
                                       : (n + max_entries_per_param - 1) / max_entries_per_param;
        for (std::size_t i = 0; i < n; i += stride) {
            const Real saved = p[i];
            p[i] = static_cast<Real>(saved + step);
            const double up = evaluate(f);
            p[i] = static_cast<Real>(saved - step);
            const double down = evaluate(f);
            p[i] = saved;
            const double numeric = (up - down) / (2 * step);
            const double a = analytic[i];
            const double diff = std::abs(a - numeric);
            report.max_abs = std::max(report.max_abs, diff);
            report.max_rel = std::max(report.max_rel, diff / std::max({1.0, std::abs(a), std::abs(numeric)}));
            ++report.checked;
        }
        p.zero_grad();
        p.set_requires_grad(previous[pi]);
    }
    report.passed = report.max_rel <= tol;
    return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step, double tol) {
    return grad_check([&] { return f(x); }, {x}, step, tol);
}

SAANET_END_NAMESPACE
