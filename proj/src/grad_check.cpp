#include "cyclevae/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cyclevae/errors.hpp"

namespace cyclevae {

GradCheckResult grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           const std::vector<Tensor>& inputs, Real eps,
                           std::int64_t max_probes_per_input) {
    if (!(eps >= 1e-6 && eps <= 1e-3))
        throw UsageError("grad_check: eps " + std::to_string(eps) +
                         " outside [1e-6, 1e-3]");

    for (const Tensor& t : inputs) {
        Tensor handle = t;
        if (handle.requires_grad()) handle.zero_grad();
    }
    Tensor out = f(inputs);
    if (out.numel() != 1)
        throw UsageError("grad_check: function must produce a scalar, got shape " +
                         shape_str(out.shape()));
    if (!std::isfinite(out.value()))
        throw NumericError("grad_check: function value is not finite");
    if (out.requires_grad()) backward(out);

    GradCheckResult res;
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        Tensor input = inputs[ti];
        if (!input.requires_grad()) continue;
        const std::int64_t n = static_cast<std::int64_t>(input.numel());
        const std::int64_t probes =
            max_probes_per_input < 0 ? n : std::min(n, max_probes_per_input);
        auto data = input.mutable_data();
        auto grad = input.grad();
        for (std::int64_t pi = 0; pi < probes; ++pi) {
            const std::size_t coord =
                static_cast<std::size_t>(probes == n ? pi : pi * n / probes);
            const Real orig = data[coord];
            data[coord] = orig + eps;
            const Real fp = f(inputs).value();
            data[coord] = orig - eps;
            const Real fm = f(inputs).value();
            data[coord] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericError("grad_check: perturbed function value is not finite");
            const Real numeric = (fp - fm) / (2.0 * eps);
            const Real analytic = grad.empty() ? 0.0 : grad[coord];
            const Real abs_err = std::abs(analytic - numeric);
            const Real rel_err =
                abs_err / std::max({std::abs(analytic), std::abs(numeric), Real(1e-8)});
            res.max_abs_error = std::max(res.max_abs_error, abs_err);
            if (rel_err > res.max_rel_error) {
                res.max_rel_error = rel_err;
                res.worst_input = static_cast<int>(ti);
                res.worst_coord = coord;
                res.worst_analytic = analytic;
                res.worst_numeric = numeric;
            }
            ++res.coords_checked;
        }
    }
    return res;
}

}  // namespace cyclevae
