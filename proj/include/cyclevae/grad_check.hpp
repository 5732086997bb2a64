#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "cyclevae/tensor.hpp"

namespace cyclevae {

struct GradCheckResult {
    Real max_rel_error = 0.0;
    Real max_abs_error = 0.0;
    std::size_t coords_checked = 0;
    // Coordinate with the largest relative error, for diagnostics.
    int worst_input = -1;
    std::size_t worst_coord = 0;
    Real worst_analytic = 0.0;
    Real worst_numeric = 0.0;
};

/// Central-difference check of reverse-mode gradients. `f` must rebuild a
/// scalar expression from the given leaves on every call; leaves with
/// requires_grad are probed coordinate by coordinate (all of them, or a
/// deterministic strided subsample when max_probes_per_input >= 0).
/// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// eps must lie in [1e-6, 1e-3]; a constant function (output not requiring
/// grad) checks against an all-zero analytic gradient.
GradCheckResult grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           const std::vector<Tensor>& inputs, Real eps = 1e-5,
                           std::int64_t max_probes_per_input = -1);

}  // namespace cyclevae
