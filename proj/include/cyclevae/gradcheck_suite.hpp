#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cyclevae/grad_check.hpp"

namespace cyclevae {

struct OpCheck {
    std::string name;
    GradCheckResult result;
};

/// Runs one central-difference check per differentiable op, each on small
/// random inputs drawn from `seed`. Inputs for kinked ops (relu, abs) are
/// kept away from zero so the finite-difference oracle stays valid.
std::vector<OpCheck> run_op_gradchecks(std::uint64_t seed);

/// End-to-end checks on a downscaled 8x8 two-block model: the forward and
/// reverse cycle losses and the encode-reparameterize-decode composition,
/// probed over every input pixel and every parameter coordinate.
std::vector<OpCheck> run_model_gradchecks(std::uint64_t seed);

}  // namespace cyclevae
