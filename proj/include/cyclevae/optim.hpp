#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "cyclevae/tensor.hpp"

namespace cyclevae {

struct AdamConfig {
    Real learning_rate = 2e-4;
    Real beta1 = 0.9;
    Real beta2 = 0.999;
    Real eps = 1e-8;

    /// Throws ConfigError when learning_rate is negative, a beta is
    /// outside [0, 1), or eps <= 0. A zero learning rate is a legal
    /// no-op optimizer; the training config separately insists on > 0.
    void validate() const;
};

/// First and second moment accumulators plus the per-parameter step count.
/// Steps are tracked per parameter because encoder tensors receive twice
/// as many updates per iteration as decoder tensors, and bias correction
/// depends on the count of updates actually applied.
struct AdamSlot {
    std::vector<Real> m;
    std::vector<Real> v;
    std::int64_t t = 0;
};

/// Moment storage keyed by parameter node identity. Slots appear zeroed on
/// first touch, so a fresh state behaves like moments of zero everywhere.
class AdamState {
public:
    AdamSlot& slot_for(const Tensor& param);
    const AdamSlot* find(const Tensor& param) const;
    std::size_t size() const { return slots_.size(); }

private:
    std::unordered_map<const detail::TensorNode*, AdamSlot> slots_;
};

/// Applies one bias-corrected adaptive-moment update to each parameter,
/// reading gradients from the tensors' grad buffers. Parameters with no
/// grad buffer are rejected; call zero_grad plus backward first.
void adam_update(const std::vector<Tensor>& params, AdamState& state,
                 const AdamConfig& config);

}  // namespace cyclevae
