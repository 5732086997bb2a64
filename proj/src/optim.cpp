#include "cyclevae/optim.hpp"

#include <cmath>

#include "cyclevae/errors.hpp"

namespace cyclevae {

void AdamConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("adam: learning_rate must be finite and >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0))
        throw ConfigError("adam: beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0))
        throw ConfigError("adam: beta2 must lie in [0, 1)");
    if (!(eps > 0.0) || !std::isfinite(eps))
        throw ConfigError("adam: eps must be finite and > 0");
}

AdamSlot& AdamState::slot_for(const Tensor& param) {
    AdamSlot& slot = slots_[param.node()];
    if (slot.m.empty()) {
        slot.m.assign(param.numel(), 0.0);
        slot.v.assign(param.numel(), 0.0);
    }
    return slot;
}

const AdamSlot* AdamState::find(const Tensor& param) const {
    const auto it = slots_.find(param.node());
    return it == slots_.end() ? nullptr : &it->second;
}

void adam_update(const std::vector<Tensor>& params, AdamState& state,
                 const AdamConfig& config) {
    config.validate();
    for (const Tensor& param : params) {
        const auto grad = param.grad();
        if (grad.size() != param.numel())
            throw UsageError("adam: a parameter has no gradient buffer; run backward first");
        AdamSlot& slot = state.slot_for(param);
        if (slot.m.size() != param.numel())
            throw ShapeError("adam: state slot size " + std::to_string(slot.m.size()) +
                             " does not match parameter size " +
                             std::to_string(param.numel()));
        slot.t += 1;
        const Real bias1 = 1.0 - std::pow(config.beta1, static_cast<Real>(slot.t));
        const Real bias2 = 1.0 - std::pow(config.beta2, static_cast<Real>(slot.t));
        Tensor mutable_param = param;
        auto data = mutable_param.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const Real g = grad[i];
            slot.m[i] = config.beta1 * slot.m[i] + (1.0 - config.beta1) * g;
            slot.v[i] = config.beta2 * slot.v[i] + (1.0 - config.beta2) * g * g;
            const Real m_hat = slot.m[i] / bias1;
            const Real v_hat = slot.v[i] / bias2;
            data[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.eps);
        }
    }
}

}  // namespace cyclevae
