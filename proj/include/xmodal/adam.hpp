#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "xmodal/errors.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const {
        if (!(lr > 0.0)) throw ArgumentError("adam lr must be positive");
        if (!(beta1 > 0.0 && beta1 < 1.0)) throw ArgumentError("adam beta1 must lie in (0, 1)");
        if (!(beta2 > 0.0 && beta2 < 1.0)) throw ArgumentError("adam beta2 must lie in (0, 1)");
        if (!(epsilon > 0.0)) throw ArgumentError("adam epsilon must be positive");
    }

    friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

template <typename T>
struct AdamState {
    AdamConfig config;
    std::uint64_t step_count = 0;
    ParamSet<T> first_moment;
    ParamSet<T> second_moment;

    static AdamState for_params(const ParamSet<T>& params, AdamConfig config = {}) {
        config.validate();
        AdamState state;
        state.config = config;
        state.first_moment = params.zeros_like();
        state.second_moment = params.zeros_like();
        return state;
    }

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update, applied in place to `weights` and `state`.
/// Gradients are checked for finiteness before anything is modified.
template <typename T>
void adam_step(ParamSet<T>& weights, const ParamSet<T>& gradients, AdamState<T>& state) {
    state.config.validate();
    require_same_layout(weights, gradients, "adam_step gradients");
    require_same_layout(weights, state.first_moment, "adam_step first moment");
    require_same_layout(weights, state.second_moment, "adam_step second moment");
    for (std::size_t i = 0; i < gradients.size(); ++i) {
        const auto name = i < gradients.names.size() ? gradients.names[i] : std::to_string(i);
        gradients.tensors[i].require_finite("gradient '" + name + "'");
    }

    const auto& cfg = state.config;
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bias1 = 1.0 - std::pow(cfg.beta1, t);
    const double bias2 = 1.0 - std::pow(cfg.beta2, t);
    const T b1 = static_cast<T>(cfg.beta1);
    const T b2 = static_cast<T>(cfg.beta2);

    for (std::size_t i = 0; i < weights.size(); ++i) {
        auto w = weights.tensors[i].values();
        auto g = gradients.tensors[i].values();
        auto m = state.first_moment.tensors[i].values();
        auto v = state.second_moment.tensors[i].values();
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = b1 * m[j] + (T{1} - b1) * g[j];
            v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
            const double m_hat = static_cast<double>(m[j]) / bias1;
            const double v_hat = static_cast<double>(v[j]) / bias2;
            w[j] = static_cast<T>(static_cast<double>(w[j]) -
                                  cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
        }
    }
}

}  // namespace xmodal
