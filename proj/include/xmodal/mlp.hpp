#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "xmodal/errors.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

enum class Activation { relu, tanh, identity };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

/// Fully connected network description. `activations` has one entry per
/// affine layer (layer_widths.size() - 1); the last one must be identity.
struct MlpSpec {
    std::vector<std::size_t> layer_widths;
    std::vector<Activation> activations;
    std::uint64_t seed = 0;

    std::size_t layer_count() const { return layer_widths.size() - 1; }
    std::size_t input_width() const { return layer_widths.front(); }
    std::size_t output_width() const { return layer_widths.back(); }

    /// Builds a spec with `hidden` on every hidden layer and identity output.
    static MlpSpec make(std::vector<std::size_t> widths, Activation hidden, std::uint64_t seed);

    void validate() const;

    friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// Activations recorded by mlp_forward; consumed by mlp_backward.
template <typename T>
struct MlpCache {
    std::vector<Tensor<T>> layer_inputs;   // A_l, batch x in_l
    std::vector<Tensor<T>> pre_activations;  // Z_l, batch x out_l
    std::vector<std::size_t> layer_widths;
    const void* params_identity = nullptr;
};

template <typename T>
struct MlpForwardResult {
    Tensor<T> output;
    MlpCache<T> cache;
};

template <typename T>
struct MlpGradients {
    ParamSet<T> weights;  // same layout as the parameters
    Tensor<T> input;      // dL/d(input), batch x in
};

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
ConstMatrixMap<T> view(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
    return ConstMatrixMap<T>(t.data(), static_cast<Eigen::Index>(rows),
                             static_cast<Eigen::Index>(cols));
}

template <typename T>
MatrixMap<T> view(Tensor<T>& t, std::size_t rows, std::size_t cols) {
    return MatrixMap<T>(t.data(), static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
}

template <typename T>
T activate(Activation a, T z) {
    switch (a) {
        case Activation::relu: return z > T{0} ? z : T{0};
        case Activation::tanh: return std::tanh(z);
        case Activation::identity: return z;
    }
    return z;
}

/// Derivative expressed through the pre-activation z.
template <typename T>
T activation_slope(Activation a, T z) {
    switch (a) {
        case Activation::relu: return z > T{0} ? T{1} : T{0};
        case Activation::tanh: {
            const T y = std::tanh(z);
            return T{1} - y * y;
        }
        case Activation::identity: return T{1};
    }
    return T{1};
}

}  // namespace detail

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
/// Layout: W0, b0, W1, b1, ... with W_l shaped [in_l, out_l].
template <typename T>
ParamSet<T> init_mlp(const MlpSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    ParamSet<T> params;
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
        const auto fan_in = spec.layer_widths[l];
        const auto fan_out = spec.layer_widths[l + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Tensor<T> w({fan_in, fan_out});
        for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-limit, limit));
        params.names.push_back("W" + std::to_string(l));
        params.tensors.push_back(std::move(w));
        params.names.push_back("b" + std::to_string(l));
        params.tensors.emplace_back(std::vector<std::size_t>{fan_out}, T{0});
    }
    return params;
}

template <typename T>
void check_mlp_params(const MlpSpec& spec, const ParamSet<T>& params) {
    if (params.size() != 2 * spec.layer_count()) {
        throw DimensionError("mlp expects " + std::to_string(2 * spec.layer_count()) +
                             " parameter tensors, got " + std::to_string(params.size()));
    }
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
        const auto& w = params.tensors[2 * l];
        const auto& b = params.tensors[2 * l + 1];
        const std::vector<std::size_t> w_shape{spec.layer_widths[l], spec.layer_widths[l + 1]};
        const std::vector<std::size_t> b_shape{spec.layer_widths[l + 1]};
        if (w.shape() != w_shape || b.shape() != b_shape) {
            throw DimensionError("mlp parameter shape mismatch at layer " + std::to_string(l));
        }
    }
}

/// Batched forward pass; `input` is batch x layer_widths[0].
template <typename T>
MlpForwardResult<T> mlp_forward(const MlpSpec& spec, const ParamSet<T>& params,
                                 const Tensor<T>& input) {
    check_mlp_params(spec, params);
    if (input.rank() != 2 || input.cols() != spec.input_width()) {
        throw DimensionError("mlp input has " + std::to_string(input.cols()) +
                             " features, layer 0 expects " + std::to_string(spec.input_width()));
    }
    const std::size_t batch = input.rows();

    MlpForwardResult<T> result;
    auto& cache = result.cache;
    cache.layer_widths = spec.layer_widths;
    cache.params_identity = &params;

    Tensor<T> current = input;
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
        const auto in_w = spec.layer_widths[l];
        const auto out_w = spec.layer_widths[l + 1];
        Tensor<T> z({batch, out_w});
        auto zm = detail::view(z, batch, out_w);
        zm.noalias() = detail::view(current, batch, in_w) * detail::view(params.tensors[2 * l], in_w, out_w);
        zm.rowwise() += detail::view(params.tensors[2 * l + 1], 1, out_w).row(0);

        Tensor<T> a = z;
        const auto act = spec.activations[l];
        if (act != Activation::identity) {
            for (auto& v : a.values()) v = detail::activate(act, v);
        }
        cache.layer_inputs.push_back(std::move(current));
        cache.pre_activations.push_back(std::move(z));
        current = std::move(a);
    }
    result.output = std::move(current);
    result.output.require_finite("mlp output");
    return result;
}

/// Backpropagates dL/d(output) through the cached forward pass.
template <typename T>
MlpGradients<T> mlp_backward(const MlpSpec& spec, const ParamSet<T>& params,
                             const MlpCache<T>& cache, const Tensor<T>& output_gradient) {
    if (cache.params_identity != &params || cache.layer_widths != spec.layer_widths ||
        cache.layer_inputs.size() != spec.layer_count()) {
        throw ContractError("mlp_backward called with a cache from a different network");
    }
    const std::size_t batch = cache.layer_inputs.front().rows();
    if (output_gradient.rank() != 2 || output_gradient.rows() != batch ||
        output_gradient.cols() != spec.output_width()) {
        throw DimensionError("output gradient shape does not match the cached forward pass");
    }

    MlpGradients<T> grads;
    grads.weights = params.zeros_like();

    Tensor<T> upstream = output_gradient;
    for (std::size_t l = spec.layer_count(); l-- > 0;) {
        const auto in_w = spec.layer_widths[l];
        const auto out_w = spec.layer_widths[l + 1];
        const auto act = spec.activations[l];
        const auto& z = cache.pre_activations[l];

        Tensor<T> dz = upstream;
        if (act != Activation::identity) {
            for (std::size_t i = 0; i < dz.size(); ++i) dz[i] *= detail::activation_slope(act, z[i]);
        }
        auto dzm = detail::view(static_cast<const Tensor<T>&>(dz), batch, out_w);
        detail::view(grads.weights.tensors[2 * l], in_w, out_w).noalias() =
            detail::view(cache.layer_inputs[l], batch, in_w).transpose() * dzm;
        detail::view(grads.weights.tensors[2 * l + 1], 1, out_w).noalias() = dzm.colwise().sum();

        Tensor<T> next({batch, in_w});
        detail::view(next, batch, in_w).noalias() =
            dzm * detail::view(params.tensors[2 * l], in_w, out_w).transpose();
        upstream = std::move(next);
    }
    grads.input = std::move(upstream);
    return grads;
}

}  // namespace xmodal
