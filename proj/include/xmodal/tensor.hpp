#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xmodal/errors.hpp"

namespace xmodal {

/// Row-major dense tensor. Rank 1 and rank 2 cover everything the library
/// needs; higher ranks are representable but only reshape/elementwise access
/// is offered for them.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, T fill = T{0}) : shape_(std::move(shape)) {
        validate_shape(shape_);
        data_.assign(element_count(shape_), fill);
    }

    Tensor(std::vector<std::size_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape(shape_);
        if (element_count(shape_) != data_.size()) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape product " +
                                 std::to_string(element_count(shape_)));
        }
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T{0}) {
        return Tensor({rows, cols}, fill);
    }

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t rows() const { return rank() == 0 ? 0 : shape_[0]; }
    std::size_t cols() const {
        if (rank() < 2) return rank() == 1 ? 1 : 0;
        return size() / shape_[0];
    }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * cols(), cols()); }
    std::span<const T> row(std::size_t r) const {
        return std::span<const T>(data_).subspan(r * cols(), cols());
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    /// Throws NumericError naming `what` if any element is NaN or infinite.
    void require_finite(const std::string& what) const {
        for (std::size_t i = 0; i < data_.size(); ++i) {
            if (!std::isfinite(data_[i])) {
                throw NumericError("non-finite value in " + what + " at element " +
                                   std::to_string(i));
            }
        }
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    static std::size_t element_count(const std::vector<std::size_t>& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                               std::multiplies<>());
    }

    static void validate_shape(const std::vector<std::size_t>& shape) {
        if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
        for (auto extent : shape) {
            if (extent == 0) throw DimensionError("tensor extents must be positive");
        }
    }

    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

using DenseTensor = Tensor<float>;

/// Named, ordered collection of tensors (weights, gradients, optimizer moments).
template <typename T>
struct ParamSet {
    std::vector<std::string> names;
    std::vector<Tensor<T>> tensors;

    std::size_t size() const noexcept { return tensors.size(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors) n += t.size();
        return n;
    }

    /// Same names, same shapes, all zeros.
    ParamSet zeros_like() const {
        ParamSet out;
        out.names = names;
        for (const auto& t : tensors) out.tensors.emplace_back(t.shape(), T{0});
        return out;
    }

    template <typename U>
    ParamSet<U> cast() const {
        ParamSet<U> out;
        out.names = names;
        for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
        return out;
    }

    friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

template <typename T>
void require_same_layout(const ParamSet<T>& a, const ParamSet<T>& b, const char* what) {
    if (a.size() != b.size()) {
        throw DimensionError(std::string(what) + ": parameter count mismatch (" +
                             std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.tensors[i].shape() != b.tensors[i].shape()) {
            throw DimensionError(std::string(what) + ": shape mismatch for tensor " +
                                 (i < a.names.size() ? a.names[i] : std::to_string(i)));
        }
    }
}

}  // namespace xmodal
