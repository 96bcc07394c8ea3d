#include "xmodal/mlp.hpp"

namespace xmodal {

std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::identity: return "identity";
    }
    return "identity";
}

Activation activation_from_string(std::string_view name) {
    if (name == "relu") return Activation::relu;
    if (name == "tanh") return Activation::tanh;
    if (name == "identity") return Activation::identity;
    throw ArgumentError("unknown activation '" + std::string(name) + "'");
}

MlpSpec MlpSpec::make(std::vector<std::size_t> widths, Activation hidden, std::uint64_t seed) {
    MlpSpec spec;
    spec.layer_widths = std::move(widths);
    if (spec.layer_widths.size() >= 2) {
        spec.activations.assign(spec.layer_widths.size() - 1, hidden);
        spec.activations.back() = Activation::identity;
    }
    spec.seed = seed;
    spec.validate();
    return spec;
}

void MlpSpec::validate() const {
    if (layer_widths.size() < 2) {
        throw ArgumentError("mlp needs at least an input and an output width");
    }
    for (auto w : layer_widths) {
        if (w == 0) throw ArgumentError("mlp layer widths must be positive");
    }
    if (activations.size() != layer_widths.size() - 1) {
        throw ArgumentError("mlp needs one activation per affine layer");
    }
    if (activations.back() != Activation::identity) {
        throw ArgumentError("mlp output layer activation must be identity");
    }
}

}  // namespace xmodal
