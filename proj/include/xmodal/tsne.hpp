#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "xmodal/autoencoder.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

struct TsneConfig {
    double perplexity = 30.0;
    std::size_t iterations = 750;
    double early_exaggeration = 12.0;
    std::size_t exaggeration_iterations = 250;
    double learning_rate = 200.0;
    double momentum = 0.5;
    double final_momentum = 0.8;
    std::size_t momentum_switch = 250;
    std::uint64_t seed = 1;
    std::size_t kl_every = 50;  // KL trace stride; 0 records only the final value

    /// Throws ArgumentError unless n >= 4 and perplexity < (n - 1) / 3.
    void validate(std::size_t n) const;
    friend bool operator==(const TsneConfig&, const TsneConfig&) = default;
};

struct Embedding2D {
    Tensor<double> points;  // N x 2, centred
    std::vector<std::uint64_t> subject_ids;
    Modality source_modality = Modality::synthetic;
    TsneConfig config;
    double kl_final = 0.0;
    std::vector<std::pair<std::size_t, double>> kl_trace;  // (iteration, KL(P || Q))
};

/// Row-wise squared Euclidean distances, N x N.
std::vector<double> squared_distances(const Tensor<double>& x);

/// Gaussian conditionals with per-row precision chosen by bisection so the row
/// entropy is log2(perplexity), symmetrized to P = (P_c + P_c^T) / (2N).
Tensor<double> conditional_affinities(const Tensor<double>& x, double perplexity);

/// Perplexity 2^H of each conditional row, for diagnostics.
std::vector<double> row_perplexities(const Tensor<double>& x, double perplexity);

double tsne_kl(const Tensor<double>& p, const Tensor<double>& y);

/// 4 sum_j (a p_ij - q_ij)(y_i - y_j) / (1 + |y_i - y_j|^2); a = 1 is dKL/dY.
Tensor<double> tsne_gradient(const Tensor<double>& p, const Tensor<double>& y, double exaggeration = 1.0);

/// N x 2 Gaussian layout with sd 1e-4.
Tensor<double> tsne_initial_layout(std::size_t n, std::uint64_t seed);

Embedding2D tsne_fit(const Tensor<double>& x, const TsneConfig& config);

}  // namespace xmodal
