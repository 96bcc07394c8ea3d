#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xmodal/errors.hpp"
#include "xmodal/heads.hpp"
#include "xmodal/mlp.hpp"
#include "xmodal/synth.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

enum class Modality : std::uint8_t { ecg = 0, mri = 1, fused = 2, synthetic = 3 };

std::string_view to_string(Modality m);
Modality modality_from_string(std::string_view name);

/// Only ecg and mri have samples and decoders.
void require_sample_modality(Modality m);

struct LatentVector {
    std::vector<float> values;
    Modality modality_of_origin = Modality::synthetic;

    std::size_t size() const noexcept { return values.size(); }
    friend bool operator==(const LatentVector&, const LatentVector&) = default;
};

struct TrainConfig {
    std::size_t latent_dim = 16;
    double temperature = 0.1;
    double contrastive_weight = 1.0;
    std::size_t batch_size = 64;
    std::size_t max_epochs = 200;
    std::size_t patience = 20;
    double lr = 1e-3;
    std::uint64_t seed = 1;
    std::size_t encoder_hidden_width = 32;
    std::size_t decoder_hidden_width = 256;
    Activation hidden_activation = Activation::relu;

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct AutoencoderSpecs {
    MlpSpec ecg_encoder;
    MlpSpec mri_encoder;
    MlpSpec ecg_decoder;
    MlpSpec mri_decoder;

    /// Encoders in -> hidden -> latent, decoders latent -> hidden -> out.
    static AutoencoderSpecs make(std::size_t ecg_dim, std::size_t mri_dim, const TrainConfig& config);

    std::size_t latent_dim() const { return ecg_encoder.output_width(); }
    std::size_t input_dim(Modality m) const;
    const MlpSpec& encoder(Modality m) const;
    const MlpSpec& decoder(Modality m) const;

    friend bool operator==(const AutoencoderSpecs&, const AutoencoderSpecs&) = default;
};

template <typename T>
struct AutoencoderWeights {
    ParamSet<T> ecg_encoder;
    ParamSet<T> mri_encoder;
    ParamSet<T> ecg_decoder;
    ParamSet<T> mri_decoder;

    static AutoencoderWeights init(const AutoencoderSpecs& specs) {
        return {init_mlp<T>(specs.ecg_encoder), init_mlp<T>(specs.mri_encoder),
                init_mlp<T>(specs.ecg_decoder), init_mlp<T>(specs.mri_decoder)};
    }

    const ParamSet<T>& encoder(Modality m) const {
        require_sample_modality(m);
        return m == Modality::ecg ? ecg_encoder : mri_encoder;
    }
    const ParamSet<T>& decoder(Modality m) const {
        require_sample_modality(m);
        return m == Modality::ecg ? ecg_decoder : mri_decoder;
    }

    template <typename U>
    AutoencoderWeights<U> cast() const {
        return {ecg_encoder.template cast<U>(), mri_encoder.template cast<U>(),
                ecg_decoder.template cast<U>(), mri_decoder.template cast<U>()};
    }

    friend bool operator==(const AutoencoderWeights&, const AutoencoderWeights&) = default;
};

/// Per-feature (x - mean) / scale applied to encoder inputs. Empty means identity.
struct FeatureScaling {
    std::vector<float> mean;
    std::vector<float> scale;

    bool empty() const noexcept { return mean.empty(); }

    /// Per-feature means of `samples` with unit scale (centering only).
    static FeatureScaling fit(const DenseTensor& samples);

    template <typename T>
    Tensor<T> apply(const Tensor<T>& x) const {
        if (empty()) return x;
        if (x.cols() != mean.size()) {
            throw DimensionError("input scaling expects " + std::to_string(mean.size()) +
                                 " features, got " + std::to_string(x.cols()));
        }
        Tensor<T> out = x;
        for (std::size_t r = 0; r < x.rows(); ++r) {
            for (std::size_t c = 0; c < x.cols(); ++c) {
                out(r, c) = static_cast<T>((static_cast<double>(x(r, c)) - mean[c]) / scale[c]);
            }
        }
        return out;
    }

    friend bool operator==(const FeatureScaling&, const FeatureScaling&) = default;
};

struct InputScaling {
    FeatureScaling ecg;
    FeatureScaling mri;

    const FeatureScaling& of(Modality m) const {
        require_sample_modality(m);
        return m == Modality::ecg ? ecg : mri;
    }

    friend bool operator==(const InputScaling&, const InputScaling&) = default;
};

struct ModelCheckpoint {
    AutoencoderSpecs specs;
    AutoencoderWeights<float> weights;
    InputScaling input_scaling;
    TrainConfig config;
    std::size_t epoch_of_best = 0;
    double validation_loss_at_best = 0.0;
    std::string dataset_fingerprint;
    std::vector<double> validation_history;  // index = epoch; entry 0 is the untrained model
    std::size_t epochs_run = 0;
    double train_seconds = 0.0;
    std::optional<HeadSet> heads;

    std::size_t latent_dim() const { return specs.latent_dim(); }
};

// ---------------------------------------------------------------------------
// Losses. Templated on the scalar so gradient oracles can run in double;
// all reductions accumulate in double.

/// Mean squared error over all elements.
template <typename T>
double reconstruction_loss(std::span<const T> x, std::span<const T> x_hat) {
    if (x.size() != x_hat.size()) {
        throw DimensionError("reconstruction_loss: sizes " + std::to_string(x.size()) + " and " +
                             std::to_string(x_hat.size()) + " differ");
    }
    if (x.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(x_hat[i]) - static_cast<double>(x[i]);
        sum += d * d;
    }
    return sum / static_cast<double>(x.size());
}

template <typename T>
double reconstruction_loss(const Tensor<T>& x, const Tensor<T>& x_hat) {
    if (x.shape() != x_hat.shape()) throw DimensionError("reconstruction_loss: shape mismatch");
    return reconstruction_loss<T>(x.values(), x_hat.values());
}

/// Symmetric InfoNCE on cosine similarities: row i of each batch is the
/// same subject. Optional outputs receive dL/dZ for each batch.
template <typename T>
double contrastive_loss(const Tensor<T>& z_ecg, const Tensor<T>& z_mri, double temperature,
                        Tensor<T>* grad_ecg = nullptr, Tensor<T>* grad_mri = nullptr) {
    if (!(temperature > 0.0)) throw ArgumentError("contrastive_loss: temperature must be positive");
    if (z_ecg.rank() != 2 || z_ecg.shape() != z_mri.shape()) {
        throw DimensionError("contrastive_loss: batches must have equal shapes");
    }
    const std::size_t batch = z_ecg.rows();
    const std::size_t dim = z_ecg.cols();
    if (grad_ecg) *grad_ecg = Tensor<T>(z_ecg.shape(), T{0});
    if (grad_mri) *grad_mri = Tensor<T>(z_mri.shape(), T{0});
    if (batch < 2) return 0.0;

    constexpr double kMinNorm = 1e-8;
    auto normalize = [&](const Tensor<T>& z, std::vector<double>& u, std::vector<double>& norms) {
        u.assign(batch * dim, 0.0);
        norms.assign(batch, 0.0);
        for (std::size_t i = 0; i < batch; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < dim; ++k) s += static_cast<double>(z(i, k)) * z(i, k);
            norms[i] = std::max(std::sqrt(s), kMinNorm);
            for (std::size_t k = 0; k < dim; ++k) u[i * dim + k] = z(i, k) / norms[i];
        }
    };
    std::vector<double> ue, um, ne, nm;
    normalize(z_ecg, ue, ne);
    normalize(z_mri, um, nm);

    // logits[i][j] = cos(ecg_i, mri_j) / temperature
    std::vector<double> logits(batch * batch);
    for (std::size_t i = 0; i < batch; ++i) {
        for (std::size_t j = 0; j < batch; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < dim; ++k) s += ue[i * dim + k] * um[j * dim + k];
            logits[i * batch + j] = s / temperature;
        }
    }

    // Row softmax (ecg -> mri) and column softmax (mri -> ecg).
    std::vector<double> p_row(batch * batch), p_col(batch * batch);
    double loss_row = 0.0, loss_col = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < batch; ++j) mx = std::max(mx, logits[i * batch + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < batch; ++j) z += std::exp(logits[i * batch + j] - mx);
        const double log_z = mx + std::log(z);
        for (std::size_t j = 0; j < batch; ++j) p_row[i * batch + j] = std::exp(logits[i * batch + j] - log_z);
        loss_row += log_z - logits[i * batch + i];
    }
    for (std::size_t j = 0; j < batch; ++j) {
        double mx = -INFINITY;
        for (std::size_t i = 0; i < batch; ++i) mx = std::max(mx, logits[i * batch + j]);
        double z = 0.0;
        for (std::size_t i = 0; i < batch; ++i) z += std::exp(logits[i * batch + j] - mx);
        const double log_z = mx + std::log(z);
        for (std::size_t i = 0; i < batch; ++i) p_col[i * batch + j] = std::exp(logits[i * batch + j] - log_z);
        loss_col += log_z - logits[j * batch + j];
    }
    const double b = static_cast<double>(batch);
    const double loss = 0.5 * (loss_row + loss_col) / b;

    if (grad_ecg || grad_mri) {
        // dL/dlogits, then through the cosine and the normalization.
        std::vector<double> g(batch * batch);
        for (std::size_t i = 0; i < batch; ++i) {
            for (std::size_t j = 0; j < batch; ++j) {
                const double eye = i == j ? 1.0 : 0.0;
                g[i * batch + j] = 0.5 / b * ((p_row[i * batch + j] - eye) + (p_col[i * batch + j] - eye)) / temperature;
            }
        }
        auto backprop_norm = [&](const std::vector<double>& u, const std::vector<double>& norms,
                                 const std::vector<double>& du, Tensor<T>& out) {
            for (std::size_t i = 0; i < batch; ++i) {
                double dot = 0.0;
                for (std::size_t k = 0; k < dim; ++k) dot += u[i * dim + k] * du[i * dim + k];
                for (std::size_t k = 0; k < dim; ++k) {
                    out(i, k) = static_cast<T>((du[i * dim + k] - u[i * dim + k] * dot) / norms[i]);
                }
            }
        };
        if (grad_ecg) {
            std::vector<double> du(batch * dim, 0.0);
            for (std::size_t i = 0; i < batch; ++i)
                for (std::size_t j = 0; j < batch; ++j)
                    for (std::size_t k = 0; k < dim; ++k) du[i * dim + k] += g[i * batch + j] * um[j * dim + k];
            backprop_norm(ue, ne, du, *grad_ecg);
        }
        if (grad_mri) {
            std::vector<double> du(batch * dim, 0.0);
            for (std::size_t i = 0; i < batch; ++i)
                for (std::size_t j = 0; j < batch; ++j)
                    for (std::size_t k = 0; k < dim; ++k) du[j * dim + k] += g[i * batch + j] * ue[i * dim + k];
            backprop_norm(um, nm, du, *grad_mri);
        }
    }
    return loss;
}

/// Decoder input: z rescaled to norm sqrt(d), so decoding sees only the
/// direction of a latent. Norms below 1e-8 are clamped.
template <typename T>
struct NormalizedLatents {
    Tensor<T> values;
    std::vector<double> norms;
};

template <typename T>
NormalizedLatents<T> normalize_latents(const Tensor<T>& z) {
    if (z.rank() != 2) throw DimensionError("normalize_latents: expected a batch");
    const std::size_t batch = z.rows(), dim = z.cols();
    const double radius = std::sqrt(static_cast<double>(dim));
    NormalizedLatents<T> out{Tensor<T>(z.shape(), T{0}), std::vector<double>(batch)};
    for (std::size_t i = 0; i < batch; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < dim; ++k) s += static_cast<double>(z(i, k)) * z(i, k);
        out.norms[i] = std::max(std::sqrt(s), 1e-8);
        for (std::size_t k = 0; k < dim; ++k) {
            out.values(i, k) = static_cast<T>(radius * z(i, k) / out.norms[i]);
        }
    }
    return out;
}

/// dL/dz from dL/du for u = normalize_latents(z).
template <typename T>
Tensor<T> normalize_latents_backward(const NormalizedLatents<T>& n, const Tensor<T>& grad_u) {
    const std::size_t batch = n.values.rows(), dim = n.values.cols();
    const double radius = std::sqrt(static_cast<double>(dim));
    Tensor<T> grad(n.values.shape(), T{0});
    for (std::size_t i = 0; i < batch; ++i) {
        double dot = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
            dot += static_cast<double>(n.values(i, k)) * grad_u(i, k);
        }
        for (std::size_t k = 0; k < dim; ++k) {
            grad(i, k) = static_cast<T>(
                (radius * grad_u(i, k) - n.values(i, k) * dot / radius) / n.norms[i]);
        }
    }
    return grad;
}

struct LossBreakdown {
    double reconstruction_ecg = 0.0;
    double reconstruction_mri = 0.0;
    double contrastive = 0.0;
    double total = 0.0;
};

/// total = recon(ecg) + recon(mri) + contrastive_weight * contrastive on one
/// paired batch. Encoders see scaled inputs, reconstructions target raw ones. Fills `grads` (same layout as weights) when non-null.
template <typename T>
LossBreakdown autoencoder_loss(const AutoencoderSpecs& specs, const AutoencoderWeights<T>& w,
                               const InputScaling& scaling, const Tensor<T>& ecg_batch,
                               const Tensor<T>& mri_batch, double temperature, double contrastive_weight,
                               AutoencoderWeights<T>* grads = nullptr) {
    if (ecg_batch.rows() != mri_batch.rows()) {
        throw DimensionError("autoencoder_loss: ecg and mri batches differ in size");
    }
    auto enc_e = mlp_forward(specs.ecg_encoder, w.ecg_encoder, scaling.ecg.apply(ecg_batch));
    auto enc_m = mlp_forward(specs.mri_encoder, w.mri_encoder, scaling.mri.apply(mri_batch));
    auto u_e = normalize_latents(enc_e.output);
    auto u_m = normalize_latents(enc_m.output);
    auto dec_e = mlp_forward(specs.ecg_decoder, w.ecg_decoder, u_e.values);
    auto dec_m = mlp_forward(specs.mri_decoder, w.mri_decoder, u_m.values);

    LossBreakdown out;
    out.reconstruction_ecg = reconstruction_loss(ecg_batch, dec_e.output);
    out.reconstruction_mri = reconstruction_loss(mri_batch, dec_m.output);
    Tensor<T> gz_e, gz_m;
    const bool want_grad = grads != nullptr;
    out.contrastive = contrastive_weight > 0.0
                          ? contrastive_loss(enc_e.output, enc_m.output, temperature,
                                             want_grad ? &gz_e : nullptr, want_grad ? &gz_m : nullptr)
                          : 0.0;
    out.total = out.reconstruction_ecg + out.reconstruction_mri + contrastive_weight * out.contrastive;
    if (!want_grad) return out;

    auto mse_grad = [](const Tensor<T>& x, const Tensor<T>& x_hat) {
        Tensor<T> g(x.shape());
        const T scale = static_cast<T>(2.0 / static_cast<double>(x.size()));
        for (std::size_t i = 0; i < x.size(); ++i) g[i] = scale * (x_hat[i] - x[i]);
        return g;
    };
    auto back_dec_e = mlp_backward(specs.ecg_decoder, w.ecg_decoder, dec_e.cache, mse_grad(ecg_batch, dec_e.output));
    auto back_dec_m = mlp_backward(specs.mri_decoder, w.mri_decoder, dec_m.cache, mse_grad(mri_batch, dec_m.output));

    Tensor<T> dz_e = normalize_latents_backward(u_e, back_dec_e.input);
    Tensor<T> dz_m = normalize_latents_backward(u_m, back_dec_m.input);
    if (contrastive_weight > 0.0) {
        const T lam = static_cast<T>(contrastive_weight);
        for (std::size_t i = 0; i < dz_e.size(); ++i) dz_e[i] += lam * gz_e[i];
        for (std::size_t i = 0; i < dz_m.size(); ++i) dz_m[i] += lam * gz_m[i];
    }
    auto back_enc_e = mlp_backward(specs.ecg_encoder, w.ecg_encoder, enc_e.cache, dz_e);
    auto back_enc_m = mlp_backward(specs.mri_encoder, w.mri_encoder, enc_m.cache, dz_m);

    grads->ecg_encoder = std::move(back_enc_e.weights);
    grads->mri_encoder = std::move(back_enc_m.weights);
    grads->ecg_decoder = std::move(back_dec_e.weights);
    grads->mri_decoder = std::move(back_dec_m.weights);
    return out;
}

// ---------------------------------------------------------------------------
// Data access and the public model operations.

/// Raw sample of a subject for ecg or mri.
std::span<const float> sample_of(const SubjectRecord& s, Modality m);

/// Stacks the samples of `ids` into a batch x features tensor.
DenseTensor gather_batch(const Dataset& ds, std::span<const std::uint64_t> ids, Modality m);

/// Deterministic loss over `ids` in order, batched by config.batch_size and
/// averaged with batch-size weights.
LossBreakdown evaluate_loss(const AutoencoderSpecs& specs, const AutoencoderWeights<float>& weights,
                            const InputScaling& scaling, const TrainConfig& config, const Dataset& ds,
                            std::span<const std::uint64_t> ids);

/// Progress callback: (epoch, validation loss).
using EpochCallback = void (*)(std::size_t, double);

/// Trains with Adam and early stopping on validation loss; returns the best weights.
ModelCheckpoint train(const Dataset& ds, const TrainConfig& config, EpochCallback on_epoch = nullptr);

/// Encoder output rescaled to norm sqrt(d), the point the decoders consume.
LatentVector encode(const ModelCheckpoint& ckpt, std::span<const float> sample, Modality modality);

/// Encodes many subjects; row i equals encode() of ids[i] bit for bit.
DenseTensor encode_subjects(const ModelCheckpoint& ckpt, const Dataset& ds,
                            std::span<const std::uint64_t> ids, Modality modality);

/// Decoded sample clamped to the modality's value range. Only the direction
/// of `z` matters.
std::vector<float> decode(const ModelCheckpoint& ckpt, const LatentVector& z, Modality modality);

/// Element-wise mean of two latents.
LatentVector fuse(const LatentVector& z_ecg, const LatentVector& z_mri);

/// Re-evaluates the stored validation loss of `ckpt` on `ds`; returns |stored - recomputed|.
double checkpoint_consistency_gap(const ModelCheckpoint& ckpt, const Dataset& ds);

}  // namespace xmodal
