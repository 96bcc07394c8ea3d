#include "xmodal/autoencoder.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include "xmodal/adam.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

std::string_view to_string(Modality m) {
    switch (m) {
        case Modality::ecg: return "ecg";
        case Modality::mri: return "mri";
        case Modality::fused: return "fused";
        case Modality::synthetic: return "synthetic";
    }
    return "synthetic";
}

Modality modality_from_string(std::string_view name) {
    if (name == "ecg") return Modality::ecg;
    if (name == "mri") return Modality::mri;
    if (name == "fused") return Modality::fused;
    if (name == "synthetic") return Modality::synthetic;
    throw ArgumentError("unknown modality '" + std::string(name) + "'");
}

void require_sample_modality(Modality m) {
    if (m != Modality::ecg && m != Modality::mri) {
        throw ArgumentError("modality '" + std::string(to_string(m)) + "' has no samples; use ecg or mri");
    }
}

void TrainConfig::validate() const {
    if (latent_dim == 0) throw ArgumentError("latent_dim must be positive");
    if (!(temperature > 0.0)) throw ArgumentError("temperature must be positive");
    if (!(contrastive_weight >= 0.0)) throw ArgumentError("contrastive_weight must be non-negative");
    if (batch_size == 0) throw ArgumentError("batch_size must be positive");
    if (contrastive_weight > 0.0 && batch_size < 2) {
        throw ArgumentError("batch_size must be at least 2 when the contrastive term is active");
    }
    if (!(lr > 0.0)) throw ArgumentError("lr must be positive");
    if (encoder_hidden_width == 0 || decoder_hidden_width == 0) {
        throw ArgumentError("hidden widths must be positive");
    }
}

AutoencoderSpecs AutoencoderSpecs::make(std::size_t ecg_dim, std::size_t mri_dim, const TrainConfig& config) {
    config.validate();
    const auto h = config.encoder_hidden_width;
    const auto hd = config.decoder_hidden_width;
    const auto d = config.latent_dim;
    const auto act = config.hidden_activation;
    return {
        MlpSpec::make({ecg_dim, h, d}, act, derive_seed(config.seed, 101)),
        MlpSpec::make({mri_dim, h, d}, act, derive_seed(config.seed, 102)),
        MlpSpec::make({d, hd, ecg_dim}, act, derive_seed(config.seed, 103)),
        MlpSpec::make({d, hd, mri_dim}, act, derive_seed(config.seed, 104)),
    };
}

std::size_t AutoencoderSpecs::input_dim(Modality m) const { return encoder(m).input_width(); }

const MlpSpec& AutoencoderSpecs::encoder(Modality m) const {
    require_sample_modality(m);
    return m == Modality::ecg ? ecg_encoder : mri_encoder;
}

const MlpSpec& AutoencoderSpecs::decoder(Modality m) const {
    require_sample_modality(m);
    return m == Modality::ecg ? ecg_decoder : mri_decoder;
}

std::span<const float> sample_of(const SubjectRecord& s, Modality m) {
    require_sample_modality(m);
    return m == Modality::ecg ? std::span<const float>(s.ecg) : std::span<const float>(s.mri);
}

DenseTensor gather_batch(const Dataset& ds, std::span<const std::uint64_t> ids, Modality m) {
    if (ids.empty()) throw ArgumentError("gather_batch: empty id list");
    const auto width = sample_of(ds.at(ids[0]), m).size();
    DenseTensor batch({ids.size(), width});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        const auto sample = sample_of(ds.at(ids[r]), m);
        if (sample.size() != width) throw DimensionError("gather_batch: ragged samples");
        std::copy(sample.begin(), sample.end(), batch.row(r).begin());
    }
    return batch;
}

FeatureScaling FeatureScaling::fit(const DenseTensor& samples) {
    const std::size_t n = samples.rows(), d = samples.cols();
    std::vector<double> sum(d, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) sum[c] += samples(r, c);
    }
    FeatureScaling out{std::vector<float>(d), std::vector<float>(d, 1.0f)};
    for (std::size_t c = 0; c < d; ++c) out.mean[c] = static_cast<float>(sum[c] / static_cast<double>(n));
    return out;
}

LossBreakdown evaluate_loss(const AutoencoderSpecs& specs, const AutoencoderWeights<float>& weights,
                            const InputScaling& scaling, const TrainConfig& config, const Dataset& ds,
                            std::span<const std::uint64_t> ids) {
    LossBreakdown sum;
    if (ids.empty()) return sum;
    for (std::size_t start = 0; start < ids.size(); start += config.batch_size) {
        const auto chunk = ids.subspan(start, std::min(config.batch_size, ids.size() - start));
        const auto part = autoencoder_loss(specs, weights, scaling, gather_batch(ds, chunk, Modality::ecg),
                                           gather_batch(ds, chunk, Modality::mri), config.temperature,
                                           config.contrastive_weight);
        const double w = static_cast<double>(chunk.size());
        sum.reconstruction_ecg += w * part.reconstruction_ecg;
        sum.reconstruction_mri += w * part.reconstruction_mri;
        sum.contrastive += w * part.contrastive;
        sum.total += w * part.total;
    }
    const double n = static_cast<double>(ids.size());
    sum.reconstruction_ecg /= n;
    sum.reconstruction_mri /= n;
    sum.contrastive /= n;
    sum.total /= n;
    return sum;
}

namespace {

struct Optimizers {
    AdamState<float> ecg_encoder, mri_encoder, ecg_decoder, mri_decoder;

    explicit Optimizers(const AutoencoderWeights<float>& w, const AdamConfig& cfg)
        : ecg_encoder(AdamState<float>::for_params(w.ecg_encoder, cfg)),
          mri_encoder(AdamState<float>::for_params(w.mri_encoder, cfg)),
          ecg_decoder(AdamState<float>::for_params(w.ecg_decoder, cfg)),
          mri_decoder(AdamState<float>::for_params(w.mri_decoder, cfg)) {}

    void step(AutoencoderWeights<float>& w, const AutoencoderWeights<float>& g) {
        adam_step(w.ecg_encoder, g.ecg_encoder, ecg_encoder);
        adam_step(w.mri_encoder, g.mri_encoder, mri_encoder);
        adam_step(w.ecg_decoder, g.ecg_decoder, ecg_decoder);
        adam_step(w.mri_decoder, g.mri_decoder, mri_decoder);
    }
};

void name_params(ParamSet<float>& p, const std::string& prefix) {
    for (auto& n : p.names) n = prefix + "." + n;
}

}  // namespace

ModelCheckpoint train(const Dataset& ds, const TrainConfig& config, EpochCallback on_epoch) {
    config.validate();
    const auto train_ids = ds.ids_in(Split::train);
    const auto val_ids = ds.ids_in(Split::validation);
    if (train_ids.empty() || val_ids.empty()) {
        throw ArgumentError("training needs non-empty train and validation splits");
    }
    const auto started = std::chrono::steady_clock::now();

    ModelCheckpoint ckpt;
    ckpt.config = config;
    ckpt.specs = AutoencoderSpecs::make(kEcgValues, kMriValues, config);
    ckpt.dataset_fingerprint = ds.fingerprint();
    ckpt.input_scaling = {FeatureScaling::fit(gather_batch(ds, train_ids, Modality::ecg)),
                          FeatureScaling::fit(gather_batch(ds, train_ids, Modality::mri))};

    auto weights = AutoencoderWeights<float>::init(ckpt.specs);
    name_params(weights.ecg_encoder, "ecg_encoder");
    name_params(weights.mri_encoder, "mri_encoder");
    name_params(weights.ecg_decoder, "ecg_decoder");
    name_params(weights.mri_decoder, "mri_decoder");
    Optimizers opt(weights, AdamConfig{config.lr, 0.9, 0.999, 1e-8});

    auto validation_loss = [&](const AutoencoderWeights<float>& w) {
        return evaluate_loss(ckpt.specs, w, ckpt.input_scaling, config, ds, val_ids).total;
    };

    double best = validation_loss(weights);
    ckpt.validation_history.push_back(best);
    ckpt.weights = weights;
    ckpt.epoch_of_best = 0;
    if (on_epoch) on_epoch(0, best);

    std::vector<std::uint64_t> order = train_ids;
    AutoencoderWeights<float> grads;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        Rng shuffler(derive_seed(config.seed, 0x5A000000ULL + epoch));
        shuffler.shuffle(order);
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
            const auto chunk = std::span<const std::uint64_t>(order).subspan(
                start, std::min(config.batch_size, order.size() - start));
            auto fail = [&](const std::string& why) {
                return TrainingError("divergence at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batch_index) + ": " + why);
            };
            try {
                const auto loss = autoencoder_loss(ckpt.specs, weights, ckpt.input_scaling, gather_batch(ds, chunk, Modality::ecg),
                                                   gather_batch(ds, chunk, Modality::mri), config.temperature,
                                                   config.contrastive_weight, &grads);
                if (!std::isfinite(loss.total)) throw fail("non-finite training loss");
                opt.step(weights, grads);
            } catch (const NumericError& e) {
                throw fail(e.what());
            }
        }

        double val = 0.0;
        try {
            val = validation_loss(weights);
        } catch (const NumericError&) {
            val = NAN;
        }
        if (!std::isfinite(val)) {
            throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
        }
        ckpt.validation_history.push_back(val);
        ckpt.epochs_run = epoch;
        if (on_epoch) on_epoch(epoch, val);
        if (val < best) {
            best = val;
            ckpt.weights = weights;
            ckpt.epoch_of_best = epoch;
        } else if (epoch - ckpt.epoch_of_best >= config.patience) {
            break;
        }
    }
    ckpt.validation_loss_at_best = best;
    ckpt.train_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return ckpt;
}

LatentVector encode(const ModelCheckpoint& ckpt, std::span<const float> sample, Modality modality) {
    require_sample_modality(modality);
    const auto& spec = ckpt.specs.encoder(modality);
    if (sample.size() != spec.input_width()) {
        throw ArgumentError("encode: " + std::string(to_string(modality)) + " sample has " +
                            std::to_string(sample.size()) + " values, expected " +
                            std::to_string(spec.input_width()));
    }
    DenseTensor x({1, sample.size()}, std::vector<float>(sample.begin(), sample.end()));
    x.require_finite("encoder input");
    const auto out = normalize_latents(
        mlp_forward(spec, ckpt.weights.encoder(modality), ckpt.input_scaling.of(modality).apply(x)).output);
    return {std::vector<float>(out.values.values().begin(), out.values.values().end()), modality};
}

DenseTensor encode_subjects(const ModelCheckpoint& ckpt, const Dataset& ds,
                            std::span<const std::uint64_t> ids, Modality modality) {
    require_sample_modality(modality);
    DenseTensor out({ids.size(), ckpt.latent_dim()});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto z = encode(ckpt, sample_of(ds.at(ids[i]), modality), modality);
        std::copy(z.values.begin(), z.values.end(), out.row(i).begin());
    }
    return out;
}

std::vector<float> decode(const ModelCheckpoint& ckpt, const LatentVector& z, Modality modality) {
    require_sample_modality(modality);
    if (z.size() != ckpt.latent_dim()) {
        throw ArgumentError("decode: latent has " + std::to_string(z.size()) + " values, expected " +
                            std::to_string(ckpt.latent_dim()));
    }
    DenseTensor x({1, z.size()}, z.values);
    x.require_finite("latent vector");
    auto out = mlp_forward(ckpt.specs.decoder(modality), ckpt.weights.decoder(modality),
                           normalize_latents(x).values)
                   .output;
    const float lo = modality == Modality::ecg ? kEcgMin : kMriMin;
    const float hi = modality == Modality::ecg ? kEcgMax : kMriMax;
    std::vector<float> sample(out.values().begin(), out.values().end());
    for (auto& v : sample) v = std::clamp(v, lo, hi);
    return sample;
}

LatentVector fuse(const LatentVector& z_ecg, const LatentVector& z_mri) {
    if (z_ecg.size() != z_mri.size()) {
        throw DimensionError("fuse: latent lengths " + std::to_string(z_ecg.size()) + " and " +
                             std::to_string(z_mri.size()) + " differ");
    }
    LatentVector out{std::vector<float>(z_ecg.size()), Modality::fused};
    for (std::size_t i = 0; i < z_ecg.size(); ++i) out.values[i] = 0.5f * (z_ecg.values[i] + z_mri.values[i]);
    return out;
}

double checkpoint_consistency_gap(const ModelCheckpoint& ckpt, const Dataset& ds) {
    const auto val_ids = ds.ids_in(Split::validation);
    const double recomputed = evaluate_loss(ckpt.specs, ckpt.weights, ckpt.input_scaling, ckpt.config, ds, val_ids).total;
    return std::abs(recomputed - ckpt.validation_loss_at_best);
}

}  // namespace xmodal
