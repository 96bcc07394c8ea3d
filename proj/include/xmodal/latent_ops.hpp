#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "xmodal/autoencoder.hpp"
#include "xmodal/cohort.hpp"

namespace xmodal {

/// Decoded samples keyed by output modality (ecg and/or mri).
using SampleMap = std::map<Modality, std::vector<float>>;

/// Sorted, deduplicated decoder modalities; throws ArgumentError when empty or
/// when a modality has no decoder.
std::vector<Modality> normalize_modalities(std::span<const Modality> modalities);

SampleMap decode_all(const ModelCheckpoint& ckpt, const LatentVector& z, std::span<const Modality> modalities);

/// Per-dimension display half-width R_k = 4 x std of dimension k over the
/// pooled ecg and mri training-split latents.
struct PerturbationRange {
    std::vector<float> radius;

    static PerturbationRange from_training(const ModelCheckpoint& ckpt, const Dataset& ds);
    static PerturbationRange from_tables(const LatentTable& ecg, const LatentTable& mri, const Dataset& ds);
};

struct PerturbationRequest {
    LatentVector base;
    std::size_t dimension = 0;
    double new_value = 0.0;
};

struct PerturbationResult {
    LatentVector perturbed;
    SampleMap original;
    SampleMap changed;
};

/// Throws ArgumentError for an invalid dimension or a value outside [-R_k, R_k].
LatentVector perturbed_vector(const PerturbationRange& range, const PerturbationRequest& req);

PerturbationResult perturb(const ModelCheckpoint& ckpt, const PerturbationRange& range,
                           const PerturbationRequest& req, std::span<const Modality> modalities);

/// (1 - t) z_a + t z_b for t in [0, 1].
LatentVector interpolate_latents(const LatentVector& z_a, const LatentVector& z_b, double t);

struct InterpolationResult {
    LatentVector vector;
    SampleMap samples;
};

InterpolationResult interpolate(const ModelCheckpoint& ckpt, const LatentVector& z_a, const LatentVector& z_b,
                                double t, std::span<const Modality> modalities);

/// decode(encode(sample, from), to); from and to must differ.
std::vector<float> translate(const ModelCheckpoint& ckpt, std::span<const float> sample, Modality from, Modality to);

struct GroupReconstruction {
    Representative representative;
    SampleMap samples;
};

GroupReconstruction reconstruct_group(const ModelCheckpoint& ckpt, const LatentTable& table,
                                      std::span<const std::uint64_t> ids, RepresentativeMethod method,
                                      std::span<const Modality> modalities);

}  // namespace xmodal
