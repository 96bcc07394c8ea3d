#include "xmodal/latent_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "xmodal/errors.hpp"

namespace xmodal {

std::vector<Modality> normalize_modalities(std::span<const Modality> modalities) {
    if (modalities.empty()) throw ArgumentError("at least one output modality is required");
    std::vector<Modality> out(modalities.begin(), modalities.end());
    for (auto m : out) require_sample_modality(m);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

SampleMap decode_all(const ModelCheckpoint& ckpt, const LatentVector& z, std::span<const Modality> modalities) {
    SampleMap out;
    for (auto m : normalize_modalities(modalities)) out.emplace(m, decode(ckpt, z, m));
    return out;
}

namespace {

PerturbationRange pooled_range(const DenseTensor& a, const DenseTensor& b) {
    const std::size_t d = a.cols();
    std::vector<double> sum(d, 0.0), sq(d, 0.0);
    for (const auto* t : {&a, &b}) {
        for (std::size_t i = 0; i < t->rows(); ++i) {
            for (std::size_t k = 0; k < d; ++k) sum[k] += (*t)(i, k);
        }
    }
    const double n = static_cast<double>(a.rows() + b.rows());
    if (n < 2) throw ArgumentError("perturbation range needs at least one training subject");
    for (auto& s : sum) s /= n;
    for (const auto* t : {&a, &b}) {
        for (std::size_t i = 0; i < t->rows(); ++i) {
            for (std::size_t k = 0; k < d; ++k) sq[k] += ((*t)(i, k) - sum[k]) * ((*t)(i, k) - sum[k]);
        }
    }
    PerturbationRange r;
    for (std::size_t k = 0; k < d; ++k) r.radius.push_back(static_cast<float>(4.0 * std::sqrt(sq[k] / n)));
    return r;
}

DenseTensor rows_of(const DenseTensor& t, std::span<const std::uint64_t> ids) {
    DenseTensor out({ids.size(), t.cols()});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto r = t.row(ids[i]);
        std::copy(r.begin(), r.end(), out.row(i).begin());
    }
    return out;
}

std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

}  // namespace

PerturbationRange PerturbationRange::from_training(const ModelCheckpoint& ckpt, const Dataset& ds) {
    const auto ids = ds.ids_in(Split::train);
    return pooled_range(encode_subjects(ckpt, ds, ids, Modality::ecg), encode_subjects(ckpt, ds, ids, Modality::mri));
}

PerturbationRange PerturbationRange::from_tables(const LatentTable& ecg, const LatentTable& mri, const Dataset& ds) {
    const auto ids = ds.ids_in(Split::train);
    return pooled_range(rows_of(ecg.values, ids), rows_of(mri.values, ids));
}

LatentVector perturbed_vector(const PerturbationRange& range, const PerturbationRequest& req) {
    const std::size_t d = req.base.size();
    if (range.radius.size() != d) {
        throw DimensionError("latent has " + std::to_string(d) + " dimensions, range has " +
                             std::to_string(range.radius.size()));
    }
    if (req.dimension >= d) {
        throw ArgumentError("dimension " + std::to_string(req.dimension) + " is out of range [0, " +
                            std::to_string(d) + ")");
    }
    const double r = range.radius[req.dimension];
    if (!std::isfinite(req.new_value) || std::abs(req.new_value) > r) {
        throw ArgumentError("value " + format_number(req.new_value) + " for dimension " +
                            std::to_string(req.dimension) + " is outside [-R, R] with R = " + format_number(r));
    }
    LatentVector out = req.base;
    out.values[req.dimension] = static_cast<float>(req.new_value);
    return out;
}

PerturbationResult perturb(const ModelCheckpoint& ckpt, const PerturbationRange& range,
                           const PerturbationRequest& req, std::span<const Modality> modalities) {
    PerturbationResult out;
    out.perturbed = perturbed_vector(range, req);
    out.original = decode_all(ckpt, req.base, modalities);
    out.changed = decode_all(ckpt, out.perturbed, modalities);
    return out;
}

LatentVector interpolate_latents(const LatentVector& z_a, const LatentVector& z_b, double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw ArgumentError("interpolation t = " + format_number(t) + " is outside [0, 1]");
    if (z_a.size() != z_b.size()) {
        throw DimensionError("cannot interpolate latents of sizes " + std::to_string(z_a.size()) + " and " +
                             std::to_string(z_b.size()));
    }
    LatentVector out;
    out.modality_of_origin = z_a.modality_of_origin == z_b.modality_of_origin ? z_a.modality_of_origin
                                                                                : Modality::synthetic;
    out.values.resize(z_a.size());
    for (std::size_t k = 0; k < z_a.size(); ++k) {
        out.values[k] = static_cast<float>((1.0 - t) * z_a.values[k] + t * z_b.values[k]);
    }
    return out;
}

InterpolationResult interpolate(const ModelCheckpoint& ckpt, const LatentVector& z_a, const LatentVector& z_b,
                                double t, std::span<const Modality> modalities) {
    InterpolationResult out;
    out.vector = interpolate_latents(z_a, z_b, t);
    out.samples = decode_all(ckpt, out.vector, modalities);
    return out;
}

std::vector<float> translate(const ModelCheckpoint& ckpt, std::span<const float> sample, Modality from, Modality to) {
    require_sample_modality(from);
    require_sample_modality(to);
    if (from == to) {
        throw ArgumentError("translate needs two different modalities; use reconstruct for " +
                            std::string(to_string(from)));
    }
    return decode(ckpt, encode(ckpt, sample, from), to);
}

GroupReconstruction reconstruct_group(const ModelCheckpoint& ckpt, const LatentTable& table,
                                      std::span<const std::uint64_t> ids, RepresentativeMethod method,
                                      std::span<const Modality> modalities) {
    GroupReconstruction out;
    out.representative = representative(table, ids, method);
    out.samples = decode_all(ckpt, out.representative.vector, modalities);
    return out;
}

}  // namespace xmodal
