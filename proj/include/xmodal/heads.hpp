#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace xmodal {

enum class PhenotypeKind { binary, continuous };

struct PhenotypeSpec {
    std::string name;
    PhenotypeKind kind = PhenotypeKind::binary;
    std::string source;  // covariate or ground-truth factor name

    friend bool operator==(const PhenotypeSpec&, const PhenotypeSpec&) = default;
};

/// Input condition of a phenotype head; also the row order of PredictionMatrix.
enum class Condition : std::uint8_t { ecg_only = 0, mri_only = 1, ecg_and_mri = 2 };
inline constexpr std::array<Condition, 3> kConditions{Condition::ecg_only, Condition::mri_only,
                                                      Condition::ecg_and_mri};

std::string_view to_string(Condition c);
std::string_view to_string(PhenotypeKind k);
PhenotypeKind phenotype_kind_from_string(std::string_view s);

/// Linear model on standardized latents: f(z) = bias + sum_i w_i (z_i - mean_i) / scale_i.
/// Binary heads apply a sigmoid on top.
struct LinearHead {
    bool available = false;
    std::string skip_reason;
    std::vector<float> feature_mean;
    std::vector<float> feature_scale;
    std::vector<float> weights;
    float bias = 0.0f;
    bool metric_available = false;
    double test_metric = 0.0;  // AUROC (binary) or R^2 (continuous)

    friend bool operator==(const LinearHead&, const LinearHead&) = default;
};

struct HeadSet {
    std::vector<PhenotypeSpec> phenotypes;
    std::array<std::vector<LinearHead>, 3> heads;  // [condition][phenotype]

    const LinearHead& at(Condition c, std::size_t phenotype) const {
        return heads[static_cast<std::size_t>(c)].at(phenotype);
    }

    friend bool operator==(const HeadSet&, const HeadSet&) = default;
};

}  // namespace xmodal
