#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "xmodal/cohort.hpp"
#include "xmodal/heads.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

/// The five comorbidities (binary) plus heart_scale (continuous).
std::vector<PhenotypeSpec> default_phenotypes();

/// Throws ArgumentError on repeated names or unknown sources.
void validate_phenotypes(std::span<const PhenotypeSpec> phenotypes);

/// 0/1 for binary phenotypes; sources are covariates or ground-truth factors.
double phenotype_value(const SubjectRecord& s, const PhenotypeSpec& spec);

/// Head inputs are the latents themselves, widened to double.
std::vector<double> head_features(std::span<const float> z);

/// Logistic probability or ridge value; throws UnavailableError for skipped heads.
double head_output(const LinearHead& head, PhenotypeKind kind, std::span<const float> z);

struct LogisticFit {
    LinearHead head;
    std::vector<double> loss_trace;  // regularized loss before each step and after the last
};

inline constexpr double kHeadL2 = 1e-3;
inline constexpr std::size_t kLogisticIterations = 500;

/// Full-batch gradient descent on the L2-regularized log loss over
/// standardized features with step 1 / L, L the gradient's Lipschitz constant.
/// Labels must be 0/1 with both classes present.
LogisticFit fit_logistic(const Tensor<double>& x, std::span<const double> y, double l2 = kHeadL2,
                         std::size_t iterations = kLogisticIterations);

/// Ridge on standardized features via the normal equations
/// (X^T X / n + l2 I) w = X^T (y - mean y) / n; bias = mean y.
LinearHead fit_ridge(const Tensor<double>& x, std::span<const double> y, double l2 = kHeadL2);

/// Mann-Whitney AUROC with mid-ranks for ties; throws ArgumentError unless both classes occur.
double auroc(std::span<const double> scores, std::span<const double> labels);

double r_squared(std::span<const double> predictions, std::span<const double> truth);

struct NullDistribution {
    double mean = 0.0;
    double sd = 0.0;
    std::vector<double> samples;
};

/// AUROC of fixed scores against shuffled labels.
NullDistribution permutation_null(std::span<const double> scores, std::span<const double> labels,
                                  std::size_t permutations, std::uint64_t seed);

/// Latent tables for the three input conditions.
struct ConditionTables {
    LatentTable ecg;
    LatentTable mri;
    LatentTable fused;

    static ConditionTables encode(const ModelCheckpoint& ckpt, const Dataset& ds);
    const LatentTable& of(Condition c) const;
};

/// One head per (condition, phenotype), fitted on the train split and scored
/// on the test split. Heads whose training labels are degenerate are skipped.
HeadSet fit_heads(const ConditionTables& tables, const Dataset& ds, std::span<const PhenotypeSpec> phenotypes);

/// Head scores of the test split for one condition and phenotype.
std::vector<double> test_scores(const HeadSet& heads, const ConditionTables& tables, const Dataset& ds,
                                Condition condition, std::size_t phenotype);

struct PredictionCell {
    bool available = false;
    double value = 0.0;
    friend bool operator==(const PredictionCell&, const PredictionCell&) = default;
};

/// Rows in the order ecg_only, mri_only, ecg_and_mri; one column per phenotype.
struct PredictionMatrix {
    std::vector<PhenotypeSpec> phenotypes;
    std::array<std::vector<PredictionCell>, 3> cells;
    std::array<std::vector<std::optional<double>>, 3> metrics;  // test AUROC or R^2

    nlohmann::json to_json() const;
    friend bool operator==(const PredictionMatrix&, const PredictionMatrix&) = default;
};

/// Group-level prediction: each row's head sees the group's mean latent for
/// that condition (the fused row averages per-subject fused latents).
PredictionMatrix predict_matrix(const HeadSet& heads, const ConditionTables& tables,
                                std::span<const std::uint64_t> ids);

/// Prediction for a single latent vector, fed to every row's head.
PredictionMatrix predict_vector(const HeadSet& heads, const LatentVector& z);

}  // namespace xmodal
