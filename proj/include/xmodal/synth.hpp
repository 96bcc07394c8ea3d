#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace xmodal {

inline constexpr std::size_t kMriSide = 32;
inline constexpr std::size_t kMriValues = kMriSide * kMriSide;
inline constexpr std::size_t kEcgLeads = 4;
inline constexpr std::size_t kEcgSamples = 256;
inline constexpr std::size_t kEcgValues = kEcgLeads * kEcgSamples;
inline constexpr double kEcgDurationSeconds = 2.56;
inline constexpr double kEcgSampleRate = kEcgSamples / kEcgDurationSeconds;
inline constexpr std::array<std::string_view, kEcgLeads> kEcgLeadNames{"I", "II", "aVR", "aVF"};

inline constexpr float kMriMin = 0.0f;
inline constexpr float kMriMax = 1.0f;
inline constexpr float kEcgMin = -2.0f;
inline constexpr float kEcgMax = 2.0f;

/// Pixels above this intensity count towards the heart's bright area.
inline constexpr float kBrightThreshold = 0.35f;

enum class Sex : std::uint8_t { female = 0, male = 1 };
enum class Split : std::uint8_t { train = 0, validation = 1, test = 2 };

std::string_view to_string(Sex s);
std::string_view to_string(Split s);
Split split_from_string(std::string_view name);

struct GroundTruthFactors {
    float heart_scale = 1.0f;      // [0.5, 1.5]
    float heart_rate = 65.0f;      // beats per minute, [45, 110]
    float wall_thickness = 0.12f;  // [0.05, 0.25]
    std::uint64_t noise_seed = 0;

    friend bool operator==(const GroundTruthFactors&, const GroundTruthFactors&) = default;
};

struct CovariateRecord {
    float age = 65.0f;
    float bmi = 25.98f;
    Sex sex = Sex::female;
    bool atrial_fibrillation = false;
    bool coronary_artery_disease = false;
    bool diabetes_type2 = false;
    bool hypertension = false;
    bool hypertrophic_cardiomyopathy = false;

    friend bool operator==(const CovariateRecord&, const CovariateRecord&) = default;
};

/// MRI is 32x32 row-major in [0, 1]; ECG is 4 leads x 256 samples, lead-major, in [-2, 2].
struct SubjectRecord {
    std::uint64_t id = 0;
    CovariateRecord covariates;
    GroundTruthFactors factors;
    std::vector<float> mri;
    std::vector<float> ecg;
    Split split = Split::train;

    friend bool operator==(const SubjectRecord&, const SubjectRecord&) = default;
};

struct SplitCounts {
    std::size_t train = 0;
    std::size_t validation = 0;
    std::size_t test = 0;

    friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

/// Published cohort targets the generator is calibrated against.
namespace reference_cohort {
inline constexpr double female = 0.5161;
inline constexpr double atrial_fibrillation = 0.0353;
inline constexpr double coronary_artery_disease = 0.0352;
inline constexpr double diabetes_type2 = 0.0420;
inline constexpr double hypertension = 0.3073;
inline constexpr double hypertrophic_cardiomyopathy = 0.0009;
inline constexpr double age_median = 65.0;
inline constexpr double age_q1 = 58.0;
inline constexpr double age_q3 = 70.0;
inline constexpr double bmi_median = 25.98;
inline constexpr double bmi_q1 = 23.62;
inline constexpr double bmi_q3 = 28.78;
// Reference split of the 37,774-subject cohort.
inline constexpr std::size_t cohort_size = 37774;
inline constexpr std::size_t train_size = 26328;
inline constexpr std::size_t validation_size = 7639;
inline constexpr std::size_t test_size = 3807;
}  // namespace reference_cohort

inline constexpr std::size_t kMinCohortSize = 30;

struct Dataset {
    std::uint64_t seed = 0;
    std::vector<SubjectRecord> subjects;  // index == id

    std::size_t size() const noexcept { return subjects.size(); }
    SplitCounts split_counts() const;
    std::vector<std::uint64_t> ids_in(Split split) const;
    const SubjectRecord& at(std::uint64_t id) const;
    bool contains(std::uint64_t id) const noexcept { return id < subjects.size(); }

    /// FNV-1a over the serialized subject records, as 16 hex digits.
    std::string fingerprint() const;
};

/// Largest-remainder rounding of the reference split ratios
/// (26328 : 7639 : 3807 out of 37774); ties go train, validation, test.
SplitCounts split_sizes(std::size_t n);

/// Deterministic synthetic cohort; throws ArgumentError when n < 30.
Dataset generate_cohort(std::size_t n, std::uint64_t seed);

/// Covariates -> ground-truth factors; exposed so tests can probe the coupling.
GroundTruthFactors sample_factors(const CovariateRecord& cov, std::uint64_t subject_seed);

std::vector<float> render_mri(const GroundTruthFactors& factors, double noise_sigma = 0.02);

struct EcgOptions {
    bool atrial_fibrillation = false;
    double noise_sigma = 0.02;
};

std::vector<float> render_ecg(const GroundTruthFactors& factors, const EcgOptions& options = {});

/// Number of pixels brighter than kBrightThreshold.
std::size_t bright_pixel_area(std::span<const float> mri);

}  // namespace xmodal
