#include "xmodal/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xmodal/errors.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

std::string_view to_string(Sex s) { return s == Sex::male ? "male" : "female"; }

std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        case Split::test: return "test";
    }
    return "train";
}

Split split_from_string(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "validation") return Split::validation;
    if (name == "test") return Split::test;
    throw ArgumentError("unknown split '" + std::string(name) + "'");
}

SplitCounts Dataset::split_counts() const {
    SplitCounts c;
    for (const auto& s : subjects) {
        switch (s.split) {
            case Split::train: ++c.train; break;
            case Split::validation: ++c.validation; break;
            case Split::test: ++c.test; break;
        }
    }
    return c;
}

std::vector<std::uint64_t> Dataset::ids_in(Split split) const {
    std::vector<std::uint64_t> ids;
    for (const auto& s : subjects) {
        if (s.split == split) ids.push_back(s.id);
    }
    return ids;
}

const SubjectRecord& Dataset::at(std::uint64_t id) const {
    if (!contains(id)) throw NotFoundError("unknown subject id " + std::to_string(id));
    return subjects[id];
}

SplitCounts split_sizes(std::size_t n) {
    const std::array<std::size_t, 3> weights{reference_cohort::train_size, reference_cohort::validation_size,
                                             reference_cohort::test_size};
    const std::size_t total = reference_cohort::cohort_size;
    std::array<std::size_t, 3> counts{};
    std::array<std::size_t, 3> remainders{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        counts[i] = n * weights[i] / total;
        remainders[i] = n * weights[i] % total;
        assigned += counts[i];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) counts[order[k % 3]] += 1;
    return {counts[0], counts[1], counts[2]};
}

namespace {

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

// Keeps the marginal prevalence while letting it differ by sex.
double male_rate_for(double marginal, double female_rate) {
    return (marginal - reference_cohort::female * female_rate) / (1.0 - reference_cohort::female);
}

constexpr double kFemaleT2dRate = 0.030;
constexpr double kFemaleHypertensionRate = 0.26;

CovariateRecord sample_covariates(Rng& rng) {
    CovariateRecord c;
    c.sex = rng.bernoulli(reference_cohort::female) ? Sex::female : Sex::male;
    const double age_sd = (reference_cohort::age_q3 - reference_cohort::age_q1) / 1.349;
    const double bmi_sd = (reference_cohort::bmi_q3 - reference_cohort::bmi_q1) / 1.349;
    c.age = static_cast<float>(clamp(rng.normal(reference_cohort::age_median, age_sd), 40.0, 80.0));
    c.bmi = static_cast<float>(clamp(rng.normal(reference_cohort::bmi_median, bmi_sd), 15.0, 50.0));
    const bool female = c.sex == Sex::female;
    c.atrial_fibrillation = rng.bernoulli(reference_cohort::atrial_fibrillation);
    c.coronary_artery_disease = rng.bernoulli(reference_cohort::coronary_artery_disease);
    c.diabetes_type2 = rng.bernoulli(
        female ? kFemaleT2dRate : male_rate_for(reference_cohort::diabetes_type2, kFemaleT2dRate));
    c.hypertension = rng.bernoulli(
        female ? kFemaleHypertensionRate
               : male_rate_for(reference_cohort::hypertension, kFemaleHypertensionRate));
    c.hypertrophic_cardiomyopathy = rng.bernoulli(reference_cohort::hypertrophic_cardiomyopathy);
    return c;
}

}  // namespace

GroundTruthFactors sample_factors(const CovariateRecord& cov, std::uint64_t subject_seed) {
    Rng rng(subject_seed);
    GroundTruthFactors f;
    const double scale_mean = cov.sex == Sex::male ? 1.15 : 0.90;
    double scale = rng.normal(scale_mean, 0.10) + 0.01 * (cov.bmi - reference_cohort::bmi_median);
    if (cov.coronary_artery_disease) scale += 0.04;
    f.heart_scale = static_cast<float>(clamp(scale, 0.5, 1.5));

    double rate = rng.normal(66.0, 9.0);
    if (cov.atrial_fibrillation) rate += 12.0;
    if (cov.diabetes_type2) rate += 6.0;
    f.heart_rate = static_cast<float>(clamp(rate, 45.0, 110.0));

    double wall = rng.normal(0.11, 0.022) + 0.0008 * (cov.age - reference_cohort::age_median);
    if (cov.hypertension) wall += 0.05;
    if (cov.hypertrophic_cardiomyopathy) wall += 0.08;
    f.wall_thickness = static_cast<float>(clamp(wall, 0.05, 0.25));

    f.noise_seed = rng.next_u64();
    return f;
}

// ---------------------------------------------------------------------------
// MRI: short-axis-like slice. A bright myocardial ellipse whose size follows
// heart_scale, a blood pool inset by the wall thickness, and a blood-pool
// intensity that darkens with heart rate.

namespace {

constexpr double kMriBackground = 0.05;
constexpr double kMriMyocardium = 0.65;
constexpr int kSuper = 4;

struct Ellipse {
    double a = 0;  // horizontal semi-axis, pixels
    double b = 0;

    bool contains(double dx, double dy) const {
        if (a <= 0 || b <= 0) return false;
        return (dx * dx) / (a * a) + (dy * dy) / (b * b) <= 1.0;
    }
};

double coverage(const Ellipse& e, double px, double py, double center) {
    if (e.a <= 0 || e.b <= 0) return 0.0;
    // Cheap accept/reject before supersampling.
    const double dx0 = std::abs(px + 0.5 - center);
    const double dy0 = std::abs(py + 0.5 - center);
    const double near_x = std::max(0.0, dx0 - 0.5), near_y = std::max(0.0, dy0 - 0.5);
    if (!e.contains(near_x, near_y)) return 0.0;
    if (e.contains(dx0 + 0.5, dy0 + 0.5)) return 1.0;
    int inside = 0;
    for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
            const double x = px + (sx + 0.5) / kSuper - center;
            const double y = py + (sy + 0.5) / kSuper - center;
            inside += e.contains(x, y) ? 1 : 0;
        }
    }
    return static_cast<double>(inside) / (kSuper * kSuper);
}

}  // namespace

std::vector<float> render_mri(const GroundTruthFactors& factors, double noise_sigma) {
    const double scale = clamp(factors.heart_scale, 0.5, 1.5);
    const double rate = clamp(factors.heart_rate, 45.0, 110.0);
    const double wall_px = 24.0 * clamp(factors.wall_thickness, 0.05, 0.25);
    const Ellipse outer{9.5 * scale, 7.0 * scale};
    const Ellipse inner{outer.a - wall_px, outer.b - wall_px};
    const double pool = 0.95 - 0.25 * (rate - 45.0) / 65.0;
    const double center = kMriSide / 2.0;

    Rng noise(derive_seed(factors.noise_seed, 1));
    std::vector<float> img(kMriValues);
    for (std::size_t r = 0; r < kMriSide; ++r) {
        for (std::size_t c = 0; c < kMriSide; ++c) {
            const double outer_cov = coverage(outer, static_cast<double>(c), static_cast<double>(r), center);
            const double inner_cov =
                outer_cov > 0 ? coverage(inner, static_cast<double>(c), static_cast<double>(r), center) : 0.0;
            double v = kMriBackground + outer_cov * (kMriMyocardium - kMriBackground) +
                       inner_cov * (pool - kMriMyocardium);
            if (noise_sigma > 0) v += noise_sigma * noise.normal();
            img[r * kMriSide + c] = static_cast<float>(clamp(v, kMriMin, kMriMax));
        }
    }
    return img;
}

std::size_t bright_pixel_area(std::span<const float> mri) {
    return static_cast<std::size_t>(
        std::count_if(mri.begin(), mri.end(), [](float v) { return v > kBrightThreshold; }));
}

// ---------------------------------------------------------------------------
// ECG: Gaussian P, R, S and T waves per beat. R amplitude grows with
// heart_scale; wall thickness widens the QRS and flattens the T wave.

namespace {

struct Wave {
    double offset;  // seconds after beat onset
    double width;   // gaussian sigma, seconds
    double amplitude;
};

// Per-lead multipliers for P, R, S, T.
constexpr std::array<std::array<double, 4>, kEcgLeads> kLeadGain{{
    {1.0, 1.0, 1.0, 1.0},
    {1.3, 1.4, 0.6, 1.2},
    {-1.0, -1.1, -0.5, -1.0},
    {0.8, 0.9, 1.2, 0.7},
}};

std::array<Wave, 4> beat_waves(const GroundTruthFactors& f, double period, bool fibrillating) {
    const double scale = clamp(f.heart_scale, 0.5, 1.5);
    const double wall = clamp(f.wall_thickness, 0.05, 0.25);
    const double r_amp = 0.4 + 0.6 * scale;
    const double qrs_width = 0.025 + 0.12 * (wall - 0.05);
    const double t_amp = 0.30 - 0.5 * (wall - 0.05);
    return {{
        {0.10, 0.03, fibrillating ? 0.0 : 0.12},
        {0.23, qrs_width, r_amp},
        {0.23 + 0.05, 0.025, -0.25 * r_amp},
        {0.23 + 0.30 * std::sqrt(period), 0.07, t_amp},
    }};
}

void add_beat(std::array<double, kEcgLeads>& out, const std::array<Wave, 4>& waves, double dt) {
    for (std::size_t w = 0; w < waves.size(); ++w) {
        if (waves[w].amplitude == 0.0) continue;
        const double u = (dt - waves[w].offset) / waves[w].width;
        if (std::abs(u) > 8.0) continue;
        const double g = waves[w].amplitude * std::exp(-0.5 * u * u);
        for (std::size_t lead = 0; lead < kEcgLeads; ++lead) out[lead] += kLeadGain[lead][w] * g;
    }
}

}  // namespace

std::vector<float> render_ecg(const GroundTruthFactors& factors, const EcgOptions& options) {
    const double rate = clamp(factors.heart_rate, 45.0, 110.0);
    const double period = 60.0 / rate;
    const auto waves = beat_waves(factors, period, options.atrial_fibrillation);

    std::vector<double> onsets;
    if (options.atrial_fibrillation) {
        // Irregularly irregular RR intervals.
        Rng rr(derive_seed(factors.noise_seed, 2));
        double t = -2.0 * period;
        while (t < kEcgDurationSeconds + period) {
            onsets.push_back(t);
            t += period * (1.0 + 0.18 * rr.uniform(-1.0, 1.0));
        }
    }

    std::vector<float> trace(kEcgValues);
    Rng noise(derive_seed(factors.noise_seed, 3));
    for (std::size_t i = 0; i < kEcgSamples; ++i) {
        const double t = static_cast<double>(i) / kEcgSampleRate;
        std::array<double, kEcgLeads> v{};
        if (options.atrial_fibrillation) {
            for (double onset : onsets) add_beat(v, waves, t - onset);
            const double f_wave = 0.03 * std::sin(2.0 * 3.141592653589793 * 6.0 * t);
            for (auto& x : v) x += f_wave;
        } else {
            // Depends on t only through the phase, so the trace is periodic.
            const double phase = std::fmod(t, period);
            for (int k = -1; k <= 1; ++k) add_beat(v, waves, phase + k * period);
        }
        for (std::size_t lead = 0; lead < kEcgLeads; ++lead) {
            double x = v[lead];
            if (options.noise_sigma > 0) x += options.noise_sigma * noise.normal();
            trace[lead * kEcgSamples + i] = static_cast<float>(clamp(x, kEcgMin, kEcgMax));
        }
    }
    return trace;
}

Dataset generate_cohort(std::size_t n, std::uint64_t seed) {
    if (n < kMinCohortSize) {
        throw ArgumentError("cohort size must be at least " + std::to_string(kMinCohortSize) +
                            ", got " + std::to_string(n));
    }
    Dataset ds;
    ds.seed = seed;
    ds.subjects.resize(n);
    for (std::size_t id = 0; id < n; ++id) {
        auto& s = ds.subjects[id];
        Rng rng(derive_seed(seed, id + 1));
        s.id = id;
        s.covariates = sample_covariates(rng);
        s.factors = sample_factors(s.covariates, rng.next_u64());
        s.mri = render_mri(s.factors);
        s.ecg = render_ecg(s.factors, {s.covariates.atrial_fibrillation, 0.02});
    }

    std::vector<std::uint64_t> order(n);
    std::iota(order.begin(), order.end(), std::uint64_t{0});
    Rng split_rng(derive_seed(seed, 0x5EED5B17ULL));
    split_rng.shuffle(order);
    const auto counts = split_sizes(n);
    for (std::size_t k = 0; k < n; ++k) {
        auto& s = ds.subjects[order[k]];
        if (k < counts.train) {
            s.split = Split::train;
        } else if (k < counts.train + counts.validation) {
            s.split = Split::validation;
        } else {
            s.split = Split::test;
        }
    }
    return ds;
}

}  // namespace xmodal
