#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>

#include "xmodal/dataset_io.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/synth.hpp"

using namespace xmodal;
namespace fs = std::filesystem;

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j);
        i = j + 1;
    }
    return r;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / a.size();
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / b.size();
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

// Local maxima above half the trace maximum, at least 0.25 s apart.
std::size_t count_r_peaks(const std::vector<float>& ecg, std::size_t lead) {
    const auto* x = ecg.data() + lead * kEcgSamples;
    const float peak = *std::max_element(x, x + kEcgSamples);
    std::size_t count = 0;
    std::ptrdiff_t last = -1000;
    const auto min_gap = static_cast<std::ptrdiff_t>(0.25 * kEcgSampleRate);
    for (std::size_t i = 1; i + 1 < kEcgSamples; ++i) {
        if (x[i] > 0.5f * peak && x[i] >= x[i - 1] && x[i] > x[i + 1] &&
            static_cast<std::ptrdiff_t>(i) - last >= min_gap) {
            ++count;
            last = static_cast<std::ptrdiff_t>(i);
        }
    }
    return count;
}

// Pixel count by direct thresholding, independent of bright_pixel_area().
std::size_t pixel_count_over(const std::vector<float>& img, float threshold) {
    std::size_t n = 0;
    for (float v : img) n += v > threshold ? 1 : 0;
    return n;
}

double binomial_sigma(double p, double n) { return std::sqrt(n * p * (1 - p)); }

}  // namespace

TEST_CASE("split sizes follow the reference cohort split") {
    CHECK(split_sizes(reference_cohort::cohort_size) == SplitCounts{26328, 7639, 3807});
    CHECK(split_sizes(2000) == SplitCounts{1394, 404, 202});
}

TEST_CASE("split sizes: floor-then-distribute oracle over many n") {
    const long double r[3] = {26328.0L / 37774, 7639.0L / 37774, 3807.0L / 37774};
    for (std::size_t n = 30; n < 5000; n += 7) {
        const auto c = split_sizes(n);
        CHECK(c.train + c.validation + c.test == n);
        const std::size_t got[3] = {c.train, c.validation, c.test};
        long double frac[3];
        std::size_t base[3], assigned = 0;
        for (int i = 0; i < 3; ++i) {
            const long double exact = r[i] * n;
            base[i] = static_cast<std::size_t>(std::floor(exact + 1e-12L));
            frac[i] = exact - base[i];
            assigned += base[i];
            CHECK(got[i] >= base[i]);
            CHECK(got[i] <= base[i] + 1);
        }
        // Every bumped category must have a fractional part >= every unbumped one.
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                if (got[i] > base[i] && got[j] == base[j]) CHECK(frac[i] >= frac[j] - 1e-9L);
        CHECK(n - assigned <= 2);
    }
}

TEST_CASE("generate_cohort rejects tiny cohorts") {
    CHECK_THROWS_AS(generate_cohort(29, 1), ArgumentError);
    CHECK_NOTHROW(generate_cohort(30, 1));
}

TEST_CASE("generate_cohort is deterministic and well formed") {
    const auto a = generate_cohort(120, 42);
    const auto b = generate_cohort(120, 42);
    CHECK(serialize_subjects(a) == serialize_subjects(b));
    CHECK(a.fingerprint() == b.fingerprint());
    CHECK(a.fingerprint() != generate_cohort(120, 43).fingerprint());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& s = a.subjects[i];
        CHECK(s.id == i);
        CHECK(s.covariates.age >= 40.0f);
        CHECK(s.covariates.age <= 80.0f);
        CHECK(s.covariates.bmi >= 15.0f);
        CHECK(s.covariates.bmi <= 50.0f);
        CHECK(s.factors.heart_scale >= 0.5f);
        CHECK(s.factors.heart_scale <= 1.5f);
        CHECK(s.factors.heart_rate >= 45.0f);
        CHECK(s.factors.heart_rate <= 110.0f);
        CHECK(s.factors.wall_thickness >= 0.05f);
        CHECK(s.factors.wall_thickness <= 0.25f);
        CHECK(s.mri == render_mri(s.factors));
        CHECK(s.ecg == render_ecg(s.factors, {s.covariates.atrial_fibrillation, 0.02}));
    }
    CHECK(a.split_counts() == split_sizes(120));
}

TEST_CASE("n=2000 seed=7: sex ratio and reference prevalences") {
    const auto ds = generate_cohort(2000, 7);
    const double n = 2000;
    std::size_t female = 0, af = 0, cad = 0, t2d = 0, htn = 0, hcm = 0;
    for (const auto& s : ds.subjects) {
        const auto& c = s.covariates;
        female += c.sex == Sex::female;
        af += c.atrial_fibrillation;
        cad += c.coronary_artery_disease;
        t2d += c.diabetes_type2;
        htn += c.hypertension;
        hcm += c.hypertrophic_cardiomyopathy;
    }
    CHECK(std::abs(female - reference_cohort::female * n) <= 3 * binomial_sigma(reference_cohort::female, n));
    const std::pair<std::size_t, double> checks[] = {
        {af, reference_cohort::atrial_fibrillation}, {cad, reference_cohort::coronary_artery_disease},
        {t2d, reference_cohort::diabetes_type2},     {htn, reference_cohort::hypertension},
        {hcm, reference_cohort::hypertrophic_cardiomyopathy},
    };
    for (auto [count, p] : checks) {
        CAPTURE(p);
        CHECK(std::abs(count - p * n) <= 4 * binomial_sigma(p, n));
    }
}

TEST_CASE("factors are causally coupled to covariates") {
    const auto ds = generate_cohort(3000, 11);
    double male_scale = 0, female_scale = 0, htn_wall = 0, norm_wall = 0;
    std::size_t males = 0, females = 0, htn = 0, norm = 0;
    for (const auto& s : ds.subjects) {
        if (s.covariates.sex == Sex::male) {
            male_scale += s.factors.heart_scale;
            ++males;
        } else {
            female_scale += s.factors.heart_scale;
            ++females;
        }
        if (s.covariates.hypertrophic_cardiomyopathy) continue;
        if (s.covariates.hypertension) {
            htn_wall += s.factors.wall_thickness;
            ++htn;
        } else {
            norm_wall += s.factors.wall_thickness;
            ++norm;
        }
    }
    CHECK(male_scale / males == doctest::Approx(1.15).epsilon(0.02));
    CHECK(female_scale / females == doctest::Approx(0.90).epsilon(0.02));
    CHECK(htn_wall / htn - norm_wall / norm == doctest::Approx(0.05).epsilon(0.1));
}

TEST_CASE("render_mri: monotone, quadratic area, in range") {
    GroundTruthFactors f;
    f.noise_seed = 5;
    f.heart_scale = 1.5f;
    const auto big = render_mri(f);
    f.heart_scale = 0.5f;
    const auto small = render_mri(f);
    CHECK(pixel_count_over(big, kBrightThreshold) > pixel_count_over(small, kBrightThreshold));
    CHECK(bright_pixel_area(big) == pixel_count_over(big, kBrightThreshold));

    for (double s : {0.5, 0.6, 0.65, 0.75}) {
        f.heart_scale = static_cast<float>(s);
        const double a1 = pixel_count_over(render_mri(f), kBrightThreshold);
        f.heart_scale = static_cast<float>(2 * s);
        const double a2 = pixel_count_over(render_mri(f), kBrightThreshold);
        CAPTURE(s);
        CHECK(a2 / a1 >= 3.5);
        CHECK(a2 / a1 <= 4.5);
    }

    const auto img = render_mri(GroundTruthFactors{});
    CHECK(img.size() == kMriValues);
    for (float v : img) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("render_mri: area strictly increasing without noise") {
    GroundTruthFactors f;
    std::size_t prev = 0;
    for (int k = 0; k <= 10; ++k) {
        f.heart_scale = static_cast<float>(0.5 + 0.1 * k);
        const auto area = bright_pixel_area(render_mri(f, 0.0));
        CHECK(area > prev);
        prev = area;
    }
}

TEST_CASE("heart_scale vs bright area: Spearman over 500 subjects") {
    Rng rng(77);
    std::vector<double> scale, area;
    for (int i = 0; i < 500; ++i) {
        GroundTruthFactors f;
        f.heart_scale = static_cast<float>(rng.uniform(0.5, 1.5));
        f.heart_rate = static_cast<float>(rng.uniform(45, 110));
        f.wall_thickness = static_cast<float>(rng.uniform(0.05, 0.25));
        f.noise_seed = rng.next_u64();
        scale.push_back(f.heart_scale);
        area.push_back(static_cast<double>(bright_pixel_area(render_mri(f))));
    }
    CHECK(pearson(ranks(scale), ranks(area)) > 0.95);
}

TEST_CASE("render_ecg: R-peak count at 60 bpm") {
    GroundTruthFactors f;
    f.heart_rate = 60.0f;
    const auto ecg = render_ecg(f, {false, 0.0});
    const double expected_beats = kEcgDurationSeconds * 60.0 / 60.0;
    const auto peaks = static_cast<double>(count_r_peaks(ecg, 1));
    CHECK(std::abs(peaks - expected_beats) <= 1.0);

    f.heart_rate = 90.0f;
    const auto faster = static_cast<double>(count_r_peaks(render_ecg(f, {false, 0.0}), 1));
    CHECK(std::abs(faster - kEcgDurationSeconds * 1.5) <= 1.0);
}

TEST_CASE("render_ecg: noiseless trace is exactly periodic") {
    GroundTruthFactors f;
    f.heart_rate = 60.0f;  // period = 64 samples
    const auto ecg = render_ecg(f, {false, 0.0});
    const auto period = static_cast<std::size_t>(kEcgSampleRate);
    for (std::size_t lead = 0; lead < kEcgLeads; ++lead) {
        for (std::size_t i = 0; i + period < kEcgSamples; ++i) {
            CHECK(ecg[lead * kEcgSamples + i] == ecg[lead * kEcgSamples + i + period]);
        }
    }
}

TEST_CASE("render_ecg: noise seed changes little; range holds") {
    GroundTruthFactors a;
    a.noise_seed = 1;
    GroundTruthFactors b = a;
    b.noise_seed = 2;
    const auto ea = render_ecg(a);
    const auto eb = render_ecg(b);
    CHECK(ea != eb);
    CHECK(pearson(std::vector<double>(ea.begin(), ea.end()), std::vector<double>(eb.begin(), eb.end())) > 0.95);

    GroundTruthFactors extreme{1.5f, 110.0f, 0.05f, 3};
    for (bool af : {false, true}) {
        for (float v : render_ecg(extreme, {af, 0.02})) {
            CHECK(v >= kEcgMin);
            CHECK(v <= kEcgMax);
        }
    }
}

TEST_CASE("render_ecg: fibrillation makes RR intervals irregular") {
    GroundTruthFactors f;
    f.heart_rate = 60.0f;
    f.noise_seed = 9;
    const auto regular = render_ecg(f, {false, 0.0});
    const auto af = render_ecg(f, {true, 0.0});
    CHECK(regular != af);
    const auto period = static_cast<std::size_t>(kEcgSampleRate);
    double diff = 0;
    for (std::size_t i = 0; i + period < kEcgSamples; ++i) diff += std::abs(af[kEcgSamples + i] - af[kEcgSamples + i + period]);
    CHECK(diff > 1.0);
}

TEST_CASE("dataset files round-trip and are byte-stable") {
    const auto ds = generate_cohort(40, 3);
    const auto dir = fs::temp_directory_path() / "xmodal_test_synth_ds";
    fs::remove_all(dir);
    write_dataset(ds, dir);
    CHECK(fs::file_size(dir / "subjects.bin") == 40 * kSubjectRecordBytes);
    const auto back = read_dataset(dir);
    CHECK(back.subjects == ds.subjects);
    CHECK(back.seed == ds.seed);
    CHECK(back.fingerprint() == ds.fingerprint());

    std::ifstream in(dir / "subjects.bin", std::ios::binary);
    std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    // First record starts with id 0 then the little-endian age.
    CHECK(std::all_of(raw.begin(), raw.begin() + 8, [](unsigned char c) { return c == 0; }));
    CHECK(raw == serialize_subjects(ds));

    {
        std::ofstream trunc(dir / "subjects.bin", std::ios::binary | std::ios::trunc);
        trunc.write(reinterpret_cast<const char*>(raw.data()), 100);
    }
    CHECK_THROWS_AS(read_dataset(dir), FormatError);
    fs::remove_all(dir);
    CHECK_THROWS_AS(read_dataset(dir), FormatError);
}

TEST_CASE("full-size cohort generation") {
    const auto start = std::chrono::steady_clock::now();
    const auto ds = generate_cohort(reference_cohort::cohort_size, 2023);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    CHECK(ds.split_counts() == SplitCounts{26328, 7639, 3807});
    MESSAGE("generated 37774 subjects in " << secs << " s");
    CHECK(secs < 10.0);
}
