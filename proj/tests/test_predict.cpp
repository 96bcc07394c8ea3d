#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "desk.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/predict.hpp"

using namespace xmodal;

namespace {

std::size_t phenotype_index(const HeadSet& heads, std::string_view name) {
    for (std::size_t p = 0; p < heads.phenotypes.size(); ++p) {
        if (heads.phenotypes[p].name == name) return p;
    }
    FAIL("no phenotype " << name);
    return 0;
}

const ConditionTables& desk_tables() {
    static const ConditionTables t = ConditionTables::encode(desk::artifacts().ckpt, desk::artifacts().ds);
    return t;
}

const HeadSet& desk_heads() {
    static const HeadSet h = fit_heads(desk_tables(), desk::artifacts().ds, default_phenotypes());
    return h;
}

// AUROC as the fraction of (positive, negative) pairs ranked correctly, ties 1/2.
double pairwise_auroc(const std::vector<double>& s, const std::vector<double>& y) {
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] != 1.0) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j] != 0.0) continue;
            pairs += 1.0;
            wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    }
    return wins / pairs;
}

// Standardized ridge solved in long double by Gaussian elimination with partial pivoting.
std::vector<long double> ridge_oracle(const Tensor<double>& x, const std::vector<double>& y, long double l2) {
    const std::size_t n = x.rows(), d = x.cols();
    std::vector<long double> mean(d, 0), sd(d, 0);
    for (std::size_t k = 0; k < d; ++k) {
        for (std::size_t i = 0; i < n; ++i) mean[k] += x(i, k);
        mean[k] /= n;
        for (std::size_t i = 0; i < n; ++i) sd[k] += (x(i, k) - mean[k]) * (x(i, k) - mean[k]);
        sd[k] = std::sqrt(sd[k] / n);
    }
    long double ym = 0;
    for (double v : y) ym += v;
    ym /= n;
    std::vector<std::vector<long double>> a(d, std::vector<long double>(d + 1, 0));
    for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            for (std::size_t i = 0; i < n; ++i) a[r][c] += (x(i, r) - mean[r]) / sd[r] * (x(i, c) - mean[c]) / sd[c];
            a[r][c] /= n;
        }
        a[r][r] += l2;
        for (std::size_t i = 0; i < n; ++i) a[r][d] += (x(i, r) - mean[r]) / sd[r] * (y[i] - ym);
        a[r][d] /= n;
    }
    for (std::size_t c = 0; c < d; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < d; ++r) {
            if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
        }
        std::swap(a[c], a[piv]);
        for (std::size_t r = 0; r < d; ++r) {
            if (r == c) continue;
            const long double f = a[r][c] / a[c][c];
            for (std::size_t k = c; k <= d; ++k) a[r][k] -= f * a[c][k];
        }
    }
    std::vector<long double> w(d);
    for (std::size_t k = 0; k < d; ++k) w[k] = a[k][d] / a[k][k];
    return w;
}

}  // namespace

TEST_CASE("phenotype list validation") {
    const auto p = default_phenotypes();
    CHECK_NOTHROW(validate_phenotypes(p));
    REQUIRE(p.size() == 6);
    CHECK(p.back().name == "heart_scale");
    CHECK(p.back().kind == PhenotypeKind::continuous);

    auto dup = p;
    dup.push_back(p.front());
    CHECK_THROWS_AS(validate_phenotypes(dup), ArgumentError);
    std::vector<PhenotypeSpec> unknown{{"x", PhenotypeKind::binary, "shoe_size"}};
    CHECK_THROWS_AS(validate_phenotypes(unknown), ArgumentError);
}

TEST_CASE("logistic head separates a separable 1-D problem") {
    Tensor<double> x({100, 1});
    std::vector<double> y(100);
    for (std::size_t i = 0; i < 100; ++i) {
        x(i, 0) = i < 50 ? -static_cast<double>(50 - i) : static_cast<double>(i - 49);
        y[i] = i < 50 ? 0.0 : 1.0;
    }
    const auto fit = fit_logistic(x, y);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < 100; ++i) {
        const float z = static_cast<float>(x(i, 0));
        const double prob = head_output(fit.head, PhenotypeKind::binary, std::span<const float>(&z, 1));
        correct += (prob > 0.5) == (y[i] == 1.0);
    }
    CHECK(correct == 100);
}

TEST_CASE("logistic loss is non-increasing") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 5; ++trial) {
        Tensor<double> x({300, 6});
        std::vector<double> y(300);
        for (std::size_t i = 0; i < 300; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < 6; ++k) {
                x(i, k) = g(rng) * (1.0 + static_cast<double>(k));
                s += (k % 2 ? 0.3 : -0.2) * x(i, k);
            }
            y[i] = s + g(rng) > 0.0 ? 1.0 : 0.0;
        }
        const auto fit = fit_logistic(x, y);
        REQUIRE(fit.loss_trace.size() == kLogisticIterations + 1);
        for (std::size_t t = 1; t < fit.loss_trace.size(); ++t) {
            CHECK(fit.loss_trace[t] <= fit.loss_trace[t - 1] + 1e-12);
        }
        CHECK(fit.loss_trace.back() < fit.loss_trace.front());
    }
}

TEST_CASE("logistic head rejects degenerate labels") {
    Tensor<double> x({4, 1}, 1.0);
    std::vector<double> ones(4, 1.0), bad{0.0, 1.0, 2.0, 0.0};
    CHECK_THROWS_AS(fit_logistic(x, ones), ArgumentError);
    CHECK_THROWS_AS(fit_logistic(x, bad), ArgumentError);
}

TEST_CASE("ridge head matches the normal-equations oracle") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 200, d = 5;
        Tensor<double> x({n, d});
        std::vector<double> beta(d), y(n);
        for (auto& b : beta) b = g(rng);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = 0.7;
            for (std::size_t k = 0; k < d; ++k) {
                x(i, k) = 2.0 * g(rng) + static_cast<double>(k);
                y[i] += beta[k] * x(i, k);
            }
        }
        const auto head = fit_ridge(x, y);
        const auto w = ridge_oracle(x, y, 1e-3L);
        for (std::size_t k = 0; k < d; ++k) CHECK(std::abs(head.weights[k] - static_cast<double>(w[k])) < 1e-4);
    }
}

TEST_CASE("AUROC uses mid-ranks for ties") {
    CHECK(auroc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<double>{0, 0, 1, 1}) == doctest::Approx(0.75));
    CHECK(auroc(std::vector<double>{1, 1, 2, 2}, std::vector<double>{0, 1, 0, 1}) == doctest::Approx(0.5));
    CHECK(auroc(std::vector<double>{3, 3, 3}, std::vector<double>{0, 1, 1}) == doctest::Approx(0.5));
    CHECK_THROWS_AS(auroc(std::vector<double>{1, 2}, std::vector<double>{1, 1}), ArgumentError);

    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> level(0, 6), coin(0, 1);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> s(40), y(40);
        for (std::size_t i = 0; i < 40; ++i) {
            s[i] = level(rng);
            y[i] = i < 2 ? static_cast<double>(i) : coin(rng);
        }
        CHECK(auroc(s, y) == doctest::Approx(pairwise_auroc(s, y)).epsilon(1e-12));
    }
}

TEST_CASE("R squared") {
    const std::vector<double> truth{1, 2, 3, 4};
    CHECK(r_squared(truth, truth) == doctest::Approx(1.0));
    CHECK(r_squared(std::vector<double>(4, 2.5), truth) == doctest::Approx(0.0));
}

TEST_CASE("desk heads: permutation null and hypertension signal") {
    const auto& a = desk::artifacts();
    const auto& heads = desk_heads();
    const auto p = phenotype_index(heads, "hypertension");
    const auto& head = heads.at(Condition::ecg_and_mri, p);
    REQUIRE(head.available);

    std::vector<double> scores, labels;
    for (const auto& s : a.ds.subjects) {
        scores.push_back(head_output(head, PhenotypeKind::binary, desk_tables().fused.row(s.id).values));
        labels.push_back(phenotype_value(s, heads.phenotypes[p]));
    }
    const auto null = permutation_null(scores, labels, 500, 17);
    CHECK(null.mean >= 0.45);
    CHECK(null.mean <= 0.55);
    const double n1 = std::count(labels.begin(), labels.end(), 1.0), n0 = labels.size() - n1;
    const double theory = std::sqrt((n0 + n1 + 1.0) / (12.0 * n0 * n1));
    CHECK(null.sd == doctest::Approx(theory).epsilon(0.2));

    const auto test_ids = a.ds.ids_in(Split::test);
    const auto test = test_scores(heads, desk_tables(), a.ds, Condition::ecg_and_mri, p);
    std::vector<double> truth;
    for (auto id : test_ids) truth.push_back(phenotype_value(a.ds.at(id), heads.phenotypes[p]));
    const auto test_null = permutation_null(test, truth, 1000, 23);
    REQUIRE(head.metric_available);
    CHECK(head.test_metric == doctest::Approx(auroc(test, truth)));
    MESSAGE("hypertension fused AUROC " << head.test_metric << ", null " << test_null.mean << " +- " << test_null.sd);
    CHECK(head.test_metric > 0.5 + 5.0 * test_null.sd);
}

TEST_CASE("desk heads: female group predicts lower heart_scale than male group") {
    const auto& a = desk::artifacts();
    const auto& heads = desk_heads();
    std::vector<std::uint64_t> female, male;
    for (const auto& s : a.ds.subjects) (s.covariates.sex == Sex::female ? female : male).push_back(s.id);
    const auto mf = predict_matrix(heads, desk_tables(), female);
    const auto mm = predict_matrix(heads, desk_tables(), male);
    const auto p = phenotype_index(heads, "heart_scale");
    for (std::size_t r = 0; r < 3; ++r) {
        REQUIRE(mf.cells[r][p].available);
        CHECK(mf.cells[r][p].value < mm.cells[r][p].value);
    }
}

TEST_CASE("desk heads: matrix shape, ranges and determinism") {
    const auto& a = desk::artifacts();
    const auto& heads = desk_heads();
    std::vector<std::uint64_t> ids{3, 14, 15, 92, 653};
    const auto m = predict_matrix(heads, desk_tables(), ids);
    CHECK(m == predict_matrix(heads, desk_tables(), ids));
    for (std::size_t r = 0; r < 3; ++r) {
        REQUIRE(m.cells[r].size() == heads.phenotypes.size());
        for (std::size_t p = 0; p < heads.phenotypes.size(); ++p) {
            if (!m.cells[r][p].available || heads.phenotypes[p].kind != PhenotypeKind::binary) continue;
            CHECK(m.cells[r][p].value >= 0.0);
            CHECK(m.cells[r][p].value <= 1.0);
        }
    }
    const auto j = m.to_json();
    CHECK(j.at("rows") == nlohmann::json{"ecg_only", "mri_only", "ecg_and_mri"});
    CHECK(j.at("cells").size() == 3);
    CHECK(j.at("phenotypes").size() == heads.phenotypes.size());

    // Every logistic output over the whole cohort stays in [0, 1].
    for (auto c : kConditions) {
        for (std::size_t p = 0; p < heads.phenotypes.size(); ++p) {
            const auto& h = heads.at(c, p);
            if (!h.available || heads.phenotypes[p].kind != PhenotypeKind::binary) continue;
            for (const auto& s : a.ds.subjects) {
                const double v = head_output(h, PhenotypeKind::binary, desk_tables().of(c).row(s.id).values);
                CHECK((v >= 0.0 && v <= 1.0));
            }
        }
    }
    CHECK(fit_heads(desk_tables(), a.ds, default_phenotypes()) == heads);
}

TEST_CASE("desk heads: group mean latent feeds the heads") {
    const auto& heads = desk_heads();
    std::vector<std::uint64_t> ids{10, 20, 30};
    const auto m = predict_matrix(heads, desk_tables(), ids);
    const auto p = phenotype_index(heads, "heart_scale");
    for (auto c : kConditions) {
        const auto& table = desk_tables().of(c);
        std::vector<float> mean(table.dim(), 0.0f);
        for (std::size_t k = 0; k < mean.size(); ++k) {
            double s = 0.0;
            for (auto id : ids) s += table.values(id, k);
            mean[k] = static_cast<float>(s / 3.0);
        }
        const double expect = head_output(heads.at(c, p), PhenotypeKind::continuous, mean);
        CHECK(m.cells[static_cast<std::size_t>(c)][p].value == doctest::Approx(expect).epsilon(1e-6));
    }
}

TEST_CASE("skipped heads surface as unavailable cells") {
    auto heads = desk_heads();
    const auto p = phenotype_index(heads, "hypertension");
    heads.heads[1][p].available = false;
    heads.heads[1][p].skip_reason = "single class in training split";
    CHECK_THROWS_AS(head_output(heads.at(Condition::mri_only, p), PhenotypeKind::binary,
                                desk_tables().mri.row(0).values),
                    UnavailableError);
    const auto m = predict_matrix(heads, desk_tables(), std::vector<std::uint64_t>{1, 2});
    CHECK_FALSE(m.cells[1][p].available);
    CHECK(m.cells[0][p].available);
    CHECK(m.to_json().at("cells")[1][p].is_null());
}

TEST_CASE("heads survive a checkpoint round trip") {
    auto ckpt = desk::artifacts().ckpt;
    ckpt.heads = desk_heads();
    const auto back = deserialize_checkpoint(serialize_checkpoint(ckpt));
    REQUIRE(back.heads.has_value());
    CHECK(*back.heads == desk_heads());
}
