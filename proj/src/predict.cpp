#include "xmodal/predict.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "xmodal/errors.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

std::vector<PhenotypeSpec> default_phenotypes() {
    return {{"atrial_fibrillation", PhenotypeKind::binary, "atrial_fibrillation"},
            {"coronary_artery_disease", PhenotypeKind::binary, "coronary_artery_disease"},
            {"diabetes_type2", PhenotypeKind::binary, "diabetes_type2"},
            {"hypertension", PhenotypeKind::binary, "hypertension"},
            {"hypertrophic_cardiomyopathy", PhenotypeKind::binary, "hypertrophic_cardiomyopathy"},
            {"heart_scale", PhenotypeKind::continuous, "heart_scale"}};
}

namespace {

bool is_factor(std::string_view s) {
    return s == "heart_scale" || s == "heart_rate" || s == "wall_thickness";
}

double factor_value(const GroundTruthFactors& f, std::string_view s) {
    if (s == "heart_scale") return f.heart_scale;
    if (s == "heart_rate") return f.heart_rate;
    return f.wall_thickness;
}

}  // namespace

void validate_phenotypes(std::span<const PhenotypeSpec> phenotypes) {
    std::set<std::string> names;
    for (const auto& p : phenotypes) {
        if (!names.insert(p.name).second) throw ArgumentError("phenotype '" + p.name + "' is listed twice");
        if (is_factor(p.source)) continue;
        const auto& info = covariate_info(p.source);
        if (p.kind == PhenotypeKind::binary && info.kind == CovariateKind::categorical && info.categories.size() != 2) {
            throw ArgumentError("binary phenotype '" + p.name + "' needs a two-category source");
        }
    }
}

double phenotype_value(const SubjectRecord& s, const PhenotypeSpec& spec) {
    double v;
    if (is_factor(spec.source)) {
        v = factor_value(s.factors, spec.source);
    } else if (covariate_info(spec.source).kind == CovariateKind::numeric) {
        v = numeric_covariate(s.covariates, spec.source);
    } else {
        const auto& info = covariate_info(spec.source);
        v = categorical_covariate(s.covariates, spec.source) == info.categories[1] ? 1.0 : 0.0;
    }
    if (spec.kind == PhenotypeKind::binary && v != 0.0 && v != 1.0) {
        throw ArgumentError("phenotype '" + spec.name + "' is not binary");
    }
    return v;
}

std::vector<double> head_features(std::span<const float> z) {
    return {z.begin(), z.end()};
}

double head_output(const LinearHead& head, PhenotypeKind kind, std::span<const float> z) {
    if (!head.available) throw UnavailableError("head unavailable: " + head.skip_reason);
    if (z.size() != head.weights.size()) {
        throw DimensionError("head expects " + std::to_string(head.weights.size()) + " features, got " +
                             std::to_string(z.size()));
    }
    const auto u = head_features(z);
    double s = head.bias;
    for (std::size_t k = 0; k < u.size(); ++k) s += head.weights[k] * (u[k] - head.feature_mean[k]) / head.feature_scale[k];
    return kind == PhenotypeKind::binary ? 1.0 / (1.0 + std::exp(-s)) : s;
}

namespace {

struct Standardized {
    Eigen::MatrixXd x;
    std::vector<double> mean;
    std::vector<double> scale;
};

Standardized standardize(const Tensor<double>& x) {
    const std::size_t n = x.rows(), d = x.cols();
    if (n == 0) throw ArgumentError("cannot fit a head on zero samples");
    Standardized s{Eigen::MatrixXd(n, d), std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    for (std::size_t k = 0; k < d; ++k) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += x(i, k);
        m /= static_cast<double>(n);
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) v += (x(i, k) - m) * (x(i, k) - m);
        const double sd = std::sqrt(v / static_cast<double>(n));
        s.mean[k] = m;
        s.scale[k] = sd > 1e-12 ? sd : 1.0;
        for (std::size_t i = 0; i < n; ++i) s.x(i, k) = (x(i, k) - m) / s.scale[k];
    }
    return s;
}

LinearHead make_head(const Standardized& s, const Eigen::VectorXd& w, double bias) {
    LinearHead h;
    h.available = true;
    for (std::size_t k = 0; k < s.mean.size(); ++k) {
        h.feature_mean.push_back(static_cast<float>(s.mean[k]));
        h.feature_scale.push_back(static_cast<float>(s.scale[k]));
        h.weights.push_back(static_cast<float>(w(static_cast<Eigen::Index>(k))));
    }
    h.bias = static_cast<float>(bias);
    return h;
}

void check_fit_inputs(const Tensor<double>& x, std::span<const double> y) {
    if (x.rank() != 2 || x.rows() != y.size()) throw DimensionError("features and targets disagree in length");
    x.require_finite("head features");
    for (double v : y) {
        if (!std::isfinite(v)) throw NumericError("non-finite head target");
    }
}

}  // namespace

LogisticFit fit_logistic(const Tensor<double>& x, std::span<const double> y, double l2, std::size_t iterations) {
    check_fit_inputs(x, y);
    std::size_t positives = 0;
    for (double v : y) {
        if (v != 0.0 && v != 1.0) throw ArgumentError("logistic labels must be 0 or 1");
        positives += v == 1.0;
    }
    if (positives == 0 || positives == y.size()) throw ArgumentError("logistic labels contain a single class");
    const auto s = standardize(x);
    const auto n = static_cast<Eigen::Index>(x.rows()), d = static_cast<Eigen::Index>(x.cols());
    const Eigen::Map<const Eigen::VectorXd> target(y.data(), n);

    Eigen::MatrixXd a(n, d + 1);
    a << s.x, Eigen::VectorXd::Ones(n);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a.transpose() * a);
    const double lipschitz = eig.eigenvalues().maxCoeff() / (4.0 * static_cast<double>(n)) + l2;
    const double step = 1.0 / lipschitz;

    Eigen::VectorXd theta = Eigen::VectorXd::Zero(d + 1);
    auto loss = [&](const Eigen::VectorXd& logits) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double z = logits(i);
            total += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - target(i) * z;
        }
        return total / static_cast<double>(n) + 0.5 * l2 * theta.head(d).squaredNorm();
    };

    LogisticFit fit;
    for (std::size_t it = 0; it <= iterations; ++it) {
        const Eigen::VectorXd logits = a * theta;
        fit.loss_trace.push_back(loss(logits));
        if (it == iterations) break;
        Eigen::VectorXd residual(n);
        for (Eigen::Index i = 0; i < n; ++i) residual(i) = 1.0 / (1.0 + std::exp(-logits(i))) - target(i);
        Eigen::VectorXd grad = a.transpose() * residual / static_cast<double>(n);
        grad.head(d) += l2 * theta.head(d);
        theta -= step * grad;
    }
    fit.head = make_head(s, theta.head(d), theta(d));
    return fit;
}

LinearHead fit_ridge(const Tensor<double>& x, std::span<const double> y, double l2) {
    check_fit_inputs(x, y);
    const auto s = standardize(x);
    const auto n = static_cast<Eigen::Index>(x.rows()), d = static_cast<Eigen::Index>(x.cols());
    const Eigen::Map<const Eigen::VectorXd> target(y.data(), n);
    const double mean_y = target.mean();
    const double nd = static_cast<double>(n);
    const Eigen::MatrixXd gram = s.x.transpose() * s.x / nd + l2 * Eigen::MatrixXd::Identity(d, d);
    const Eigen::VectorXd rhs = s.x.transpose() * (target.array() - mean_y).matrix() / nd;
    const Eigen::VectorXd w = gram.ldlt().solve(rhs);
    return make_head(s, w, mean_y);
}

double auroc(std::span<const double> scores, std::span<const double> labels) {
    if (scores.size() != labels.size()) throw DimensionError("scores and labels disagree in length");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1.0) {
                rank_sum += mid_rank;
                ++positives;
            }
        }
        i = j;
    }
    const std::size_t negatives = n - positives;
    if (positives == 0 || negatives == 0) throw ArgumentError("AUROC needs both classes");
    const double p = static_cast<double>(positives);
    return (rank_sum - p * (p + 1) / 2.0) / (p * static_cast<double>(negatives));
}

double r_squared(std::span<const double> predictions, std::span<const double> truth) {
    if (predictions.size() != truth.size() || truth.empty()) throw DimensionError("R^2 needs equal, non-empty inputs");
    const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / static_cast<double>(truth.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ss_res += (truth[i] - predictions[i]) * (truth[i] - predictions[i]);
        ss_tot += (truth[i] - mean) * (truth[i] - mean);
    }
    if (ss_tot == 0.0) throw ArgumentError("R^2 of a constant target is undefined");
    return 1.0 - ss_res / ss_tot;
}

NullDistribution permutation_null(std::span<const double> scores, std::span<const double> labels,
                                  std::size_t permutations, std::uint64_t seed) {
    if (permutations < 2) throw ArgumentError("permutation null needs at least 2 permutations");
    Rng rng(seed);
    std::vector<double> shuffled(labels.begin(), labels.end());
    NullDistribution out;
    for (std::size_t p = 0; p < permutations; ++p) {
        rng.shuffle(shuffled);
        out.samples.push_back(auroc(scores, shuffled));
    }
    const double k = static_cast<double>(permutations);
    out.mean = std::accumulate(out.samples.begin(), out.samples.end(), 0.0) / k;
    double v = 0.0;
    for (double a : out.samples) v += (a - out.mean) * (a - out.mean);
    out.sd = std::sqrt(v / (k - 1));
    return out;
}

ConditionTables ConditionTables::encode(const ModelCheckpoint& ckpt, const Dataset& ds) {
    ConditionTables t{latent_table(ckpt, ds, Modality::ecg), latent_table(ckpt, ds, Modality::mri), {}};
    t.fused.modality = Modality::fused;
    t.fused.values = DenseTensor(t.ecg.values.shape(), 0.0f);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto f = fuse(t.ecg.row(i), t.mri.row(i));
        std::copy(f.values.begin(), f.values.end(), t.fused.values.row(i).begin());
    }
    return t;
}

const LatentTable& ConditionTables::of(Condition c) const {
    switch (c) {
        case Condition::ecg_only: return ecg;
        case Condition::mri_only: return mri;
        case Condition::ecg_and_mri: return fused;
    }
    return fused;
}

namespace {

Tensor<double> feature_matrix(const LatentTable& table, std::span<const std::uint64_t> ids) {
    Tensor<double> x({ids.size(), table.dim()});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto u = head_features(table.values.row(ids[i]));
        std::copy(u.begin(), u.end(), x.row(i).begin());
    }
    return x;
}

std::vector<double> targets(const Dataset& ds, std::span<const std::uint64_t> ids, const PhenotypeSpec& spec) {
    std::vector<double> y;
    for (auto id : ids) y.push_back(phenotype_value(ds.at(id), spec));
    return y;
}

}  // namespace

std::vector<double> test_scores(const HeadSet& heads, const ConditionTables& tables, const Dataset& ds,
                                Condition condition, std::size_t phenotype) {
    const auto& head = heads.at(condition, phenotype);
    const auto kind = heads.phenotypes.at(phenotype).kind;
    std::vector<double> out;
    for (auto id : ds.ids_in(Split::test)) out.push_back(head_output(head, kind, tables.of(condition).values.row(id)));
    return out;
}

HeadSet fit_heads(const ConditionTables& tables, const Dataset& ds, std::span<const PhenotypeSpec> phenotypes) {
    validate_phenotypes(phenotypes);
    const auto train_ids = ds.ids_in(Split::train);
    const auto test_ids = ds.ids_in(Split::test);
    if (train_ids.empty()) throw ArgumentError("train split is empty");
    HeadSet out;
    out.phenotypes.assign(phenotypes.begin(), phenotypes.end());
    for (auto c : kConditions) {
        const auto x = feature_matrix(tables.of(c), train_ids);
        auto& row = out.heads[static_cast<std::size_t>(c)];
        for (std::size_t p = 0; p < phenotypes.size(); ++p) {
            const auto& spec = phenotypes[p];
            const auto y = targets(ds, train_ids, spec);
            const bool constant = std::all_of(y.begin(), y.end(), [&](double v) { return v == y.front(); });
            if (constant) {
                LinearHead skipped;
                skipped.skip_reason = spec.kind == PhenotypeKind::binary ? "single class in training split"
                                                                         : "constant target in training split";
                row.push_back(std::move(skipped));
                continue;
            }
            row.push_back(spec.kind == PhenotypeKind::binary ? fit_logistic(x, y).head : fit_ridge(x, y));
        }
    }
    for (auto c : kConditions) {
        for (std::size_t p = 0; p < phenotypes.size(); ++p) {
            auto& head = out.heads[static_cast<std::size_t>(c)][p];
            if (!head.available || test_ids.empty()) continue;
            const auto scores = test_scores(out, tables, ds, c, p);
            const auto truth = targets(ds, test_ids, phenotypes[p]);
            try {
                head.test_metric = phenotypes[p].kind == PhenotypeKind::binary ? auroc(scores, truth)
                                                                               : r_squared(scores, truth);
                head.metric_available = true;
            } catch (const ArgumentError&) {
                head.metric_available = false;
            }
        }
    }
    return out;
}

nlohmann::json PredictionMatrix::to_json() const {
    nlohmann::json j;
    auto rows = nlohmann::json::array();
    for (auto c : kConditions) rows.push_back(to_string(c));
    j["rows"] = rows;
    auto cols = nlohmann::json::array();
    for (const auto& p : phenotypes) cols.push_back({{"name", p.name}, {"kind", to_string(p.kind)}});
    j["phenotypes"] = cols;
    auto cell_rows = nlohmann::json::array(), metric_rows = nlohmann::json::array();
    for (std::size_t r = 0; r < 3; ++r) {
        auto cr = nlohmann::json::array(), mr = nlohmann::json::array();
        for (const auto& c : cells[r]) cr.push_back(c.available ? nlohmann::json(c.value) : nlohmann::json());
        for (const auto& m : metrics[r]) mr.push_back(m ? nlohmann::json(*m) : nlohmann::json());
        cell_rows.push_back(cr);
        metric_rows.push_back(mr);
    }
    j["cells"] = cell_rows;
    j["metrics"] = metric_rows;
    return j;
}

namespace {

PredictionMatrix evaluate_heads(const HeadSet& heads, const std::array<LatentVector, 3>& inputs) {
    PredictionMatrix m;
    m.phenotypes = heads.phenotypes;
    for (auto c : kConditions) {
        const auto r = static_cast<std::size_t>(c);
        for (std::size_t p = 0; p < heads.phenotypes.size(); ++p) {
            const auto& head = heads.at(c, p);
            PredictionCell cell;
            if (head.available) {
                cell.available = true;
                cell.value = head_output(head, heads.phenotypes[p].kind, inputs[r].values);
            }
            m.cells[r].push_back(cell);
            m.metrics[r].push_back(head.metric_available ? std::optional<double>(head.test_metric) : std::nullopt);
        }
    }
    return m;
}

}  // namespace

PredictionMatrix predict_matrix(const HeadSet& heads, const ConditionTables& tables,
                                std::span<const std::uint64_t> ids) {
    std::array<LatentVector, 3> inputs;
    for (auto c : kConditions) {
        inputs[static_cast<std::size_t>(c)] = representative(tables.of(c), ids, RepresentativeMethod::mean).vector;
    }
    return evaluate_heads(heads, inputs);
}

PredictionMatrix predict_vector(const HeadSet& heads, const LatentVector& z) {
    return evaluate_heads(heads, {z, z, z});
}

}  // namespace xmodal
