#include "xmodal/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <set>

#include "xmodal/errors.hpp"

namespace xmodal {

namespace {

const std::vector<std::string_view> kBool{"false", "true"};

std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

}  // namespace

const std::vector<CovariateInfo>& covariate_schema() {
    static const std::vector<CovariateInfo> schema{
        {"age", CovariateKind::numeric, 5.0, {}},
        {"bmi", CovariateKind::numeric, 2.5, {}},
        {"sex", CovariateKind::categorical, 0.0, {"female", "male"}},
        {"atrial_fibrillation", CovariateKind::categorical, 0.0, kBool},
        {"coronary_artery_disease", CovariateKind::categorical, 0.0, kBool},
        {"diabetes_type2", CovariateKind::categorical, 0.0, kBool},
        {"hypertension", CovariateKind::categorical, 0.0, kBool},
        {"hypertrophic_cardiomyopathy", CovariateKind::categorical, 0.0, kBool},
    };
    return schema;
}

const CovariateInfo& covariate_info(std::string_view name) {
    for (const auto& c : covariate_schema()) {
        if (c.name == name) return c;
    }
    throw ArgumentError("unknown covariate '" + std::string(name) + "'");
}

double numeric_covariate(const CovariateRecord& c, std::string_view name) {
    if (name == "age") return c.age;
    if (name == "bmi") return c.bmi;
    throw ArgumentError("'" + std::string(name) + "' is not a numeric covariate");
}

std::string_view categorical_covariate(const CovariateRecord& c, std::string_view name) {
    if (name == "sex") return to_string(c.sex);
    auto flag = [](bool b) { return b ? kBool[1] : kBool[0]; };
    if (name == "atrial_fibrillation") return flag(c.atrial_fibrillation);
    if (name == "coronary_artery_disease") return flag(c.coronary_artery_disease);
    if (name == "diabetes_type2") return flag(c.diabetes_type2);
    if (name == "hypertension") return flag(c.hypertension);
    if (name == "hypertrophic_cardiomyopathy") return flag(c.hypertrophic_cardiomyopathy);
    throw ArgumentError("'" + std::string(name) + "' is not a categorical covariate");
}

// ---------------------------------------------------------------------------

bool FilterClause::matches(const CovariateRecord& c) const {
    if (interval) {
        const double v = numeric_covariate(c, covariate);
        return v >= interval->lo && v <= interval->hi;
    }
    const auto v = categorical_covariate(c, covariate);
    return std::find(categories.begin(), categories.end(), v) != categories.end();
}

FilterPredicate::FilterPredicate(std::vector<FilterClause> clauses) {
    for (auto& c : clauses) add(std::move(c));
}

void FilterPredicate::add(FilterClause clause) {
    const auto& info = covariate_info(clause.covariate);
    for (const auto& c : clauses_) {
        if (c.covariate == clause.covariate) {
            throw ArgumentError("duplicate clause for covariate '" + clause.covariate + "'");
        }
    }
    if (info.kind == CovariateKind::numeric) {
        if (!clause.interval || !clause.categories.empty()) {
            throw ArgumentError("covariate '" + clause.covariate + "' needs an interval");
        }
        const auto [lo, hi] = *clause.interval;
        if (!std::isfinite(lo) || !std::isfinite(hi)) {
            throw ArgumentError("interval for '" + clause.covariate + "' must be finite");
        }
        if (lo > hi) {
            throw ArgumentError("malformed interval for '" + clause.covariate + "': lo " + format_number(lo) +
                                " > hi " + format_number(hi));
        }
    } else {
        if (clause.interval) throw ArgumentError("covariate '" + clause.covariate + "' needs categories");
        for (const auto& v : clause.categories) {
            if (std::find(info.categories.begin(), info.categories.end(), v) == info.categories.end()) {
                throw ArgumentError("unknown category '" + v + "' for covariate '" + clause.covariate + "'");
            }
        }
    }
    clauses_.push_back(std::move(clause));
}

bool FilterPredicate::matches(const CovariateRecord& c) const {
    return std::all_of(clauses_.begin(), clauses_.end(), [&](const FilterClause& k) { return k.matches(c); });
}

nlohmann::json FilterPredicate::to_json() const {
    auto clauses = nlohmann::json::array();
    for (const auto& c : clauses_) {
        nlohmann::json j{{"covariate", c.covariate}};
        if (c.interval) j["interval"] = {c.interval->lo, c.interval->hi};
        else j["categories"] = c.categories;
        clauses.push_back(std::move(j));
    }
    return {{"clauses", std::move(clauses)}};
}

FilterPredicate FilterPredicate::from_json(const nlohmann::json& j) {
    try {
        FilterPredicate p;
        const auto& clauses = j.is_array() ? j : j.at("clauses");
        for (const auto& c : clauses) {
            FilterClause clause;
            clause.covariate = c.at("covariate").get<std::string>();
            if (c.contains("interval")) {
                const auto& iv = c.at("interval");
                if (!iv.is_array() || iv.size() != 2) throw ArgumentError("interval must be [lo, hi]");
                clause.interval = Interval{iv[0].get<double>(), iv[1].get<double>()};
            }
            if (c.contains("categories")) {
                for (const auto& v : c.at("categories")) {
                    clause.categories.push_back(v.is_boolean() ? (v.get<bool>() ? "true" : "false")
                                                               : v.get<std::string>());
                }
            }
            p.add(std::move(clause));
        }
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw ArgumentError(std::string("malformed predicate: ") + e.what());
    }
}

std::vector<std::uint64_t> filter_cohort(const Dataset& ds, const FilterPredicate& predicate) {
    std::vector<std::uint64_t> out;
    for (const auto& s : ds.subjects) {
        if (predicate.matches(s.covariates)) out.push_back(s.id);
    }
    return out;
}

// ---------------------------------------------------------------------------

nlohmann::json HistogramSet::to_json() const {
    auto covs = nlohmann::json::array();
    for (const auto& h : covariates) {
        nlohmann::json j{{"covariate", h.covariate},
                         {"kind", h.kind == CovariateKind::numeric ? "numeric" : "categorical"},
                         {"labels", h.labels},
                         {"all", h.all},
                         {"selected", h.selected}};
        if (!h.edges.empty()) j["edges"] = h.edges;
        covs.push_back(std::move(j));
    }
    return {{"population", population}, {"selection_size", selection_size}, {"covariates", std::move(covs)}};
}

HistogramSet histogram(const Dataset& ds, std::span<const std::uint64_t> selection) {
    std::vector<char> chosen(ds.size(), 0);
    for (auto id : selection) {
        if (!ds.contains(id)) throw ArgumentError("unknown subject id " + std::to_string(id));
        chosen[id] = 1;
    }
    HistogramSet out;
    out.population = ds.size();
    out.selection_size = static_cast<std::size_t>(std::count(chosen.begin(), chosen.end(), 1));

    for (const auto& info : covariate_schema()) {
        CovariateHistogram h;
        h.covariate = std::string(info.name);
        h.kind = info.kind;
        std::vector<std::size_t> bin_of(ds.size());
        if (info.kind == CovariateKind::numeric) {
            double lo = INFINITY, hi = -INFINITY;
            for (const auto& s : ds.subjects) {
                const double v = numeric_covariate(s.covariates, info.name);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            const double w = info.bin_width;
            const double first = ds.size() ? std::floor(lo / w) * w : 0.0;
            const std::size_t bins = ds.size() ? static_cast<std::size_t>(std::floor(hi / w) - std::floor(lo / w)) + 1 : 0;
            for (std::size_t k = 0; k <= bins; ++k) h.edges.push_back(first + w * static_cast<double>(k));
            for (std::size_t k = 0; k < bins; ++k) {
                h.labels.push_back(format_number(h.edges[k]) + "-" + format_number(h.edges[k + 1]));
            }
            for (const auto& s : ds.subjects) {
                const double v = numeric_covariate(s.covariates, info.name);
                const auto k = static_cast<std::size_t>(std::floor(v / w) - std::floor(lo / w));
                bin_of[s.id] = std::min(k, bins - 1);
            }
        } else {
            for (auto c : info.categories) h.labels.emplace_back(c);
            for (const auto& s : ds.subjects) {
                const auto v = categorical_covariate(s.covariates, info.name);
                bin_of[s.id] = static_cast<std::size_t>(
                    std::find(info.categories.begin(), info.categories.end(), v) - info.categories.begin());
            }
        }
        h.all.assign(h.labels.size(), 0);
        h.selected.assign(h.labels.size(), 0);
        for (const auto& s : ds.subjects) {
            ++h.all[bin_of[s.id]];
            if (chosen[s.id]) ++h.selected[bin_of[s.id]];
        }
        out.covariates.push_back(std::move(h));
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

bool on_segment(Point2 p, Point2 a, Point2 b) {
    const double cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    if (cross != 0.0) return false;
    return p.x >= std::min(a.x, b.x) && p.x <= std::max(a.x, b.x) && p.y >= std::min(a.y, b.y) &&
           p.y <= std::max(a.y, b.y);
}

}  // namespace

bool point_in_polygon(Point2 p, std::span<const Point2> polygon) {
    const std::size_t n = polygon.size();
    if (n == 0) return false;
    bool inside = false;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Point2 a = polygon[i], b = polygon[j];
        if (on_segment(p, a, b)) return true;
        if ((a.y > p.y) != (b.y > p.y)) {
            const double x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if (p.x < x_cross) inside = !inside;
        }
    }
    return inside;
}

std::vector<std::uint64_t> lasso_select(const Embedding2D& embedding, std::span<const Point2> polygon) {
    if (polygon.size() < 3) {
        throw ArgumentError("lasso polygon needs at least 3 vertices, got " + std::to_string(polygon.size()));
    }
    for (const auto& v : polygon) {
        if (!std::isfinite(v.x) || !std::isfinite(v.y)) throw ArgumentError("lasso vertices must be finite");
    }
    const auto& pts = embedding.points;
    if (embedding.subject_ids.size() != pts.rows()) throw DimensionError("embedding ids do not match its points");
    std::vector<std::uint64_t> out;
    for (std::size_t i = 0; i < pts.rows(); ++i) {
        if (point_in_polygon({pts(i, 0), pts(i, 1)}, polygon)) out.push_back(embedding.subject_ids[i]);
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Provenance p) {
    switch (p) {
        case Provenance::filter: return "filter";
        case Provenance::lasso: return "lasso";
        case Provenance::intersection: return "intersection";
    }
    return "filter";
}

Provenance provenance_from_string(std::string_view s) {
    if (s == "filter") return Provenance::filter;
    if (s == "lasso") return Provenance::lasso;
    if (s == "intersection") return Provenance::intersection;
    throw ArgumentError("unknown provenance '" + std::string(s) + "'");
}

nlohmann::json CohortGroup::to_json() const {
    return {{"id", id},
            {"name", name},
            {"provenance", {{"kind", to_string(provenance)}, {"payload", payload}}},
            {"subject_ids", subject_ids}};
}

CohortGroup CohortGroup::from_json(const nlohmann::json& j) {
    try {
        CohortGroup g;
        g.id = j.at("id").get<std::uint64_t>();
        g.name = j.at("name").get<std::string>();
        const auto& prov = j.at("provenance");
        g.provenance = provenance_from_string(prov.at("kind").get<std::string>());
        g.payload = prov.value("payload", nlohmann::json::object());
        g.subject_ids = j.at("subject_ids").get<std::vector<std::uint64_t>>();
        return g;
    } catch (const nlohmann::json::exception& e) {
        throw ArgumentError(std::string("malformed group: ") + e.what());
    }
}

std::vector<std::uint64_t> intersect_ids(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
    std::vector<std::uint64_t> out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

void GroupRegistry::validate(const CohortGroup& g) const {
    if (g.subject_ids.empty()) throw ArgumentError("group '" + g.name + "' has no subjects");
    for (std::size_t i = 0; i < g.subject_ids.size(); ++i) {
        if (!dataset_->contains(g.subject_ids[i])) {
            throw ArgumentError("group '" + g.name + "' references unknown subject " +
                                std::to_string(g.subject_ids[i]));
        }
        if (i > 0 && g.subject_ids[i] <= g.subject_ids[i - 1]) {
            throw ArgumentError("group '" + g.name + "' ids must be ascending and unique");
        }
    }
}

CohortGroup GroupRegistry::create(std::string name, std::vector<std::uint64_t> ids, Provenance provenance,
                                  nlohmann::json payload) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    CohortGroup g{0, std::move(name), std::move(ids), provenance, std::move(payload)};
    validate(g);
    std::unique_lock lock(mutex_);
    g.id = next_id_++;
    groups_.emplace(g.id, g);
    return g;
}

CohortGroup GroupRegistry::get(std::uint64_t id) const {
    std::shared_lock lock(mutex_);
    const auto it = groups_.find(id);
    if (it == groups_.end()) throw NotFoundError("no group with id " + std::to_string(id));
    return it->second;
}

std::vector<CohortGroup> GroupRegistry::list() const {
    std::shared_lock lock(mutex_);
    std::vector<CohortGroup> out;
    for (const auto& [id, g] : groups_) out.push_back(g);
    return out;
}

nlohmann::json GroupRegistry::export_json() const {
    auto arr = nlohmann::json::array();
    for (const auto& g : list()) arr.push_back(g.to_json());
    return {{"groups", std::move(arr)}};
}

std::vector<std::uint64_t> GroupRegistry::import_json(const nlohmann::json& j) {
    std::vector<CohortGroup> incoming;
    try {
        for (const auto& g : j.at("groups")) incoming.push_back(CohortGroup::from_json(g));
    } catch (const nlohmann::json::exception& e) {
        throw ArgumentError(std::string("malformed group export: ") + e.what());
    }
    std::set<std::uint64_t> seen;
    for (const auto& g : incoming) {
        if (g.id == 0) throw ArgumentError("group ids must be positive");
        if (!seen.insert(g.id).second) throw ArgumentError("duplicate group id " + std::to_string(g.id));
        validate(g);
    }
    std::unique_lock lock(mutex_);
    for (const auto& g : incoming) {
        if (groups_.count(g.id)) throw ArgumentError("group id " + std::to_string(g.id) + " already exists");
    }
    std::vector<std::uint64_t> ids;
    for (auto& g : incoming) {
        next_id_ = std::max(next_id_, g.id + 1);
        ids.push_back(g.id);
        groups_.emplace(g.id, std::move(g));
    }
    return ids;
}

// ---------------------------------------------------------------------------

LatentVector LatentTable::row(std::uint64_t id) const {
    if (id >= values.rows()) throw ArgumentError("unknown subject id " + std::to_string(id));
    const auto r = values.row(id);
    return {std::vector<float>(r.begin(), r.end()), modality};
}

LatentTable latent_table(const ModelCheckpoint& ckpt, const Dataset& ds, Modality modality) {
    std::vector<std::uint64_t> ids(ds.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = ds.subjects[i].id;
    if (modality != Modality::fused) {
        require_sample_modality(modality);
        return {modality, encode_subjects(ckpt, ds, ids, modality)};
    }
    const auto ecg = encode_subjects(ckpt, ds, ids, Modality::ecg);
    const auto mri = encode_subjects(ckpt, ds, ids, Modality::mri);
    LatentTable out{Modality::fused, DenseTensor(ecg.shape(), 0.0f)};
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto e = ecg.row(i), m = mri.row(i);
        const auto f = fuse({{e.begin(), e.end()}, Modality::ecg}, {{m.begin(), m.end()}, Modality::mri});
        std::copy(f.values.begin(), f.values.end(), out.values.row(i).begin());
    }
    return out;
}

std::string_view to_string(RepresentativeMethod m) {
    switch (m) {
        case RepresentativeMethod::nearest_subject: return "nearest_subject";
        case RepresentativeMethod::mean: return "mean";
        case RepresentativeMethod::median: return "median";
        case RepresentativeMethod::centroid: return "centroid";
    }
    return "mean";
}

RepresentativeMethod representative_method_from_string(std::string_view s) {
    if (s == "nearest_subject") return RepresentativeMethod::nearest_subject;
    if (s == "mean") return RepresentativeMethod::mean;
    if (s == "median") return RepresentativeMethod::median;
    if (s == "centroid") return RepresentativeMethod::centroid;
    throw ArgumentError("unknown representative method '" + std::string(s) + "'");
}

Representative representative(const LatentTable& table, std::span<const std::uint64_t> ids,
                              RepresentativeMethod method) {
    if (ids.empty()) throw ArgumentError("representative of an empty group");
    for (auto id : ids) {
        if (id >= table.values.rows()) throw ArgumentError("unknown subject id " + std::to_string(id));
    }
    const std::size_t d = table.dim();
    std::vector<double> centroid(d, 0.0);
    for (auto id : ids) {
        const auto r = table.values.row(id);
        for (std::size_t k = 0; k < d; ++k) centroid[k] += r[k];
    }
    for (auto& c : centroid) c /= static_cast<double>(ids.size());

    Representative out;
    out.vector.modality_of_origin = table.modality;
    switch (method) {
        case RepresentativeMethod::mean:
        case RepresentativeMethod::centroid:
            out.vector.values.assign(centroid.begin(), centroid.end());
            break;
        case RepresentativeMethod::median: {
            std::vector<float> column(ids.size());
            out.vector.values.resize(d);
            for (std::size_t k = 0; k < d; ++k) {
                for (std::size_t i = 0; i < ids.size(); ++i) column[i] = table.values(ids[i], k);
                const auto mid = column.begin() + static_cast<std::ptrdiff_t>((ids.size() - 1) / 2);
                std::nth_element(column.begin(), mid, column.end());
                out.vector.values[k] = *mid;
            }
            break;
        }
        case RepresentativeMethod::nearest_subject: {
            double best = INFINITY;
            std::uint64_t best_id = 0;
            for (auto id : ids) {
                const auto r = table.values.row(id);
                double dist = 0.0;
                for (std::size_t k = 0; k < d; ++k) dist += (r[k] - centroid[k]) * (r[k] - centroid[k]);
                if (dist < best || (dist == best && id < best_id)) best = dist, best_id = id;
            }
            out.vector = table.row(best_id);
            out.subject_id = best_id;
            break;
        }
    }
    return out;
}

}  // namespace xmodal
