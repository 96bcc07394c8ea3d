#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "xmodal/autoencoder.hpp"
#include "xmodal/synth.hpp"
#include "xmodal/tsne.hpp"

namespace xmodal {

// ---------------------------------------------------------------------------
// Covariate schema

enum class CovariateKind { numeric, categorical };

struct CovariateInfo {
    std::string_view name;
    CovariateKind kind;
    double bin_width;                          // numeric only
    std::vector<std::string_view> categories;  // categorical only, display order
};

/// age, bmi, sex and the five comorbidity flags, in display order.
const std::vector<CovariateInfo>& covariate_schema();

/// Throws ArgumentError for unknown names.
const CovariateInfo& covariate_info(std::string_view name);

double numeric_covariate(const CovariateRecord& c, std::string_view name);

/// "female"/"male" for sex, "true"/"false" for flags.
std::string_view categorical_covariate(const CovariateRecord& c, std::string_view name);

// ---------------------------------------------------------------------------
// Filtering

/// Closed interval [lo, hi].
struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    friend bool operator==(const Interval&, const Interval&) = default;
};

struct FilterClause {
    std::string covariate;
    std::vector<std::string> categories;  // categorical: allowed values
    std::optional<Interval> interval;     // numeric: allowed range

    bool matches(const CovariateRecord& c) const;
    friend bool operator==(const FilterClause&, const FilterClause&) = default;
};

/// Conjunction of clauses, at most one per covariate.
class FilterPredicate {
public:
    FilterPredicate() = default;
    explicit FilterPredicate(std::vector<FilterClause> clauses);

    /// Throws ArgumentError on unknown covariates, duplicate clauses, a clause
    /// of the wrong kind, unknown categories, or lo > hi.
    void add(FilterClause clause);

    const std::vector<FilterClause>& clauses() const noexcept { return clauses_; }
    bool matches(const CovariateRecord& c) const;

    nlohmann::json to_json() const;
    static FilterPredicate from_json(const nlohmann::json& j);

    friend bool operator==(const FilterPredicate&, const FilterPredicate&) = default;

private:
    std::vector<FilterClause> clauses_;
};

/// Ids satisfying every clause, ascending.
std::vector<std::uint64_t> filter_cohort(const Dataset& ds, const FilterPredicate& predicate);

// ---------------------------------------------------------------------------
// Histograms

struct CovariateHistogram {
    std::string covariate;
    CovariateKind kind = CovariateKind::categorical;
    std::vector<std::string> labels;
    std::vector<double> edges;  // numeric: labels.size() + 1 edges, bins [e_k, e_k+1)
    std::vector<std::size_t> all;
    std::vector<std::size_t> selected;
};

struct HistogramSet {
    std::size_t population = 0;
    std::size_t selection_size = 0;
    std::vector<CovariateHistogram> covariates;

    nlohmann::json to_json() const;
};

/// Bins every covariate over the whole cohort and over `selection`
/// (treated as a set). Throws ArgumentError for ids not in the dataset.
HistogramSet histogram(const Dataset& ds, std::span<const std::uint64_t> selection);

// ---------------------------------------------------------------------------
// Lasso

struct Point2 {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point2&, const Point2&) = default;
};

/// Even-odd membership of p in the implicitly closed polygon; points on an
/// edge or vertex count as inside.
bool point_in_polygon(Point2 p, std::span<const Point2> polygon);

/// Ids of embedded points inside the polygon, ascending. Needs >= 3 vertices.
std::vector<std::uint64_t> lasso_select(const Embedding2D& embedding, std::span<const Point2> polygon);

// ---------------------------------------------------------------------------
// Groups

enum class Provenance { filter, lasso, intersection };

std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

struct CohortGroup {
    std::uint64_t id = 0;
    std::string name;
    std::vector<std::uint64_t> subject_ids;  // ascending, unique, non-empty
    Provenance provenance = Provenance::filter;
    nlohmann::json payload;  // predicate, {modality, polygon}, or the intersected parts

    nlohmann::json to_json() const;
    static CohortGroup from_json(const nlohmann::json& j);
};

/// Sorted unique intersection of two ascending id lists.
std::vector<std::uint64_t> intersect_ids(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b);

/// In-memory group store. Writers take an exclusive lock, readers a shared one.
class GroupRegistry {
public:
    explicit GroupRegistry(const Dataset& ds) : dataset_(&ds) {}

    /// Sorts and deduplicates ids; throws ArgumentError when empty or not in
    /// the dataset.
    CohortGroup create(std::string name, std::vector<std::uint64_t> ids, Provenance provenance,
                       nlohmann::json payload = nlohmann::json::object());

    /// Throws NotFoundError.
    CohortGroup get(std::uint64_t id) const;
    std::vector<CohortGroup> list() const;

    nlohmann::json export_json() const;

    /// Adds every group of an export, keeping ids; the whole import is
    /// rejected if any group is invalid or its id is taken.
    std::vector<std::uint64_t> import_json(const nlohmann::json& j);

private:
    void validate(const CohortGroup& g) const;

    const Dataset* dataset_;
    mutable std::shared_mutex mutex_;
    std::map<std::uint64_t, CohortGroup> groups_;
    std::uint64_t next_id_ = 1;
};

// ---------------------------------------------------------------------------
// Representatives

/// One modality's latents for every subject, rows in id order.
struct LatentTable {
    Modality modality = Modality::ecg;
    DenseTensor values;  // N x d

    std::size_t dim() const { return values.cols(); }
    LatentVector row(std::uint64_t id) const;
};

/// Encodes every subject with the modality's encoder; fused is the per-subject
/// element-wise mean of the ecg and mri latents.
LatentTable latent_table(const ModelCheckpoint& ckpt, const Dataset& ds, Modality modality);

/// mean and centroid are the same statistic.
enum class RepresentativeMethod { nearest_subject, mean, median, centroid };

std::string_view to_string(RepresentativeMethod m);
RepresentativeMethod representative_method_from_string(std::string_view s);

struct Representative {
    LatentVector vector;
    std::optional<std::uint64_t> subject_id;  // nearest_subject only
};

/// median takes the lower middle for even counts; nearest_subject is the member
/// closest to the centroid, ties to the smallest id.
Representative representative(const LatentTable& table, std::span<const std::uint64_t> ids,
                               RepresentativeMethod method);

}  // namespace xmodal
