#include "xmodal/service.hpp"

#include <httplib.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include "xmodal/bytes.hpp"
#include "xmodal/errors.hpp"

namespace xmodal {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Embeddings

Embedding2D embed_modality(const LatentTable& table, Modality modality, const TsneConfig& config) {
    Tensor<double> x({table.values.rows(), table.values.cols()});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = table.values[i];
    auto e = tsne_fit(x, config);
    e.source_modality = modality;
    e.subject_ids.resize(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) e.subject_ids[i] = i;
    return e;
}

json tsne_config_to_json(const TsneConfig& c) {
    return {{"perplexity", c.perplexity},
            {"iterations", c.iterations},
            {"early_exaggeration", c.early_exaggeration},
            {"exaggeration_iterations", c.exaggeration_iterations},
            {"learning_rate", c.learning_rate},
            {"momentum", c.momentum},
            {"final_momentum", c.final_momentum},
            {"momentum_switch", c.momentum_switch},
            {"seed", c.seed},
            {"kl_every", c.kl_every}};
}

namespace {

TsneConfig tsne_config_from_json(const json& j) {
    TsneConfig c;
    c.perplexity = j.at("perplexity").get<double>();
    c.iterations = j.at("iterations").get<std::size_t>();
    c.early_exaggeration = j.at("early_exaggeration").get<double>();
    c.exaggeration_iterations = j.at("exaggeration_iterations").get<std::size_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.momentum = j.at("momentum").get<double>();
    c.final_momentum = j.at("final_momentum").get<double>();
    c.momentum_switch = j.at("momentum_switch").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.kl_every = j.at("kl_every").get<std::size_t>();
    return c;
}

}  // namespace

json embedding_to_json(const Embedding2D& e) {
    auto points = json::array();
    for (std::size_t i = 0; i < e.points.rows(); ++i) points.push_back({e.points(i, 0), e.points(i, 1)});
    auto trace = json::array();
    for (const auto& [it, kl] : e.kl_trace) trace.push_back({it, kl});
    return {{"modality", to_string(e.source_modality)},
            {"subject_ids", e.subject_ids},
            {"points", std::move(points)},
            {"kl_final", e.kl_final},
            {"kl_trace", std::move(trace)},
            {"config", tsne_config_to_json(e.config)}};
}

Embedding2D embedding_from_json(const json& j) {
    try {
        Embedding2D e;
        e.source_modality = modality_from_string(j.at("modality").get<std::string>());
        e.subject_ids = j.at("subject_ids").get<std::vector<std::uint64_t>>();
        const auto& pts = j.at("points");
        e.points = Tensor<double>({pts.size(), 2});
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (pts[i].size() != 2) throw FormatError("embedding point " + std::to_string(i) + " is not a pair");
            e.points(i, 0) = pts[i][0].get<double>();
            e.points(i, 1) = pts[i][1].get<double>();
        }
        e.kl_final = j.at("kl_final").get<double>();
        for (const auto& t : j.at("kl_trace")) e.kl_trace.emplace_back(t[0].get<std::size_t>(), t[1].get<double>());
        e.config = tsne_config_from_json(j.at("config"));
        if (e.subject_ids.size() != e.points.rows()) throw FormatError("embedding ids and points differ in length");
        if (!e.points.all_finite()) throw FormatError("embedding has non-finite points");
        return e;
    } catch (const json::exception& ex) {
        throw FormatError(std::string("malformed embedding: ") + ex.what());
    } catch (const ArgumentError& ex) {
        throw FormatError(std::string("malformed embedding: ") + ex.what());
    }
}

void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
    json j = json::object();
    for (const auto& [m, e] : set) j[std::string(to_string(m))] = embedding_to_json(e);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArgumentError("cannot write " + path.string());
    out << j.dump() << '\n';
}

EmbeddingSet read_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& ex) {
        throw FormatError(path.string() + ": " + ex.what());
    }
    EmbeddingSet set;
    for (auto m : {Modality::ecg, Modality::mri}) {
        const std::string key(to_string(m));
        if (!j.contains(key)) continue;
        auto e = embedding_from_json(j.at(key));
        if (e.source_modality != m) throw FormatError("embedding under '" + key + "' has another modality");
        set.emplace(m, std::move(e));
    }
    return set;
}

// ---------------------------------------------------------------------------
// Sample encoding

std::string encode_f32le(std::span<const float> values) {
    std::vector<unsigned char> raw;
    raw.reserve(values.size() * 4);
    for (float v : values) bytes::put_f32(raw, v);
    return httplib::detail::base64_encode(std::string(raw.begin(), raw.end()));
}

std::vector<float> decode_f32le(std::string_view base64) {
    static constexpr std::string_view alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::vector<unsigned char> raw;
    std::uint32_t acc = 0;
    int bits = 0;
    for (char c : base64) {
        if (c == '=') break;
        const auto pos = alphabet.find(c);
        if (pos == std::string_view::npos) throw FormatError("invalid base64 character");
        acc = (acc << 6) | static_cast<std::uint32_t>(pos);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            raw.push_back(static_cast<unsigned char>((acc >> bits) & 0xFF));
        }
    }
    if (raw.size() % 4 != 0) throw FormatError("f32le payload length is not a multiple of 4");
    bytes::Reader r(raw);
    std::vector<float> out(raw.size() / 4);
    for (auto& v : out) v = r.f32();
    return out;
}

// ---------------------------------------------------------------------------
// Session

Session::Session(Dataset ds, ModelCheckpoint ckpt, EmbeddingSet embeddings, const TsneConfig& tsne)
    : ds_(std::move(ds)), ckpt_(std::move(ckpt)), embeddings_(std::move(embeddings)) {
    if (ckpt_.dataset_fingerprint != ds_.fingerprint()) {
        throw ArgumentError("checkpoint was trained on dataset " + ckpt_.dataset_fingerprint +
                            ", loaded dataset is " + ds_.fingerprint());
    }
    tables_ = ConditionTables::encode(ckpt_, ds_);
    for (auto m : {Modality::ecg, Modality::mri}) {
        auto it = embeddings_.find(m);
        if (it == embeddings_.end()) {
            embeddings_.emplace(m, embed_modality(latents(m), m, tsne));
            continue;
        }
        for (auto id : it->second.subject_ids) {
            if (!ds_.contains(id)) {
                throw ArgumentError(std::string(to_string(m)) + " embedding references unknown subject " +
                                    std::to_string(id));
            }
        }
    }
    heads_ = ckpt_.heads ? *ckpt_.heads : fit_heads(tables_, ds_, default_phenotypes());
    range_ = PerturbationRange::from_tables(tables_.ecg, tables_.mri, ds_);
    groups_ = std::make_unique<GroupRegistry>(ds_);
}

const LatentTable& Session::latents(Modality m) const {
    switch (m) {
        case Modality::ecg: return tables_.ecg;
        case Modality::mri: return tables_.mri;
        case Modality::fused: return tables_.fused;
        default: break;
    }
    throw ArgumentError("no latents for modality '" + std::string(to_string(m)) + "'");
}

const Embedding2D& Session::embedding(Modality m) const {
    const auto it = embeddings_.find(m);
    if (it == embeddings_.end()) throw NotFoundError("no embedding for modality '" + std::string(to_string(m)) + "'");
    return it->second;
}

// ---------------------------------------------------------------------------
// API

int http_status_for(std::string_view code) {
    if (code == "invalid_argument" || code == "dimension_mismatch" || code == "format_error") return 400;
    if (code == "not_found") return 404;
    if (code == "method_not_allowed") return 405;
    if (code == "unavailable") return 409;
    if (code == "numeric_error") return 422;
    return 500;
}

namespace {

struct MethodNotAllowed : Error {
    using Error::Error;
    std::string_view code() const noexcept override { return "method_not_allowed"; }
};

json error_body(std::string_view code, const std::string& message) {
    return {{"code", code}, {"message", message}, {"http_status", http_status_for(code)}};
}

std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> parts;
    std::stringstream ss(path);
    std::string item;
    while (std::getline(ss, item, '/')) {
        if (!item.empty()) parts.push_back(item);
    }
    return parts;
}

std::uint64_t parse_id(const std::string& s, const char* what) {
    try {
        std::size_t used = 0;
        const auto v = std::stoull(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::logic_error&) {
        throw ArgumentError(std::string("malformed ") + what + " '" + s + "'");
    }
}

json parse_body(const ApiRequest& req) {
    if (req.body.empty()) return json::object();
    try {
        auto j = json::parse(req.body);
        if (!j.is_object()) throw ArgumentError("request body must be a JSON object");
        return j;
    } catch (const json::parse_error& e) {
        throw ArgumentError(std::string("malformed JSON body: ") + e.what());
    }
}

std::vector<Modality> output_modalities(const json& body) {
    if (!body.contains("modalities")) return {Modality::ecg, Modality::mri};
    std::vector<Modality> out;
    for (const auto& m : body.at("modalities")) out.push_back(modality_from_string(m.get<std::string>()));
    return normalize_modalities(out);
}

Modality latent_source(const json& body, const char* key = "latent") {
    const auto m = modality_from_string(body.value(key, std::string("fused")));
    if (m == Modality::synthetic) throw ArgumentError("latent source must be ecg, mri or fused");
    return m;
}

json sample_json(Modality m, std::span<const float> values) {
    const auto shape = m == Modality::ecg ? std::vector<std::size_t>{kEcgLeads, kEcgSamples}
                                          : std::vector<std::size_t>{kMriSide, kMriSide};
    return {{"shape", shape}, {"dtype", "f32le"}, {"data", encode_f32le(values)}};
}

json samples_json(const SampleMap& samples) {
    json out = json::object();
    for (const auto& [m, v] : samples) out[std::string(to_string(m))] = sample_json(m, v);
    return out;
}

json latent_json(const LatentVector& z) {
    return {{"values", z.values}, {"modality", to_string(z.modality_of_origin)}};
}

std::vector<std::uint64_t> parse_id_list(const std::string& s) {
    std::vector<std::uint64_t> ids;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) ids.push_back(parse_id(item, "subject id"));
    }
    return ids;
}

std::vector<Point2> parse_polygon(const json& j) {
    std::vector<Point2> poly;
    for (const auto& v : j) {
        if (!v.is_array() || v.size() != 2) throw ArgumentError("polygon vertices must be [x, y] pairs");
        poly.push_back({v[0].get<double>(), v[1].get<double>()});
    }
    return poly;
}

json covariates_json(const CovariateRecord& c) {
    json j = json::object();
    for (const auto& info : covariate_schema()) {
        if (info.kind == CovariateKind::numeric) j[std::string(info.name)] = numeric_covariate(c, info.name);
        else j[std::string(info.name)] = categorical_covariate(c, info.name);
    }
    return j;
}

}  // namespace

nlohmann::json Api::dispatch(const ApiRequest& req) const {
    const auto parts = split_path(req.path);
    if (parts.size() < 2 || parts[0] != "api") throw NotFoundError("no route for " + req.path);
    const bool get = req.method == "GET", post = req.method == "POST";
    auto require = [&](bool ok) {
        if (!ok) throw MethodNotAllowed(req.method + " is not supported on " + req.path);
    };
    const auto& s = session_;
    const auto& route = parts[1];
    const std::size_t depth = parts.size();

    if (route == "summary" && depth == 2) {
        require(get);
        const auto counts = s.dataset().split_counts();
        auto covs = json::array();
        for (const auto& c : covariate_schema()) {
            json j{{"name", c.name}, {"kind", c.kind == CovariateKind::numeric ? "numeric" : "categorical"}};
            if (c.kind == CovariateKind::numeric) j["bin_width"] = c.bin_width;
            else j["categories"] = c.categories;
            covs.push_back(std::move(j));
        }
        auto phenos = json::array();
        for (const auto& p : s.heads().phenotypes) phenos.push_back({{"name", p.name}, {"kind", to_string(p.kind)}});
        return {{"subjects", s.dataset().size()},
                {"splits", {{"train", counts.train}, {"validation", counts.validation}, {"test", counts.test}}},
                {"covariates", std::move(covs)},
                {"latent_dim", s.checkpoint().latent_dim()},
                {"dataset_fingerprint", s.dataset().fingerprint()},
                {"phenotypes", std::move(phenos)},
                {"perturbation_range", s.range().radius},
                {"modalities", {"ecg", "mri"}},
                {"latent_sources", {"ecg", "mri", "fused"}},
                {"representative_methods", {"nearest_subject", "mean", "median", "centroid"}}};
    }

    if (route == "histogram" && depth == 2) {
        require(get);
        const auto it = req.query.find("selection");
        const std::string sel = it == req.query.end() ? "all" : it->second;
        std::vector<std::uint64_t> ids;
        if (sel == "all" || sel.empty()) {
            for (const auto& subj : s.dataset().subjects) ids.push_back(subj.id);
        } else if (sel == "none") {
        } else if (sel.rfind("group:", 0) == 0) {
            ids = s.groups().get(parse_id(sel.substr(6), "group id")).subject_ids;
        } else if (sel.rfind("ids:", 0) == 0) {
            ids = parse_id_list(sel.substr(4));
        } else {
            throw ArgumentError("selection must be all, none, group:<id> or ids:<id,...>");
        }
        return histogram(s.dataset(), ids).to_json();
    }

    if (route == "embedding" && depth == 3) {
        require(get);
        const auto m = modality_from_string(parts[2]);
        require_sample_modality(m);
        return embedding_to_json(s.embedding(m));
    }

    if (route == "subject" && depth == 3) {
        require(get);
        const auto id = parse_id(parts[2], "subject id");
        if (!s.dataset().contains(id)) throw NotFoundError("no subject with id " + std::to_string(id));
        const auto& subj = s.dataset().at(id);
        return {{"id", id},
                {"split", to_string(subj.split)},
                {"covariates", covariates_json(subj.covariates)},
                {"factors",
                 {{"heart_scale", subj.factors.heart_scale},
                  {"heart_rate", subj.factors.heart_rate},
                  {"wall_thickness", subj.factors.wall_thickness}}},
                {"samples", {{"ecg", sample_json(Modality::ecg, subj.ecg)}, {"mri", sample_json(Modality::mri, subj.mri)}}}};
    }

    if (route == "groups") {
        if (depth == 2) {
            require(get);
            return s.groups().export_json();
        }
        if (depth == 3 && parts[2] == "export") {
            require(get);
            return s.groups().export_json();
        }
        if (depth == 3 && parts[2] == "import") {
            require(post);
            return {{"imported", session_.groups().import_json(parse_body(req))}};
        }
        throw NotFoundError("no route for " + req.path);
    }

    if (route == "cohort" && depth == 3) {
        require(post);
        const auto body = parse_body(req);
        if (parts[2] == "filter") {
            const auto ids = filter_cohort(s.dataset(), FilterPredicate::from_json(body));
            return {{"ids", ids}, {"count", ids.size()}};
        }
        if (parts[2] == "lasso") {
            const auto m = modality_from_string(body.at("modality").get<std::string>());
            require_sample_modality(m);
            const auto ids = lasso_select(s.embedding(m), parse_polygon(body.at("polygon")));
            return {{"ids", ids}, {"count", ids.size()}};
        }
        throw NotFoundError("no route for " + req.path);
    }

    if (route == "group" && depth == 2) {
        require(post);
        const auto body = parse_body(req);
        const auto name = body.value("name", std::string("group"));
        json prov = body.value("provenance", json{{"kind", "filter"}, {"payload", json::object()}});
        const auto kind = provenance_from_string(prov.value("kind", std::string("filter")));
        json payload = prov.value("payload", json::object());
        std::vector<std::uint64_t> ids;
        if (body.contains("ids")) {
            ids = body.at("ids").get<std::vector<std::uint64_t>>();
        } else if (kind == Provenance::filter) {
            ids = filter_cohort(s.dataset(), FilterPredicate::from_json(payload));
        } else if (kind == Provenance::lasso) {
            const auto m = modality_from_string(payload.at("modality").get<std::string>());
            require_sample_modality(m);
            ids = lasso_select(s.embedding(m), parse_polygon(payload.at("polygon")));
        } else {
            bool first = true;
            if (payload.contains("groups")) {
                for (const auto& g : payload.at("groups")) {
                    const auto members = s.groups().get(g.get<std::uint64_t>()).subject_ids;
                    ids = first ? members : intersect_ids(ids, members);
                    first = false;
                }
            }
            if (payload.contains("predicate")) {
                const auto matched = filter_cohort(s.dataset(), FilterPredicate::from_json(payload.at("predicate")));
                ids = first ? matched : intersect_ids(ids, matched);
                first = false;
            }
            if (first) throw ArgumentError("intersection needs 'groups' and/or 'predicate'");
        }
        const auto g = session_.groups().create(name, std::move(ids), kind, payload);
        return {{"id", g.id}, {"name", g.name}, {"size", g.subject_ids.size()}};
    }

    auto group_members = [&](const json& body, const char* key) {
        return s.groups().get(body.at(key).get<std::uint64_t>()).subject_ids;
    };
    auto method_of = [](const json& body) {
        return representative_method_from_string(body.value("method", std::string("mean")));
    };

    if (route == "reconstruct" && depth == 2) {
        require(post);
        const auto body = parse_body(req);
        const auto ids = group_members(body, "group_id");
        const auto source = latent_source(body);
        const auto r = reconstruct_group(s.checkpoint(), s.latents(source), ids, method_of(body), output_modalities(body));
        json out{{"group_id", body.at("group_id")},
                 {"method", to_string(method_of(body))},
                 {"latent", to_string(source)},
                 {"vector", latent_json(r.representative.vector)},
                 {"samples", samples_json(r.samples)},
                 {"predictions", predict_matrix(s.heads(), s.tables(), ids).to_json()}};
        out["subject_id"] = r.representative.subject_id ? json(*r.representative.subject_id) : json();
        return out;
    }

    if (route == "perturb" && depth == 2) {
        require(post);
        const auto body = parse_body(req);
        const auto& base_j = body.at("base");
        LatentVector base;
        if (base_j.contains("vector")) {
            base.values = base_j.at("vector").get<std::vector<float>>();
            base.modality_of_origin = modality_from_string(base_j.value("modality", std::string("synthetic")));
        } else if (base_j.contains("group_id")) {
            base = representative(s.latents(latent_source(base_j)), group_members(base_j, "group_id"), method_of(base_j)).vector;
        } else if (base_j.contains("subject_id")) {
            base = s.latents(latent_source(base_j)).row(base_j.at("subject_id").get<std::uint64_t>());
        } else {
            throw ArgumentError("base needs 'vector', 'group_id' or 'subject_id'");
        }
        const PerturbationRequest pr{base, body.at("k").get<std::size_t>(), body.at("value").get<double>()};
        const auto r = perturb(s.checkpoint(), s.range(), pr, output_modalities(body));
        return {{"base", latent_json(base)},
                {"vector", latent_json(r.perturbed)},
                {"k", pr.dimension},
                {"range", s.range().radius[pr.dimension]},
                {"original", samples_json(r.original)},
                {"perturbed", samples_json(r.changed)},
                {"predictions", predict_vector(s.heads(), r.perturbed).to_json()},
                {"original_predictions", predict_vector(s.heads(), base).to_json()}};
    }

    if (route == "interpolate" && depth == 2) {
        require(post);
        const auto body = parse_body(req);
        const auto source = latent_source(body);
        const auto method = method_of(body);
        const auto& table = s.latents(source);
        const auto za = representative(table, group_members(body, "group_a"), method).vector;
        const auto zb = representative(table, group_members(body, "group_b"), method).vector;
        const auto r = interpolate(s.checkpoint(), za, zb, body.at("t").get<double>(), output_modalities(body));
        return {{"t", body.at("t")},
                {"method", to_string(method)},
                {"latent", to_string(source)},
                {"vector", latent_json(r.vector)},
                {"samples", samples_json(r.samples)},
                {"predictions", predict_vector(s.heads(), r.vector).to_json()}};
    }

    if (route == "translate" && depth == 2) {
        require(post);
        const auto body = parse_body(req);
        const auto id = body.at("subject_id").get<std::uint64_t>();
        if (!s.dataset().contains(id)) throw NotFoundError("no subject with id " + std::to_string(id));
        const auto from = modality_from_string(body.at("from").get<std::string>());
        const auto to = modality_from_string(body.at("to").get<std::string>());
        require_sample_modality(from);
        const auto sample = translate(s.checkpoint(), sample_of(s.dataset().at(id), from), from, to);
        return {{"subject_id", id},
                {"from", to_string(from)},
                {"to", to_string(to)},
                {"sample", sample_json(to, sample)}};
    }

    throw NotFoundError("no route for " + req.path);
}

ApiResponse Api::handle(const ApiRequest& request) const {
    try {
        return {200, dispatch(request).dump()};
    } catch (const Error& e) {
        return {http_status_for(e.code()), error_body(e.code(), e.what()).dump()};
    } catch (const json::exception& e) {
        return {400, error_body("invalid_argument", std::string("malformed request: ") + e.what()).dump()};
    } catch (const std::exception& e) {
        return {500, error_body("internal_error", e.what()).dump()};
    }
}

void Api::bind(httplib::Server& server) const {
    auto forward = [this](const httplib::Request& req, httplib::Response& res) {
        ApiRequest r{req.method, req.path, {}, req.body};
        for (const auto& [k, v] : req.params) r.query.emplace(k, v);
        const auto out = handle(r);
        res.status = out.status;
        res.set_content(out.body, "application/json");
    };
    server.Get(R"(/api/.*)", forward);
    server.Post(R"(/api/.*)", forward);
    server.Put(R"(/api/.*)", forward);
    server.Delete(R"(/api/.*)", forward);
}

}  // namespace xmodal
