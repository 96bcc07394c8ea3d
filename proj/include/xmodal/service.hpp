#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>

#include <json.hpp>

#include "xmodal/autoencoder.hpp"
#include "xmodal/cohort.hpp"
#include "xmodal/latent_ops.hpp"
#include "xmodal/predict.hpp"
#include "xmodal/tsne.hpp"

namespace httplib {
class Server;
}

namespace xmodal {

/// Per-modality t-SNE layouts, keyed by "ecg" and "mri".
using EmbeddingSet = std::map<Modality, Embedding2D>;

/// t-SNE of one modality's latents over every subject.
Embedding2D embed_modality(const LatentTable& table, Modality modality, const TsneConfig& config);

nlohmann::json embedding_to_json(const Embedding2D& e);
Embedding2D embedding_from_json(const nlohmann::json& j);

/// {"ecg": ..., "mri": ...}; doubles round-trip exactly.
void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet read_embeddings(const std::filesystem::path& path);

nlohmann::json tsne_config_to_json(const TsneConfig& c);

/// Standard base64 of little-endian f32 values.
std::string encode_f32le(std::span<const float> values);
std::vector<float> decode_f32le(std::string_view base64);

/// Everything the service needs, immutable after construction except the
/// group registry.
class Session {
public:
    /// Throws ArgumentError when the checkpoint was trained on another
    /// dataset or an embedding references unknown subjects. Missing
    /// embeddings are computed with `tsne`; missing heads are fitted.
    Session(Dataset ds, ModelCheckpoint ckpt, EmbeddingSet embeddings = {}, const TsneConfig& tsne = {});

    const Dataset& dataset() const { return ds_; }
    const ModelCheckpoint& checkpoint() const { return ckpt_; }
    const ConditionTables& tables() const { return tables_; }
    const LatentTable& latents(Modality m) const;
    const Embedding2D& embedding(Modality m) const;
    const HeadSet& heads() const { return heads_; }
    const PerturbationRange& range() const { return range_; }
    GroupRegistry& groups() { return *groups_; }
    const GroupRegistry& groups() const { return *groups_; }

private:
    Dataset ds_;
    ModelCheckpoint ckpt_;
    ConditionTables tables_;
    EmbeddingSet embeddings_;
    HeadSet heads_;
    PerturbationRange range_;
    std::unique_ptr<GroupRegistry> groups_;
};

struct ApiRequest {
    std::string method;  // GET or POST
    std::string path;
    std::map<std::string, std::string> query;
    std::string body;
};

struct ApiResponse {
    int status = 200;
    std::string body;  // JSON
};

/// HTTP status for an error code.
int http_status_for(std::string_view code);

/// Routes requests to the session. Safe to call from many threads.
class Api {
public:
    explicit Api(Session& session) : session_(session) {}

    ApiResponse handle(const ApiRequest& request) const;

    /// Registers every route on an httplib server.
    void bind(httplib::Server& server) const;

private:
    nlohmann::json dispatch(const ApiRequest& request) const;

    Session& session_;
};

}  // namespace xmodal
