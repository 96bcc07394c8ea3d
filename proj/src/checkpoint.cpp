#include "xmodal/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>

#include <json.hpp>

#include "xmodal/bytes.hpp"
#include "xmodal/errors.hpp"

namespace xmodal {

using nlohmann::json;

namespace {

constexpr int kHeaderVersion = 1;

class BlobWriter {
public:
    void add(const std::string& name, const std::vector<std::size_t>& shape, std::span<const float> values) {
        entries_.push_back({{"name", name},
                            {"shape", shape},
                            {"offset", blobs_.size()},
                            {"length", 4 * values.size()}});
        bytes::put_f32s(blobs_, values);
    }

    json entries() const { return entries_; }
    const std::vector<unsigned char>& blobs() const { return blobs_; }

private:
    json entries_ = json::array();
    std::vector<unsigned char> blobs_;
};

class BlobReader {
public:
    BlobReader(const json& entries, std::span<const unsigned char> blobs) : blobs_(blobs) {
        for (const auto& e : entries) {
            const auto name = e.at("name").get<std::string>();
            if (!index_.emplace(name, e).second) throw FormatError("duplicate tensor '" + name + "'");
        }
    }

    std::vector<float> values(const std::string& name, std::size_t expected) const {
        const auto& e = entry(name);
        const auto offset = e.at("offset").get<std::size_t>();
        const auto length = e.at("length").get<std::size_t>();
        if (length != 4 * expected) {
            throw FormatError("tensor '" + name + "' has " + std::to_string(length) + " bytes, expected " +
                              std::to_string(4 * expected));
        }
        if (offset > blobs_.size() || length > blobs_.size() - offset) {
            throw FormatError("tensor '" + name + "' runs past the end of the file");
        }
        std::vector<float> out(expected);
        bytes::Reader(blobs_.subspan(offset, length)).f32s(out);
        return out;
    }

    DenseTensor tensor(const std::string& name, const std::vector<std::size_t>& shape) const {
        const auto stored = entry(name).at("shape").get<std::vector<std::size_t>>();
        if (stored != shape) throw FormatError("tensor '" + name + "' has an unexpected shape");
        std::size_t count = 1;
        for (auto s : shape) count *= s;
        return DenseTensor(shape, values(name, count));
    }

private:
    const json& entry(const std::string& name) const {
        const auto it = index_.find(name);
        if (it == index_.end()) throw FormatError("missing tensor '" + name + "'");
        return it->second;
    }

    std::span<const unsigned char> blobs_;
    std::map<std::string, json> index_;
};

json spec_to_json(const MlpSpec& s) {
    json acts = json::array();
    for (auto a : s.activations) acts.push_back(std::string(to_string(a)));
    return {{"layer_widths", s.layer_widths}, {"activations", acts}, {"seed", s.seed}};
}

MlpSpec spec_from_json(const json& j) {
    MlpSpec s;
    s.layer_widths = j.at("layer_widths").get<std::vector<std::size_t>>();
    for (const auto& a : j.at("activations")) s.activations.push_back(activation_from_string(a.get<std::string>()));
    s.seed = j.at("seed").get<std::uint64_t>();
    s.validate();
    return s;
}

json config_to_json(const TrainConfig& c) {
    return {{"latent_dim", c.latent_dim},
            {"temperature", c.temperature},
            {"contrastive_weight", c.contrastive_weight},
            {"batch_size", c.batch_size},
            {"max_epochs", c.max_epochs},
            {"patience", c.patience},
            {"lr", c.lr},
            {"seed", c.seed},
            {"encoder_hidden_width", c.encoder_hidden_width},
            {"decoder_hidden_width", c.decoder_hidden_width},
            {"hidden_activation", std::string(to_string(c.hidden_activation))}};
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    c.latent_dim = j.at("latent_dim").get<std::size_t>();
    c.temperature = j.at("temperature").get<double>();
    c.contrastive_weight = j.at("contrastive_weight").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.max_epochs = j.at("max_epochs").get<std::size_t>();
    c.patience = j.at("patience").get<std::size_t>();
    c.lr = j.at("lr").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.encoder_hidden_width = j.at("encoder_hidden_width").get<std::size_t>();
    c.decoder_hidden_width = j.at("decoder_hidden_width").get<std::size_t>();
    c.hidden_activation = activation_from_string(j.at("hidden_activation").get<std::string>());
    c.validate();
    return c;
}

const std::array<std::pair<const char*, Modality>, 2> kScalingParts{{{"ecg", Modality::ecg}, {"mri", Modality::mri}}};

struct NetworkRef {
    const char* name;
    MlpSpec AutoencoderSpecs::*spec;
    ParamSet<float> AutoencoderWeights<float>::*params;
};

const std::array<NetworkRef, 4> kNetworks{{
    {"ecg_encoder", &AutoencoderSpecs::ecg_encoder, &AutoencoderWeights<float>::ecg_encoder},
    {"mri_encoder", &AutoencoderSpecs::mri_encoder, &AutoencoderWeights<float>::mri_encoder},
    {"ecg_decoder", &AutoencoderSpecs::ecg_decoder, &AutoencoderWeights<float>::ecg_decoder},
    {"mri_decoder", &AutoencoderSpecs::mri_decoder, &AutoencoderWeights<float>::mri_decoder},
}};

std::string tensor_label(const char* net, std::size_t t) {
    return std::string(net) + (t % 2 == 0 ? ".W" : ".b") + std::to_string(t / 2);
}

std::string head_prefix(Condition c, std::size_t k) {
    return "heads." + std::string(to_string(c)) + "." + std::to_string(k);
}

json heads_to_json(const HeadSet& heads, BlobWriter& blobs) {
    json phenos = json::array();
    for (const auto& p : heads.phenotypes) {
        phenos.push_back({{"name", p.name}, {"kind", std::string(to_string(p.kind))}, {"source", p.source}});
    }
    json conditions = json::object();
    for (auto c : kConditions) {
        json list = json::array();
        const auto& row = heads.heads[static_cast<std::size_t>(c)];
        for (std::size_t k = 0; k < row.size(); ++k) {
            const auto& h = row[k];
            json jh = {{"available", h.available},
                       {"skip_reason", h.skip_reason},
                       {"bias", h.bias},
                       {"metric_available", h.metric_available},
                       {"test_metric", h.test_metric},
                       {"features", h.weights.size()}};
            if (h.available) {
                const auto prefix = head_prefix(c, k);
                blobs.add(prefix + ".feature_mean", {h.feature_mean.size()}, h.feature_mean);
                blobs.add(prefix + ".feature_scale", {h.feature_scale.size()}, h.feature_scale);
                blobs.add(prefix + ".weights", {h.weights.size()}, h.weights);
            }
            list.push_back(std::move(jh));
        }
        conditions[std::string(to_string(c))] = std::move(list);
    }
    return {{"phenotypes", phenos}, {"conditions", conditions}};
}

HeadSet heads_from_json(const json& j, const BlobReader& blobs) {
    HeadSet out;
    for (const auto& p : j.at("phenotypes")) {
        out.phenotypes.push_back({p.at("name").get<std::string>(),
                                  phenotype_kind_from_string(p.at("kind").get<std::string>()),
                                  p.at("source").get<std::string>()});
    }
    for (auto c : kConditions) {
        const auto& list = j.at("conditions").at(std::string(to_string(c)));
        if (list.size() != out.phenotypes.size()) throw FormatError("heads: condition row has the wrong length");
        auto& row = out.heads[static_cast<std::size_t>(c)];
        for (std::size_t k = 0; k < list.size(); ++k) {
            const auto& jh = list[k];
            LinearHead h;
            h.available = jh.at("available").get<bool>();
            h.skip_reason = jh.at("skip_reason").get<std::string>();
            h.bias = jh.at("bias").get<float>();
            h.metric_available = jh.at("metric_available").get<bool>();
            h.test_metric = jh.at("test_metric").get<double>();
            if (h.available) {
                const auto n = jh.at("features").get<std::size_t>();
                const auto prefix = head_prefix(c, k);
                h.feature_mean = blobs.values(prefix + ".feature_mean", n);
                h.feature_scale = blobs.values(prefix + ".feature_scale", n);
                h.weights = blobs.values(prefix + ".weights", n);
            }
            row.push_back(std::move(h));
        }
    }
    return out;
}

}  // namespace

std::vector<unsigned char> serialize_checkpoint(const ModelCheckpoint& ckpt) {
    BlobWriter blobs;
    json specs = json::object();
    for (const auto& net : kNetworks) {
        specs[net.name] = spec_to_json(ckpt.specs.*net.spec);
        const auto& params = ckpt.weights.*net.params;
        check_mlp_params(ckpt.specs.*net.spec, params);
        for (std::size_t t = 0; t < params.tensors.size(); ++t) {
            blobs.add(tensor_label(net.name, t), params.tensors[t].shape(),
                      params.tensors[t].values());
        }
    }
    for (const auto& [name, m] : kScalingParts) {
        const auto& s = ckpt.input_scaling.of(m);
        if (s.empty()) continue;
        blobs.add(std::string("input_scaling.") + name + ".mean", {s.mean.size()}, s.mean);
        blobs.add(std::string("input_scaling.") + name + ".scale", {s.scale.size()}, s.scale);
    }

    json header = {
        {"format", "xmodal-autoencoder"},
        {"version", kHeaderVersion},
        {"specs", specs},
        {"config", config_to_json(ckpt.config)},
        {"metadata",
         {{"epoch_of_best", ckpt.epoch_of_best},
          {"validation_loss_at_best", ckpt.validation_loss_at_best},
          {"dataset_fingerprint", ckpt.dataset_fingerprint},
          {"validation_history", ckpt.validation_history},
          {"epochs_run", ckpt.epochs_run},
          {"train_seconds", ckpt.train_seconds}}},
        {"input_scaling",
         {{"ecg", !ckpt.input_scaling.ecg.empty()}, {"mri", !ckpt.input_scaling.mri.empty()}}},
    };
    if (ckpt.heads) header["heads"] = heads_to_json(*ckpt.heads, blobs);
    header["tensors"] = blobs.entries();

    const std::string text = header.dump();
    std::vector<unsigned char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
    bytes::put_u64(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), blobs.blobs().begin(), blobs.blobs().end());
    return out;
}

ModelCheckpoint deserialize_checkpoint(std::span<const unsigned char> data) {
    if (data.size() < kCheckpointMagic.size() ||
        !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), data.begin())) {
        throw FormatError("not a model checkpoint (bad magic prefix)");
    }
    bytes::Reader reader(data.subspan(kCheckpointMagic.size()));
    const auto header_len = reader.u64();
    if (header_len > reader.remaining()) throw FormatError("checkpoint header is truncated");
    const auto header_start = kCheckpointMagic.size() + 8;
    const auto header_bytes = data.subspan(header_start, header_len);
    const auto blob_bytes = data.subspan(header_start + header_len);

    try {
        const json header = json::parse(header_bytes.begin(), header_bytes.end());
        if (header.at("format") != "xmodal-autoencoder") throw FormatError("unexpected checkpoint format");
        if (header.at("version") != kHeaderVersion) {
            throw FormatError("unsupported checkpoint version " + header.at("version").dump());
        }
        const BlobReader blobs(header.at("tensors"), blob_bytes);

        ModelCheckpoint ckpt;
        ckpt.config = config_from_json(header.at("config"));
        for (const auto& net : kNetworks) {
            auto& spec = ckpt.specs.*net.spec;
            spec = spec_from_json(header.at("specs").at(net.name));
            auto& params = ckpt.weights.*net.params;
            const auto init = init_mlp<float>(spec);
            params.names.clear();
            params.tensors.clear();
            for (std::size_t t = 0; t < init.tensors.size(); ++t) {
                params.names.push_back(tensor_label(net.name, t));
                params.tensors.push_back(blobs.tensor(params.names.back(), init.tensors[t].shape()));
                params.tensors.back().require_finite(params.names.back());
            }
        }
        const auto d = ckpt.specs.latent_dim();
        if (ckpt.specs.mri_encoder.output_width() != d || ckpt.specs.ecg_decoder.input_width() != d ||
            ckpt.specs.mri_decoder.input_width() != d || ckpt.config.latent_dim != d) {
            throw FormatError("checkpoint networks disagree on the latent dimension");
        }
        for (const auto& [name, m] : kScalingParts) {
            if (!header.at("input_scaling").at(name).get<bool>()) continue;
            const auto n = ckpt.specs.input_dim(m);
            auto& s = m == Modality::ecg ? ckpt.input_scaling.ecg : ckpt.input_scaling.mri;
            s.mean = blobs.values(std::string("input_scaling.") + name + ".mean", n);
            s.scale = blobs.values(std::string("input_scaling.") + name + ".scale", n);
            for (std::size_t i = 0; i < n; ++i) {
                if (!std::isfinite(s.mean[i]) || !(s.scale[i] > 0.0f) || !std::isfinite(s.scale[i])) {
                    throw FormatError(std::string("invalid ") + name + " input scaling at feature " +
                                      std::to_string(i));
                }
            }
        }

        const auto& meta = header.at("metadata");
        ckpt.epoch_of_best = meta.at("epoch_of_best").get<std::size_t>();
        ckpt.validation_loss_at_best = meta.at("validation_loss_at_best").get<double>();
        ckpt.dataset_fingerprint = meta.at("dataset_fingerprint").get<std::string>();
        ckpt.validation_history = meta.at("validation_history").get<std::vector<double>>();
        ckpt.epochs_run = meta.at("epochs_run").get<std::size_t>();
        ckpt.train_seconds = meta.at("train_seconds").get<double>();
        if (header.contains("heads")) ckpt.heads = heads_from_json(header.at("heads"), blobs);
        return ckpt;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed checkpoint header: ") + e.what());
    } catch (const ArgumentError& e) {
        throw FormatError(std::string("invalid checkpoint header: ") + e.what());
    } catch (const DimensionError& e) {
        throw FormatError(std::string("invalid checkpoint tensors: ") + e.what());
    } catch (const NumericError& e) {
        throw FormatError(std::string("invalid checkpoint values: ") + e.what());
    }
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
    const auto data = serialize_checkpoint(ckpt);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error("failed writing " + path.string());
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot open checkpoint " + path.string());
    const std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(data);
}

}  // namespace xmodal
