#include "xmodal/dataset_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "xmodal/bytes.hpp"
#include "xmodal/errors.hpp"

namespace xmodal {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t fnv1a64(const unsigned char* data, std::size_t len, std::uint64_t state) {
    for (std::size_t i = 0; i < len; ++i) {
        state ^= data[i];
        state *= 0x100000001b3ULL;
    }
    return state;
}

std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void append_subject_bytes(std::vector<unsigned char>& out, const SubjectRecord& s) {
    const auto& c = s.covariates;
    bytes::put_u64(out, s.id);
    bytes::put_f32(out, c.age);
    bytes::put_f32(out, c.bmi);
    bytes::put_u8(out, static_cast<std::uint8_t>(c.sex));
    bytes::put_u8(out, c.atrial_fibrillation);
    bytes::put_u8(out, c.coronary_artery_disease);
    bytes::put_u8(out, c.diabetes_type2);
    bytes::put_u8(out, c.hypertension);
    bytes::put_u8(out, c.hypertrophic_cardiomyopathy);
    bytes::put_f32(out, s.factors.heart_scale);
    bytes::put_f32(out, s.factors.heart_rate);
    bytes::put_f32(out, s.factors.wall_thickness);
    bytes::put_u64(out, s.factors.noise_seed);
    bytes::put_f32s(out, s.mri);
    bytes::put_f32s(out, s.ecg);
}

std::vector<unsigned char> serialize_subjects(const Dataset& ds) {
    std::vector<unsigned char> out;
    out.reserve(ds.size() * kSubjectRecordBytes);
    for (const auto& s : ds.subjects) append_subject_bytes(out, s);
    return out;
}

std::string Dataset::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    std::vector<unsigned char> buf;
    buf.reserve(kSubjectRecordBytes);
    for (const auto& s : subjects) {
        buf.clear();
        append_subject_bytes(buf, s);
        buf.push_back(static_cast<unsigned char>(s.split));
        h = fnv1a64(buf.data(), buf.size(), h);
    }
    return to_hex(h);
}

json make_manifest(const Dataset& ds) {
    const auto counts = ds.split_counts();
    json covariates = json::array({
        {{"name", "age"}, {"kind", "continuous"}, {"type", "f32"}, {"unit", "years"}, {"range", {40, 80}}},
        {{"name", "bmi"}, {"kind", "continuous"}, {"type", "f32"}, {"unit", "kg/m2"}, {"range", {15, 50}}},
        {{"name", "sex"}, {"kind", "categorical"}, {"type", "u8"}, {"categories", {"female", "male"}}},
        {{"name", "atrial_fibrillation"}, {"kind", "binary"}, {"type", "u8"}},
        {{"name", "coronary_artery_disease"}, {"kind", "binary"}, {"type", "u8"}},
        {{"name", "diabetes_type2"}, {"kind", "binary"}, {"type", "u8"}},
        {{"name", "hypertension"}, {"kind", "binary"}, {"type", "u8"}},
        {{"name", "hypertrophic_cardiomyopathy"}, {"kind", "binary"}, {"type", "u8"}},
    });
    json factors = json::array({
        {{"name", "heart_scale"}, {"type", "f32"}},
        {{"name", "heart_rate"}, {"type", "f32"}},
        {{"name", "wall_thickness"}, {"type", "f32"}},
        {{"name", "noise_seed"}, {"type", "u64"}},
    });
    json splits = json::object();
    for (auto split : {Split::train, Split::validation, Split::test}) {
        splits[std::string(to_string(split))] = ds.ids_in(split);
    }
    return json{
        {"format", kDatasetFormat},
        {"count", ds.size()},
        {"seed", ds.seed},
        {"split_sizes", {{"train", counts.train}, {"validation", counts.validation}, {"test", counts.test}}},
        {"splits", splits},
        {"record_bytes", kSubjectRecordBytes},
        {"byte_order", "little-endian"},
        {"covariate_schema", covariates},
        {"factor_schema", factors},
        {"modalities",
         {{"mri", {{"shape", {kMriSide, kMriSide}}, {"type", "f32"}, {"range", {kMriMin, kMriMax}}}},
          {"ecg",
           {{"shape", {kEcgLeads, kEcgSamples}},
            {"type", "f32"},
            {"range", {kEcgMin, kEcgMax}},
            {"leads", kEcgLeadNames},
            {"sample_rate_hz", kEcgSampleRate}}}}},
        {"fingerprint", ds.fingerprint()},
    };
}

void write_dataset(const Dataset& ds, const fs::path& dir) {
    fs::create_directories(dir);
    const auto blob = serialize_subjects(ds);
    {
        std::ofstream out(dir / "subjects.bin", std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
        if (!out) throw FormatError("failed writing " + (dir / "subjects.bin").string());
    }
    std::ofstream manifest(dir / "manifest.json", std::ios::trunc);
    manifest << make_manifest(ds).dump(2) << '\n';
    if (!manifest) throw FormatError("failed writing " + (dir / "manifest.json").string());
}

Dataset read_dataset(const fs::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw FormatError("cannot open " + (dir / "manifest.json").string());
    json manifest;
    try {
        manifest = json::parse(mf);
    } catch (const json::exception& e) {
        throw FormatError(std::string("manifest.json: ") + e.what());
    }
    if (manifest.value("format", "") != kDatasetFormat) {
        throw FormatError("manifest.json: unsupported format");
    }

    std::ifstream bf(dir / "subjects.bin", std::ios::binary);
    if (!bf) throw FormatError("cannot open " + (dir / "subjects.bin").string());
    std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

    Dataset ds;
    try {
        ds.seed = manifest.at("seed").get<std::uint64_t>();
        const auto count = manifest.at("count").get<std::size_t>();
        if (blob.size() != count * kSubjectRecordBytes) {
            throw FormatError("subjects.bin size does not match manifest count");
        }
        bytes::Reader in(blob);
        ds.subjects.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            auto& s = ds.subjects[i];
            s.id = in.u64();
            if (s.id != i) throw FormatError("subject ids must be dense and ordered");
            auto& c = s.covariates;
            c.age = in.f32();
            c.bmi = in.f32();
            const auto sex = in.u8();
            if (sex > 1) throw FormatError("invalid sex code");
            c.sex = static_cast<Sex>(sex);
            c.atrial_fibrillation = in.u8() != 0;
            c.coronary_artery_disease = in.u8() != 0;
            c.diabetes_type2 = in.u8() != 0;
            c.hypertension = in.u8() != 0;
            c.hypertrophic_cardiomyopathy = in.u8() != 0;
            s.factors.heart_scale = in.f32();
            s.factors.heart_rate = in.f32();
            s.factors.wall_thickness = in.f32();
            s.factors.noise_seed = in.u64();
            s.mri.resize(kMriValues);
            s.ecg.resize(kEcgValues);
            in.f32s(s.mri);
            in.f32s(s.ecg);
        }
        const auto& splits = manifest.at("splits");
        std::vector<bool> seen(count, false);
        for (auto split : {Split::train, Split::validation, Split::test}) {
            for (auto id : splits.at(std::string(to_string(split))).get<std::vector<std::uint64_t>>()) {
                if (id >= count || seen[id]) throw FormatError("invalid split assignment");
                seen[id] = true;
                ds.subjects[id].split = split;
            }
        }
        if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
            throw FormatError("split assignment does not cover every subject");
        }
        if (manifest.contains("fingerprint") && manifest["fingerprint"] != ds.fingerprint()) {
            throw FormatError("dataset fingerprint mismatch");
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("manifest.json: ") + e.what());
    }
    return ds;
}

}  // namespace xmodal
