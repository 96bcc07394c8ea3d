#pragma once

#include <cstdlib>
#include <filesystem>

#include "xmodal/checkpoint.hpp"
#include "xmodal/dataset_io.hpp"
#include "xmodal/service.hpp"

// The desk configuration: n = 2000 cohort with seed 7, training seed 1.
// Loaded from $XMODAL_DESK (written by the ctest fixture through the CLI)
// when present, otherwise built in process.
namespace desk {

inline constexpr std::size_t kSubjects = 2000;
inline constexpr std::uint64_t kDatasetSeed = 7;
inline constexpr std::uint64_t kTrainSeed = 1;

struct Artifacts {
    xmodal::Dataset ds;
    xmodal::ModelCheckpoint ckpt;
    xmodal::EmbeddingSet embeddings;
    bool from_disk = false;
};

inline Artifacts build() {
    namespace fs = std::filesystem;
    using namespace xmodal;
    Artifacts a;
    if (const char* dir = std::getenv("XMODAL_DESK")) {
        const fs::path root(dir);
        if (fs::exists(root / "dataset" / "subjects.bin") && fs::exists(root / "model.ckpt")) {
            a.ds = read_dataset(root / "dataset");
            a.ckpt = load_checkpoint(root / "model.ckpt");
            if (fs::exists(root / "embeddings.json")) a.embeddings = read_embeddings(root / "embeddings.json");
            a.from_disk = true;
            return a;
        }
    }
    a.ds = generate_cohort(kSubjects, kDatasetSeed);
    TrainConfig cfg;
    cfg.seed = kTrainSeed;
    a.ckpt = train(a.ds, cfg);
    a.ckpt.heads = fit_heads(ConditionTables::encode(a.ckpt, a.ds), a.ds, default_phenotypes());
    return a;
}

inline const Artifacts& artifacts() {
    static const Artifacts a = build();
    return a;
}

inline xmodal::Session& session() {
    static xmodal::Session s(artifacts().ds, artifacts().ckpt, artifacts().embeddings);
    return s;
}

}  // namespace desk
