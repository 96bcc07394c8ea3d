#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmodal/synth.hpp"

namespace xmodal {

/// Bytes per subject in subjects.bin.
inline constexpr std::size_t kSubjectRecordBytes =
    8 + (4 + 4 + 6) + (4 + 4 + 4 + 8) + 4 * kMriValues + 4 * kEcgValues;

inline constexpr const char* kDatasetFormat = "xmodal-cohort-v1";

/// Appends one subject in the subjects.bin layout (little-endian):
///   u64 id | f32 age, f32 bmi, u8 sex, u8 af, u8 cad, u8 t2d, u8 htn, u8 hcm
///   | f32 heart_scale, f32 heart_rate, f32 wall_thickness, u64 noise_seed
///   | 1024 x f32 mri | 1024 x f32 ecg
void append_subject_bytes(std::vector<unsigned char>& out, const SubjectRecord& s);

std::vector<unsigned char> serialize_subjects(const Dataset& ds);

nlohmann::json make_manifest(const Dataset& ds);

/// Writes manifest.json and subjects.bin into `dir` (created if missing).
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);

/// Reads a dataset directory; FormatError on any inconsistency.
Dataset read_dataset(const std::filesystem::path& dir);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(const unsigned char* data, std::size_t len,
                      std::uint64_t state = 0xcbf29ce484222325ULL);

std::string to_hex(std::uint64_t v);

}  // namespace xmodal
