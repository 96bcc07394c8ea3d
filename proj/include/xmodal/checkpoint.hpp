#pragma once

#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "xmodal/autoencoder.hpp"

namespace xmodal {

inline constexpr std::string_view kCheckpointMagic = "XMODAL-AE-CKPT-1";

/// model.ckpt layout:
///   16-byte magic | u64 LE header length | JSON header | f32 LE tensor blobs
/// Tensor entries in the header carry byte offsets relative to the first blob.
/// Fitted heads, when present, live in an optional "heads" header section
/// whose vectors are blobs like any other tensor.
std::vector<unsigned char> serialize_checkpoint(const ModelCheckpoint& ckpt);

/// FormatError on a bad magic, truncated data, malformed header or
/// inconsistent tensor shapes.
ModelCheckpoint deserialize_checkpoint(std::span<const unsigned char> data);

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace xmodal
