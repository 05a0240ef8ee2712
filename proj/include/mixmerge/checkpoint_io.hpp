#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mixmerge/merge.hpp"
#include "mixmerge/tensor_map.hpp"

namespace mixmerge {

// Single-file tensor container: an 8-byte little-endian header length, a UTF-8
// JSON header mapping tensor names to {dtype, shape, data_offsets}, and a raw
// little-endian f32 payload. Tensors are laid out in lexicographic name order
// and their offsets exactly tile the payload. The byte layout is the on-disk
// contract and is documented in docs/formats.md.

/// Canonical container bytes of a map. Pure function of content, so two maps
/// with equal tensors, identities, and metadata serialize identically.
std::vector<std::uint8_t> serialize_checkpoint(const TensorMap& map);

/// SHA-256 (hex) of the canonical container bytes.
std::string checkpoint_digest(const TensorMap& map);

/// Writes the canonical container; returns its digest.
std::string write_checkpoint(const TensorMap& map, const std::filesystem::path& path);

/// Parses a container file. Throws CheckpointFormatError with the matching
/// kind on malformed headers, offset violations, truncation, or non-finite
/// payloads. The map identity is read from the __metadata__ entry.
TensorMap read_checkpoint(const std::filesystem::path& path);
TensorMap parse_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Delta sets reuse the container with a base_identity metadata entry.
std::string write_delta(const DeltaSet& deltas, const std::filesystem::path& path);
DeltaSet read_delta(const std::filesystem::path& path);

/// Current time as ISO-8601 UTC. Reads SOURCE_DATE_EPOCH when set so
/// reproducibility harnesses can pin manifest timestamps.
std::string manifest_timestamp();

/// Fixed-schema JSON round trip for manifests. Unknown fields are rejected
/// with a ManifestSchemaError naming the field path, as is a sampling block on
/// a non-M3 method (and vice versa).
std::string manifest_to_json(const MergeManifest& manifest);
MergeManifest manifest_from_json(const std::string& text);
void write_manifest(const MergeManifest& manifest, const std::filesystem::path& path);
MergeManifest read_manifest(const std::filesystem::path& path);

}  // namespace mixmerge
