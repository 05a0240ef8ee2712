#include "mixmerge/checkpoint_io.hpp"

#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "mixmerge/sha256.hpp"
#include "mixmerge/version.hpp"

namespace mixmerge {

namespace {

using nlohmann::json;

constexpr const char* kManifestFormat = "mixmerge-manifest/1";

void append_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

void append_f32_le(std::vector<std::uint8_t>& out, float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(bits >> (8 * i)));
}

float read_f32_le(const std::uint8_t* p) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= std::uint32_t(p[i]) << (8 * i);
    return std::bit_cast<float>(bits);
}

[[noreturn]] void fail(CheckpointFormatError::Kind kind, const std::string& message) {
    throw CheckpointFormatError(kind, message);
}

}  // namespace

namespace {

std::vector<std::uint8_t> serialize_with_metadata(
    const TensorMap& map, const std::map<std::string, std::string>& metadata_entries) {
    json header = json::object();
    json metadata = json::object();
    for (const auto& [key, value] : metadata_entries) metadata[key] = value;
    header["__metadata__"] = metadata;

    std::uint64_t offset = 0;
    for (const auto& [name, tensor] : map) {
        if (name == "__metadata__") {
            fail(CheckpointFormatError::Kind::bad_header,
                 "'__metadata__' is reserved and cannot name a tensor");
        }
        const std::uint64_t bytes = std::uint64_t(tensor.numel()) * 4;
        json record = json::object();
        record["dtype"] = "F32";
        record["shape"] = tensor.shape;
        record["data_offsets"] = {offset, offset + bytes};
        header[name] = record;
        offset += bytes;
    }

    const std::string header_text = header.dump();
    std::vector<std::uint8_t> out;
    out.reserve(8 + header_text.size() + offset);
    append_u64_le(out, header_text.size());
    out.insert(out.end(), header_text.begin(), header_text.end());
    for (const auto& [name, tensor] : map) {
        for (float v : tensor.data) append_f32_le(out, v);
    }
    return out;
}

std::string write_bytes(const std::vector<std::uint8_t>& bytes,
                        const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for '" + path.string() + "'");
    return Sha256::hex(bytes.data(), bytes.size());
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const TensorMap& map) {
    return serialize_with_metadata(map, {{"identity", map.identity()}});
}

std::string checkpoint_digest(const TensorMap& map) {
    const auto bytes = serialize_checkpoint(map);
    return Sha256::hex(bytes.data(), bytes.size());
}

std::string write_checkpoint(const TensorMap& map, const std::filesystem::path& path) {
    return write_bytes(serialize_checkpoint(map), path);
}

namespace {

struct ParsedMetadata {
    std::map<std::string, std::string> entries;
};

// Validates the header object and returns tensors in lexicographic order.
// nlohmann's default object type already iterates sorted by key.
TensorMap parse_container(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8) {
        fail(CheckpointFormatError::Kind::truncated_payload,
             "file is shorter than the 8-byte header length prefix");
    }
    std::uint64_t header_len = 0;
    for (int i = 0; i < 8; ++i) header_len |= std::uint64_t(bytes[i]) << (8 * i);
    if (header_len > bytes.size() - 8) {
        fail(CheckpointFormatError::Kind::truncated_payload,
             "declared header length " + std::to_string(header_len) +
                 " exceeds file size");
    }

    json header;
    try {
        header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
    } catch (const json::exception& e) {
        fail(CheckpointFormatError::Kind::bad_header,
             std::string("header is not valid JSON: ") + e.what());
    }
    if (!header.is_object()) {
        fail(CheckpointFormatError::Kind::bad_header, "header is not a JSON object");
    }
    if (!header.contains("__metadata__")) {
        fail(CheckpointFormatError::Kind::bad_header, "header lacks '__metadata__'");
    }
    const json& metadata = header["__metadata__"];
    if (!metadata.is_object() || !metadata.contains("identity") ||
        !metadata["identity"].is_string()) {
        fail(CheckpointFormatError::Kind::bad_header,
             "'__metadata__' must be an object with an 'identity' string");
    }
    for (const auto& [key, value] : metadata.items()) {
        if (!value.is_string()) {
            fail(CheckpointFormatError::Kind::bad_header,
                 "'__metadata__." + key + "' must be a string");
        }
    }

    const std::size_t payload_size = bytes.size() - 8 - header_len;
    const std::uint8_t* payload = bytes.data() + 8 + header_len;

    TensorMap map(metadata["identity"].get<std::string>());
    std::uint64_t expected_begin = 0;
    for (const auto& [name, record] : header.items()) {
        if (name == "__metadata__") continue;
        if (!record.is_object()) {
            fail(CheckpointFormatError::Kind::bad_header,
                 "tensor '" + name + "' record is not an object");
        }
        for (const auto& [key, value] : record.items()) {
            if (key != "dtype" && key != "shape" && key != "data_offsets") {
                fail(CheckpointFormatError::Kind::bad_header,
                     "tensor '" + name + "' has unknown field '" + key + "'");
            }
        }
        if (!record.contains("dtype") || !record.contains("shape") ||
            !record.contains("data_offsets")) {
            fail(CheckpointFormatError::Kind::bad_header,
                 "tensor '" + name + "' record must carry dtype, shape, data_offsets");
        }
        if (!record["dtype"].is_string() || record["dtype"].get<std::string>() != "F32") {
            fail(CheckpointFormatError::Kind::bad_header,
                 "tensor '" + name + "' has unsupported dtype (only F32 in v1)");
        }
        if (!record["shape"].is_array()) {
            fail(CheckpointFormatError::Kind::bad_header,
                 "tensor '" + name + "' shape must be an array");
        }
        Tensor tensor;
        for (const json& dim : record["shape"]) {
            if (!dim.is_number_integer() && !dim.is_number_unsigned()) {
                fail(CheckpointFormatError::Kind::bad_header,
                     "tensor '" + name + "' shape holds a non-integer");
            }
            const std::int64_t d = dim.get<std::int64_t>();
            if (d < 0) {
                fail(CheckpointFormatError::Kind::bad_header,
                     "tensor '" + name + "' shape holds a negative dimension");
            }
            tensor.shape.push_back(d);
        }
        const json& offs = record["data_offsets"];
        const auto is_integer = [](const json& node) {
            return node.is_number_integer() || node.is_number_unsigned();
        };
        if (!offs.is_array() || offs.size() != 2 || !is_integer(offs[0]) ||
            !is_integer(offs[1])) {
            fail(CheckpointFormatError::Kind::bad_header,
                 "tensor '" + name + "' data_offsets must be two unsigned integers");
        }
        const std::int64_t begin_s = offs[0].get<std::int64_t>();
        const std::int64_t end_s = offs[1].get<std::int64_t>();
        if (begin_s < 0 || end_s < begin_s) {
            fail(CheckpointFormatError::Kind::bad_offsets,
                 "tensor '" + name + "' has negative or descending data_offsets");
        }
        const std::uint64_t begin = std::uint64_t(begin_s);
        const std::uint64_t end = std::uint64_t(end_s);
        if (begin < expected_begin) {
            fail(CheckpointFormatError::Kind::bad_offsets,
                 "tensor '" + name + "' overlaps the previous tensor (begin " +
                     std::to_string(begin) + " < " + std::to_string(expected_begin) + ")");
        }
        if (begin > expected_begin) {
            fail(CheckpointFormatError::Kind::bad_offsets,
                 "gap before tensor '" + name + "' (begin " + std::to_string(begin) +
                     " > " + std::to_string(expected_begin) + ")");
        }
        if (end - begin != std::uint64_t(tensor.numel()) * 4) {
            fail(CheckpointFormatError::Kind::bad_offsets,
                 "tensor '" + name + "' spans " + std::to_string(end - begin) +
                     " bytes but its shape implies " + std::to_string(tensor.numel() * 4));
        }
        if (end > payload_size) {
            fail(CheckpointFormatError::Kind::truncated_payload,
                 "tensor '" + name + "' extends past the end of the payload");
        }
        tensor.data.resize(static_cast<std::size_t>(tensor.numel()));
        for (std::size_t i = 0; i < tensor.data.size(); ++i) {
            tensor.data[i] = read_f32_le(payload + begin + 4 * i);
            if (!std::isfinite(tensor.data[i])) {
                fail(CheckpointFormatError::Kind::non_finite,
                     "tensor '" + name + "' holds a non-finite value at index " +
                         std::to_string(i));
            }
        }
        expected_begin = end;
        map.insert(name, std::move(tensor));
    }
    if (expected_begin != payload_size) {
        fail(CheckpointFormatError::Kind::bad_offsets,
             "payload is not exactly tiled: offsets cover " +
                 std::to_string(expected_begin) + " of " + std::to_string(payload_size) +
                 " bytes");
    }
    return map;
}

ParsedMetadata read_metadata(const std::vector<std::uint8_t>& bytes) {
    std::uint64_t header_len = 0;
    for (int i = 0; i < 8; ++i) header_len |= std::uint64_t(bytes[i]) << (8 * i);
    const json header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
    ParsedMetadata out;
    for (const auto& [key, value] : header["__metadata__"].items()) {
        out.entries[key] = value.get<std::string>();
    }
    return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "' for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

}  // namespace

TensorMap parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
    return parse_container(bytes);
}

TensorMap read_checkpoint(const std::filesystem::path& path) {
    return parse_container(read_file(path));
}

std::string write_delta(const DeltaSet& deltas, const std::filesystem::path& path) {
    return write_bytes(
        serialize_with_metadata(deltas.tensors, {{"identity", deltas.tensors.identity()},
                                                 {"base_identity", deltas.base_id}}),
        path);
}

DeltaSet read_delta(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    TensorMap tensors = parse_container(bytes);
    const ParsedMetadata metadata = read_metadata(bytes);
    auto it = metadata.entries.find("base_identity");
    if (it == metadata.entries.end()) {
        fail(CheckpointFormatError::Kind::bad_header,
             "'" + path.string() + "' is not a delta file: missing base_identity metadata");
    }
    DeltaSet out;
    out.base_id = it->second;
    out.tensors = std::move(tensors);
    return out;
}

std::string manifest_timestamp() {
    std::time_t t = std::time(nullptr);
    if (const char* pinned = std::getenv("SOURCE_DATE_EPOCH")) {
        t = static_cast<std::time_t>(std::strtoll(pinned, nullptr, 10));
    }
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[80];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
    return buf;
}

namespace {

[[noreturn]] void schema_fail(const std::string& path, const std::string& reason) {
    throw ManifestSchemaError("manifest schema violation at " + path + ": " + reason);
}

void check_known_fields(const json& obj, const std::set<std::string>& allowed,
                        const std::string& path) {
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.contains(key)) schema_fail(path + "." + key, "unknown field");
    }
}

double require_finite_number(const json& node, const std::string& path) {
    if (!node.is_number()) schema_fail(path, "must be a number");
    const double v = node.get<double>();
    if (!std::isfinite(v)) schema_fail(path, "must be finite");
    return v;
}

std::string require_string(const json& node, const std::string& path) {
    if (!node.is_string()) schema_fail(path, "must be a string");
    return node.get<std::string>();
}

std::uint64_t require_u64(const json& node, const std::string& path) {
    if (!node.is_number_unsigned() && !(node.is_number_integer() && node.get<std::int64_t>() >= 0)) {
        schema_fail(path, "must be a non-negative integer");
    }
    return node.get<std::uint64_t>();
}

}  // namespace

std::string manifest_to_json(const MergeManifest& manifest) {
    const auto method = method_from_name(manifest.method);
    if (!method) throw ManifestSchemaError("manifest schema violation at $.method: unknown method '" +
                                           manifest.method + "'");
    if (manifest.sampling.has_value() != is_m3_method(*method)) {
        throw ManifestSchemaError(
            "manifest schema violation at $.sampling: sampling block must be present "
            "exactly for m3 methods");
    }

    json doc = json::object();
    doc["format"] = kManifestFormat;
    doc["method"] = manifest.method;
    doc["toolkit_version"] = manifest.toolkit_version;
    doc["created_at"] = manifest.created_at;
    json inputs = json::array();
    for (const auto& input : manifest.inputs) {
        json node = json::object();
        node["role"] = input.role;
        node["identity"] = input.identity;
        node["digest"] = input.digest;
        inputs.push_back(node);
    }
    doc["inputs"] = inputs;
    if (manifest.scaling_term) doc["scaling_term"] = *manifest.scaling_term;
    if (manifest.retain_ratio) doc["retain_ratio"] = *manifest.retain_ratio;
    if (manifest.dare) {
        json node = json::object();
        node["drop_rate"] = manifest.dare->drop_rate;
        node["seed"] = manifest.dare->seed;
        doc["dare"] = node;
    }
    if (manifest.sampling) {
        json node = json::object();
        if (manifest.sampling->alpha) {
            node["alpha"] = *manifest.sampling->alpha;
        } else {
            node["alpha"] = nullptr;
        }
        if (manifest.sampling->seed) {
            node["seed"] = *manifest.sampling->seed;
        } else {
            node["seed"] = nullptr;
        }
        node["lambda_m"] = manifest.sampling->lambda_m;
        doc["sampling"] = node;
    }
    if (manifest.output) {
        json node = json::object();
        node["identity"] = manifest.output->identity;
        node["digest"] = manifest.output->digest;
        doc["output"] = node;
    }
    return doc.dump(2) + "\n";
}

MergeManifest manifest_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ManifestSchemaError(std::string("manifest is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) schema_fail("$", "must be an object");
    check_known_fields(doc,
                       {"format", "method", "toolkit_version", "created_at", "inputs",
                        "scaling_term", "retain_ratio", "dare", "sampling", "output"},
                       "$");
    for (const char* required : {"format", "method", "toolkit_version", "created_at", "inputs"}) {
        if (!doc.contains(required)) schema_fail(std::string("$.") + required, "missing field");
    }
    if (require_string(doc["format"], "$.format") != kManifestFormat) {
        schema_fail("$.format", "unsupported manifest format");
    }

    MergeManifest manifest;
    manifest.method = require_string(doc["method"], "$.method");
    const auto method = method_from_name(manifest.method);
    if (!method) schema_fail("$.method", "unknown method '" + manifest.method + "'");
    manifest.toolkit_version = require_string(doc["toolkit_version"], "$.toolkit_version");
    manifest.created_at = require_string(doc["created_at"], "$.created_at");

    if (!doc["inputs"].is_array()) schema_fail("$.inputs", "must be an array");
    std::size_t index = 0;
    for (const json& node : doc["inputs"]) {
        const std::string path = "$.inputs[" + std::to_string(index++) + "]";
        if (!node.is_object()) schema_fail(path, "must be an object");
        check_known_fields(node, {"role", "identity", "digest"}, path);
        ManifestInput input;
        input.role = require_string(node.value("role", json()), path + ".role");
        if (input.role != "base" && input.role != "model") {
            schema_fail(path + ".role", "must be 'base' or 'model'");
        }
        input.identity = require_string(node.value("identity", json()), path + ".identity");
        input.digest = require_string(node.value("digest", json()), path + ".digest");
        manifest.inputs.push_back(std::move(input));
    }

    if (doc.contains("scaling_term")) {
        manifest.scaling_term = require_finite_number(doc["scaling_term"], "$.scaling_term");
    }
    if (doc.contains("retain_ratio")) {
        manifest.retain_ratio = require_finite_number(doc["retain_ratio"], "$.retain_ratio");
        if (!(*manifest.retain_ratio > 0.0 && *manifest.retain_ratio <= 1.0)) {
            schema_fail("$.retain_ratio", "must lie in (0,1]");
        }
    }
    if (doc.contains("dare")) {
        const json& node = doc["dare"];
        if (!node.is_object()) schema_fail("$.dare", "must be an object");
        check_known_fields(node, {"drop_rate", "seed"}, "$.dare");
        if (!node.contains("drop_rate") || !node.contains("seed")) {
            schema_fail("$.dare", "must carry drop_rate and seed");
        }
        SparsifyConfig cfg;
        cfg.drop_rate = require_finite_number(node["drop_rate"], "$.dare.drop_rate");
        if (!(cfg.drop_rate >= 0.0 && cfg.drop_rate < 1.0)) {
            schema_fail("$.dare.drop_rate", "must lie in [0,1)");
        }
        cfg.seed = require_u64(node["seed"], "$.dare.seed");
        manifest.dare = cfg;
    }
    if (doc.contains("sampling")) {
        const json& node = doc["sampling"];
        if (!node.is_object()) schema_fail("$.sampling", "must be an object");
        check_known_fields(node, {"alpha", "seed", "lambda_m"}, "$.sampling");
        if (!node.contains("alpha") || !node.contains("seed") || !node.contains("lambda_m")) {
            schema_fail("$.sampling", "must carry alpha, seed, lambda_m");
        }
        ManifestSampling sampling;
        if (!node["alpha"].is_null()) {
            sampling.alpha = require_finite_number(node["alpha"], "$.sampling.alpha");
            if (!(*sampling.alpha > 0.0)) schema_fail("$.sampling.alpha", "must be positive");
        }
        if (!node["seed"].is_null()) {
            sampling.seed = require_u64(node["seed"], "$.sampling.seed");
        }
        sampling.lambda_m = require_finite_number(node["lambda_m"], "$.sampling.lambda_m");
        if (!(sampling.lambda_m > 0.0 && sampling.lambda_m < 1.0)) {
            schema_fail("$.sampling.lambda_m", "must lie strictly inside (0,1)");
        }
        manifest.sampling = sampling;
    }
    if (manifest.sampling.has_value() != is_m3_method(*method)) {
        schema_fail("$.sampling", "sampling block must be present exactly for m3 methods");
    }
    if (doc.contains("output")) {
        const json& node = doc["output"];
        if (!node.is_object()) schema_fail("$.output", "must be an object");
        check_known_fields(node, {"identity", "digest"}, "$.output");
        ManifestOutput output;
        output.identity = require_string(node.value("identity", json()), "$.output.identity");
        output.digest = require_string(node.value("digest", json()), "$.output.digest");
        manifest.output = output;
    }
    return manifest;
}

void write_manifest(const MergeManifest& manifest, const std::filesystem::path& path) {
    const std::string text = manifest_to_json(manifest);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw Error("write failed for '" + path.string() + "'");
}

MergeManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "' for reading");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return manifest_from_json(text);
}

}  // namespace mixmerge
