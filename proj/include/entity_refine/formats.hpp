#pragma once

#include "entity_refine/backend.hpp"
#include "entity_refine/entity_map.hpp"
#include "entity_refine/synthetic.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace entity_refine {

using json = nlohmann::json;

// RLE interchange record: {"size": [height, width], "counts": [runs...]}, runs in
// row-major order starting with a (possibly zero) background run.
json rle_to_json(const BinaryMask& mask);
/// Throws CorruptMaskError / DimensionError / ValidationError on malformed records.
BinaryMask rle_from_json(const json& record);

/// Compact single-line serialization; identical masks always give identical bytes.
std::string serialize_rle(const BinaryMask& mask);
BinaryMask parse_rle(const std::string& text);

// Per-prompt record shared by the precomputed directory and the worker protocol:
// {"prompt_id": int, "point": [row, col], "levels": [{"level", "rle", "score"}, ...]}
json triple_to_json(const MaskTriple& triple, const PointPrompt& point);
struct TripleRecord {
    PointPrompt point;
    MaskTriple triple;
};
/// Missing levels are filled with empty masks of score 0.
TripleRecord triple_from_json(const json& record, int height, int width);

// Prediction / ground-truth files: ndjson, one image per line,
// {"image_id", "height", "width", "masks": [{"rle", "score"?}]}.
struct ImageRecord {
    std::string image_id;
    EntityMap map;
};

std::string entity_record_line(const ImageRecord& record, bool with_scores);
ImageRecord parse_entity_record(const std::string& line);
/// Throws IoError when the file cannot be written.
void write_entity_file(const std::string& path, const std::vector<ImageRecord>& records, bool with_scores);
std::vector<ImageRecord> read_entity_file(const std::string& path);

json scene_to_json(const SceneSpec& scene);
SceneSpec scene_from_json(const json& record);
SceneSpec read_scene_file(const std::string& path);
void write_scene_file(const std::string& path, const SceneSpec& scene);

// features.bin: C, h, w as little-endian uint32, then C*h*w little-endian float32, channel-major.
std::vector<std::uint8_t> encode_features(const FeatureGrid& grid);
FeatureGrid decode_features(const std::vector<std::uint8_t>& bytes);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
/// Throws ValidationError on malformed input.
std::vector<std::uint8_t> base64_decode(const std::string& text);

std::vector<std::uint8_t> read_binary_file(const std::string& path);
void write_binary_file(const std::string& path, const std::vector<std::uint8_t>& bytes);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

} // namespace entity_refine
