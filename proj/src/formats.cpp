#include "entity_refine/formats.hpp"

#include "entity_refine/error.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace entity_refine {

namespace {

template <typename T>
T require(const json& record, const char* key) {
    if (!record.is_object() || !record.contains(key)) {
        throw ValidationError(std::string("record is missing '") + key + "'");
    }
    try {
        return record.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("field '") + key + "': " + e.what());
    }
}

json rgb_to_json(Rgb8 c) { return json::array({c.r, c.g, c.b}); }

Rgb8 rgb_from_json(const json& value) {
    if (!value.is_array() || value.size() != 3) {
        throw ValidationError("color must be [r, g, b]");
    }
    return {value[0].get<std::uint8_t>(), value[1].get<std::uint8_t>(), value[2].get<std::uint8_t>()};
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t offset) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(in[offset + static_cast<std::size_t>(i)]) << (8 * i);
    }
    return v;
}

} // namespace

json rle_to_json(const BinaryMask& mask) {
    return json{{"size", json::array({mask.height(), mask.width()})}, {"counts", mask.runs()}};
}

BinaryMask rle_from_json(const json& record) {
    const auto size = require<std::vector<int>>(record, "size");
    if (size.size() != 2) {
        throw ValidationError("RLE size must be [height, width]");
    }
    const auto counts = require<std::vector<std::int64_t>>(record, "counts");
    std::vector<std::uint32_t> runs;
    runs.reserve(counts.size());
    for (const auto c : counts) {
        if (c < 0 || c > static_cast<std::int64_t>(UINT32_MAX)) {
            throw CorruptMaskError("RLE count out of range: " + std::to_string(c));
        }
        runs.push_back(static_cast<std::uint32_t>(c));
    }
    return BinaryMask(size[0], size[1], std::move(runs));
}

std::string serialize_rle(const BinaryMask& mask) { return rle_to_json(mask).dump(); }

BinaryMask parse_rle(const std::string& text) {
    try {
        return rle_from_json(json::parse(text));
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("malformed RLE record: ") + e.what());
    }
}

json triple_to_json(const MaskTriple& triple, const PointPrompt& point) {
    json levels = json::array();
    for (const ScoredMask* m : {&triple.object, &triple.part, &triple.subpart}) {
        levels.push_back({{"level", level_name(m->level)}, {"rle", rle_to_json(m->mask)}, {"score", m->score}});
    }
    return json{{"prompt_id", triple.prompt_id}, {"point", json::array({point.row, point.col})}, {"levels", levels}};
}

TripleRecord triple_from_json(const json& record, int height, int width) {
    TripleRecord out;
    out.triple.prompt_id = require<int>(record, "prompt_id");
    const auto point = require<std::vector<double>>(record, "point");
    if (point.size() != 2) {
        throw ValidationError("point must be [row, col]");
    }
    out.point = {point[0], point[1], out.triple.prompt_id};
    const BinaryMask none = BinaryMask::empty(height, width);
    out.triple.object = {none, 0.0, Level::object, out.triple.prompt_id};
    out.triple.part = {none, 0.0, Level::part, out.triple.prompt_id};
    out.triple.subpart = {none, 0.0, Level::subpart, out.triple.prompt_id};
    const json levels = require<json>(record, "levels");
    if (!levels.is_array()) {
        throw ValidationError("levels must be an array");
    }
    for (const auto& entry : levels) {
        const Level level = parse_level(require<std::string>(entry, "level"));
        ScoredMask mask{rle_from_json(require<json>(entry, "rle")), require<double>(entry, "score"), level,
                        out.triple.prompt_id};
        if (mask.mask.height() != height || mask.mask.width() != width) {
            throw DimensionError("triple mask size does not match the image");
        }
        validate(mask);
        switch (level) {
        case Level::object:
            out.triple.object = std::move(mask);
            break;
        case Level::part:
            out.triple.part = std::move(mask);
            break;
        case Level::subpart:
            out.triple.subpart = std::move(mask);
            break;
        case Level::best:
            throw ValidationError("triples carry object/part/subpart levels only");
        }
    }
    return out;
}

std::string entity_record_line(const ImageRecord& record, bool with_scores) {
    json masks = json::array();
    for (const auto& m : record.map.masks) {
        json entry{{"rle", rle_to_json(m.mask)}};
        if (with_scores) {
            entry["score"] = m.score;
        }
        masks.push_back(std::move(entry));
    }
    return json{{"image_id", record.image_id},
                {"height", record.map.height},
                {"width", record.map.width},
                {"masks", std::move(masks)}}
        .dump();
}

ImageRecord parse_entity_record(const std::string& line) {
    json record;
    try {
        record = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("malformed entity record: ") + e.what());
    }
    ImageRecord out;
    out.image_id = require<std::string>(record, "image_id");
    out.map.height = require<int>(record, "height");
    out.map.width = require<int>(record, "width");
    for (const auto& entry : require<json>(record, "masks")) {
        ScoredMask mask{rle_from_json(require<json>(entry, "rle")), 1.0, Level::object, std::nullopt};
        if (entry.contains("score")) {
            mask.score = require<double>(entry, "score");
        }
        if (mask.mask.height() != out.map.height || mask.mask.width() != out.map.width) {
            throw DimensionError("mask size differs from its image record");
        }
        validate(mask);
        out.map.masks.push_back(std::move(mask));
    }
    return out;
}

void write_entity_file(const std::string& path, const std::vector<ImageRecord>& records, bool with_scores) {
    std::string text;
    for (const auto& r : records) {
        text += entity_record_line(r, with_scores);
        text += '\n';
    }
    write_text_file(path, text);
}

std::vector<ImageRecord> read_entity_file(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::vector<ImageRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        out.push_back(parse_entity_record(line));
    }
    return out;
}

json scene_to_json(const SceneSpec& scene) {
    json entities = json::array();
    for (const auto& e : scene.entities) {
        entities.push_back({{"shape", shape_name(e.shape)},
                            {"row", e.row},
                            {"col", e.col},
                            {"height", e.height},
                            {"width", e.width},
                            {"color", rgb_to_json(e.color)},
                            {"parts", e.parts}});
    }
    return json{{"height", scene.height},
                {"width", scene.width},
                {"background", rgb_to_json(scene.background)},
                {"entities", std::move(entities)},
                {"noise",
                 {{"boundary_jitter_px", scene.noise.boundary_jitter_px},
                  {"score_noise_std", scene.noise.score_noise_std},
                  {"dropout_prob", scene.noise.dropout_prob},
                  {"seed", scene.noise.seed}}}};
}

SceneSpec scene_from_json(const json& record) {
    SceneSpec scene;
    scene.height = require<int>(record, "height");
    scene.width = require<int>(record, "width");
    if (record.contains("background")) {
        scene.background = rgb_from_json(record.at("background"));
    }
    for (const auto& e : require<json>(record, "entities")) {
        EntitySpec entity;
        entity.shape = parse_shape(require<std::string>(e, "shape"));
        entity.row = require<int>(e, "row");
        entity.col = require<int>(e, "col");
        entity.height = require<int>(e, "height");
        entity.width = require<int>(e, "width");
        entity.color = rgb_from_json(require<json>(e, "color"));
        entity.parts = e.contains("parts") ? require<int>(e, "parts") : 1;
        scene.entities.push_back(entity);
    }
    if (record.contains("noise")) {
        const json& n = record.at("noise");
        scene.noise.boundary_jitter_px = n.value("boundary_jitter_px", 0);
        scene.noise.score_noise_std = n.value("score_noise_std", 0.0);
        scene.noise.dropout_prob = n.value("dropout_prob", 0.0);
        scene.noise.seed = n.value("seed", std::uint64_t{0});
    }
    validate(scene);
    return scene;
}

SceneSpec read_scene_file(const std::string& path) {
    try {
        return scene_from_json(json::parse(read_text_file(path)));
    } catch (const json::parse_error& e) {
        throw ValidationError("malformed scene file '" + path + "': " + e.what());
    }
}

void write_scene_file(const std::string& path, const SceneSpec& scene) {
    write_text_file(path, scene_to_json(scene).dump(2) + "\n");
}

std::vector<std::uint8_t> encode_features(const FeatureGrid& grid) {
    grid.validate();
    std::vector<std::uint8_t> out;
    out.reserve(12 + grid.data.size() * 4);
    put_u32(out, static_cast<std::uint32_t>(grid.channels));
    put_u32(out, static_cast<std::uint32_t>(grid.height));
    put_u32(out, static_cast<std::uint32_t>(grid.width));
    for (const float v : grid.data) {
        put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

FeatureGrid decode_features(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 12) {
        throw ValidationError("feature payload shorter than its header");
    }
    FeatureGrid grid;
    grid.channels = static_cast<int>(get_u32(bytes, 0));
    grid.height = static_cast<int>(get_u32(bytes, 4));
    grid.width = static_cast<int>(get_u32(bytes, 8));
    const std::size_t count = static_cast<std::size_t>(grid.channels) * grid.height * grid.width;
    if (bytes.size() != 12 + count * 4) {
        throw ValidationError("feature payload length does not match its header");
    }
    grid.data.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        grid.data[i] = std::bit_cast<float>(get_u32(bytes, 12 + 4 * i));
    }
    grid.validate();
    return grid;
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    if (text.size() % 4 != 0) {
        throw ValidationError("base64 length must be a multiple of 4");
    }
    std::vector<std::uint8_t> out(3 * (text.size() / 4));
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                  static_cast<int>(text.size()));
    if (n < 0) {
        throw ValidationError("malformed base64 payload");
    }
    // EVP_DecodeBlock keeps the bytes produced by '=' padding.
    std::size_t padding = 0;
    for (auto it = text.rbegin(); it != text.rend() && *it == '=' && padding < 2; ++it) {
        ++padding;
    }
    out.resize(static_cast<std::size_t>(n) - padding);
    return out;
}

std::vector<std::uint8_t> read_binary_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path + "'");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_binary_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("failed writing '" + path + "'");
    }
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path + "'");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    out << text;
    if (!out) {
        throw IoError("failed writing '" + path + "'");
    }
}

} // namespace entity_refine
