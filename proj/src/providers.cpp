#include "entity_refine/providers.hpp"

#include "entity_refine/error.hpp"

#include <boost/process.hpp>

#include <bit>
#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

namespace entity_refine {

namespace fs = std::filesystem;
namespace bp = boost::process;

namespace {

std::vector<TripleRecord> read_triples(const std::string& path, int height, int width) {
    std::vector<TripleRecord> out;
    std::istringstream in(read_text_file(path));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            out.push_back(triple_from_json(json::parse(line), height, width));
        } catch (const json::exception& e) {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

bool same_point(const PointPrompt& a, const PointPrompt& b) { return a.row == b.row && a.col == b.col; }

} // namespace

DirectoryProvider::DirectoryProvider(const std::string& directory) : directory_(directory) {
    const std::string meta_path = directory + "/meta.json";
    json meta;
    try {
        meta = json::parse(read_text_file(meta_path));
        height_ = meta.at("height").get<int>();
        width_ = meta.at("width").get<int>();
        grids_ = meta.at("grids").get<std::vector<int>>();
    } catch (const json::exception& e) {
        throw ValidationError("malformed '" + meta_path + "': " + e.what());
    }
    if (height_ <= 0 || width_ <= 0) {
        throw ValidationError("meta.json declares a degenerate image");
    }
    for (const int n : grids_) {
        auto grid = read_triples(directory + "/masks_" + std::to_string(n) + ".ndjson", height_, width_);
        if (grid.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(n)) {
            throw ValidationError("masks_" + std::to_string(n) + ".ndjson holds " + std::to_string(grid.size()) +
                                  " records, expected " + std::to_string(n * n));
        }
        records_.insert(records_.end(), std::make_move_iterator(grid.begin()), std::make_move_iterator(grid.end()));
    }
    if (fs::exists(directory + "/masks_extra.ndjson")) {
        auto extra = read_triples(directory + "/masks_extra.ndjson", height_, width_);
        records_.insert(records_.end(), std::make_move_iterator(extra.begin()), std::make_move_iterator(extra.end()));
    }
    if (fs::exists(directory + "/features.bin")) {
        features_ = decode_features(read_binary_file(directory + "/features.bin"));
    }
}

std::vector<std::optional<MaskTriple>> DirectoryProvider::segment(std::span<const PointPrompt> prompts) {
    const double radius = match_radius();
    std::vector<std::optional<MaskTriple>> out(prompts.size());
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        const TripleRecord* hit = nullptr;
        for (const auto& record : records_) {
            const double d = std::hypot(record.point.row - prompts[i].row, record.point.col - prompts[i].col);
            if (d < best) {
                best = d;
                hit = &record;
            }
        }
        if (hit != nullptr && best <= radius) {
            out[i] = hit->triple;
        }
    }
    return out;
}

std::vector<std::optional<MaskTriple>> RecordingProvider::segment(std::span<const PointPrompt> prompts) {
    auto results = inner_.segment(prompts);
    for (std::size_t i = 0; i < results.size() && i < prompts.size(); ++i) {
        if (!results[i]) {
            continue;
        }
        const bool known = std::any_of(answered_.begin(), answered_.end(),
                                       [&](const TripleRecord& r) { return same_point(r.point, prompts[i]); });
        if (!known) {
            answered_.push_back({prompts[i], *results[i]});
        }
    }
    return results;
}

std::optional<FeatureGrid> RecordingProvider::embed() {
    if (!embedded_) {
        features_ = inner_.embed();
        embedded_ = true;
    }
    return features_;
}

void RecordingProvider::write_directory(const std::string& directory, const Image& image,
                                        const std::vector<int>& grids) const {
    fs::create_directories(directory);
    write_png(directory + "/image.png", image);
    write_text_file(directory + "/meta.json",
                    json{{"height", height()}, {"width", width()}, {"grids", grids}}.dump() + "\n");
    std::vector<bool> used(answered_.size(), false);
    for (const int n : grids) {
        std::string text;
        for (const auto& p : grid_prompts(height(), width(), n)) {
            std::size_t found = answered_.size();
            for (std::size_t i = 0; i < answered_.size(); ++i) {
                if (same_point(answered_[i].point, p)) {
                    found = i;
                    break;
                }
            }
            if (found == answered_.size()) {
                throw ValidationError("grid " + std::to_string(n) + " prompt " + std::to_string(p.id) +
                                      " was never answered");
            }
            used[found] = true;
            MaskTriple triple = answered_[found].triple;
            triple.prompt_id = p.id;
            text += triple_to_json(triple, p).dump() + "\n";
        }
        write_text_file(directory + "/masks_" + std::to_string(n) + ".ndjson", text);
    }
    std::string extra;
    int extra_id = 0;
    for (std::size_t i = 0; i < answered_.size(); ++i) {
        if (used[i]) {
            continue;
        }
        MaskTriple triple = answered_[i].triple;
        triple.prompt_id = extra_id++;
        extra += triple_to_json(triple, answered_[i].point).dump() + "\n";
    }
    if (!extra.empty()) {
        write_text_file(directory + "/masks_extra.ndjson", extra);
    }
    if (features_) {
        write_binary_file(directory + "/features.bin", encode_features(*features_));
    }
}

void export_directory(SegmenterProvider& provider, const Image& image, const std::vector<int>& grids,
                      const std::string& directory) {
    RecordingProvider recorder(provider);
    for (const int n : grids) {
        const auto prompts = grid_prompts(provider.height(), provider.width(), n);
        (void)segment(recorder, prompts);
    }
    (void)recorder.embed();
    recorder.write_directory(directory, image, grids);
}

struct ExternalProcessProvider::Process {
    bp::opstream to_child;
    bp::ipstream from_child;
    bp::child child;

    explicit Process(const std::string& command)
        : child("/bin/sh", "-c", command, bp::std_in < to_child, bp::std_out > from_child) {}
};

ExternalProcessProvider::ExternalProcessProvider(const std::string& command, const std::string& image_path) {
    try {
        process_ = std::make_unique<Process>(command);
    } catch (const std::exception& e) {
        throw BackendError("cannot start worker '" + command + "': " + e.what());
    }
    const json reply = request({{"op", "init"}, {"image_path", image_path}});
    if (!reply.value("ok", false)) {
        throw BackendError("worker rejected init");
    }
    height_ = reply.value("height", 0);
    width_ = reply.value("width", 0);
    if (height_ <= 0 || width_ <= 0) {
        throw BackendError("worker reported a degenerate image size");
    }
}

ExternalProcessProvider::~ExternalProcessProvider() {
    if (!process_) {
        return;
    }
    try {
        process_->to_child.flush();
        process_->to_child.pipe().close();
        std::error_code ec;
        process_->child.wait(ec);
    } catch (...) {
        // Nothing useful to do during teardown.
    }
}

json ExternalProcessProvider::request(json message) {
    const std::int64_t id = next_id_++;
    message["id"] = id;
    process_->to_child << message.dump() << '\n';
    process_->to_child.flush();
    if (!process_->to_child) {
        throw BackendError("worker input closed");
    }
    std::string line;
    if (!std::getline(process_->from_child, line)) {
        throw BackendError("worker exited before answering request " + std::to_string(id));
    }
    json reply;
    try {
        reply = json::parse(line);
    } catch (const json::parse_error& e) {
        throw BackendError(std::string("unparseable worker reply: ") + e.what());
    }
    if (!reply.is_object() || !reply.contains("id") || reply.at("id") != id) {
        throw BackendError("worker reply id does not match request " + std::to_string(id));
    }
    if (reply.contains("error")) {
        throw BackendError("worker error: " + reply.at("error").dump());
    }
    return reply;
}

std::vector<std::optional<MaskTriple>> ExternalProcessProvider::segment(std::span<const PointPrompt> prompts) {
    json points = json::array();
    for (const auto& p : prompts) {
        points.push_back(json::array({p.row, p.col}));
    }
    std::optional<int> first_id;
    if (!prompts.empty()) {
        first_id = prompts.front().id;
    }
    json reply;
    try {
        reply = request({{"op", "segment"}, {"points", std::move(points)}});
    } catch (const BackendError& e) {
        throw BackendError(e.what(), first_id);
    }
    const json& results = reply.contains("results") ? reply.at("results") : json();
    if (!results.is_array() || results.size() != prompts.size()) {
        throw BackendError("worker returned a malformed result list", first_id);
    }
    std::vector<std::optional<MaskTriple>> out;
    out.reserve(prompts.size());
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        try {
            out.emplace_back(triple_from_json(results[i], height_, width_).triple);
        } catch (const Error& e) {
            throw BackendError(e.what(), prompts[i].id);
        }
    }
    return out;
}

std::optional<FeatureGrid> ExternalProcessProvider::embed() {
    json reply;
    try {
        reply = request({{"op", "embed"}});
    } catch (const BackendError& e) {
        // Workers without an encoder answer with an error record; treat it as absence.
        if (std::string(e.what()).find("worker error") != std::string::npos) {
            return std::nullopt;
        }
        throw;
    }
    try {
        const json& f = reply.at("features");
        FeatureGrid grid;
        grid.channels = f.at("c").get<int>();
        grid.height = f.at("h").get<int>();
        grid.width = f.at("w").get<int>();
        const auto bytes = base64_decode(f.at("data_b64").get<std::string>());
        if (bytes.size() != static_cast<std::size_t>(grid.channels) * grid.height * grid.width * 4) {
            throw ValidationError("feature payload length mismatch");
        }
        grid.data.resize(bytes.size() / 4);
        for (std::size_t i = 0; i < grid.data.size(); ++i) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) {
                bits |= static_cast<std::uint32_t>(bytes[4 * i + static_cast<std::size_t>(b)]) << (8 * b);
            }
            grid.data[i] = std::bit_cast<float>(bits);
        }
        grid.validate();
        return grid;
    } catch (const json::exception& e) {
        throw BackendError(std::string("malformed features reply: ") + e.what());
    } catch (const ValidationError& e) {
        throw BackendError(e.what());
    }
}

} // namespace entity_refine
