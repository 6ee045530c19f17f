#pragma once

#include "entity_refine/backend.hpp"
#include "entity_refine/formats.hpp"
#include "entity_refine/image.hpp"

#include <memory>
#include <string>
#include <vector>

namespace entity_refine {

/// Replays a precomputed directory:
///
///   image.png
///   meta.json           {"height", "width", "grids": [32, 64]}
///   masks_<n>.ndjson    one triple record per grid prompt
///   masks_extra.ndjson  optional, off-grid prompts captured while recording
///   features.bin        optional feature grid
///
/// A prompt is answered by the nearest recorded point within H/64 pixels
/// (ties: earlier file, then lower prompt id); farther prompts are misses.
class DirectoryProvider : public SegmenterProvider {
  public:
    /// Throws IoError / ValidationError on a missing or inconsistent directory.
    explicit DirectoryProvider(const std::string& directory);

    int height() const override { return height_; }
    int width() const override { return width_; }
    std::vector<std::optional<MaskTriple>> segment(std::span<const PointPrompt> prompts) override;
    std::optional<FeatureGrid> embed() override { return features_; }
    bool single_flight() const override { return false; }

    const std::vector<int>& grids() const { return grids_; }
    std::string image_path() const { return directory_ + "/image.png"; }
    double match_radius() const { return height_ / 64.0; }

  private:
    std::string directory_;
    int height_ = 0;
    int width_ = 0;
    std::vector<int> grids_;
    std::vector<TripleRecord> records_;
    std::optional<FeatureGrid> features_;
};

/// Pass-through provider that remembers every answered prompt so a run can be
/// exported as a precomputed directory and replayed bit-for-bit.
class RecordingProvider : public SegmenterProvider {
  public:
    explicit RecordingProvider(SegmenterProvider& inner) : inner_(inner) {}

    int height() const override { return inner_.height(); }
    int width() const override { return inner_.width(); }
    std::vector<std::optional<MaskTriple>> segment(std::span<const PointPrompt> prompts) override;
    std::optional<FeatureGrid> embed() override;
    bool single_flight() const override { return true; }

    /// Writes the directory layout. Prompts matching a grid point of `grids` go to
    /// masks_<n>.ndjson (every grid point must have been answered); the rest go to
    /// masks_extra.ndjson.
    void write_directory(const std::string& directory, const Image& image, const std::vector<int>& grids) const;

  private:
    SegmenterProvider& inner_;
    std::vector<TripleRecord> answered_;
    std::optional<FeatureGrid> features_;
    bool embedded_ = false;
};

/// Records every grid of `grids` from `provider` (plus features) into `directory`.
void export_directory(SegmenterProvider& provider, const Image& image, const std::vector<int>& grids,
                      const std::string& directory);

/// Child process speaking the newline-delimited JSON worker protocol on its
/// standard streams:
///
///   {"id", "op": "init", "image_path"}  -> {"id", "ok": true, "height", "width"}
///   {"id", "op": "segment", "points"}   -> {"id", "results": [triple records]}
///   {"id", "op": "embed"}               -> {"id", "features": {"c", "h", "w", "data_b64"}}
///   any failure                         -> {"id", "error": "..."}
///
/// One request in flight; every response must echo its request id.
class ExternalProcessProvider : public SegmenterProvider {
  public:
    /// Starts `command` through /bin/sh and sends init. Throws BackendError.
    ExternalProcessProvider(const std::string& command, const std::string& image_path);
    ~ExternalProcessProvider() override;

    ExternalProcessProvider(const ExternalProcessProvider&) = delete;
    ExternalProcessProvider& operator=(const ExternalProcessProvider&) = delete;

    int height() const override { return height_; }
    int width() const override { return width_; }
    std::vector<std::optional<MaskTriple>> segment(std::span<const PointPrompt> prompts) override;
    std::optional<FeatureGrid> embed() override;
    bool single_flight() const override { return true; }

  private:
    json request(json message);

    struct Process;
    std::unique_ptr<Process> process_;
    std::int64_t next_id_ = 1;
    int height_ = 0;
    int width_ = 0;
};

} // namespace entity_refine
