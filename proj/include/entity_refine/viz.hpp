#pragma once

#include "entity_refine/entity_map.hpp"
#include "entity_refine/image.hpp"
#include "entity_refine/superpixel.hpp"

#include <array>
#include <cstddef>

namespace entity_refine {

/// Color of mask `index`: hue advances by the golden-ratio conjugate per index.
std::array<float, 3> palette_color(std::size_t index);

/// Each mask, in order, blended at alpha 0.5 over the image, with its boundary
/// pixels (a 4-neighbour inside the image lies outside the mask) drawn opaque.
/// Throws DimensionError when the map and the image differ in size.
Image render_overlay(const Image& image, const EntityMap& map);

/// Label raster as RGB: pixel value index + 1 as a 24-bit big-endian number
/// spread over (r, g, b), 0 for uncovered pixels. Later masks win on overlap.
Image render_labels(const EntityMap& map);

/// Superpixels drawn like an overlay, one palette color per label.
Image render_superpixels(const Image& image, const SuperpixelMap& superpixels);

} // namespace entity_refine
