#pragma once

#include "entity_refine/emr.hpp"
#include "entity_refine/mmg.hpp"
#include "entity_refine/usr.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace entity_refine {

struct PipelineConfig {
    MmgParams mmg;
    EmrParams emr;
    UsrParams usr;
    // oracle | dir:<path> | exec:<command>
    std::string provider = "oracle";
    std::uint64_t seed = 0;
};

/// Names accepted by set_config_value, in serialization order.
const std::vector<std::string>& config_keys();

/// Throws ValidationError for unknown keys and unparseable values.
void set_config_value(PipelineConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const PipelineConfig& config, const std::string& key);

/// Ratios in [0,1], grids >= 1, positive superpixel scale, known provider kind.
void validate(const PipelineConfig& config);

/// Flat `key = value` lines; `#` starts a comment. Applies on top of `base`.
PipelineConfig parse_config(const std::string& text, PipelineConfig base = {});
std::string serialize_config(const PipelineConfig& config);
PipelineConfig read_config_file(const std::string& path, PipelineConfig base = {});

} // namespace entity_refine
