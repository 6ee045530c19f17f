#include "entity_refine/config.hpp"

#include "entity_refine/error.hpp"
#include "entity_refine/formats.hpp"

#include <charconv>
#include <functional>
#include <sstream>

namespace entity_refine {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) {
        return "";
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end || text.empty()) {
        throw ValidationError("invalid value '" + text + "' for " + key);
    }
    return value;
}

template <typename T>
std::string format_number(T value) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, ptr);
}

struct Field {
    std::function<void(PipelineConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const PipelineConfig&)> get;
};

template <typename T>
Field field(std::function<T&(PipelineConfig&)> ref) {
    return {[ref](PipelineConfig& c, const std::string& key, const std::string& v) { ref(c) = parse_number<T>(key, v); },
            [ref](const PipelineConfig& c) { return format_number(ref(const_cast<PipelineConfig&>(c))); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table = {
        {"min_confidence", field<double>([](PipelineConfig& c) -> double& { return c.mmg.min_confidence; })},
        {"theta_o", field<double>([](PipelineConfig& c) -> double& { return c.mmg.theta_o; })},
        {"gamma_o", field<double>([](PipelineConfig& c) -> double& { return c.mmg.gamma_o; })},
        {"n_t", field<double>([](PipelineConfig& c) -> double& { return c.mmg.n_t; })},
        {"grid_coarse", field<int>([](PipelineConfig& c) -> int& { return c.mmg.grid_coarse; })},
        {"grid_fine", field<int>([](PipelineConfig& c) -> int& { return c.mmg.grid_fine; })},
        {"sp_scale", field<double>([](PipelineConfig& c) -> double& { return c.mmg.superpixels.scale; })},
        {"sp_sigma", field<double>([](PipelineConfig& c) -> double& { return c.mmg.superpixels.sigma; })},
        {"sp_min_size", field<int>([](PipelineConfig& c) -> int& { return c.mmg.superpixels.min_size; })},
        {"delta", field<double>([](PipelineConfig& c) -> double& { return c.emr.delta; })},
        {"tau", field<double>([](PipelineConfig& c) -> double& { return c.emr.tau; })},
        {"top_k", field<int>([](PipelineConfig& c) -> int& { return c.emr.top_k; })},
        {"merge_threshold", field<double>([](PipelineConfig& c) -> double& { return c.emr.merge_threshold; })},
        {"containment_gamma", field<double>([](PipelineConfig& c) -> double& { return c.emr.containment_gamma; })},
        {"rho", field<double>([](PipelineConfig& c) -> double& { return c.usr.rho; })},
        {"coverage_fraction", field<double>([](PipelineConfig& c) -> double& { return c.usr.coverage_fraction; })},
        {"containment_frac", field<double>([](PipelineConfig& c) -> double& { return c.usr.containment_frac; })},
        {"min_region_px", field<int>([](PipelineConfig& c) -> int& { return c.usr.min_region_px; })},
        {"min_gain_px", field<int>([](PipelineConfig& c) -> int& { return c.usr.min_gain_px; })},
        {"provider",
         {[](PipelineConfig& c, const std::string&, const std::string& v) { c.provider = v; },
          [](const PipelineConfig& c) { return c.provider; }}},
        {"seed", field<std::uint64_t>([](PipelineConfig& c) -> std::uint64_t& { return c.seed; })},
    };
    return table;
}

const Field& lookup(const std::string& key) {
    for (const auto& [name, f] : fields()) {
        if (name == key) {
            return f;
        }
    }
    throw ValidationError("unknown config key '" + key + "'");
}

} // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [name, f] : fields()) {
            k.push_back(name);
        }
        return k;
    }();
    return keys;
}

void set_config_value(PipelineConfig& config, const std::string& key, const std::string& value) {
    lookup(key).set(config, key, trim(value));
}

std::string get_config_value(const PipelineConfig& config, const std::string& key) {
    return lookup(key).get(config);
}

void validate(const PipelineConfig& config) {
    const std::pair<const char*, double> ratios[] = {
        {"min_confidence", config.mmg.min_confidence},
        {"theta_o", config.mmg.theta_o},
        {"gamma_o", config.mmg.gamma_o},
        {"n_t", config.mmg.n_t},
        {"delta", config.emr.delta},
        {"tau", config.emr.tau},
        {"merge_threshold", config.emr.merge_threshold},
        {"containment_gamma", config.emr.containment_gamma},
        {"rho", config.usr.rho},
        {"coverage_fraction", config.usr.coverage_fraction},
        {"containment_frac", config.usr.containment_frac},
    };
    for (const auto& [name, v] : ratios) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw ValidationError(std::string(name) + " must lie in [0,1]");
        }
    }
    if (config.mmg.grid_coarse < 1 || config.mmg.grid_fine < 1) {
        throw ValidationError("grid sizes must be at least 1");
    }
    if (!(config.mmg.superpixels.scale > 0.0) || !(config.mmg.superpixels.sigma >= 0.0) ||
        config.mmg.superpixels.min_size < 0) {
        throw ValidationError("superpixel parameters out of range");
    }
    if (config.emr.top_k < 1) {
        throw ValidationError("top_k must be at least 1");
    }
    if (config.usr.min_region_px < 0 || config.usr.min_gain_px < 0) {
        throw ValidationError("pixel thresholds must be non-negative");
    }
    const std::string& p = config.provider;
    if (p != "oracle" && p.rfind("dir:", 0) != 0 && p.rfind("exec:", 0) != 0) {
        throw ValidationError("provider must be oracle, dir:<path> or exec:<command>");
    }
}

PipelineConfig parse_config(const std::string& text, PipelineConfig base) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        try {
            set_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const ValidationError& e) {
            throw ValidationError("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return base;
}

std::string serialize_config(const PipelineConfig& config) {
    std::string out;
    for (const auto& [name, f] : fields()) {
        out += name + " = " + f.get(config) + "\n";
    }
    return out;
}

PipelineConfig read_config_file(const std::string& path, PipelineConfig base) {
    return parse_config(read_text_file(path), std::move(base));
}

} // namespace entity_refine
