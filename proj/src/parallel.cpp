#include "entity_refine/parallel.hpp"

#include <cstdlib>
#include <string>

namespace entity_refine {

int worker_count() {
    if (const char* env = std::getenv("ENTITY_REFINE_THREADS"); env != nullptr && *env != '\0') {
        try {
            const int cap = std::stoi(env);
            if (cap >= 1) {
                return cap;
            }
        } catch (const std::exception&) {
            // Malformed values fall through to the hardware default.
        }
    }
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

} // namespace entity_refine
