#pragma once

// Shared generators and dense-bitmap reference implementations for the tests.

#include "entity_refine/mask.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace test_support {

using entity_refine::Bitmap;
using entity_refine::BinaryMask;

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline double uniform_real(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Mixture of noise, boxes, empty and full rasters so that every run pattern shows up.
inline Bitmap random_bitmap(std::mt19937_64& rng, int h, int w) {
    Bitmap b(h, w);
    switch (uniform_int(rng, 0, 5)) {
    case 0:
        break;
    case 1:
        b.bits.assign(b.bits.size(), 1);
        break;
    case 2: {
        const double p = uniform_real(rng, 0.05, 0.95);
        for (auto& v : b.bits) {
            v = uniform_real(rng, 0.0, 1.0) < p ? 1 : 0;
        }
        break;
    }
    default: {
        const int boxes = uniform_int(rng, 1, 4);
        for (int k = 0; k < boxes; ++k) {
            const int r0 = uniform_int(rng, 0, h - 1);
            const int c0 = uniform_int(rng, 0, w - 1);
            const int r1 = uniform_int(rng, r0, h - 1);
            const int c1 = uniform_int(rng, c0, w - 1);
            for (int r = r0; r <= r1; ++r) {
                for (int c = c0; c <= c1; ++c) {
                    b.set(r, c);
                }
            }
        }
    }
    }
    return b;
}

inline std::uint64_t dense_area(const Bitmap& b) {
    return static_cast<std::uint64_t>(std::count(b.bits.begin(), b.bits.end(), 1));
}

template <typename Op>
Bitmap dense_combine(const Bitmap& a, const Bitmap& b, Op op) {
    Bitmap out(a.height, a.width);
    for (std::size_t i = 0; i < out.bits.size(); ++i) {
        out.bits[i] = op(a.bits[i] != 0, b.bits[i] != 0) ? 1 : 0;
    }
    return out;
}

inline double dense_iou(const Bitmap& a, const Bitmap& b) {
    const auto inter = dense_area(dense_combine(a, b, [](bool x, bool y) { return x && y; }));
    const auto uni = dense_area(dense_combine(a, b, [](bool x, bool y) { return x || y; }));
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline BinaryMask box_mask(int h, int w, int r0, int c0, int r1, int c1) {
    Bitmap b(h, w);
    for (int r = r0; r <= r1; ++r) {
        for (int c = c0; c <= c1; ++c) {
            b.set(r, c);
        }
    }
    return entity_refine::encode(b);
}

inline BinaryMask pixels_mask(int h, int w, std::initializer_list<std::pair<int, int>> pixels) {
    Bitmap b(h, w);
    for (const auto& [r, c] : pixels) {
        b.set(r, c);
    }
    return entity_refine::encode(b);
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("entity_refine_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    std::string str() const { return path_.string(); }

  private:
    std::filesystem::path path_;
};

} // namespace test_support
