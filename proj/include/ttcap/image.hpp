#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ttcap/errors.hpp"

namespace ttcap {

// 8-bit RGB image, row-major, interleaved channels.
struct ImageInput {
    std::string id;
    int height = 0;
    int width = 0;
    std::vector<uint8_t> pixels;  // height * width * 3

    ImageInput() = default;
    ImageInput(std::string id_, int h, int w)
        : id(std::move(id_)), height(h), width(w), pixels(size_t(h) * w * 3, 0) {
        if (h < 1 || w < 1) throw ConfigError("ImageInput: dimensions must be >= 1");
    }

    uint8_t& at(int y, int x, int c) { return pixels[(size_t(y) * width + x) * 3 + c]; }
    uint8_t at(int y, int x, int c) const { return pixels[(size_t(y) * width + x) * 3 + c]; }
    size_t num_pixels() const { return size_t(height) * width; }
};

}  // namespace ttcap
