#pragma once

#include <cstdint>
#include <vector>

#include "riginv/error.hpp"

namespace riginv {

// Row-major 8-bit RGB.
struct ImageRGB8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    ImageRGB8() = default;
    ImageRGB8(int w, int h, std::uint8_t fill_r = 0, std::uint8_t fill_g = 0,
              std::uint8_t fill_b = 0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3) {
        require(w > 0 && h > 0, "ImageRGB8: non-positive size");
        for (std::size_t i = 0; i < data.size(); i += 3) {
            data[i] = fill_r;
            data[i + 1] = fill_g;
            data[i + 2] = fill_b;
        }
    }

    std::uint8_t* pixel(int x, int y) {
        return data.data() + (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                              static_cast<std::size_t>(x)) * 3;
    }
    const std::uint8_t* pixel(int x, int y) const {
        return data.data() + (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                              static_cast<std::size_t>(x)) * 3;
    }

    void validate() const {
        require(data.size() ==
                    static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3,
                "ImageRGB8: data length mismatch");
    }
};

}  // namespace riginv
