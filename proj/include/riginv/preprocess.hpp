#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "riginv/image.hpp"

namespace riginv {

inline constexpr double kImagenetMean[3] = {0.485, 0.456, 0.406};
inline constexpr double kImagenetStd[3] = {0.229, 0.224, 0.225};

namespace detail {

// Bilinear, half-pixel centers.
inline ImageRGB8 resize_bilinear(const ImageRGB8& img, int out_w, int out_h) {
    if (out_w == img.width && out_h == img.height) return img;
    ImageRGB8 out(out_w, out_h);
    const double sx = static_cast<double>(img.width) / out_w;
    const double sy = static_cast<double>(img.height) / out_h;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double v =
                    (1 - wy) * ((1 - wx) * img.pixel(x0, y0)[c] + wx * img.pixel(x1, y0)[c]) +
                    wy * ((1 - wx) * img.pixel(x0, y1)[c] + wx * img.pixel(x1, y1)[c]);
                out.pixel(x, y)[c] = static_cast<std::uint8_t>(
                    std::clamp(std::floor(v + 0.5), 0.0, 255.0));
            }
        }
    }
    return out;
}

}  // namespace detail

// Resize shorter side to `target` (bilinear), center-crop to target x target,
// scale to [0,1], then normalize per channel with ImageNet statistics.
// Output layout is C x H x W, channel-major.
inline std::vector<double> preprocess_image(const ImageRGB8& img, int target) {
    img.validate();
    require(img.width > 0 && img.height > 0, "preprocess_image: empty image");
    require(target > 0, "preprocess_image: non-positive target");

    ImageRGB8 resized = img;
    if (img.width != target || img.height != target) {
        int new_w, new_h;
        if (img.width <= img.height) {
            new_w = target;
            new_h = static_cast<int>(std::lround(static_cast<double>(img.height) * target / img.width));
        } else {
            new_h = target;
            new_w = static_cast<int>(std::lround(static_cast<double>(img.width) * target / img.height));
        }
        resized = detail::resize_bilinear(img, new_w, new_h);
    }

    const int off_x = (resized.width - target) / 2;
    const int off_y = (resized.height - target) / 2;
    std::vector<double> out(static_cast<std::size_t>(3) * target * target);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < target; ++y)
            for (int x = 0; x < target; ++x) {
                const double v = resized.pixel(off_x + x, off_y + y)[c] / 255.0;
                out[(static_cast<std::size_t>(c) * target + y) * target + x] =
                    (v - kImagenetMean[c]) / kImagenetStd[c];
            }
    return out;
}

}  // namespace riginv
