#pragma once

#include <vector>

namespace chroma {

// 8-bit interleaved image, row-major; channels is 1 (grey) or 3 (RGB).
struct ImageU8 {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<unsigned char> pixels;

    ImageU8() = default;
    ImageU8(int h, int w, int c) : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c) {}

    unsigned char at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    unsigned char& at(int y, int x, int c) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

}  // namespace chroma
