#pragma once

// Grayscale/RGB raster with values in [0,1], plus NetPBM (P5/P6) I/O,
// bilinear resizing and patch extraction.

#include <cstdint>
#include <string>
#include <vector>

namespace tvlm {

struct ImageSpec {
    std::int64_t h = 0;
    std::int64_t w = 0;
    std::int64_t c = 1;  // 1 (grayscale) or 3 (RGB)
    std::vector<float> pixels;  // row-major (y, x, channel)

    float at(std::int64_t y, std::int64_t x, std::int64_t ch = 0) const {
        return pixels[static_cast<std::size_t>((y * w + x) * c + ch)];
    }
    float& at(std::int64_t y, std::int64_t x, std::int64_t ch = 0) {
        return pixels[static_cast<std::size_t>((y * w + x) * c + ch)];
    }

    static ImageSpec blank(std::int64_t h, std::int64_t w, std::int64_t c = 1, float fill = 1.0f);
    void validate() const;
};

// 8-bit NetPBM: P5 for c=1, P6 for c=3; byte values map linearly to [0,1].
ImageSpec read_pnm(const std::string& path);
void write_pnm(const ImageSpec& img, const std::string& path);

ImageSpec resize_bilinear(const ImageSpec& img, std::int64_t out_h, std::int64_t out_w);

// Splits a square tile into non-overlapping p_h x p_w patches, row-major
// top-left to bottom-right; each patch flattens in (row, column, channel)
// order. Returns n_patches rows of length p_h*p_w*c.
std::vector<std::vector<float>> patchify(const ImageSpec& tile, std::int64_t p_h, std::int64_t p_w);

// Inverse of patchify for a tile of the given size.
ImageSpec unpatchify(const std::vector<std::vector<float>>& patches, std::int64_t tile_h,
                     std::int64_t tile_w, std::int64_t p_h, std::int64_t p_w, std::int64_t c);

}  // namespace tvlm
