#pragma once

// Any-resolution tiling: pick a content-tile grid for an image, resize to the
// grid, and cut tiles. A global thumbnail tile is always appended, so an
// m-content-tile plan costs n_per_tile * (m + 1) tokens.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tvlm/image.hpp"

namespace tvlm {

struct EncoderConfig {
    std::int64_t tile_side = 32;   // base encoder input, pixels
    std::int64_t p_h = 8;          // patch height, pixels
    std::int64_t p_w = 8;          // patch width, pixels
    std::int64_t channels = 1;
    std::int64_t d = 64;           // embedding width
    std::int64_t depth = 2;
    std::int64_t heads = 4;
    std::int64_t max_content_tiles = 12;

    std::int64_t n_per_tile() const { return (tile_side / p_h) * (tile_side / p_w); }
    void validate() const;
    std::string describe() const;
};

struct TilePlan {
    std::int64_t grid_w = 1;        // content tiles across
    std::int64_t grid_h = 1;        // content tiles down
    std::int64_t resize_h = 0;      // grid_h * tile_side
    std::int64_t resize_w = 0;      // grid_w * tile_side
    bool includes_global = true;
    std::int64_t n_per_tile = 0;
    std::int64_t m_content() const { return grid_w * grid_h; }
    std::int64_t tile_count() const { return m_content() + (includes_global ? 1 : 0); }
    std::int64_t total_tokens() const { return n_per_tile * tile_count(); }
};

// n = (h / p_h) * (w / p_w); h, w must divide evenly (resizing to a multiple
// is plan_tiles' job).
std::int64_t count_tokens(std::int64_t h, std::int64_t w, std::int64_t p_h, std::int64_t p_w);

// Grid choice over all (gw, gh) with gw*gh <= budget, where the budget is
// max_content_tiles further capped by token_cap: (1) best aspect-ratio match
// to the image, compared with exact integer arithmetic; (2) largest grid area
// that does not exceed the source area (no upscaling), else the least
// upscaling; (3) fewer tiles; (4) wider grid.
TilePlan plan_tiles(std::int64_t img_h, std::int64_t img_w, const EncoderConfig& cfg,
                    std::optional<std::int64_t> token_cap = std::nullopt);

inline TilePlan plan_tiles(const ImageSpec& img, const EncoderConfig& cfg,
                           std::optional<std::int64_t> token_cap = std::nullopt) {
    return plan_tiles(img.h, img.w, cfg, token_cap);
}

// Resizes to the plan's grid, cuts content tiles row-major, appends the
// global thumbnail (whole image resized to one tile).
std::vector<ImageSpec> cut_tiles(const ImageSpec& img, const TilePlan& plan, const EncoderConfig& cfg);

}  // namespace tvlm
