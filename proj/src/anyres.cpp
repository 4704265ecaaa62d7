#include "tvlm/anyres.hpp"

#include <cstdlib>

#include "tvlm/error.hpp"

namespace tvlm {

void EncoderConfig::validate() const {
    if (tile_side < 1 || p_h < 1 || p_w < 1) throw ConfigError("encoder: sides must be >= 1");
    if (tile_side % p_h != 0 || tile_side % p_w != 0) {
        throw ConfigError("encoder: tile_side " + std::to_string(tile_side) +
                          " not divisible by patch " + std::to_string(p_h) + "x" + std::to_string(p_w));
    }
    if (max_content_tiles < 1) throw ConfigError("encoder: max_content_tiles must be >= 1");
    if (channels != 1 && channels != 3) throw ConfigError("encoder: channels must be 1 or 3");
    if (d < 1 || depth < 1 || heads < 1) throw ConfigError("encoder: d/depth/heads must be >= 1");
    if (d % heads != 0) throw ConfigError("encoder: d must be divisible by heads");
}

std::string EncoderConfig::describe() const {
    return "enc(tile=" + std::to_string(tile_side) + ",patch=" + std::to_string(p_h) + "x" +
           std::to_string(p_w) + ",c=" + std::to_string(channels) + ",d=" + std::to_string(d) +
           ",depth=" + std::to_string(depth) + ",heads=" + std::to_string(heads) +
           ",maxtiles=" + std::to_string(max_content_tiles) + ")";
}

std::int64_t count_tokens(std::int64_t h, std::int64_t w, std::int64_t p_h, std::int64_t p_w) {
    if (h < 1 || w < 1 || p_h < 1 || p_w < 1) throw ConfigError("count_tokens: sizes must be >= 1");
    if (h % p_h != 0 || w % p_w != 0) {
        throw ConfigError("count_tokens: " + std::to_string(h) + "x" + std::to_string(w) +
                          " not divisible by patch " + std::to_string(p_h) + "x" + std::to_string(p_w));
    }
    return (h / p_h) * (w / p_w);
}

TilePlan plan_tiles(std::int64_t img_h, std::int64_t img_w, const EncoderConfig& cfg,
                    std::optional<std::int64_t> token_cap) {
    cfg.validate();
    if (img_h < 1 || img_w < 1) {
        throw ConfigError("plan_tiles: degenerate image " + std::to_string(img_h) + "x" +
                          std::to_string(img_w));
    }
    const std::int64_t n = cfg.n_per_tile();
    std::int64_t budget = cfg.max_content_tiles;
    if (token_cap.has_value()) {
        if (*token_cap < 2 * n) {
            throw ConfigError("plan_tiles: token_cap " + std::to_string(*token_cap) +
                              " below minimum " + std::to_string(2 * n) +
                              " (one content tile plus global)");
        }
        budget = std::min(budget, *token_cap / n - 1);
    }

    const std::int64_t img_area = img_h * img_w;
    bool found = false;
    std::int64_t best_gw = 1, best_gh = 1;
    // Comparison keys for the current best candidate.
    std::int64_t best_aspect_num = 0, best_aspect_den = 1;  // |gw*h - gh*w| / gh
    std::int64_t best_over = 0, best_area_key = 0, best_tiles = 0;

    for (std::int64_t gw = 1; gw <= budget; ++gw) {
        for (std::int64_t gh = 1; gw * gh <= budget; ++gh) {
            // aspect diff = |gw/gh - w/h| = |gw*h - gh*w| / (gh*h); the common
            // h cancels when comparing, so the key is |gw*h - gh*w| over gh.
            const std::int64_t a_num = std::abs(gw * img_h - gh * img_w);
            const std::int64_t a_den = gh;
            const std::int64_t grid_area = gw * gh * cfg.tile_side * cfg.tile_side;
            const std::int64_t over = grid_area > img_area ? 1 : 0;
            const std::int64_t area_key = over ? grid_area : -grid_area;
            const std::int64_t tiles = gw * gh;

            bool better = false;
            if (!found) {
                better = true;
            } else {
                const std::int64_t lhs = a_num * best_aspect_den;
                const std::int64_t rhs = best_aspect_num * a_den;
                if (lhs != rhs) better = lhs < rhs;
                else if (over != best_over) better = over < best_over;
                else if (area_key != best_area_key) better = area_key < best_area_key;
                else if (tiles != best_tiles) better = tiles < best_tiles;
                else better = gw > best_gw;
            }
            if (better) {
                found = true;
                best_gw = gw;
                best_gh = gh;
                best_aspect_num = a_num;
                best_aspect_den = a_den;
                best_over = over;
                best_area_key = area_key;
                best_tiles = tiles;
            }
        }
    }

    TilePlan plan;
    plan.grid_w = best_gw;
    plan.grid_h = best_gh;
    plan.resize_h = best_gh * cfg.tile_side;
    plan.resize_w = best_gw * cfg.tile_side;
    plan.includes_global = true;
    plan.n_per_tile = n;
    return plan;
}

std::vector<ImageSpec> cut_tiles(const ImageSpec& img, const TilePlan& plan, const EncoderConfig& cfg) {
    img.validate();
    if (img.c != cfg.channels) {
        throw IncompatError("cut_tiles: image channels " + std::to_string(img.c) +
                            " != encoder channels " + std::to_string(cfg.channels));
    }
    const ImageSpec resized = resize_bilinear(img, plan.resize_h, plan.resize_w);
    std::vector<ImageSpec> tiles;
    tiles.reserve(static_cast<std::size_t>(plan.tile_count()));
    const std::int64_t side = cfg.tile_side;
    for (std::int64_t ty = 0; ty < plan.grid_h; ++ty) {
        for (std::int64_t tx = 0; tx < plan.grid_w; ++tx) {
            ImageSpec tile = ImageSpec::blank(side, side, img.c, 0.0f);
            for (std::int64_t y = 0; y < side; ++y)
                for (std::int64_t x = 0; x < side; ++x)
                    for (std::int64_t ch = 0; ch < img.c; ++ch)
                        tile.at(y, x, ch) = resized.at(ty * side + y, tx * side + x, ch);
            tiles.push_back(std::move(tile));
        }
    }
    if (plan.includes_global) tiles.push_back(resize_bilinear(img, side, side));
    return tiles;
}

}  // namespace tvlm
