#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "tvlm/anyres.hpp"
#include "tvlm/error.hpp"
#include "tvlm/rng.hpp"

using namespace tvlm;

namespace {

EncoderConfig paper_base() {
    EncoderConfig cfg;
    cfg.tile_side = 224;
    cfg.p_h = cfg.p_w = 32;
    cfg.max_content_tiles = 12;
    cfg.d = 64;
    cfg.depth = 2;
    cfg.heads = 4;
    return cfg;
}

EncoderConfig paper_large() {
    EncoderConfig cfg;
    cfg.tile_side = 336;
    cfg.p_h = cfg.p_w = 14;
    cfg.max_content_tiles = 12;
    cfg.d = 64;
    cfg.depth = 2;
    cfg.heads = 4;
    return cfg;
}

// Independent grid-selection oracle: materialize every admissible grid with
// its score tuple and sort. Kept deliberately separate from plan_tiles.
struct OracleGrid {
    std::int64_t gw, gh;
    double aspect_diff;
    int over;
    std::int64_t area_key;
    std::int64_t tiles;
};

OracleGrid oracle_plan(std::int64_t img_h, std::int64_t img_w, const EncoderConfig& cfg,
                       std::optional<std::int64_t> cap) {
    std::int64_t budget = cfg.max_content_tiles;
    if (cap) budget = std::min(budget, *cap / cfg.n_per_tile() - 1);
    std::vector<OracleGrid> grids;
    const double img_aspect = static_cast<double>(img_w) / static_cast<double>(img_h);
    for (std::int64_t gw = 1; gw <= budget; ++gw) {
        for (std::int64_t gh = 1; gw * gh <= budget; ++gh) {
            OracleGrid g;
            g.gw = gw;
            g.gh = gh;
            g.aspect_diff = std::abs(static_cast<double>(gw) / static_cast<double>(gh) - img_aspect);
            const std::int64_t area = gw * gh * cfg.tile_side * cfg.tile_side;
            g.over = area > img_h * img_w ? 1 : 0;
            g.area_key = g.over ? area : -area;
            g.tiles = gw * gh;
            grids.push_back(g);
        }
    }
    OracleGrid best = grids[0];
    for (const auto& g : grids) {
        // Random sizes below are sampled so aspect scores never tie within
        // double precision unless exactly equal.
        if (g.aspect_diff < best.aspect_diff - 1e-12) { best = g; continue; }
        if (g.aspect_diff > best.aspect_diff + 1e-12) continue;
        if (g.over != best.over) { if (g.over < best.over) best = g; continue; }
        if (g.area_key != best.area_key) { if (g.area_key < best.area_key) best = g; continue; }
        if (g.tiles != best.tiles) { if (g.tiles < best.tiles) best = g; continue; }
        if (g.gw > best.gw) best = g;
    }
    return best;
}

}  // namespace

TEST_CASE("count_tokens reproduces the published patch arithmetic") {
    CHECK(count_tokens(336, 336, 14, 14) == 576);
    CHECK(count_tokens(224, 224, 32, 32) == 49);
    CHECK(count_tokens(32, 32, 32, 32) == 1);
    CHECK_THROWS_AS(count_tokens(100, 224, 32, 32), ConfigError);
}

TEST_CASE("plan_tiles reproduces the four named token budgets") {
    const auto base = paper_base();
    const auto large = paper_large();

    // 224x224 -> one content tile plus global = 98 tokens
    auto p1 = plan_tiles(224, 224, base);
    CHECK(p1.grid_w == 1);
    CHECK(p1.grid_h == 1);
    CHECK(p1.total_tokens() == 98);

    // 896 wide x 672 high -> 4x3 grid, 637 tokens
    auto p2 = plan_tiles(672, 896, base);
    CHECK(p2.grid_w == 4);
    CHECK(p2.grid_h == 3);
    CHECK(p2.total_tokens() == 637);
    CHECK(p2.resize_w == 896);
    CHECK(p2.resize_h == 672);

    // 672x672 with the 336/14 encoder -> 2x2 grid, 2880 tokens
    auto p3 = plan_tiles(672, 672, large);
    CHECK(p3.grid_w == 2);
    CHECK(p3.grid_h == 2);
    CHECK(p3.total_tokens() == 2880);

    // 672 wide x 336 high, capped at 1728 -> 2x1 grid, 1728 tokens
    auto p4 = plan_tiles(336, 672, large, 1728);
    CHECK(p4.grid_w == 2);
    CHECK(p4.grid_h == 1);
    CHECK(p4.total_tokens() == 1728);

    // 448 wide x 224 high -> 2x1, 147 tokens (matches the enumeration oracle)
    auto p5 = plan_tiles(224, 448, base);
    CHECK(p5.grid_w == 2);
    CHECK(p5.grid_h == 1);
    CHECK(p5.total_tokens() == 147);
}

TEST_CASE("plan_tiles rejects degenerate input and over-tight caps") {
    const auto base = paper_base();
    CHECK_THROWS_AS(plan_tiles(0, 100, base), ConfigError);
    CHECK_THROWS_AS(plan_tiles(100, 0, base), ConfigError);
    CHECK_THROWS_AS(plan_tiles(224, 224, base, 97), ConfigError);
}

TEST_CASE("plan_tiles respects caps and budgets on random sizes") {
    const auto base = paper_base();
    Rng rng(2024);
    for (int i = 0; i < 200; ++i) {
        const std::int64_t h = 1 + static_cast<std::int64_t>(rng.below(2000));
        const std::int64_t w = 1 + static_cast<std::int64_t>(rng.below(2000));
        auto uncapped = plan_tiles(h, w, base);
        CHECK(uncapped.total_tokens() <= base.n_per_tile() * (base.max_content_tiles + 1));
        const std::int64_t cap = 2 * base.n_per_tile() +
                                 static_cast<std::int64_t>(rng.below(12 * 49));
        auto capped = plan_tiles(h, w, base, cap);
        CHECK(capped.total_tokens() <= cap);
    }
}

TEST_CASE("plan_tiles agrees with the exhaustive enumeration oracle on 200 random sizes") {
    const auto base = paper_base();
    Rng rng(77);
    for (int i = 0; i < 200; ++i) {
        const std::int64_t h = 8 + static_cast<std::int64_t>(rng.below(1600));
        const std::int64_t w = 8 + static_cast<std::int64_t>(rng.below(1600));
        const bool use_cap = rng.uniform() < 0.3;
        std::optional<std::int64_t> cap;
        if (use_cap) cap = 2 * 49 + static_cast<std::int64_t>(rng.below(500));
        const auto got = plan_tiles(h, w, base, cap);
        const auto want = oracle_plan(h, w, base, cap);
        CHECK(got.grid_w == want.gw);
        CHECK(got.grid_h == want.gh);
    }
}

TEST_CASE("plan_tiles is deterministic") {
    const auto base = paper_base();
    auto a = plan_tiles(450, 890, base);
    auto b = plan_tiles(450, 890, base);
    CHECK(a.grid_w == b.grid_w);
    CHECK(a.grid_h == b.grid_h);
    CHECK(a.total_tokens() == b.total_tokens());
}

TEST_CASE("cut_tiles yields plan-order content tiles plus a global thumbnail") {
    EncoderConfig cfg;
    cfg.tile_side = 32;
    cfg.p_h = cfg.p_w = 8;
    cfg.max_content_tiles = 12;
    cfg.d = 64;
    cfg.depth = 1;
    cfg.heads = 4;
    auto img = ImageSpec::blank(32, 64, 1, 1.0f);
    img.at(0, 40) = 0.0f;  // mark the right half
    const auto plan = plan_tiles(img, cfg);
    CHECK(plan.grid_w == 2);
    CHECK(plan.grid_h == 1);
    auto tiles = cut_tiles(img, plan, cfg);
    REQUIRE(tiles.size() == 3);
    CHECK(tiles[0].at(0, 8) == 1.0f);
    CHECK(tiles[1].at(0, 8) == 0.0f);  // the mark lands in the second tile
    CHECK(tiles[2].h == 32);
    CHECK(tiles[2].w == 32);
}
