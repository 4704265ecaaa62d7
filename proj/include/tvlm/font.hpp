#pragma once

// Built-in 5x7 bitmap font on a 6x8 cell (one blank column / row of spacing).
// The table is the ground truth for rendered text; no font files involved.

#include <array>
#include <cstdint>
#include <string>

#include "tvlm/image.hpp"

namespace tvlm {

inline constexpr int kGlyphW = 5;
inline constexpr int kGlyphH = 7;
inline constexpr int kCellW = 6;
inline constexpr int kCellH = 8;

using Glyph = std::array<std::uint8_t, kGlyphH>;  // 5 LSBs per row, bit 4 = leftmost

// Supported: A-Z, 0-9, space, ':', '.', ',', '?', '-', '$', '%', '/'.
bool font_has(char ch);
const Glyph& font_glyph(char ch);

// Stamps text onto the image with the glyph ink value (0 = black). (x, y) is
// the top-left of the first cell; '\n' advances to the next line.
void draw_text(ImageSpec& img, const std::string& text, std::int64_t x, std::int64_t y,
               float ink = 0.0f);

// Canvas size needed for a text block at the given margins.
void measure_text(const std::string& text, std::int64_t& rows, std::int64_t& max_cols);

}  // namespace tvlm
