#include "tvlm/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "tvlm/error.hpp"

namespace tvlm {

ImageSpec ImageSpec::blank(std::int64_t h, std::int64_t w, std::int64_t c, float fill) {
    ImageSpec img;
    img.h = h;
    img.w = w;
    img.c = c;
    img.pixels.assign(static_cast<std::size_t>(h * w * c), fill);
    return img;
}

void ImageSpec::validate() const {
    if (h < 1 || w < 1) throw ConfigError("degenerate image: " + std::to_string(h) + "x" + std::to_string(w));
    if (c != 1 && c != 3) throw ConfigError("image channels must be 1 or 3, got " + std::to_string(c));
    if (pixels.size() != static_cast<std::size_t>(h * w * c)) {
        throw IncompatError("image pixel buffer size mismatch");
    }
}

namespace {

int read_pnm_token(std::istream& in) {
    // Skips whitespace and '#' comments between header tokens.
    int ch = in.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = in.get();
        } else if (!std::isspace(ch)) {
            break;
        }
        ch = in.get();
    }
    if (ch == EOF) throw ConfigError("pnm: truncated header");
    int value = 0;
    bool any = false;
    while (ch != EOF && std::isdigit(ch)) {
        value = value * 10 + (ch - '0');
        any = true;
        ch = in.get();
    }
    if (!any) throw ConfigError("pnm: malformed header token");
    return value;
}

}  // namespace

ImageSpec read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open image: " + path);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    std::int64_t channels = 0;
    if (m0 == 'P' && m1 == '5') channels = 1;
    else if (m0 == 'P' && m1 == '6') channels = 3;
    else throw ConfigError("pnm: unsupported magic in " + path);
    const std::int64_t w = read_pnm_token(in);
    const std::int64_t h = read_pnm_token(in);
    const std::int64_t maxval = read_pnm_token(in);
    if (maxval != 255) throw ConfigError("pnm: only 8-bit images supported");
    std::vector<unsigned char> raw(static_cast<std::size_t>(h * w * channels));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
        throw ConfigError("pnm: truncated pixel payload in " + path);
    }
    ImageSpec img;
    img.h = h;
    img.w = w;
    img.c = channels;
    img.pixels.resize(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = static_cast<float>(raw[i]) / 255.0f;
    return img;
}

void write_pnm(const ImageSpec& img, const std::string& path) {
    img.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write image: " + path);
    out << (img.c == 1 ? "P5" : "P6") << "\n" << img.w << " " << img.h << "\n255\n";
    std::vector<unsigned char> raw(img.pixels.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const float v = std::clamp(img.pixels[i], 0.0f, 1.0f);
        raw[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw ConfigError("pnm: write failed for " + path);
}

ImageSpec resize_bilinear(const ImageSpec& img, std::int64_t out_h, std::int64_t out_w) {
    img.validate();
    if (out_h < 1 || out_w < 1) throw ConfigError("resize target must be >= 1x1");
    if (out_h == img.h && out_w == img.w) return img;
    ImageSpec out;
    out.h = out_h;
    out.w = out_w;
    out.c = img.c;
    out.pixels.resize(static_cast<std::size_t>(out_h * out_w * img.c));
    const double sy = static_cast<double>(img.h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(img.w) / static_cast<double>(out_w);
    for (std::int64_t y = 0; y < out_h; ++y) {
        // Half-pixel centers; lerp as a + t*(b-a) so constants stay exact.
        double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(img.h - 1));
        const std::int64_t y0 = static_cast<std::int64_t>(fy);
        const std::int64_t y1 = std::min(y0 + 1, img.h - 1);
        const float ty = static_cast<float>(fy - static_cast<double>(y0));
        for (std::int64_t x = 0; x < out_w; ++x) {
            double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(img.w - 1));
            const std::int64_t x0 = static_cast<std::int64_t>(fx);
            const std::int64_t x1 = std::min(x0 + 1, img.w - 1);
            const float tx = static_cast<float>(fx - static_cast<double>(x0));
            for (std::int64_t ch = 0; ch < img.c; ++ch) {
                const float a = img.at(y0, x0, ch);
                const float b = img.at(y0, x1, ch);
                const float c = img.at(y1, x0, ch);
                const float d = img.at(y1, x1, ch);
                const float top = a + tx * (b - a);
                const float bot = c + tx * (d - c);
                float v = top + ty * (bot - top);
                out.at(y, x, ch) = std::clamp(v, 0.0f, 1.0f);
            }
        }
    }
    return out;
}

std::vector<std::vector<float>> patchify(const ImageSpec& tile, std::int64_t p_h, std::int64_t p_w) {
    tile.validate();
    if (tile.h % p_h != 0 || tile.w % p_w != 0) {
        throw IncompatError("patchify: tile " + std::to_string(tile.h) + "x" + std::to_string(tile.w) +
                            " not divisible by patch " + std::to_string(p_h) + "x" + std::to_string(p_w));
    }
    const std::int64_t gy = tile.h / p_h, gx = tile.w / p_w;
    std::vector<std::vector<float>> patches;
    patches.reserve(static_cast<std::size_t>(gy * gx));
    for (std::int64_t py = 0; py < gy; ++py) {
        for (std::int64_t px = 0; px < gx; ++px) {
            std::vector<float> flat;
            flat.reserve(static_cast<std::size_t>(p_h * p_w * tile.c));
            for (std::int64_t y = 0; y < p_h; ++y)
                for (std::int64_t x = 0; x < p_w; ++x)
                    for (std::int64_t ch = 0; ch < tile.c; ++ch)
                        flat.push_back(tile.at(py * p_h + y, px * p_w + x, ch));
            patches.push_back(std::move(flat));
        }
    }
    return patches;
}

ImageSpec unpatchify(const std::vector<std::vector<float>>& patches, std::int64_t tile_h,
                     std::int64_t tile_w, std::int64_t p_h, std::int64_t p_w, std::int64_t c) {
    const std::int64_t gy = tile_h / p_h, gx = tile_w / p_w;
    if (static_cast<std::int64_t>(patches.size()) != gy * gx) {
        throw IncompatError("unpatchify: patch count mismatch");
    }
    ImageSpec out = ImageSpec::blank(tile_h, tile_w, c, 0.0f);
    for (std::int64_t py = 0; py < gy; ++py) {
        for (std::int64_t px = 0; px < gx; ++px) {
            const auto& flat = patches[static_cast<std::size_t>(py * gx + px)];
            std::size_t k = 0;
            for (std::int64_t y = 0; y < p_h; ++y)
                for (std::int64_t x = 0; x < p_w; ++x)
                    for (std::int64_t ch = 0; ch < c; ++ch)
                        out.at(py * p_h + y, px * p_w + x, ch) = flat[k++];
        }
    }
    return out;
}

}  // namespace tvlm
