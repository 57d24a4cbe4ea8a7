#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "coordfill/tensor.hpp"

namespace coordfill {

struct Rgb8 {
    std::size_t height = 0, width = 0;
    std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major
};

inline std::uint8_t quantize(double v) {
    return std::uint8_t(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5));
}

namespace detail {

inline bool has_suffix(const std::string& s, const std::string& suf) {
    if (s.size() < suf.size()) return false;
    return std::equal(suf.rbegin(), suf.rend(), s.rbegin(),
                      [](char a, char b) { return std::tolower(static_cast<unsigned char>(a)) == b; });
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline Rgb8 read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialisation failed");
    }
    Rgb8 img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("malformed PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.pixels.resize(img.width * img.height * 3);
    rows.resize(img.height);
    for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * img.width * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline void write_png(const std::string& path, const Rgb8& img) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialisation failed");
    }
    std::vector<png_bytep> rows(img.height);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < img.height; ++y)
        rows[y] = const_cast<png_bytep>(img.pixels.data() + y * img.width * 3);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Skips whitespace and '#' comments, then reads an unsigned decimal.
inline std::size_t ppm_field(std::istream& in, const std::string& path) {
    int c = in.peek();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else {
            in.get();
        }
        c = in.peek();
    }
    if (c == EOF || !std::isdigit(c)) throw IoError("malformed PPM header: " + path);
    std::size_t v = 0;
    while (std::isdigit(in.peek())) v = v * 10 + std::size_t(in.get() - '0');
    return v;
}

inline Rgb8 read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[2] = {};
    in.read(magic, 2);
    if (magic[0] != 'P' || magic[1] != '6') throw IoError("not a binary PPM (P6): " + path);
    Rgb8 img;
    img.width = ppm_field(in, path);
    img.height = ppm_field(in, path);
    const std::size_t maxval = ppm_field(in, path);
    if (maxval == 0 || maxval > 255) throw IoError("unsupported PPM maxval " + std::to_string(maxval) + ": " + path);
    if (!std::isspace(in.get())) throw IoError("malformed PPM header: " + path);
    img.pixels.resize(img.width * img.height * 3);
    in.read(reinterpret_cast<char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
    if (std::size_t(in.gcount()) != img.pixels.size()) throw IoError("truncated PPM: " + path);
    if (maxval != 255)
        for (auto& v : img.pixels) v = std::uint8_t((v * 255 + maxval / 2) / maxval);
    return img;
}

inline void write_ppm(const std::string& path, const Rgb8& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace detail

/// Reads an 8-bit PNG or binary PPM (detected from the file signature).
inline Rgb8 read_rgb8(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IoError("cannot open " + path);
    unsigned char sig[8] = {};
    probe.read(reinterpret_cast<char*>(sig), 8);
    probe.close();
    if (png_sig_cmp(sig, 0, 8) == 0) return detail::read_png(path);
    if (sig[0] == 'P' && sig[1] == '6') return detail::read_ppm(path);
    throw IoError("unrecognised image format: " + path);
}

/// Writes PPM for .ppm/.pnm paths, PNG otherwise.
inline void write_rgb8(const std::string& path, const Rgb8& img) {
    if (detail::has_suffix(path, ".ppm") || detail::has_suffix(path, ".pnm"))
        detail::write_ppm(path, img);
    else
        detail::write_png(path, img);
}

/// (3, H, W) in [0, 1].
template <typename T = float>
Tensor<T> read_image(const std::string& path) {
    Rgb8 img = read_rgb8(path);
    const std::size_t H = img.height, W = img.width;
    Tensor<T> t({3, H, W});
    for (std::size_t p = 0; p < H * W; ++p)
        for (std::size_t c = 0; c < 3; ++c) t[c * H * W + p] = T(img.pixels[p * 3 + c]) / T(255);
    return t;
}

/// (1, H, W) binary mask: a pixel is a hole when any channel exceeds half intensity.
template <typename T = float>
Tensor<T> read_mask(const std::string& path) {
    Rgb8 img = read_rgb8(path);
    const std::size_t H = img.height, W = img.width;
    Tensor<T> t({1, H, W});
    for (std::size_t p = 0; p < H * W; ++p) {
        const auto* px = &img.pixels[p * 3];
        t[p] = T(std::max({px[0], px[1], px[2]}) > 127 ? 1 : 0);
    }
    return t;
}

/// Accepts (3, H, W) or (1, H, W); single-channel images are written as grey.
template <typename T>
void write_image(const std::string& path, const Tensor<T>& t) {
    require_rank(t.shape(), 3, "write_image");
    const std::size_t C = t.dim(0), H = t.dim(1), W = t.dim(2);
    if (C != 1 && C != 3) throw ShapeError("write_image: expected 1 or 3 channels, got " + shape_str(t.shape()));
    Rgb8 img{H, W, std::vector<std::uint8_t>(H * W * 3)};
    for (std::size_t p = 0; p < H * W; ++p)
        for (std::size_t c = 0; c < 3; ++c) img.pixels[p * 3 + c] = quantize(double(t[(C == 3 ? c : 0) * H * W + p]));
    write_rgb8(path, img);
}

}  // namespace coordfill
