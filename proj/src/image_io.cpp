#include "tscuap/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

namespace tscuap {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Array3 read_png(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open image '" + path + "'");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng initialization failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed to decode PNG '" + path + "'");
    }
    png_init_io(png, f.get());
    png_read_info(png, info);

    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (png_get_bit_depth(png, info) == 16) png_set_swap(png);
    png_read_update_info(png, info);

    const int h = static_cast<int>(png_get_image_height(png, info));
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int depth = png_get_bit_depth(png, info);
    const int channels = png_get_channels(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);

    std::vector<std::uint8_t> raw(rowbytes * h);
    std::vector<png_bytep> rows(h);
    for (int i = 0; i < h; ++i) rows[i] = raw.data() + i * rowbytes;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    const int out_c = channels >= 3 ? 3 : 1;
    Array3 out(h, w, out_c);
    const double scale = depth == 16 ? 65535.0 : 255.0;
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            for (int k = 0; k < out_c; ++k) {
                const std::size_t idx = static_cast<std::size_t>(j) * channels + k;
                double v;
                if (depth == 16) {
                    std::uint16_t s;
                    std::memcpy(&s, rows[i] + idx * 2, 2);
                    v = s;
                } else {
                    v = rows[i][idx];
                }
                out(i, j, k) = static_cast<float>(v / scale);
            }
        }
    }
    return out;
}

void write_png(const std::string& path, int h, int w, int c, const std::vector<std::uint8_t>& pixels) {
    if (c != 1 && c != 3) throw ValidationError("PNG output supports 1 or 3 channels");
    if (pixels.size() != static_cast<std::size_t>(h) * w * c) throw ShapeError("pixel buffer size mismatch");
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot open '" + path + "' for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng initialization failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed to encode PNG '" + path + "'");
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, w, h, 8, c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int i = 0; i < h; ++i) {
        png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(i) * w * c));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void write_png(const std::string& path, const Array3& image01) {
    std::vector<std::uint8_t> px(image01.size());
    for (std::size_t i = 0; i < px.size(); ++i) {
        const float v = std::clamp(image01.data[i], 0.0f, 1.0f);
        px[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    write_png(path, image01.h, image01.w, image01.c, px);
}

}  // namespace tscuap
