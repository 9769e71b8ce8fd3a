#include "ogs/image.hpp"

#include "ogs/geom.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace ogs {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f != nullptr) {
            std::fclose(f);
        }
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) {
        if (mode[0] == 'r') {
            throw ValidationError("cannot open '" + path.string() + "'");
        }
        throw Error("cannot open '" + path.string() + "'");
    }
    return f;
}

uint8_t to_u8(double v) { return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

void write_png_rows(const std::filesystem::path& path, int width, int height, int bit_depth, int color_type,
                    const std::vector<uint8_t>& bytes, size_t row_stride) {
    FilePtr f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("failed to write PNG '" + path.string() + "'");
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y) {
        png_write_row(png, const_cast<png_bytep>(bytes.data() + static_cast<size_t>(y) * row_stride));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

Image read_png(const std::filesystem::path& path, bool force_rgb) {
    FilePtr f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ValidationError("failed to decode PNG '" + path.string() + "'");
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    const int color_type = png_get_color_type(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(png);
    }
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
    }
    if ((color_type & PNG_COLOR_MASK_ALPHA) != 0) {
        png_set_strip_alpha(png);
    }
    if (bit_depth == 16) {
        png_set_swap(png);  // little-endian rows
    }
    png_read_update_info(png, info);
    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int channels = png_get_channels(png, info);
    const int depth = png_get_bit_depth(png, info);
    const size_t stride = png_get_rowbytes(png, info);
    std::vector<uint8_t> bytes(stride * static_cast<size_t>(height));
    std::vector<png_bytep> rows(static_cast<size_t>(height));
    for (int y = 0; y < height; ++y) {
        rows[static_cast<size_t>(y)] = bytes.data() + static_cast<size_t>(y) * stride;
    }
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    const int out_channels = (force_rgb && channels == 1) ? 3 : channels;
    Image img(width, height, out_channels);
    const double scale = depth == 16 ? 1.0 / 65535.0 : 1.0 / 255.0;
    for (int y = 0; y < height; ++y) {
        const uint8_t* row = rows[static_cast<size_t>(y)];
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < out_channels; ++c) {
                const int src_c = channels == 1 ? 0 : c;
                const size_t i = static_cast<size_t>(x) * channels + src_c;
                double v = 0.0;
                if (depth == 16) {
                    v = static_cast<double>(row[2 * i] | (row[2 * i + 1] << 8)) * scale;
                } else {
                    v = static_cast<double>(row[i]) * scale;
                }
                img.at(x, y, c) = v;
            }
        }
    }
    return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
    if (image.channels != 1 && image.channels != 3) {
        throw ValidationError("write_png: expected 1 or 3 channels");
    }
    std::vector<uint8_t> bytes(image.data.size());
    std::transform(image.data.begin(), image.data.end(), bytes.begin(), to_u8);
    write_png_rows(path, image.width, image.height, 8, image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                   bytes, static_cast<size_t>(image.width) * image.channels);
}

void write_png16(const std::filesystem::path& path, const Image& image) {
    if (image.channels != 1) {
        throw ValidationError("write_png16: expected a single-channel image");
    }
    std::vector<uint8_t> bytes(image.data.size() * 2);
    for (size_t i = 0; i < image.data.size(); ++i) {
        const auto v = static_cast<uint16_t>(std::lround(std::clamp(image.data[i], 0.0, 1.0) * 65535.0));
        bytes[2 * i] = static_cast<uint8_t>(v >> 8);  // PNG is big-endian
        bytes[2 * i + 1] = static_cast<uint8_t>(v & 0xff);
    }
    write_png_rows(path, image.width, image.height, 16, PNG_COLOR_TYPE_GRAY, bytes,
                   static_cast<size_t>(image.width) * 2);
}

Image quantize8(const Image& image) {
    Image out = image;
    for (double& v : out.data) {
        v = to_u8(v) / 255.0;
    }
    return out;
}

}  // namespace ogs
