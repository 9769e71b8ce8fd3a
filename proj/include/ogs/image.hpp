#pragma once

#include <filesystem>
#include <vector>

namespace ogs {

/// Dense interleaved float64 image, row-major, values nominally in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c = 3, double fill = 0.0)
        : width(w), height(h), channels(c), data(static_cast<size_t>(w) * h * c, fill) {}

    size_t index(int x, int y, int c = 0) const {
        return (static_cast<size_t>(y) * width + x) * channels + c;
    }
    double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
    double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

/// Reads an 8- or 16-bit PNG. Palette images are expanded, alpha is dropped,
/// and grayscale stays single-channel unless `force_rgb`.
Image read_png(const std::filesystem::path& path, bool force_rgb = true);

/// Writes 8-bit RGB (3 channels) or grayscale (1 channel); values are clamped
/// to [0, 1] and rounded.
void write_png(const std::filesystem::path& path, const Image& image);

/// Writes a single-channel image as 16-bit grayscale.
void write_png16(const std::filesystem::path& path, const Image& image);

/// Round-trips an image through 8-bit quantization.
Image quantize8(const Image& image);

}  // namespace ogs
