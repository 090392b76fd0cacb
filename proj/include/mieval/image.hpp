#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mieval {

/// Canonical pixel buffer: 8-bit RGB, row-major, no alpha, no color profile.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // width * height * 3

    RgbImage() = default;
    RgbImage(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill) {}

    std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
    const std::uint8_t* at(int x, int y) const {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }

    bool operator==(const RgbImage&) const = default;
};

/// SHA-256 over the canonical buffer (a "rgb8 <w> <h>\n" header then the raw
/// bytes). Throws ValidationError when the byte count is not width*height*3.
std::string content_hash(int width, int height, std::span<const std::uint8_t> rgb);
std::string content_hash(const RgbImage& image);

/// Decodes any format OpenCV reads into the canonical buffer.
/// Throws ImageError when the file is missing or undecodable.
RgbImage decode_image(const std::filesystem::path& path);
RgbImage decode_image(std::span<const std::uint8_t> encoded);

std::vector<std::uint8_t> encode_png(const RgbImage& image, int compression = 6);
void write_png(const std::filesystem::path& path, const RgbImage& image, int compression = 6);

/// Binary PPM (P6); a second lossless encoding used to check that hashing
/// depends on pixels only.
std::vector<std::uint8_t> encode_ppm(const RgbImage& image);

}  // namespace mieval
