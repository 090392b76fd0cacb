#include "mieval/image.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <string>

#include "mieval/error.hpp"
#include "mieval/hash.hpp"
#include "mieval/io.hpp"

namespace mieval {

std::string content_hash(int width, int height, std::span<const std::uint8_t> rgb) {
    if (width <= 0 || height <= 0) throw ValidationError("content_hash: non-positive dimensions");
    const auto expected = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3;
    if (rgb.size() != expected) {
        throw ValidationError("content_hash: expected " + std::to_string(expected) + " bytes for " +
                              std::to_string(width) + "x" + std::to_string(height) + " RGB8, got " +
                              std::to_string(rgb.size()));
    }
    Sha256 h;
    h.update("rgb8 " + std::to_string(width) + " " + std::to_string(height) + "\n");
    h.update(rgb);
    return h.hex_digest();
}

std::string content_hash(const RgbImage& image) { return content_hash(image.width, image.height, image.pixels); }

namespace {

RgbImage from_bgr(const cv::Mat& bgr) {
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    RgbImage out(rgb.cols, rgb.rows);
    for (int y = 0; y < rgb.rows; ++y) {
        const auto* row = rgb.ptr<std::uint8_t>(y);
        std::copy(row, row + static_cast<std::size_t>(rgb.cols) * 3, out.at(0, y));
    }
    return out;
}

cv::Mat to_bgr(const RgbImage& image) {
    cv::Mat rgb(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.pixels.data()));
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    return bgr;
}

}  // namespace

RgbImage decode_image(std::span<const std::uint8_t> encoded) {
    if (encoded.empty()) throw ImageError("empty image buffer");
    cv::Mat buf(1, static_cast<int>(encoded.size()), CV_8UC1, const_cast<std::uint8_t*>(encoded.data()));
    cv::Mat bgr = cv::imdecode(buf, cv::IMREAD_COLOR | cv::IMREAD_IGNORE_ORIENTATION);
    if (bgr.empty() || bgr.depth() != CV_8U) throw ImageError("undecodable image buffer");
    return from_bgr(bgr);
}

RgbImage decode_image(const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = read_binary_file(path);
    } catch (const ValidationError&) {
        throw ImageError("cannot read image file " + path.string());
    }
    try {
        return decode_image(bytes);
    } catch (const ImageError&) {
        throw ImageError("undecodable image file " + path.string());
    }
}

std::vector<std::uint8_t> encode_png(const RgbImage& image, int compression) {
    std::vector<std::uint8_t> out;
    if (!cv::imencode(".png", to_bgr(image), out, {cv::IMWRITE_PNG_COMPRESSION, compression})) {
        throw ImageError("png encoding failed");
    }
    return out;
}

void write_png(const std::filesystem::path& path, const RgbImage& image, int compression) {
    write_file_atomic(path, encode_png(image, compression));
}

std::vector<std::uint8_t> encode_ppm(const RgbImage& image) {
    const std::string header =
        "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), image.pixels.begin(), image.pixels.end());
    return out;
}

}  // namespace mieval
