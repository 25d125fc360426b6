#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "swtt/codec.hpp"

namespace swtt {

// 8-bit interleaved image, 1 (gray) or 3 (RGB) channels.
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
};

// Chooses the format from the extension: .png, .pgm (gray) or .ppm (RGB).
void write_image(const std::filesystem::path& path, const Image& img);
Image read_image(const std::filesystem::path& path);

// Byte b maps to b / 255 * 2 - 1; the map is area-downsampled to `latent` when
// the image is larger.
FeatureMap image_to_latent(const Image& img, GridSize latent);
// Inverse mapping with clamping to [-1, 1] and rounding to nearest.
Image latent_to_image(const FeatureMap& f);

// Grayscale heatmap of a matrix, min..max mapped to 0..255, each cell drawn
// as a cell x cell block.
Image heatmap(const Tensor& m, std::size_t cell = 8);

}  // namespace swtt
