#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ncam/tensor.hpp"

namespace ncam {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit interleaved RGBA raster.
struct Rgba8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 4

  bool operator==(const Rgba8&) const = default;
};

// [V,H,W] in [0,1] (V = 3 or 4) -> RGBA8. Values are clamped and rounded;
// three-channel images get opaque alpha.
Rgba8 to_rgba8(const Tensor<float>& image);
// RGBA8 -> [channels,H,W] in [0,1]; channels = 3 drops alpha, 4 keeps it.
Tensor<float> from_rgba8(const Rgba8& image, std::size_t channels);

std::vector<std::uint8_t> encode_png(const Rgba8& image);
Rgba8 decode_png(const std::vector<std::uint8_t>& bytes);
void write_png(const std::filesystem::path& path, const Rgba8& image);
Rgba8 read_png(const std::filesystem::path& path);

// Area-average downscale to size x size (source must be square and a
// multiple of size, or already that size).
Rgba8 downscale(const Rgba8& image, std::size_t size);

// Looping animation, one frame per raster, 6-bit-per-channel-ish palette
// (RGB 6x7x6 cube). Alpha is composited onto white.
std::vector<std::uint8_t> encode_gif(const std::vector<Rgba8>& frames, unsigned delay_cs = 8);
void write_gif(const std::filesystem::path& path, const std::vector<Rgba8>& frames, unsigned delay_cs = 8);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace ncam
