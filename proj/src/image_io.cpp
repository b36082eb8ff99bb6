#include "ncam/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>

namespace ncam {

Rgba8 to_rgba8(const Tensor<float>& image) {
  if (image.rank() != 3 || (image.dim(0) != 3 && image.dim(0) != 4)) {
    throw ShapeError("image tensor " + to_string(image.shape()) + " is not [3|4, H, W]");
  }
  const std::size_t v = image.dim(0), h = image.dim(1), w = image.dim(2), hw = h * w;
  Rgba8 out{w, h, std::vector<std::uint8_t>(hw * 4, 255)};
  for (std::size_t c = 0; c < v; ++c) {
    for (std::size_t i = 0; i < hw; ++i) {
      const float x = std::clamp(image[c * hw + i], 0.0f, 1.0f);
      out.pixels[i * 4 + c] = static_cast<std::uint8_t>(std::lround(x * 255.0f));
    }
  }
  return out;
}

Tensor<float> from_rgba8(const Rgba8& image, std::size_t channels) {
  if (channels != 3 && channels != 4) throw ShapeError("image channels must be 3 or 4");
  const std::size_t hw = image.width * image.height;
  Tensor<float> out({channels, image.height, image.width});
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] = image.pixels[i * 4 + c] / 255.0f;
  }
  return out;
}

namespace {

png_image rgba_header(const Rgba8& image) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGBA;
  return img;
}

Rgba8 finish_read(png_image& img, const char* what) {
  img.format = PNG_FORMAT_RGBA;
  Rgba8 out{img.width, img.height, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(img))};
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw ImageError(std::string(what) + ": " + msg);
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Rgba8& image) {
  if (image.pixels.size() != image.width * image.height * 4) throw ImageError("RGBA buffer size mismatch");
  png_image img = rgba_header(image);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.pixels.data(), 0, nullptr)) {
    throw ImageError(std::string("png encode: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.pixels.data(), 0, nullptr)) {
    throw ImageError(std::string("png encode: ") + img.message);
  }
  out.resize(size);
  return out;
}

Rgba8 decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw ImageError(std::string("png decode: ") + img.message);
  }
  return finish_read(img, "png decode");
}

void write_png(const std::filesystem::path& path, const Rgba8& image) { write_file(path, encode_png(image)); }

Rgba8 read_png(const std::filesystem::path& path) {
  try {
    return decode_png(read_file(path));
  } catch (const ImageError& e) {
    throw ImageError(path.string() + ": " + e.what());
  }
}

Rgba8 downscale(const Rgba8& image, std::size_t size) {
  if (image.width == size && image.height == size) return image;
  if (size == 0 || image.width != image.height || image.width % size != 0) {
    throw ImageError("cannot area-downscale " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                     " to " + std::to_string(size));
  }
  const std::size_t f = image.width / size;
  Rgba8 out{size, size, std::vector<std::uint8_t>(size * size * 4)};
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      for (std::size_t c = 0; c < 4; ++c) {
        unsigned acc = 0;
        for (std::size_t dy = 0; dy < f; ++dy) {
          for (std::size_t dx = 0; dx < f; ++dx) acc += image.pixels[((y * f + dy) * image.width + x * f + dx) * 4 + c];
        }
        out.pixels[(y * size + x) * 4 + c] = static_cast<std::uint8_t>((acc + f * f / 2) / (f * f));
      }
    }
  }
  return out;
}

namespace {

constexpr int kLevelsR = 6, kLevelsG = 7, kLevelsB = 6;

std::uint8_t palette_index(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  auto q = [](std::uint8_t v, int levels) { return (v * (levels - 1) + 127) / 255; };
  return static_cast<std::uint8_t>((q(r, kLevelsR) * kLevelsG + q(g, kLevelsG)) * kLevelsB + q(b, kLevelsB));
}

// Packs variable-width codes LSB-first into 255-byte sub-blocks.
class BitSink {
 public:
  void put(unsigned code, unsigned width) {
    acc_ |= static_cast<std::uint64_t>(code) << nbits_;
    nbits_ += width;
    while (nbits_ >= 8) {
      bytes_.push_back(static_cast<std::uint8_t>(acc_ & 0xff));
      acc_ >>= 8;
      nbits_ -= 8;
    }
  }
  void flush_into(std::vector<std::uint8_t>& out) {
    if (nbits_ > 0) bytes_.push_back(static_cast<std::uint8_t>(acc_ & 0xff));
    for (std::size_t i = 0; i < bytes_.size(); i += 255) {
      const std::size_t n = std::min<std::size_t>(255, bytes_.size() - i);
      out.push_back(static_cast<std::uint8_t>(n));
      out.insert(out.end(), bytes_.begin() + static_cast<std::ptrdiff_t>(i),
                 bytes_.begin() + static_cast<std::ptrdiff_t>(i + n));
    }
    out.push_back(0);
  }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint64_t acc_ = 0;
  unsigned nbits_ = 0;
};

void put16(std::vector<std::uint8_t>& out, std::size_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

}  // namespace

std::vector<std::uint8_t> encode_gif(const std::vector<Rgba8>& frames, unsigned delay_cs) {
  if (frames.empty()) throw ImageError("gif needs at least one frame");
  const std::size_t w = frames[0].width, h = frames[0].height;
  std::vector<std::uint8_t> out = {'G', 'I', 'F', '8', '9', 'a'};
  put16(out, w);
  put16(out, h);
  out.insert(out.end(), {0xF7, 0, 0});  // global table, 256 entries
  for (int i = 0; i < 256; ++i) {
    const int r = i / (kLevelsG * kLevelsB), g = (i / kLevelsB) % kLevelsG, b = i % kLevelsB;
    const bool used = i < kLevelsR * kLevelsG * kLevelsB;
    out.push_back(used ? static_cast<std::uint8_t>(r * 255 / (kLevelsR - 1)) : 0);
    out.push_back(used ? static_cast<std::uint8_t>(g * 255 / (kLevelsG - 1)) : 0);
    out.push_back(used ? static_cast<std::uint8_t>(b * 255 / (kLevelsB - 1)) : 0);
  }
  // NETSCAPE looping extension.
  out.insert(out.end(), {0x21, 0xFF, 0x0B, 'N', 'E', 'T', 'S', 'C', 'A', 'P', 'E', '2', '.', '0', 3, 1, 0, 0, 0});
  for (const auto& f : frames) {
    if (f.width != w || f.height != h) throw ImageError("gif frames must share one size");
    out.insert(out.end(), {0x21, 0xF9, 4, 0});
    put16(out, delay_cs);
    out.insert(out.end(), {0, 0});
    out.push_back(0x2C);
    put16(out, 0);
    put16(out, 0);
    put16(out, w);
    put16(out, h);
    out.push_back(0);
    // Uncompressed LZW: 9-bit literal codes, clearing before the code table
    // would force a width change.
    constexpr unsigned kClear = 256, kEnd = 257, kWidth = 9, kRun = 250;
    out.push_back(8);
    BitSink sink;
    sink.put(kClear, kWidth);
    for (std::size_t i = 0; i < w * h; ++i) {
      if (i > 0 && i % kRun == 0) sink.put(kClear, kWidth);
      const auto* p = &f.pixels[i * 4];
      auto blend = [&](std::uint8_t c) { return static_cast<std::uint8_t>((c * p[3] + 255 * (255 - p[3]) + 127) / 255); };
      sink.put(palette_index(blend(p[0]), blend(p[1]), blend(p[2])), kWidth);
    }
    sink.put(kEnd, kWidth);
    sink.flush_into(out);
  }
  out.push_back(0x3B);
  return out;
}

void write_gif(const std::filesystem::path& path, const std::vector<Rgba8>& frames, unsigned delay_cs) {
  write_file(path, encode_gif(frames, delay_cs));
}

namespace {
constexpr std::string_view kB64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    const std::size_t n = std::min<std::size_t>(3, bytes.size() - i);
    std::uint32_t v = static_cast<std::uint32_t>(bytes[i]) << 16;
    if (n > 1) v |= static_cast<std::uint32_t>(bytes[i + 1]) << 8;
    if (n > 2) v |= bytes[i + 2];
    for (std::size_t k = 0; k < 4; ++k) out.push_back(k <= n ? kB64[(v >> (18 - 6 * k)) & 63] : '=');
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  std::array<int, 256> lut;
  lut.fill(-1);
  for (std::size_t i = 0; i < kB64.size(); ++i) lut[static_cast<unsigned char>(kB64[i])] = static_cast<int>(i);
  std::vector<std::uint8_t> out;
  std::uint32_t acc = 0;
  int bits = 0;
  for (char ch : text) {
    if (ch == '=') break;
    const int v = lut[static_cast<unsigned char>(ch)];
    if (v < 0) throw ImageError("invalid base64 character");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
    }
  }
  return out;
}

}  // namespace ncam
