#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ncam/tensor.hpp"

namespace ncam {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataItem {
  Tensor<float> image;  // [V,H,W] in [0,1]
  std::string id;
  int label = -1;  // class label where the source has one
};

struct Dataset {
  std::string name;
  std::vector<DataItem> items;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return items.size(); }
  // Appends an item, enforcing a common [V,H,W].
  void add(DataItem item);
  // Index of the item with this id, if any.
  std::optional<std::size_t> find(const std::string& id) const;
};

enum class GlyphStyle { kLines, kRound };

GlyphStyle parse_glyph_style(const std::string& s);
std::string to_string(GlyphStyle s);

// Deterministic anti-aliased coloured shapes on a black background, centred
// so that they are reachable from a single seed cell. Ids are "g0".."g{n-1}".
Dataset gen_glyphs(std::size_t n, std::size_t size, GlyphStyle style, std::uint64_t seed, std::size_t channels = 3);

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarSide = 32;

// CIFAR-10 binary batch: per record one label byte then 1024 R, 1024 G and
// 1024 B bytes, row-major. limit = 0 reads every record.
Dataset load_cifar10(const std::filesystem::path& path, std::size_t limit = 0);
Dataset parse_cifar10(const std::vector<std::uint8_t>& bytes, std::size_t limit = 0, std::string name = "cifar");

// Every *.png in a directory (sorted by name) as RGBA, optionally
// area-downscaled to size x size.
Dataset load_png_dir(const std::filesystem::path& dir, std::size_t size = 0);

// Dataset from a spec string:
//   glyphs[:lines|round[:n[:size[:seed]]]]
//   cifar:<path>[:limit]
//   png:<dir>[:size]
Dataset load_dataset(const std::string& spec);

}  // namespace ncam
