#include "ncam/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "ncam/image_io.hpp"
#include "ncam/rng.hpp"

namespace ncam {

void Dataset::add(DataItem item) {
  const Tensor<float>& im = item.image;
  if (im.rank() != 3) throw DataError("item " + item.id + " has shape " + to_string(im.shape()));
  if (items.empty()) {
    channels = im.dim(0);
    height = im.dim(1);
    width = im.dim(2);
  } else if (im.dim(0) != channels || im.dim(1) != height || im.dim(2) != width) {
    throw DataError("item " + item.id + " has shape " + to_string(im.shape()) + ", dataset items are " +
                    to_string(Shape{channels, height, width}));
  }
  items.push_back(std::move(item));
}

std::optional<std::size_t> Dataset::find(const std::string& id) const {
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].id == id) return i;
  }
  return std::nullopt;
}

GlyphStyle parse_glyph_style(const std::string& s) {
  if (s == "lines") return GlyphStyle::kLines;
  if (s == "round") return GlyphStyle::kRound;
  throw DataError("unknown glyph style '" + s + "' (expected lines or round)");
}

std::string to_string(GlyphStyle s) { return s == GlyphStyle::kLines ? "lines" : "round"; }

namespace {

struct Point {
  double x, y;
};

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = p.x - (a.x + t * dx), ey = p.y - (a.y + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

// Coverage of a stroke of half-width hw at signed distance d from its spine.
double coverage(double d, double hw) { return std::clamp(hw + 0.5 - d, 0.0, 1.0); }

std::array<double, 3> vivid_colour(Rng& rng) {
  // Random hue at full saturation, value in [0.75, 1].
  const double h = rng.uniform() * 6.0, v = 0.75 + 0.25 * rng.uniform();
  const double f = h - std::floor(h);
  const int sector = static_cast<int>(h) % 6;
  const double q = v * (1 - f), t = v * f;
  switch (sector) {
    case 0: return {v, t, 0};
    case 1: return {q, v, 0};
    case 2: return {0, v, t};
    case 3: return {0, q, v};
    case 4: return {t, 0, v};
    default: return {v, 0, q};
  }
}

// Per-pixel coverage for one glyph; the shape stays inside a disc of radius
// 0.38 * size around the centre.
std::vector<double> glyph_mask(std::size_t size, GlyphStyle style, Rng& rng) {
  const double c = (static_cast<double>(size) - 1) / 2.0, r = 0.38 * static_cast<double>(size);
  const double hw = std::max(1.0, static_cast<double>(size) / 10.0);
  std::vector<double> mask(size * size, 0.0);
  auto stamp = [&](auto&& sdf) {
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double v = coverage(sdf(Point{static_cast<double>(x), static_cast<double>(y)}), hw);
        mask[y * size + x] = std::max(mask[y * size + x], v);
      }
    }
  };
  auto on_disc = [&](double radius) {
    const double a = rng.uniform() * 2 * std::numbers::pi, rr = radius * std::sqrt(rng.uniform());
    return Point{c + rr * std::cos(a), c + rr * std::sin(a)};
  };
  if (style == GlyphStyle::kLines) {
    // A connected polyline through the centre plus one free stroke.
    const std::size_t n = 2 + rng.below(2);
    Point prev{c, c};
    for (std::size_t i = 0; i < n; ++i) {
      Point next = on_disc(r);
      stamp([&](Point p) { return segment_distance(p, prev, next); });
      prev = next;
    }
    Point a = on_disc(r), b = on_disc(r);
    stamp([&](Point p) { return segment_distance(p, a, b); });
  } else {
    // A ring or filled disc around the centre plus one or two blobs.
    const double ring = r * (0.45 + 0.5 * rng.uniform());
    const bool filled = rng.bernoulli(0.5);
    stamp([&](Point p) {
      const double d = std::hypot(p.x - c, p.y - c);
      return filled ? std::max(0.0, d - ring) : std::abs(d - ring);
    });
    const std::size_t n = 1 + rng.below(2);
    for (std::size_t i = 0; i < n; ++i) {
      Point o = on_disc(r * 0.7);
      const double rad = r * (0.15 + 0.25 * rng.uniform());
      stamp([&](Point p) { return std::max(0.0, std::hypot(p.x - o.x, p.y - o.y) - rad); });
    }
  }
  return mask;
}

}  // namespace

Dataset gen_glyphs(std::size_t n, std::size_t size, GlyphStyle style, std::uint64_t seed, std::size_t channels) {
  if (n == 0 || size < 8) throw DataError("gen_glyphs needs n >= 1 and size >= 8");
  if (channels != 3 && channels != 4) throw DataError("glyph channels must be 3 or 4");
  Rng rng(seed);
  Dataset ds;
  ds.name = "glyphs-" + to_string(style);
  const std::size_t hw = size * size;
  for (std::size_t k = 0; k < n; ++k) {
    const auto colour = vivid_colour(rng);
    const auto mask = glyph_mask(size, style, rng);
    Tensor<float> im({channels, size, size});
    for (std::size_t i = 0; i < hw; ++i) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        // RGBA stores straight colour under alpha; RGB is black-composited.
        im[ch * hw + i] = static_cast<float>(channels == 4 ? (mask[i] > 0 ? colour[ch] : 0.0) : colour[ch] * mask[i]);
      }
      if (channels == 4) im[3 * hw + i] = static_cast<float>(mask[i]);
    }
    ds.add(DataItem{std::move(im), "g" + std::to_string(k), -1});
  }
  return ds;
}

Dataset parse_cifar10(const std::vector<std::uint8_t>& bytes, std::size_t limit, std::string name) {
  if (bytes.empty()) throw DataError("CIFAR-10 batch is empty (byte offset 0)");
  if (bytes.size() % kCifarRecordBytes != 0) {
    const std::size_t off = bytes.size() / kCifarRecordBytes * kCifarRecordBytes;
    throw DataError("CIFAR-10 batch truncated: partial record at byte offset " + std::to_string(off) + " (" +
                    std::to_string(bytes.size() - off) + " of " + std::to_string(kCifarRecordBytes) + " bytes)");
  }
  std::size_t records = bytes.size() / kCifarRecordBytes;
  if (limit > 0) records = std::min(records, limit);
  Dataset ds;
  ds.name = std::move(name);
  ds.items.reserve(records);
  constexpr std::size_t hw = kCifarSide * kCifarSide;
  for (std::size_t r = 0; r < records; ++r) {
    const std::size_t off = r * kCifarRecordBytes;
    const int label = bytes[off];
    if (label > 9) {
      throw DataError("CIFAR-10 label " + std::to_string(label) + " out of range at byte offset " +
                      std::to_string(off));
    }
    Tensor<float> im({3, kCifarSide, kCifarSide});
    for (std::size_t i = 0; i < 3 * hw; ++i) im[i] = bytes[off + 1 + i] / 255.0f;
    ds.add(DataItem{std::move(im), "c" + std::to_string(r), label});
  }
  return ds;
}

Dataset load_cifar10(const std::filesystem::path& path, std::size_t limit) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open CIFAR-10 batch " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  try {
    return parse_cifar10(bytes, limit, "cifar:" + path.filename().string());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Dataset load_png_dir(const std::filesystem::path& dir, std::size_t size) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .png files in " + dir.string());
  Dataset ds;
  ds.name = "png:" + dir.filename().string();
  for (const auto& f : files) {
    Rgba8 im;
    try {
      im = read_png(f);
      if (size > 0) im = downscale(im, size);
    } catch (const ImageError& e) {
      throw DataError(e.what());
    }
    ds.add(DataItem{from_rgba8(im, 4), f.stem().string(), -1});
  }
  return ds;
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, sep)) parts.push_back(part);
  return parts;
}

std::size_t to_count(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw DataError("dataset spec: " + what + " '" + s + "' is not a non-negative integer");
  }
}

}  // namespace

Dataset load_dataset(const std::string& spec) {
  const auto parts = split(spec, ':');
  if (parts.empty()) throw DataError("empty dataset spec");
  const std::string& kind = parts[0];
  if (kind == "glyphs") {
    const GlyphStyle style = parts.size() > 1 ? parse_glyph_style(parts[1]) : GlyphStyle::kLines;
    const std::size_t n = parts.size() > 2 ? to_count(parts[2], "n") : 16;
    const std::size_t size = parts.size() > 3 ? to_count(parts[3], "size") : 32;
    const std::uint64_t seed = parts.size() > 4 ? to_count(parts[4], "seed") : 7;
    if (parts.size() > 5) throw DataError("dataset spec '" + spec + "' has too many fields");
    return gen_glyphs(n, size, style, seed);
  }
  if (kind == "cifar") {
    if (parts.size() < 2 || parts.size() > 3) throw DataError("expected cifar:<path>[:limit]");
    return load_cifar10(parts[1], parts.size() > 2 ? to_count(parts[2], "limit") : 0);
  }
  if (kind == "png") {
    if (parts.size() < 2 || parts.size() > 3) throw DataError("expected png:<dir>[:size]");
    return load_png_dir(parts[1], parts.size() > 2 ? to_count(parts[2], "size") : 0);
  }
  throw DataError("unknown dataset kind '" + kind + "' (expected glyphs, cifar or png)");
}

}  // namespace ncam
