#include <doctest.h>

#include "fixtures.hpp"
#include "ncam/image_io.hpp"

using namespace ncam;

namespace {

std::vector<std::uint8_t> bytes_of(std::string_view s) { return {s.begin(), s.end()}; }

Rgba8 noise_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  Rng rng(seed);
  Rgba8 im{w, h, std::vector<std::uint8_t>(w * h * 4)};
  for (auto& p : im.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return im;
}

}  // namespace

TEST_SUITE("image_io") {
  TEST_CASE("base64 test vectors") {
    // RFC 4648 section 10.
    const std::pair<const char*, const char*> vectors[] = {
        {"", ""},          {"f", "Zg=="},         {"fo", "Zm8="},         {"foo", "Zm9v"},
        {"foob", "Zm9vYg=="}, {"fooba", "Zm9vYmE="}, {"foobar", "Zm9vYmFy"}};
    for (auto [plain, coded] : vectors) {
      CHECK(base64_encode(bytes_of(plain)) == coded);
      CHECK(base64_decode(coded) == bytes_of(plain));
    }
    std::vector<std::uint8_t> all(256);
    for (int i = 0; i < 256; ++i) all[i] = static_cast<std::uint8_t>(i);
    CHECK(base64_decode(base64_encode(all)) == all);
    CHECK_THROWS(base64_decode("Zm9v!"));
  }

  TEST_CASE("PNG round trip is lossless for 8-bit RGBA") {
    for (auto [w, h] : {std::pair<std::size_t, std::size_t>{1, 1}, {7, 3}, {32, 32}, {64, 17}}) {
      const Rgba8 im = noise_image(w, h, w * 31 + h);
      CHECK(decode_png(encode_png(im)) == im);
    }
    test::TempDir dir("io");
    const Rgba8 im = noise_image(9, 9, 1);
    write_png(dir / "x.png", im);
    CHECK(read_png(dir / "x.png") == im);
    CHECK_THROWS_AS(decode_png(bytes_of("not a png")), ImageError);
    CHECK_THROWS_AS(read_png(dir / "missing.png"), ImageError);
  }

  TEST_CASE("tensor conversion clamps, rounds and fills alpha") {
    Tensor<float> rgb({3, 1, 2}, {-0.5f, 0.5f, 1.5f, 0.2f, 0.0f, 1.0f});
    const Rgba8 im = to_rgba8(rgb);
    CHECK(im.pixels == std::vector<std::uint8_t>{0, 255, 0, 255, 128, 51, 255, 255});
    const Tensor<float> back = from_rgba8(im, 4);
    CHECK(back.shape() == Shape{4, 1, 2});
    CHECK(back.at(3, 0, 0) == 1.0f);
    CHECK(back.at(0, 0, 1) == 128 / 255.0f);
    // 8-bit values survive tensor round trips exactly.
    const Rgba8 noise = noise_image(5, 4, 2);
    CHECK(to_rgba8(from_rgba8(noise, 4)) == noise);
  }

  TEST_CASE("GIF container structure") {
    std::vector<Rgba8> frames{noise_image(6, 5, 1), noise_image(6, 5, 2), noise_image(6, 5, 3)};
    const auto gif = encode_gif(frames, 10);
    REQUIRE(gif.size() > 13 + 768);
    CHECK(std::string(gif.begin(), gif.begin() + 6) == "GIF89a");
    CHECK(gif[6] == 6);
    CHECK(gif[8] == 5);
    CHECK(gif.back() == 0x3B);
    const std::string s(gif.begin(), gif.end());
    CHECK(s.find("NETSCAPE2.0") != std::string::npos);
    frames.push_back(noise_image(5, 5, 4));
    CHECK_THROWS_AS(encode_gif(frames), ImageError);
    CHECK_THROWS_AS(encode_gif({}), ImageError);
  }
}
