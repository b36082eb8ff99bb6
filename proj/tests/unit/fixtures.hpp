#pragma once

// Small configurations shared by the unit tests: every module at a size
// that runs a forward/backward pass in milliseconds.

#include <cstdint>
#include <filesystem>
#include <string>

#include "ncam/config.hpp"
#include "ncam/data.hpp"
#include "ncam/train.hpp"

namespace ncam::test {

inline ModelConfig tiny_model(EncodingMode mode = EncodingMode::kContinuous, std::size_t visible = 3) {
  ModelConfig m;
  m.mode = mode;
  m.height = 8;
  m.width = 8;
  m.nca.channels = 16;
  m.nca.visible = visible;
  m.nca.hidden = 8;
  m.nca.steps = 6;
  m.encoder.width = 4;
  m.encoder.blocks = {BlockKind::kCB3, BlockKind::kCB1};
  m.encoder.fcb_count = 1;
  m.encoder.fcb_width = 16;
  m.encoder.dim = 6;
  m.dna.width = 4;
  m.dna.depth = 1;
  m.predictor.fcb_count = 1;
  m.predictor.fcb_width = 16;
  return m;
}

inline TrainConfig tiny_train(EncodingMode mode = EncodingMode::kContinuous) {
  TrainConfig t;
  t.model = tiny_model(mode);
  t.batch_size = 2;
  t.total_steps = 3;
  t.seed = 5;
  t.adam.learning_rate = 1e-3;
  t.dataset = "glyphs:lines:4:8";
  return t;
}

inline Dataset tiny_glyphs(std::size_t n = 4) { return gen_glyphs(n, 8, GlyphStyle::kLines, 3); }

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("ncam-test-" + tag + "-" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace ncam::test
