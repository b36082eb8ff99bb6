#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace ncam {

enum class EncodingMode { kContinuous, kDna };
enum class BlockKind { kCB3, kCB1, kFCB };

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct NcaConfig {
  std::size_t channels = 16;
  std::size_t visible = 3;
  std::size_t hidden = 32;
  double update_prob = 1.0;
  std::size_t steps = 32;
  bool normalize = true;

  std::size_t perception_channels() const { return 3 * channels; }
  // Scalars in (w1, b1, w2, b2) of the two 1x1 update convolutions.
  std::size_t param_count() const {
    return perception_channels() * hidden + hidden + hidden * channels + channels;
  }
  void validate() const;
};

struct EncoderConfig {
  std::size_t width = 8;
  std::vector<BlockKind> blocks{BlockKind::kCB3, BlockKind::kCB1, BlockKind::kCB3, BlockKind::kCB1};
  std::size_t fcb_count = 2;
  std::size_t fcb_width = 128;
  std::size_t fcb_expansion = 2;
  std::size_t dim = 64;
  bool slices = true;
  void validate() const;
};

struct DnaConfig {
  std::size_t gene_length = 16;
  std::size_t categories = 4;
  std::size_t width = 16;
  std::size_t depth = 4;
  double mutation_rate = 0.5;
  void validate() const;
};

struct PredictorConfig {
  std::size_t fcb_count = 2;
  std::size_t fcb_width = 128;
  std::size_t fcb_expansion = 2;
  void validate() const;
};

struct ModelConfig {
  EncodingMode mode = EncodingMode::kContinuous;
  std::size_t height = 32;
  std::size_t width = 32;
  NcaConfig nca;
  EncoderConfig encoder;
  DnaConfig dna;
  PredictorConfig predictor;
  bool leak_factors = true;  // false: every leak factor frozen at 1.0
  void validate() const;
};

// Expansion factor of the inner layer of each residual block kind.
std::size_t default_expansion(BlockKind kind);

std::string to_string(EncodingMode mode);
std::string to_string(BlockKind kind);
EncodingMode parse_encoding_mode(const std::string& s);
BlockKind parse_block_kind(const std::string& s);

void to_json(nlohmann::json& j, const NcaConfig& c);
void from_json(const nlohmann::json& j, NcaConfig& c);
void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const DnaConfig& c);
void from_json(const nlohmann::json& j, DnaConfig& c);
void to_json(nlohmann::json& j, const PredictorConfig& c);
void from_json(const nlohmann::json& j, PredictorConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace ncam
