#include "ncam/config.hpp"

#include <nlohmann/json.hpp>

namespace ncam {
namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

void NcaConfig::validate() const {
  require(channels == 16 || channels == 32, "nca.channels must be 16 or 32, got " + std::to_string(channels));
  require(visible == 3 || visible == 4, "nca.visible must be 3 (RGB) or 4 (RGBA), got " + std::to_string(visible));
  require(hidden >= 1, "nca.hidden must be positive");
  require(update_prob > 0.0 && update_prob <= 1.0, "nca.update_prob must lie in (0, 1]");
  require(steps >= 1, "nca.steps must be at least 1");
}

void EncoderConfig::validate() const {
  require(width >= 1 && fcb_width >= 1 && fcb_expansion >= 1 && dim >= 1, "encoder sizes must be positive");
  for (auto k : blocks) require(k != BlockKind::kFCB, "encoder trunk accepts only CB3/CB1 blocks");
}

void DnaConfig::validate() const {
  require(gene_length >= 1 && categories >= 2 && width >= 1, "dna sizes must be positive");
  require(mutation_rate >= 0.0 && mutation_rate <= 1.0, "dna.mutation_rate must lie in [0, 1]");
}

void PredictorConfig::validate() const {
  require(fcb_width >= 1 && fcb_expansion >= 1, "predictor sizes must be positive");
}

void ModelConfig::validate() const {
  require(height >= 3 && width >= 3, "image must be at least 3x3");
  nca.validate();
  encoder.validate();
  dna.validate();
  predictor.validate();
}

std::size_t default_expansion(BlockKind kind) {
  switch (kind) {
    case BlockKind::kCB1:
      return 4;
    case BlockKind::kCB3:
      return 2;
    case BlockKind::kFCB:
      return 2;
  }
  return 1;
}

std::string to_string(EncodingMode mode) { return mode == EncodingMode::kDna ? "dna" : "continuous"; }

std::string to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::kCB1:
      return "CB1";
    case BlockKind::kCB3:
      return "CB3";
    case BlockKind::kFCB:
      return "FCB";
  }
  return "?";
}

EncodingMode parse_encoding_mode(const std::string& s) {
  if (s == "continuous" || s == "ce") return EncodingMode::kContinuous;
  if (s == "dna") return EncodingMode::kDna;
  throw ConfigError("unknown encoding mode '" + s + "' (expected continuous|dna)");
}

BlockKind parse_block_kind(const std::string& s) {
  if (s == "CB1") return BlockKind::kCB1;
  if (s == "CB3") return BlockKind::kCB3;
  if (s == "FCB") return BlockKind::kFCB;
  throw ConfigError("unknown block kind '" + s + "'");
}

void to_json(nlohmann::json& j, const NcaConfig& c) {
  j = {{"channels", c.channels}, {"visible", c.visible},   {"hidden", c.hidden},
       {"update_prob", c.update_prob}, {"steps", c.steps}, {"normalize", c.normalize}};
}

void from_json(const nlohmann::json& j, NcaConfig& c) {
  j.at("channels").get_to(c.channels);
  j.at("visible").get_to(c.visible);
  j.at("hidden").get_to(c.hidden);
  j.at("update_prob").get_to(c.update_prob);
  j.at("steps").get_to(c.steps);
  j.at("normalize").get_to(c.normalize);
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  std::vector<std::string> blocks;
  for (auto k : c.blocks) blocks.push_back(to_string(k));
  j = {{"width", c.width},         {"blocks", blocks},          {"fcb_count", c.fcb_count},
       {"fcb_width", c.fcb_width}, {"fcb_expansion", c.fcb_expansion}, {"dim", c.dim},
       {"slices", c.slices}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  j.at("width").get_to(c.width);
  c.blocks.clear();
  for (const auto& b : j.at("blocks")) c.blocks.push_back(parse_block_kind(b.get<std::string>()));
  j.at("fcb_count").get_to(c.fcb_count);
  j.at("fcb_width").get_to(c.fcb_width);
  j.at("fcb_expansion").get_to(c.fcb_expansion);
  j.at("dim").get_to(c.dim);
  j.at("slices").get_to(c.slices);
}

void to_json(nlohmann::json& j, const DnaConfig& c) {
  j = {{"gene_length", c.gene_length}, {"categories", c.categories}, {"width", c.width},
       {"depth", c.depth},             {"mutation_rate", c.mutation_rate}};
}

void from_json(const nlohmann::json& j, DnaConfig& c) {
  j.at("gene_length").get_to(c.gene_length);
  j.at("categories").get_to(c.categories);
  j.at("width").get_to(c.width);
  j.at("depth").get_to(c.depth);
  j.at("mutation_rate").get_to(c.mutation_rate);
}

void to_json(nlohmann::json& j, const PredictorConfig& c) {
  j = {{"fcb_count", c.fcb_count}, {"fcb_width", c.fcb_width}, {"fcb_expansion", c.fcb_expansion}};
}

void from_json(const nlohmann::json& j, PredictorConfig& c) {
  j.at("fcb_count").get_to(c.fcb_count);
  j.at("fcb_width").get_to(c.fcb_width);
  j.at("fcb_expansion").get_to(c.fcb_expansion);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"mode", to_string(c.mode)}, {"height", c.height},       {"width", c.width},
       {"nca", c.nca},              {"encoder", c.encoder},     {"dna", c.dna},
       {"predictor", c.predictor},  {"leak_factors", c.leak_factors}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.mode = parse_encoding_mode(j.at("mode").get<std::string>());
  j.at("height").get_to(c.height);
  j.at("width").get_to(c.width);
  j.at("nca").get_to(c.nca);
  j.at("encoder").get_to(c.encoder);
  j.at("dna").get_to(c.dna);
  j.at("predictor").get_to(c.predictor);
  j.at("leak_factors").get_to(c.leak_factors);
}

}  // namespace ncam
