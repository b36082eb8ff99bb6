#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ncam/dna.hpp"
#include "ncam/model.hpp"

namespace ncam::genelab {

class GeneLabError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Thresholded group mean: each row is a one-hot (asserted) or all-zero
// ("none") row.
struct MeanEncoding {
  DnaEncoding dna;
  double tau = 0.5;

  std::size_t asserted() const;
  bool is_asserted(std::size_t row) const;
};

// Averages the rows of the sources (discretized first unless `soft`) and
// asserts a row's argmax category when its average reaches tau and strictly
// exceeds every other category; otherwise the row becomes "none".
// tau must lie in (0.25, 1].
MeanEncoding mean_encoding(const std::vector<DnaEncoding>& sources, double tau, bool soft = false);

// Rows asserted in `mean` overwrite the target's rows; "none" rows keep them.
DnaEncoding splice(const DnaEncoding& target, const MeanEncoding& mean);

// Soft DNA of an image (encoder -> DNA encoder), no gradient tape.
DnaEncoding encode_image(const NcamModel<float>& model, const Tensor<float>& image);

struct Growth {
  Tensor<float> image;                // final visible channels
  std::vector<Tensor<float>> frames;  // every frame_stride-th step plus the last
};

// DNA -> decoder -> predictor -> NCA growth. The code is fed as given (soft,
// one-hot or with "none" rows).
Growth grow_from_dna(const NcamModel<float>& model, const DnaEncoding& dna, std::uint64_t grow_seed = 0,
                     std::size_t frame_stride = 0);

// Structured-text splice recipe: {"sources": [...], "tau": t, "target": id, "soft": false}.
struct SpliceRecipe {
  std::vector<std::string> sources;
  double tau = 0.5;
  std::string target;
  bool soft = false;
};

void to_json(nlohmann::json& j, const SpliceRecipe& r);
void from_json(const nlohmann::json& j, SpliceRecipe& r);

}  // namespace ncam::genelab
