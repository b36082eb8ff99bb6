#pragma once

#include <cstdint>
#include <optional>

#include "ncam/dna.hpp"
#include "ncam/encoder.hpp"
#include "ncam/predictor.hpp"

namespace ncam {

// Encoder -> (DNA encoder -> mutation -> DNA decoder) -> parameter predictor
// -> NCA growth from the pixel seed.
template <typename T>
class NcamModel {
 public:
  NcamModel(const ModelConfig& cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  struct Options {
    std::optional<MutationPlan> mutation;  // DNA mode only
    bool discretize = false;               // one-hot DNA before decoding (inference)
    std::uint64_t grow_seed = 0;
    std::size_t frame_stride = 0;
  };

  struct Forward {
    Var<T> encoding;            // continuous e [D]
    std::optional<Var<T>> dna;  // [D, 16, 4] as fed to the decoder
    Var<T> decoded;             // predictor input [D]
    nca::NcaParams<T> nca;
    nca::GrowResult<T> growth;
    Var<T> image;  // final visible channels
  };

  Var<T> encode(Binding<T>& bind, const Var<T>& image) const;
  Var<T> dna_encode(Binding<T>& bind, const Var<T>& encoding) const;
  Var<T> dna_decode(Binding<T>& bind, const Var<T>& dna) const;
  nca::NcaParams<T> predict(Binding<T>& bind, const Var<T>& decoded) const;
  Var<T> nca_leak(Binding<T>& bind) const { return bind[nca_leak_]; }
  nca::GrowResult<T> grow(Binding<T>& bind, const nca::NcaParams<T>& params, std::uint64_t seed,
                          std::size_t frame_stride = 0) const;

  // Full auto-encoder pass on one image [visible, H, W].
  Forward reconstruct(Binding<T>& bind, const Tensor<T>& image, const Options& options) const;
  // DNA -> image, bypassing the encoders.
  Forward grow_from_dna(Binding<T>& bind, const Tensor<T>& dna, const Options& options) const;

  const Encoder<T>& encoder() const { return encoder_; }
  const DnaCodec<T>& dna_codec() const { return dna_; }
  const ParamPredictor<T>& predictor() const { return predictor_; }
  ParamId nca_leak_id() const { return nca_leak_; }

 private:
  ModelConfig cfg_;
  ParamStore<T> params_;
  Encoder<T> encoder_;
  DnaCodec<T> dna_;
  ParamPredictor<T> predictor_;
  ParamId nca_leak_ = 0;
};

}  // namespace ncam
