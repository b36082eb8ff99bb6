#include "ncam/model.hpp"

#include "ncam/ops.hpp"

namespace ncam {

template <typename T>
NcamModel<T>::NcamModel(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(init_seed);
  const bool leaks = cfg_.leak_factors;
  encoder_ = Encoder<T>(params_, cfg_.encoder, cfg_.nca.visible, cfg_.height, cfg_.width, rng, leaks);
  if (cfg_.mode == EncodingMode::kDna) dna_ = DnaCodec<T>(params_, cfg_.dna, cfg_.encoder.dim, rng, leaks);
  predictor_ = ParamPredictor<T>(params_, cfg_.predictor, cfg_.encoder.dim, cfg_.nca, rng, leaks);
  nca_leak_ = add_leak(params_, "nca.leak", leaks);
}

template <typename T>
Var<T> NcamModel<T>::encode(Binding<T>& bind, const Var<T>& image) const {
  return encoder_.forward(bind, image);
}

template <typename T>
Var<T> NcamModel<T>::dna_encode(Binding<T>& bind, const Var<T>& encoding) const {
  if (cfg_.mode != EncodingMode::kDna) throw ConfigError("model was built in continuous mode, no DNA codec");
  return dna_.encode(bind, encoding);
}

template <typename T>
Var<T> NcamModel<T>::dna_decode(Binding<T>& bind, const Var<T>& dna) const {
  if (cfg_.mode != EncodingMode::kDna) throw ConfigError("model was built in continuous mode, no DNA codec");
  return dna_.decode(bind, dna);
}

template <typename T>
nca::NcaParams<T> NcamModel<T>::predict(Binding<T>& bind, const Var<T>& decoded) const {
  return predictor_.forward(bind, decoded);
}

template <typename T>
nca::GrowResult<T> NcamModel<T>::grow(Binding<T>& bind, const nca::NcaParams<T>& params, std::uint64_t seed,
                                      std::size_t frame_stride) const {
  return nca::grow(bind.graph(), params, bind[nca_leak_], cfg_.nca, cfg_.height, cfg_.width, seed, frame_stride);
}

namespace {

template <typename T>
Tensor<T> one_hot(const Tensor<T>& probs) {
  DnaEncoding hard = discretize(DnaEncoding{probs.template cast<float>()});
  return hard.probs.template cast<T>();
}

}  // namespace

template <typename T>
typename NcamModel<T>::Forward NcamModel<T>::reconstruct(Binding<T>& bind, const Tensor<T>& image,
                                                         const Options& options) const {
  Graph<T>& g = bind.graph();
  Forward f;
  f.encoding = encode(bind, g.constant(image));
  if (cfg_.mode == EncodingMode::kDna) {
    Var<T> dna = dna_encode(bind, f.encoding);
    if (options.discretize) dna = g.constant(one_hot(dna.value()));
    if (options.mutation) dna = apply_mutation(dna, *options.mutation);
    f.dna = dna;
    f.decoded = dna_decode(bind, dna);
  } else {
    f.decoded = f.encoding;
  }
  f.nca = predict(bind, f.decoded);
  f.growth = grow(bind, f.nca, options.grow_seed, options.frame_stride);
  f.image = nca::visible(f.growth.grid.state, cfg_.nca.visible);
  return f;
}

template <typename T>
typename NcamModel<T>::Forward NcamModel<T>::grow_from_dna(Binding<T>& bind, const Tensor<T>& dna,
                                                           const Options& options) const {
  Graph<T>& g = bind.graph();
  Forward f;
  Var<T> code = g.constant(options.discretize ? one_hot(dna) : dna);
  if (options.mutation) code = apply_mutation(code, *options.mutation);
  f.dna = code;
  f.decoded = dna_decode(bind, code);
  f.encoding = f.decoded;
  f.nca = predict(bind, f.decoded);
  f.growth = grow(bind, f.nca, options.grow_seed, options.frame_stride);
  f.image = nca::visible(f.growth.grid.state, cfg_.nca.visible);
  return f;
}

template class NcamModel<float>;
template class NcamModel<double>;

}  // namespace ncam
