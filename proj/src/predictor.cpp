#include "ncam/predictor.hpp"

#include <cmath>

#include "ncam/ops.hpp"

namespace ncam {

namespace {
constexpr double kHeadWeightScale = 0.1;
}

template <typename T>
ParamPredictor<T>::ParamPredictor(ParamStore<T>& store, const PredictorConfig& cfg, std::size_t input_dim,
                                  const NcaConfig& nca, Rng& rng, bool trainable_leaks)
    : cfg_(cfg), nca_(nca), input_dim_(input_dim) {
  std::tie(in_w_, in_b_) = add_dense(store, "predictor.in", input_dim, cfg.fcb_width, rng);
  for (std::size_t i = 0; i < cfg.fcb_count; ++i) {
    fcbs_.emplace_back(store, "predictor.fcb" + std::to_string(i), BlockKind::kFCB, cfg.fcb_width, cfg.fcb_expansion,
                       rng, trainable_leaks);
  }
  const std::size_t p = nca.param_count();
  const std::size_t w1_len = nca.hidden * nca.perception_channels();
  const std::size_t first_layer = w1_len + nca.hidden;
  Tensor<T> w({p, cfg.fcb_width});
  Tensor<T> b({p});
  const double row_sd = kHeadWeightScale * std::sqrt(1.0 / static_cast<double>(cfg.fcb_width));
  const double w1_sd = std::sqrt(2.0 / static_cast<double>(nca.perception_channels()));
  for (std::size_t r = 0; r < first_layer; ++r) {
    const double target_sd = r < w1_len ? w1_sd : 0.0;
    for (std::size_t c = 0; c < cfg.fcb_width; ++c) w[r * cfg.fcb_width + c] = static_cast<T>(row_sd * rng.normal());
    b[r] = static_cast<T>(target_sd * rng.normal());
  }
  head_w_ = store.add("predictor.head.w", std::move(w));
  head_b_ = store.add("predictor.head.b", std::move(b));
}

template <typename T>
Var<T> ParamPredictor<T>::forward_flat(Binding<T>& bind, const Var<T>& encoding) const {
  if (encoding.shape() != Shape{input_dim_}) {
    throw ShapeError("parameter predictor expects [" + std::to_string(input_dim_) + "], got " +
                     to_string(encoding.shape()));
  }
  auto h = ops::dense(encoding, bind[in_w_], bind[in_b_]);
  for (const auto& block : fcbs_) h = block.forward(bind, h);
  return ops::dense(h, bind[head_w_], bind[head_b_]);
}

template <typename T>
nca::NcaParams<T> ParamPredictor<T>::forward(Binding<T>& bind, const Var<T>& encoding) const {
  return nca::split_params(forward_flat(bind, encoding), nca_);
}

template class ParamPredictor<float>;
template class ParamPredictor<double>;

}  // namespace ncam
