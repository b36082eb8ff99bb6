#include "ncam/encoder.hpp"

#include "ncam/ops.hpp"

namespace ncam {

std::size_t slice_pool_length(std::size_t c, std::size_t h, std::size_t w, bool slices) {
  return slices ? c + c * w + c * h + h * w : c;
}

template <typename T>
Var<T> slice_pool(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw ShapeError("slice_pool expects [c,h,w], got " + to_string(s));
  auto flat = [](const Var<T>& v) { return ops::reshape(v, {v.size()}); };
  return ops::concat<T>({ops::mean_over_axes(x, {1, 2}), flat(ops::mean_over_axes(x, {1})),
                         flat(ops::mean_over_axes(x, {2})), flat(ops::mean_over_axes(x, {0}))},
                        0);
}

template <typename T>
Encoder<T>::Encoder(ParamStore<T>& store, const EncoderConfig& cfg, std::size_t channels, std::size_t height,
                    std::size_t width, Rng& rng, bool trainable_leaks)
    : cfg_(cfg), channels_(channels), height_(height), width_(width) {
  std::tie(stem_w_, stem_b_) = add_conv(store, "encoder.stem", channels, cfg.width, 3, rng);
  for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
    trunk_.emplace_back(store, "encoder.trunk" + std::to_string(i), cfg.blocks[i], cfg.width,
                        default_expansion(cfg.blocks[i]), rng, trainable_leaks);
  }
  const std::size_t pooled = slice_pool_length(cfg.width, height, width, cfg.slices);
  std::tie(proj_w_, proj_b_) = add_dense(store, "encoder.proj", pooled, cfg.fcb_width, rng);
  for (std::size_t i = 0; i < cfg.fcb_count; ++i) {
    fcbs_.emplace_back(store, "encoder.fcb" + std::to_string(i), BlockKind::kFCB, cfg.fcb_width, cfg.fcb_expansion,
                       rng, trainable_leaks);
  }
  std::tie(out_w_, out_b_) = add_dense(store, "encoder.out", cfg.fcb_width, cfg.dim, rng);
}

template <typename T>
Var<T> Encoder<T>::forward(Binding<T>& bind, const Var<T>& image) const {
  const Shape& s = image.shape();
  if (s != Shape{channels_, height_, width_}) {
    throw ShapeError("encoder expects image " + to_string(Shape{channels_, height_, width_}) + ", got " +
                     to_string(s));
  }
  auto x = ops::conv2d(image, bind[stem_w_], std::optional<Var<T>>(bind[stem_b_]));
  for (const auto& block : trunk_) x = block.forward(bind, x);
  auto pooled = cfg_.slices ? slice_pool(x) : ops::mean_over_axes(x, {1, 2});
  auto h = ops::dense(pooled, bind[proj_w_], bind[proj_b_]);
  for (const auto& block : fcbs_) h = block.forward(bind, h);
  return ops::dense(h, bind[out_w_], bind[out_b_]);
}

template Var<float> slice_pool(const Var<float>&);
template Var<double> slice_pool(const Var<double>&);
template class Encoder<float>;
template class Encoder<double>;

}  // namespace ncam
