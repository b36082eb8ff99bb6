#pragma once

#include <vector>

#include "ncam/blocks.hpp"

namespace ncam {

// Concatenation of axis means of x [c,h,w]:
//   mean over {h,w} (c), mean over h (c*w), mean over w (c*h), mean over c (h*w).
template <typename T>
Var<T> slice_pool(const Var<T>& x);

std::size_t slice_pool_length(std::size_t c, std::size_t h, std::size_t w, bool slices);

// Continuous encoder: 3x3 stem, residual CB3/CB1 trunk at constant width and
// resolution, slice pooling, projection, FCB stack, final dense to `dim`.
template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(ParamStore<T>& store, const EncoderConfig& cfg, std::size_t channels, std::size_t height,
          std::size_t width, Rng& rng, bool trainable_leaks);

  // image [channels, H, W] -> [dim]
  Var<T> forward(Binding<T>& bind, const Var<T>& image) const;

  const std::vector<ResidualBlock<T>>& trunk() const { return trunk_; }
  const std::vector<ResidualBlock<T>>& fcbs() const { return fcbs_; }

 private:
  EncoderConfig cfg_;
  std::size_t channels_ = 0, height_ = 0, width_ = 0;
  ParamId stem_w_ = 0, stem_b_ = 0, proj_w_ = 0, proj_b_ = 0, out_w_ = 0, out_b_ = 0;
  std::vector<ResidualBlock<T>> trunk_;
  std::vector<ResidualBlock<T>> fcbs_;
};

}  // namespace ncam
