#pragma once

#include <string>

#include "ncam/config.hpp"
#include "ncam/params.hpp"

namespace ncam {

// Dimension-preserving residual block: x + leak * contract(relu(expand(x))).
// CB3/CB1 take [width, H, W] and use 3x3/1x1 convolutions; FCB takes [width]
// and uses dense layers.
template <typename T>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(ParamStore<T>& store, const std::string& prefix, BlockKind kind, std::size_t width,
                std::size_t expansion, Rng& rng, bool trainable_leak);

  Var<T> forward(Binding<T>& bind, const Var<T>& x) const;
  // The expand -> relu -> contract branch alone.
  Var<T> inner(Binding<T>& bind, const Var<T>& x) const;

  BlockKind kind() const { return kind_; }
  std::size_t width() const { return width_; }
  ParamId leak() const { return leak_; }
  ParamId expand_weights() const { return w_in_; }
  ParamId contract_weights() const { return w_out_; }

 private:
  BlockKind kind_ = BlockKind::kCB1;
  std::size_t width_ = 0;
  ParamId w_in_ = 0, b_in_ = 0, w_out_ = 0, b_out_ = 0, leak_ = 0;
};

// Adds a leak factor initialized at 0.1, or frozen at 1.0 when !trainable.
template <typename T>
ParamId add_leak(ParamStore<T>& store, const std::string& name, bool trainable);

// Adds a He-initialized dense layer [out, in] with zero bias; returns (weights, bias).
template <typename T>
std::pair<ParamId, ParamId> add_dense(ParamStore<T>& store, const std::string& prefix, std::size_t in,
                                      std::size_t out, Rng& rng);

template <typename T>
std::pair<ParamId, ParamId> add_conv(ParamStore<T>& store, const std::string& prefix, std::size_t in,
                                     std::size_t out, std::size_t k, Rng& rng);

}  // namespace ncam
