#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "ncam/graph.hpp"

// Differentiable operations over Graph variables. Inputs created with
// Graph::constant() receive no gradient (used for masks and fixed kernels).
namespace ncam::ops {

inline constexpr double kInstanceNormEpsilon = 1e-5;

// Same-padded cross-correlation. input [C,H,W], kernels [M,C,K,K], K in {1,3}.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernels, const std::optional<Var<T>>& bias = std::nullopt);

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernels, const Var<T>& bias) {
  return conv2d(input, kernels, std::optional<Var<T>>(bias));
}

// Applies one fixed 3x3 kernel to every channel independently.
template <typename T>
Var<T> depthwise_conv3x3(const Var<T>& input, const Tensor<T>& kernel);

// Fused [x, x*kx, x*ky] stack along channels (kx, ky fixed 3x3 kernels
// applied depthwise), optionally followed by instance_norm. Same values and
// gradients as the composition of depthwise_conv3x3, concat and
// instance_norm, in one pass.
template <typename T>
Var<T> stencil_stack(const Var<T>& input, const Tensor<T>& kx, const Tensor<T>& ky, bool normalize,
                     double epsilon = kInstanceNormEpsilon);

// weights [P,N] * input [N] + bias [P]
template <typename T>
Var<T> dense(const Var<T>& input, const Var<T>& weights, const Var<T>& bias);

// Per-channel spatial standardization, no affine terms.
template <typename T>
Var<T> instance_norm(const Var<T>& input, double epsilon = kInstanceNormEpsilon);

template <typename T>
Var<T> relu(const Var<T>& x);

template <typename T>
Var<T> softmax_lastdim(const Var<T>& x);

// Mean squared error, scalar output of shape [1].
template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> sum(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& x, T factor);

// x * s where s is a single-element variable (the leak factors).
template <typename T>
Var<T> scale_by(const Var<T>& x, const Var<T>& s);

// Mean over the listed axes; remaining axes keep their order. Reducing every
// axis yields shape [1].
template <typename T>
Var<T> mean_over_axes(const Var<T>& x, const std::vector<std::size_t>& axes);

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

// [m,n] -> [n,m]
template <typename T>
Var<T> transpose2d(const Var<T>& x);

// Contiguous window of the flattened input, reshaped.
template <typename T>
Var<T> slice_flat(const Var<T>& x, std::size_t offset, Shape shape);

}  // namespace ncam::ops
