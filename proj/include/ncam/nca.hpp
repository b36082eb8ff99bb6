#pragma once

#include <cstdint>
#include <vector>

#include "ncam/config.hpp"
#include "ncam/graph.hpp"
#include "ncam/rng.hpp"

namespace ncam::nca {

// The two 1x1 update convolutions of one automaton.
template <typename T>
struct NcaParams {
  Var<T> w1;  // [hidden, 3*channels, 1, 1]
  Var<T> b1;  // [hidden]
  Var<T> w2;  // [channels, hidden, 1, 1]
  Var<T> b2;  // [channels]
};

// Splits a flat vector of NcaConfig::param_count() scalars into the update
// layers, in (w1, b1, w2, b2) order.
template <typename T>
NcaParams<T> split_params(const Var<T>& flat, const NcaConfig& cfg);

template <typename T>
struct CellGrid {
  Var<T> state;  // [channels, H, W]; the first `visible` channels are the image
  std::size_t step_index = 0;
};

// All zeros except the center cell, where alpha (RGBA only) and every hidden
// channel are 1.
template <typename T>
Tensor<T> seed_state(std::size_t height, std::size_t width, const NcaConfig& cfg);

template <typename T>
CellGrid<T> seed_grid(Graph<T>& graph, std::size_t height, std::size_t width, const NcaConfig& cfg);

// Identity, Sobel-x and Sobel-y responses of every channel, concatenated as
// [identity(all), sobel_x(all), sobel_y(all)], then instance-normalized.
template <typename T>
Var<T> perceive(const Var<T>& state, bool normalize = true);

template <typename T>
Tensor<T> sobel_x();
template <typename T>
Tensor<T> sobel_y();

// Per-cell Bernoulli(p) firing mask broadcast over channels: [channels, H, W].
template <typename T>
Tensor<T> cell_mask(std::size_t channels, std::size_t height, std::size_t width, double p, Rng& rng);

// Raw update network output for every cell, before masking and leak scaling.
template <typename T>
Var<T> update(const Var<T>& state, const NcaParams<T>& params, const NcaConfig& cfg);

// state + leak * mask * update. With update_prob == 1 no random numbers are drawn.
template <typename T>
CellGrid<T> step(const CellGrid<T>& grid, const NcaParams<T>& params, const Var<T>& leak, const NcaConfig& cfg,
                 Rng& rng);

template <typename T>
struct GrowResult {
  CellGrid<T> grid;
  std::vector<Tensor<T>> frames;  // visible channels
};

// Runs cfg.steps steps from the seed. With frame_stride k > 0 a frame is kept
// after every k-th step and after the last one: ceil(steps / k) frames.
template <typename T>
GrowResult<T> grow(Graph<T>& graph, const NcaParams<T>& params, const Var<T>& leak, const NcaConfig& cfg,
                   std::size_t height, std::size_t width, std::uint64_t seed, std::size_t frame_stride = 0);

// First `visible` channels of a [channels, H, W] state.
template <typename T>
Var<T> visible(const Var<T>& state, std::size_t visible_channels);

template <typename T>
Tensor<T> visible(const Tensor<T>& state, std::size_t visible_channels);

}  // namespace ncam::nca
