#include "ncam/nca.hpp"

#include <stdexcept>

#include "ncam/ops.hpp"

namespace ncam::nca {

template <typename T>
NcaParams<T> split_params(const Var<T>& flat, const NcaConfig& cfg) {
  if (flat.size() != cfg.param_count()) {
    throw ShapeError("NCA parameter vector " + to_string(flat.shape()) + " does not match the " +
                     std::to_string(cfg.param_count()) + " scalars required by the configuration");
  }
  const std::size_t ch = cfg.channels, hid = cfg.hidden, pch = cfg.perception_channels();
  std::size_t offset = 0;
  auto take = [&](Shape shape) {
    auto v = ops::slice_flat(flat, offset, shape);
    offset += numel(shape);
    return v;
  };
  NcaParams<T> p;
  p.w1 = take({hid, pch, 1, 1});
  p.b1 = take({hid});
  p.w2 = take({ch, hid, 1, 1});
  p.b2 = take({ch});
  return p;
}

template <typename T>
Tensor<T> seed_state(std::size_t height, std::size_t width, const NcaConfig& cfg) {
  Tensor<T> s({cfg.channels, height, width});
  const std::size_t cy = height / 2, cx = width / 2;
  const std::size_t first = cfg.visible == 4 ? 3 : cfg.visible;
  for (std::size_t c = first; c < cfg.channels; ++c) s.at(c, cy, cx) = T{1};
  return s;
}

template <typename T>
CellGrid<T> seed_grid(Graph<T>& graph, std::size_t height, std::size_t width, const NcaConfig& cfg) {
  if (height < 3 || width < 3) throw std::invalid_argument("seed grid must be at least 3x3");
  return CellGrid<T>{graph.constant(seed_state<T>(height, width, cfg)), 0};
}

template <typename T>
Tensor<T> sobel_x() {
  return Tensor<T>({3, 3}, {-1, 0, 1, -2, 0, 2, -1, 0, 1});
}

template <typename T>
Tensor<T> sobel_y() {
  return Tensor<T>({3, 3}, {-1, -2, -1, 0, 0, 0, 1, 2, 1});
}

template <typename T>
Var<T> perceive(const Var<T>& state, bool normalize) {
  static const Tensor<T> kx = sobel_x<T>();
  static const Tensor<T> ky = sobel_y<T>();
  return ops::stencil_stack(state, kx, ky, normalize);
}

template <typename T>
Tensor<T> cell_mask(std::size_t channels, std::size_t height, std::size_t width, double p, Rng& rng) {
  Tensor<T> mask({channels, height, width});
  const std::size_t hw = height * width;
  for (std::size_t i = 0; i < hw; ++i) {
    if (!rng.bernoulli(p)) continue;
    for (std::size_t c = 0; c < channels; ++c) mask[c * hw + i] = T{1};
  }
  return mask;
}

template <typename T>
Var<T> update(const Var<T>& state, const NcaParams<T>& params, const NcaConfig& cfg) {
  auto hidden = ops::relu(ops::conv2d(perceive(state, cfg.normalize), params.w1, params.b1));
  return ops::conv2d(hidden, params.w2, params.b2);
}

template <typename T>
CellGrid<T> step(const CellGrid<T>& grid, const NcaParams<T>& params, const Var<T>& leak, const NcaConfig& cfg,
                 Rng& rng) {
  const Shape& s = grid.state.shape();
  if (s.size() != 3 || s[0] != cfg.channels) {
    throw ShapeError("grid state " + to_string(s) + " does not match " + std::to_string(cfg.channels) + " channels");
  }
  if (params.w1.shape() != Shape{cfg.hidden, cfg.perception_channels(), 1, 1} ||
      params.w2.shape() != Shape{cfg.channels, cfg.hidden, 1, 1}) {
    throw ShapeError("update kernels " + to_string(params.w1.shape()) + " / " + to_string(params.w2.shape()) +
                     " do not match the NCA configuration");
  }
  auto delta = update(grid.state, params, cfg);
  if (cfg.update_prob < 1.0) {
    delta = ops::mul(delta, grid.state.graph().constant(cell_mask<T>(s[0], s[1], s[2], cfg.update_prob, rng)));
  }
  return CellGrid<T>{ops::add(grid.state, ops::scale_by(delta, leak)), grid.step_index + 1};
}

template <typename T>
GrowResult<T> grow(Graph<T>& graph, const NcaParams<T>& params, const Var<T>& leak, const NcaConfig& cfg,
                   std::size_t height, std::size_t width, std::uint64_t seed, std::size_t frame_stride) {
  if (cfg.steps < 1) throw std::invalid_argument("grow requires at least one step");
  Rng rng(seed);
  GrowResult<T> result{seed_grid(graph, height, width, cfg), {}};
  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    result.grid = step(result.grid, params, leak, cfg, rng);
    if (frame_stride > 0 && (t % frame_stride == 0 || t == cfg.steps)) {
      result.frames.push_back(visible(result.grid.state.value(), cfg.visible));
    }
  }
  return result;
}

template <typename T>
Var<T> visible(const Var<T>& state, std::size_t visible_channels) {
  const Shape& s = state.shape();
  return ops::slice_flat(state, 0, {visible_channels, s[1], s[2]});
}

template <typename T>
Tensor<T> visible(const Tensor<T>& state, std::size_t visible_channels) {
  const Shape& s = state.shape();
  const std::size_t n = visible_channels * s[1] * s[2];
  return Tensor<T>({visible_channels, s[1], s[2]}, std::vector<T>(state.raw(), state.raw() + n));
}

#define NCAM_INSTANTIATE_NCA(T)                                                                            \
  template NcaParams<T> split_params(const Var<T>&, const NcaConfig&);                                     \
  template Tensor<T> seed_state(std::size_t, std::size_t, const NcaConfig&);                               \
  template CellGrid<T> seed_grid(Graph<T>&, std::size_t, std::size_t, const NcaConfig&);                   \
  template Tensor<T> sobel_x();                                                                            \
  template Tensor<T> sobel_y();                                                                            \
  template Var<T> perceive(const Var<T>&, bool);                                                           \
  template Tensor<T> cell_mask(std::size_t, std::size_t, std::size_t, double, Rng&);                       \
  template Var<T> update(const Var<T>&, const NcaParams<T>&, const NcaConfig&);                            \
  template CellGrid<T> step(const CellGrid<T>&, const NcaParams<T>&, const Var<T>&, const NcaConfig&, Rng&); \
  template GrowResult<T> grow(Graph<T>&, const NcaParams<T>&, const Var<T>&, const NcaConfig&, std::size_t,  \
                              std::size_t, std::uint64_t, std::size_t);                                    \
  template Var<T> visible(const Var<T>&, std::size_t);                                                     \
  template Tensor<T> visible(const Tensor<T>&, std::size_t);

NCAM_INSTANTIATE_NCA(float)
NCAM_INSTANTIATE_NCA(double)

}  // namespace ncam::nca
