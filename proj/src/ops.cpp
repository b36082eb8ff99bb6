#include "ncam/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace ncam {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace ncam

namespace ncam::ops {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using CVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  require(a == b, std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

// Rows of a [C*K*K, H*W] patch matrix for same-padded K x K windows.
template <typename T>
void im2col(const T* in, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, T* col) {
  const long pad = static_cast<long>(k / 2);
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * hw;
        const long dy = static_cast<long>(ky) - pad;
        const long dx = static_cast<long>(kx) - pad;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + dy;
          T* out = row + y * w;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::fill(out, out + w, T{0});
            continue;
          }
          const T* src = in + (c * h + static_cast<std::size_t>(sy)) * w;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + dx;
            out[x] = (sx < 0 || sx >= static_cast<long>(w)) ? T{0} : src[sx];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, T* out) {
  const long pad = static_cast<long>(k / 2);
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * hw;
        const long dy = static_cast<long>(ky) - pad;
        const long dx = static_cast<long>(kx) - pad;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + dy;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          T* dst = out + (c * h + static_cast<std::size_t>(sy)) * w;
          const T* src = row + y * w;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + dx;
            if (sx >= 0 && sx < static_cast<long>(w)) dst[sx] += src[x];
          }
        }
      }
    }
  }
}

// Reductions with a fixed number of independent accumulators: the compiler
// can vectorize the lanes, and the summation order does not depend on the
// buffer's address (Eigen's redux peels for alignment, which makes results
// vary in the last bits between otherwise identical calls).
inline constexpr std::size_t kLanes = 8;

template <typename T, typename F>
T reduce_lanes(std::size_t n, F term) {
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += term(i + l);
  for (std::size_t l = 0; i < n; ++i, ++l) acc[l] += term(i);
  T total{0};
  for (std::size_t l = 0; l < kLanes; ++l) total += acc[l];
  return total;
}

template <typename T>
T sum_of(const T* x, std::size_t n) {
  return reduce_lanes<T>(n, [x](std::size_t i) { return x[i]; });
}

template <typename T>
T dot_of(const T* a, const T* b, std::size_t n) {
  return reduce_lanes<T>(n, [a, b](std::size_t i) { return a[i] * b[i]; });
}

template <typename T>
T squared_distance(const T* a, const T* b, std::size_t n) {
  return reduce_lanes<T>(n, [a, b](std::size_t i) {
    const T d = a[i] - b[i];
    return d * d;
  });
}

// Row-major strides.
Shape strides_of(const Shape& shape) {
  Shape s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// For every flat input index, the flat output index after reducing `axes`.
std::vector<std::size_t> reduction_map(const Shape& shape, const std::vector<bool>& reduced, Shape& out_shape) {
  out_shape.clear();
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (!reduced[i]) out_shape.push_back(shape[i]);
  const Shape out_strides = strides_of(out_shape);
  std::vector<std::size_t> in_to_out_stride(shape.size(), 0);
  for (std::size_t i = 0, j = 0; i < shape.size(); ++i)
    if (!reduced[i]) in_to_out_stride[i] = out_strides[j++];
  if (out_shape.empty()) out_shape = {1};

  std::vector<std::size_t> map(numel(shape));
  Shape idx(shape.size(), 0);
  for (std::size_t flat = 0; flat < map.size(); ++flat) {
    std::size_t o = 0;
    for (std::size_t d = 0; d < shape.size(); ++d) o += idx[d] * in_to_out_stride[d];
    map[flat] = o;
    for (std::size_t d = shape.size(); d-- > 0;) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernels, const std::optional<Var<T>>& bias) {
  const Shape& xs = input.shape();
  const Shape& ks = kernels.shape();
  require(xs.size() == 3 && ks.size() == 4 && ks[1] == xs[0] && ks[2] == ks[3] && (ks[2] == 1 || ks[2] == 3),
          "conv2d: input " + to_string(xs) + " incompatible with kernels " + to_string(ks));
  const std::size_t c = xs[0], h = xs[1], w = xs[2], m = ks[0], k = ks[2], hw = h * w;
  if (bias) {
    require(bias->shape() == Shape{m}, "conv2d: bias " + to_string(bias->shape()) + " incompatible with kernels " +
                                           to_string(ks));
  }
  const std::size_t ck = c * k * k;

  Tensor<T> out({m, h, w});
  MapR<T> y(out.raw(), m, hw);
  CMapR<T> wmat(kernels.value().raw(), m, ck);
  if (k == 1) {
    y.noalias() = wmat * CMapR<T>(input.value().raw(), c, hw);
  } else {
    std::vector<T> col(ck * hw);
    im2col(input.value().raw(), c, h, w, k, col.data());
    y.noalias() = wmat * CMapR<T>(col.data(), ck, hw);
  }
  if (bias) {
    const T* b = bias->value().raw();
    for (std::size_t i = 0; i < m; ++i) y.row(i).array() += b[i];
  }

  Graph<T>& g = input.graph();
  std::vector<Var<T>> inputs{input, kernels};
  if (bias) inputs.push_back(*bias);
  return g.record(std::move(out), inputs, [=](Graph<T>& g, std::span<const T> dy_span) {
    CMapR<T> dy(dy_span.data(), m, hw);
    const T* x = g.value(input).raw();
    std::vector<T> col;
    if (k != 1 && (g.requires_grad(kernels) || g.requires_grad(input))) {
      col.resize(ck * hw);
      im2col(x, c, h, w, k, col.data());
    }
    const T* xcol = k == 1 ? x : col.data();
    if (g.requires_grad(kernels)) {
      MapR<T> dw(g.grad_buffer(kernels).data(), m, ck);
      dw.noalias() += dy * CMapR<T>(xcol, ck, hw).transpose();
    }
    if (bias && g.requires_grad(*bias)) {
      T* db = g.grad_buffer(*bias).data();
      for (std::size_t r = 0; r < m; ++r) db[r] += sum_of(dy_span.data() + r * hw, hw);
    }
    if (g.requires_grad(input)) {
      CMapR<T> wm(g.value(kernels).raw(), m, ck);
      if (k == 1) {
        MapR<T> dx(g.grad_buffer(input).data(), c, hw);
        dx.noalias() += wm.transpose() * dy;
      } else {
        MatR<T> dcol = wm.transpose() * dy;
        col2im_add(dcol.data(), c, h, w, k, g.grad_buffer(input).data());
      }
    }
  });
}

template <typename T>
Var<T> depthwise_conv3x3(const Var<T>& input, const Tensor<T>& kernel) {
  const Shape& xs = input.shape();
  require(xs.size() == 3, "depthwise_conv3x3: input must be [C,H,W], got " + to_string(xs));
  require(kernel.shape() == Shape{3, 3}, "depthwise_conv3x3: kernel must be [3x3], got " + to_string(kernel.shape()));
  const std::size_t c = xs[0], h = xs[1], w = xs[2];
  const T* kv = kernel.raw();

  // Accumulate one shifted plane per non-zero tap.
  auto apply = [c, h, w](const T* src, T* dst, const T* taps, bool transpose) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T tap = taps[ky * 3 + kx];
        if (tap == T{0}) continue;
        const long dy = transpose ? 1 - ky : ky - 1;
        const long dx = transpose ? 1 - kx : kx - 1;
        const long y0 = std::max<long>(0, -dy), y1 = std::min<long>(h, static_cast<long>(h) - dy);
        const long x0 = std::max<long>(0, -dx), x1 = std::min<long>(w, static_cast<long>(w) - dx);
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T* s = src + ch * h * w;
          T* d = dst + ch * h * w;
          for (long y = y0; y < y1; ++y) {
            const T* srow = s + (y + dy) * static_cast<long>(w) + dx;
            T* drow = d + y * static_cast<long>(w);
            for (long x = x0; x < x1; ++x) drow[x] += tap * srow[x];
          }
        }
      }
    }
  };

  Tensor<T> out(xs);
  apply(input.value().raw(), out.raw(), kv, false);
  std::vector<T> taps(kv, kv + 9);
  return input.graph().record(std::move(out), {input}, [=](Graph<T>& g, std::span<const T> dy) {
    apply(dy.data(), g.grad_buffer(input).data(), taps.data(), true);
  });
}

template <typename T>
Var<T> stencil_stack(const Var<T>& input, const Tensor<T>& kx, const Tensor<T>& ky, bool normalize, double epsilon) {
  const Shape& xs = input.shape();
  require(xs.size() == 3, "stencil_stack: input must be [C,H,W], got " + to_string(xs));
  require(kx.shape() == Shape{3, 3} && ky.shape() == Shape{3, 3}, "stencil_stack: kernels must be [3x3]");
  const std::size_t c = xs[0], h = xs[1], w = xs[2], hw = h * w, pw = w + 2;
  std::array<T, 9> kxa, kya;
  std::copy_n(kx.raw(), 9, kxa.begin());
  std::copy_n(ky.raw(), 9, kya.begin());

  Tensor<T> out({3 * c, h, w});
  std::vector<T> padded((h + 2) * pw, T{0});
  const T* x = input.value().raw();
  T* y = out.raw();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* xc = x + ch * hw;
    std::copy_n(xc, hw, y + ch * hw);
    for (std::size_t r = 0; r < h; ++r) std::copy_n(xc + r * w, w, padded.data() + (r + 1) * pw + 1);
    T* ox = y + (c + ch) * hw;
    T* oy = y + (2 * c + ch) * hw;
    for (std::size_t r = 0; r < h; ++r) {
      const T* p0 = padded.data() + r * pw;
      const T* p1 = p0 + pw;
      const T* p2 = p1 + pw;
      T* rx = ox + r * w;
      T* ry = oy + r * w;
      for (std::size_t q = 0; q < w; ++q) {
        rx[q] = kxa[0] * p0[q] + kxa[1] * p0[q + 1] + kxa[2] * p0[q + 2] + kxa[3] * p1[q] + kxa[4] * p1[q + 1] +
                kxa[5] * p1[q + 2] + kxa[6] * p2[q] + kxa[7] * p2[q + 1] + kxa[8] * p2[q + 2];
        ry[q] = kya[0] * p0[q] + kya[1] * p0[q + 1] + kya[2] * p0[q + 2] + kya[3] * p1[q] + kya[4] * p1[q + 1] +
                kya[5] * p1[q + 2] + kya[6] * p2[q] + kya[7] * p2[q + 1] + kya[8] * p2[q + 2];
      }
    }
  }

  std::vector<T> inv_std;
  if (normalize) {
    inv_std.resize(3 * c);
    for (std::size_t pl = 0; pl < 3 * c; ++pl) {
      T* yp = y + pl * hw;
      const T mean = sum_of(yp, hw) / static_cast<T>(hw);
      for (std::size_t i = 0; i < hw; ++i) yp[i] -= mean;
      const T var = dot_of(yp, yp, hw) / static_cast<T>(hw);
      const T is = T{1} / std::sqrt(var + static_cast<T>(epsilon));
      inv_std[pl] = is;
      for (std::size_t i = 0; i < hw; ++i) yp[i] *= is;
    }
  }

  Graph<T>& graph = input.graph();
  const std::size_t self = graph.node_count();
  return graph.record(std::move(out), {input}, [=](Graph<T>& g, std::span<const T> dy_span) {
    const T* dy = dy_span.data();
    std::vector<T> pre;
    if (normalize) {
      const T* yv = g.value(Var<T>(&g, self)).raw();
      pre.resize(3 * c * hw);
      for (std::size_t pl = 0; pl < 3 * c; ++pl) {
        const T* dyp = dy + pl * hw;
        const T* yp = yv + pl * hw;
        const T mean_dy = sum_of(dyp, hw) / static_cast<T>(hw);
        const T mean_dyy = dot_of(dyp, yp, hw) / static_cast<T>(hw);
        const T is = inv_std[pl];
        T* gp = pre.data() + pl * hw;
        for (std::size_t i = 0; i < hw; ++i) gp[i] = is * (dyp[i] - mean_dy - yp[i] * mean_dyy);
      }
      dy = pre.data();
    }
    T* dx = g.grad_buffer(input).data();
    std::vector<T> acc((h + 2) * pw);
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::fill(acc.begin(), acc.end(), T{0});
      const T* gx = dy + (c + ch) * hw;
      const T* gy = dy + (2 * c + ch) * hw;
      for (std::size_t r = 0; r < h; ++r) {
        T* a0 = acc.data() + r * pw;
        T* a1 = a0 + pw;
        T* a2 = a1 + pw;
        const T* rx = gx + r * w;
        const T* ry = gy + r * w;
        for (std::size_t q = 0; q < w; ++q) {
          const T u = rx[q], v = ry[q];
          a0[q] += kxa[0] * u + kya[0] * v;
          a0[q + 1] += kxa[1] * u + kya[1] * v;
          a0[q + 2] += kxa[2] * u + kya[2] * v;
          a1[q] += kxa[3] * u + kya[3] * v;
          a1[q + 1] += kxa[4] * u + kya[4] * v;
          a1[q + 2] += kxa[5] * u + kya[5] * v;
          a2[q] += kxa[6] * u + kya[6] * v;
          a2[q + 1] += kxa[7] * u + kya[7] * v;
          a2[q + 2] += kxa[8] * u + kya[8] * v;
        }
      }
      const T* gi = dy + ch * hw;
      T* dxc = dx + ch * hw;
      for (std::size_t r = 0; r < h; ++r) {
        const T* arow = acc.data() + (r + 1) * pw + 1;
        for (std::size_t q = 0; q < w; ++q) dxc[r * w + q] += gi[r * w + q] + arow[q];
      }
    }
  });
}

template <typename T>
Var<T> dense(const Var<T>& input, const Var<T>& weights, const Var<T>& bias) {
  const Shape& xs = input.shape();
  const Shape& ws = weights.shape();
  require(xs.size() == 1 && ws.size() == 2 && ws[1] == xs[0] && bias.shape() == Shape{ws[0]},
          "dense: input " + to_string(xs) + " incompatible with weights " + to_string(ws) + " and bias " +
              to_string(bias.shape()));
  const std::size_t n = xs[0], p = ws[0];
  Tensor<T> out({p});
  VecMap<T> y(out.raw(), p);
  CMapR<T> wm(weights.value().raw(), p, n);
  y.noalias() = wm * CVecMap<T>(input.value().raw(), n);
  y += CVecMap<T>(bias.value().raw(), p);
  return input.graph().record(std::move(out), {input, weights, bias}, [=](Graph<T>& g, std::span<const T> dy_span) {
    CVecMap<T> dy(dy_span.data(), p);
    if (g.requires_grad(weights)) {
      MapR<T> dw(g.grad_buffer(weights).data(), p, n);
      dw.noalias() += dy * CVecMap<T>(g.value(input).raw(), n).transpose();
    }
    if (g.requires_grad(bias)) VecMap<T>(g.grad_buffer(bias).data(), p) += dy;
    if (g.requires_grad(input)) {
      VecMap<T> dx(g.grad_buffer(input).data(), n);
      dx.noalias() += CMapR<T>(g.value(weights).raw(), p, n).transpose() * dy;
    }
  });
}

template <typename T>
Var<T> instance_norm(const Var<T>& input, double epsilon) {
  const Shape& xs = input.shape();
  require(xs.size() == 3 && xs[1] * xs[2] >= 1, "instance_norm: input must be [C,H,W], got " + to_string(xs));
  const std::size_t c = xs[0], n = xs[1] * xs[2];
  Tensor<T> out(xs);
  std::vector<T> inv_std(c);
  const T* x = input.value().raw();
  T* y = out.raw();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* xc = x + ch * n;
    T* yc = y + ch * n;
    const T mean = sum_of(xc, n) / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) yc[i] = xc[i] - mean;
    const T var = dot_of(yc, yc, n) / static_cast<T>(n);
    const T is = T{1} / std::sqrt(var + static_cast<T>(epsilon));
    inv_std[ch] = is;
    for (std::size_t i = 0; i < n; ++i) yc[i] *= is;
  }
  Graph<T>& graph = input.graph();
  const std::size_t self = graph.node_count();
  return graph.record(std::move(out), {input}, [=](Graph<T>& g, std::span<const T> dy) {
    const T* yv = g.value(Var<T>(&g, self)).raw();
    T* dx = g.grad_buffer(input).data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* dyc = dy.data() + ch * n;
      const T* yc = yv + ch * n;
      const T mean_dy = sum_of(dyc, n) / static_cast<T>(n);
      const T mean_dyy = dot_of(dyc, yc, n) / static_cast<T>(n);
      T* dxc = dx + ch * n;
      const T is = inv_std[ch];
      for (std::size_t i = 0; i < n; ++i) dxc[i] += is * (dyc[i] - mean_dy - yc[i] * mean_dyy);
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const T* xv = x.value().raw();
  T* y = out.raw();
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) y[i] = xv[i] > T{0} ? xv[i] : T{0};
  return x.graph().record(std::move(out), {x}, [=](Graph<T>& g, std::span<const T> dy) {
    const T* xv = g.value(x).raw();
    T* dx = g.grad_buffer(x).data();
    for (std::size_t i = 0; i < n; ++i)
      if (xv[i] > T{0}) dx[i] += dy[i];
  });
}

template <typename T>
Var<T> softmax_lastdim(const Var<T>& x) {
  const Shape& xs = x.shape();
  require(!xs.empty(), "softmax_lastdim: scalar input");
  const std::size_t k = xs.back(), rows = x.size() / k;
  Tensor<T> out(xs);
  const T* xv = x.value().raw();
  T* y = out.raw();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv + r * k;
    T* yr = y + r * k;
    const T mx = *std::max_element(xr, xr + k);
    T total = 0;
    for (std::size_t i = 0; i < k; ++i) total += (yr[i] = std::exp(xr[i] - mx));
    for (std::size_t i = 0; i < k; ++i) yr[i] /= total;
  }
  Graph<T>& graph = x.graph();
  const std::size_t self = graph.node_count();
  return graph.record(std::move(out), {x}, [=](Graph<T>& g, std::span<const T> dy) {
    const T* yv = g.value(Var<T>(&g, self)).raw();
    T* dx = g.grad_buffer(x).data();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = yv + r * k;
      const T* dyr = dy.data() + r * k;
      T dot = 0;
      for (std::size_t i = 0; i < k; ++i) dot += dyr[i] * yr[i];
      for (std::size_t i = 0; i < k; ++i) dx[r * k + i] += yr[i] * (dyr[i] - dot);
    }
  });
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mse");
  const std::size_t n = a.size();
  const T* av = a.value().raw();
  const T* bv = b.value().raw();
  const T total = squared_distance(av, bv, n);
  Tensor<T> out({1}, std::vector<T>{total / static_cast<T>(n)});
  return a.graph().record(std::move(out), {a, b}, [=](Graph<T>& g, std::span<const T> dy) {
    const T scale = T{2} * dy[0] / static_cast<T>(n);
    const T* av = g.value(a).raw();
    const T* bv = g.value(b).raw();
    if (g.requires_grad(a)) {
      T* da = g.grad_buffer(a).data();
      for (std::size_t i = 0; i < n; ++i) da[i] += scale * (av[i] - bv[i]);
    }
    if (g.requires_grad(b)) {
      T* db = g.grad_buffer(b).data();
      for (std::size_t i = 0; i < n; ++i) db[i] -= scale * (av[i] - bv[i]);
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  Tensor<T> out({1}, std::vector<T>{sum_of(x.value().raw(), x.size())});
  const std::size_t n = x.size();
  return x.graph().record(std::move(out), {x}, [=](Graph<T>& g, std::span<const T> dy) {
    T* dx = g.grad_buffer(x).data();
    for (std::size_t i = 0; i < n; ++i) dx[i] += dy[0];
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.value());
  const T* bv = b.value().raw();
  T* y = out.raw();
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) y[i] += bv[i];
  return a.graph().record(std::move(out), {a, b}, [=](Graph<T>& g, std::span<const T> dy) {
    for (const auto& v : {a, b}) {
      if (!g.requires_grad(v)) continue;
      T* d = g.grad_buffer(v).data();
      for (std::size_t i = 0; i < n; ++i) d[i] += dy[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.value());
  const T* bv = b.value().raw();
  T* y = out.raw();
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) y[i] -= bv[i];
  return a.graph().record(std::move(out), {a, b}, [=](Graph<T>& g, std::span<const T> dy) {
    if (g.requires_grad(a)) {
      T* d = g.grad_buffer(a).data();
      for (std::size_t i = 0; i < n; ++i) d[i] += dy[i];
    }
    if (g.requires_grad(b)) {
      T* d = g.grad_buffer(b).data();
      for (std::size_t i = 0; i < n; ++i) d[i] -= dy[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.value());
  const T* bv = b.value().raw();
  T* y = out.raw();
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) y[i] *= bv[i];
  return a.graph().record(std::move(out), {a, b}, [=](Graph<T>& g, std::span<const T> dy) {
    const T* av = g.value(a).raw();
    const T* bv = g.value(b).raw();
    if (g.requires_grad(a)) {
      T* d = g.grad_buffer(a).data();
      for (std::size_t i = 0; i < n; ++i) d[i] += dy[i] * bv[i];
    }
    if (g.requires_grad(b)) {
      T* d = g.grad_buffer(b).data();
      for (std::size_t i = 0; i < n; ++i) d[i] += dy[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out(x.value());
  for (auto& v : out.data()) v *= factor;
  const std::size_t n = out.size();
  return x.graph().record(std::move(out), {x}, [=](Graph<T>& g, std::span<const T> dy) {
    T* d = g.grad_buffer(x).data();
    for (std::size_t i = 0; i < n; ++i) d[i] += factor * dy[i];
  });
}

template <typename T>
Var<T> scale_by(const Var<T>& x, const Var<T>& s) {
  require(s.size() == 1, "scale_by: factor must have one element, got " + to_string(s.shape()));
  const T factor = s.value()[0];
  Tensor<T> out(x.value());
  for (auto& v : out.data()) v *= factor;
  const std::size_t n = out.size();
  return x.graph().record(std::move(out), {x, s}, [=](Graph<T>& g, std::span<const T> dy) {
    if (g.requires_grad(x)) {
      const T f = g.value(s)[0];
      T* d = g.grad_buffer(x).data();
      for (std::size_t i = 0; i < n; ++i) d[i] += f * dy[i];
    }
    if (g.requires_grad(s)) {
      g.grad_buffer(s)[0] += dot_of(dy.data(), g.value(x).raw(), n);
    }
  });
}

template <typename T>
Var<T> mean_over_axes(const Var<T>& x, const std::vector<std::size_t>& axes) {
  const Shape& xs = x.shape();
  std::vector<bool> reduced(xs.size(), false);
  std::size_t count = 1;
  for (auto a : axes) {
    require(a < xs.size(), "mean_over_axes: axis " + std::to_string(a) + " out of range for " + to_string(xs));
    if (!reduced[a]) count *= xs[a];
    reduced[a] = true;
  }
  Shape out_shape;
  auto map = reduction_map(xs, reduced, out_shape);
  Tensor<T> out(out_shape);
  const T* xv = x.value().raw();
  T* y = out.raw();
  for (std::size_t i = 0; i < map.size(); ++i) y[map[i]] += xv[i];
  const T inv = T{1} / static_cast<T>(count);
  for (auto& v : out.data()) v *= inv;
  return x.graph().record(std::move(out), {x}, [=, map = std::move(map)](Graph<T>& g, std::span<const T> dy) {
    T* dx = g.grad_buffer(x).data();
    for (std::size_t i = 0; i < map.size(); ++i) dx[i] += dy[map[i]] * inv;
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& first = parts.front().shape();
  require(axis < first.size(), "concat: axis " + std::to_string(axis) + " out of range for " + to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    require(ok, "concat: shape mismatch " + to_string(first) + " vs " + to_string(s));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_row = out_shape[axis] * inner;

  Tensor<T> out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t row = p.shape()[axis] * inner;
    const T* src = p.value().raw();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(src + o * row, row, out.raw() + o * out_row + offset);
    offsets.push_back(offset);
    offset += row;
  }
  return parts.front().graph().record(std::move(out), parts, [=](Graph<T>& g, std::span<const T> dy) {
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (!g.requires_grad(parts[i])) continue;
      const std::size_t row = g.value(parts[i]).shape()[axis] * inner;
      T* d = g.grad_buffer(parts[i]).data();
      for (std::size_t o = 0; o < outer; ++o) {
        const T* src = dy.data() + o * out_row + offsets[i];
        for (std::size_t j = 0; j < row; ++j) d[o * row + j] += src[j];
      }
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const std::size_t n = out.size();
  return x.graph().record(std::move(out), {x}, [=](Graph<T>& g, std::span<const T> dy) {
    T* d = g.grad_buffer(x).data();
    for (std::size_t i = 0; i < n; ++i) d[i] += dy[i];
  });
}

template <typename T>
Var<T> transpose2d(const Var<T>& x) {
  require(x.shape().size() == 2, "transpose2d: input must be 2-d, got " + to_string(x.shape()));
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  Tensor<T> out({n, m});
  MapR<T>(out.raw(), n, m) = CMapR<T>(x.value().raw(), m, n).transpose();
  return x.graph().record(std::move(out), {x}, [=](Graph<T>& g, std::span<const T> dy) {
    MapR<T>(g.grad_buffer(x).data(), m, n) += CMapR<T>(dy.data(), n, m).transpose();
  });
}

template <typename T>
Var<T> slice_flat(const Var<T>& x, std::size_t offset, Shape shape) {
  const std::size_t n = numel(shape);
  require(offset + n <= x.size(), "slice_flat: window [" + std::to_string(offset) + ", " + std::to_string(offset + n) +
                                      ") exceeds input " + to_string(x.shape()));
  std::vector<T> data(x.value().raw() + offset, x.value().raw() + offset + n);
  Tensor<T> out(std::move(shape), std::move(data));
  return x.graph().record(std::move(out), {x}, [=](Graph<T>& g, std::span<const T> dy) {
    T* d = g.grad_buffer(x).data() + offset;
    for (std::size_t i = 0; i < n; ++i) d[i] += dy[i];
  });
}

#define NCAM_INSTANTIATE_OPS(T)                                                                  \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&);            \
  template Var<T> depthwise_conv3x3(const Var<T>&, const Tensor<T>&);                            \
  template Var<T> dense(const Var<T>&, const Var<T>&, const Var<T>&);                            \
  template Var<T> stencil_stack(const Var<T>&, const Tensor<T>&, const Tensor<T>&, bool, double); \
  template Var<T> instance_norm(const Var<T>&, double);                                          \
  template Var<T> relu(const Var<T>&);                                                           \
  template Var<T> softmax_lastdim(const Var<T>&);                                                \
  template Var<T> mse(const Var<T>&, const Var<T>&);                                             \
  template Var<T> sum(const Var<T>&);                                                            \
  template Var<T> add(const Var<T>&, const Var<T>&);                                             \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                             \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                             \
  template Var<T> scale(const Var<T>&, T);                                                       \
  template Var<T> scale_by(const Var<T>&, const Var<T>&);                                        \
  template Var<T> mean_over_axes(const Var<T>&, const std::vector<std::size_t>&);                \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                               \
  template Var<T> reshape(const Var<T>&, Shape);                                                 \
  template Var<T> transpose2d(const Var<T>&);                                                    \
  template Var<T> slice_flat(const Var<T>&, std::size_t, Shape);

NCAM_INSTANTIATE_OPS(float)
NCAM_INSTANTIATE_OPS(double)

}  // namespace ncam::ops
