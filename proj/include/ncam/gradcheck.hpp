#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "ncam/ops.hpp"
#include "ncam/params.hpp"

// Central finite-difference oracle for the autodiff tape.
//
// The checked scalar is L = sum(f(inputs) * R) with a fixed random R, so
// every output element contributes with its own weight. For each input
// tensor the error is the norm-wise relative difference
//   |g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|, floor)
// over the checked coordinates (all of them, or a random sample of
// `max_coords` for large tensors).
namespace ncam::gradcheck {

struct Options {
  double step = 1e-6;
  std::size_t max_coords = 256;
  double floor = 1e-7;  // denominator floor for (near-)zero gradients
};

struct Result {
  double max_rel_error = 0;
  std::size_t coords_checked = 0;
  std::string worst;  // label of the tensor with the largest error

  void merge(const Result& r) {
    coords_checked += r.coords_checked;
    if (r.max_rel_error >= max_rel_error) {
      max_rel_error = r.max_rel_error;
      worst = r.worst;
    }
  }
};

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

namespace detail {

inline std::vector<std::size_t> pick_coords(std::size_t n, std::size_t max_coords, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n <= max_coords) return idx;
  for (std::size_t i = 0; i < max_coords; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline double rel_error(const std::vector<double>& a, const std::vector<double>& n, double floor) {
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
}

// Checks d loss / d target for every coordinate in `coords`; `value` is the
// storage perturbed in place, `loss` re-evaluates the scalar without a tape.
inline Result check_tensor(const std::string& label, std::vector<double>& value, const Tensor<double>& analytic,
                           const std::function<double()>& loss, const Options& opt, Rng& rng) {
  const auto coords = pick_coords(value.size(), opt.max_coords, rng);
  std::vector<double> a, n;
  for (std::size_t i : coords) {
    const double keep = value[i];
    value[i] = keep + opt.step;
    const double lp = loss();
    value[i] = keep - opt.step;
    const double lm = loss();
    value[i] = keep;
    a.push_back(analytic[i]);
    n.push_back((lp - lm) / (2 * opt.step));
  }
  return Result{rel_error(a, n, opt.floor), coords.size(), label};
}

}  // namespace detail

// f: (graph, input vars) -> output var. Gradients are checked for every input.
inline Result check(std::vector<Tensor<double>> inputs,
                    const std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>& f,
                    std::uint64_t seed, const Options& opt = {}) {
  Rng rng(seed);
  auto weighted = [&](Graph<double>& g, bool record) {
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(record ? g.variable(t) : g.constant(t));
    Var<double> out = f(g, vars);
    return std::make_pair(vars, out);
  };
  Tensor<double> r;
  std::vector<Tensor<double>> analytic;
  {
    Graph<double> g;
    auto [vars, out] = weighted(g, true);
    r = random_tensor(out.shape(), rng);
    Var<double> loss = ops::sum(ops::mul(out, g.constant(r)));
    g.backward(loss);
    for (const auto& v : vars) analytic.push_back(g.grad(v));
  }
  auto loss = [&]() {
    Graph<double> g(GradMode::kNoGrad);
    auto [vars, out] = weighted(g, false);
    return ops::sum(ops::mul(out, g.constant(r))).value()[0];
  };
  Result res;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    res.merge(detail::check_tensor("input " + std::to_string(k), inputs[k].storage(), analytic[k], loss, opt, rng));
  }
  return res;
}

// Module variant: f(binding, graph, input var) -> output var, where the
// binding exposes `store`. Gradients are checked for the input and for every
// trainable parameter in the store.
inline Result check_module(ParamStore<double>& store, Tensor<double> input,
                           const std::function<Var<double>(Binding<double>&, const Var<double>&)>& f,
                           std::uint64_t seed, const Options& opt = {}) {
  Rng rng(seed);
  Tensor<double> r;
  Tensor<double> input_grad;
  store.zero_grad();
  {
    Graph<double> g;
    Binding<double> bind(g, store);
    Var<double> x = g.variable(input);
    Var<double> out = f(bind, x);
    r = random_tensor(out.shape(), rng);
    Var<double> loss = ops::sum(ops::mul(out, g.constant(r)));
    g.backward(loss);
    bind.accumulate_grads(store);
    input_grad = g.grad(x);
  }
  auto loss = [&]() {
    Graph<double> g(GradMode::kNoGrad);
    Binding<double> bind(g, store);
    Var<double> out = f(bind, g.constant(input));
    return ops::sum(ops::mul(out, g.constant(r))).value()[0];
  };
  Result res = detail::check_tensor("input", input.storage(), input_grad, loss, opt, rng);
  for (auto& p : store) {
    if (!p.trainable) continue;
    const Tensor<double> analytic = p.grad;
    res.merge(detail::check_tensor(p.name, p.value.storage(), analytic, loss, opt, rng));
  }
  return res;
}

}  // namespace ncam::gradcheck
