#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "ncam/graph.hpp"
#include "ncam/rng.hpp"

namespace ncam {

inline constexpr double kLeakMin = 1e-3;
inline constexpr double kLeakMax = 1e3;
inline constexpr double kLeakInit = 1e-1;

enum class ParamRole { kWeight, kLeak };

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  ParamRole role = ParamRole::kWeight;
  bool trainable = true;
};

using ParamId = std::size_t;

// Owns every trainable tensor of a model. Modules refer to entries by id so
// a store can be copied or serialized without fixing up pointers.
template <typename T>
class ParamStore {
 public:
  ParamId add(std::string name, Tensor<T> value, ParamRole role = ParamRole::kWeight) {
    if (index_.contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_[name] = params_.size();
    Tensor<T> grad(value.shape());
    params_.push_back(Parameter<T>{std::move(name), std::move(value), std::move(grad), role, true});
    return params_.size() - 1;
  }

  Parameter<T>& operator[](ParamId id) { return params_.at(id); }
  const Parameter<T>& operator[](ParamId id) const { return params_.at(id); }
  std::size_t size() const { return params_.size(); }

  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) std::fill(p.grad.data().begin(), p.grad.data().end(), T{0});
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  // Hard projection of every leak factor onto [kLeakMin, kLeakMax].
  void clamp_leaks() {
    for (auto& p : params_) {
      if (p.role != ParamRole::kLeak) continue;
      for (auto& v : p.value.data()) v = std::clamp(v, static_cast<T>(kLeakMin), static_cast<T>(kLeakMax));
    }
  }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, ParamId> index_;
};

// Lazily materializes parameters as leaves of one graph.
template <typename T>
class Binding {
 public:
  Binding(Graph<T>& graph, const ParamStore<T>& store) : graph_(graph), store_(store) {}

  Graph<T>& graph() const { return graph_; }
  const ParamStore<T>& store() const { return store_; }

  Var<T> operator[](ParamId id) {
    if (auto it = bound_.find(id); it != bound_.end()) return it->second;
    const auto& p = store_[id];
    Var<T> v = p.trainable ? graph_.variable(p.value) : graph_.constant(p.value);
    bound_.emplace(id, v);
    return v;
  }

  // Adds this graph's parameter gradients into `target` (same layout as the store).
  void accumulate_grads(ParamStore<T>& target, T weight = T{1}) const {
    for (const auto& [id, var] : bound_) {
      if (!graph_.requires_grad(var) || !graph_.has_grad(var)) continue;
      const Tensor<T> g = graph_.grad(var);
      auto dst = target[id].grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += weight * g[i];
    }
  }

 private:
  Graph<T>& graph_;
  const ParamStore<T>& store_;
  std::unordered_map<ParamId, Var<T>> bound_;
};

template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, Rng& rng, double gain = 1.0) {
  Tensor<T> t(std::move(shape));
  const double sd = gain * std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<T>(sd * rng.normal());
  return t;
}

// Adaptive moment estimation with global gradient-norm clipping.
template <typename T>
class Adam {
 public:
  struct Options {
    double learning_rate = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double clip_norm = 1.0;  // <= 0 disables clipping
  };

  Adam() = default;
  explicit Adam(Options options) : options_(options) {}

  const Options& options() const { return options_; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  std::size_t steps() const { return steps_; }

  // Returns the pre-clip global gradient norm.
  double step(ParamStore<T>& store) {
    if (m_.size() != store.size()) init(store);
    double sq = 0;
    for (const auto& p : store) {
      if (!p.trainable) continue;
      for (auto g : p.grad.data()) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    const double clip = (options_.clip_norm > 0 && norm > options_.clip_norm) ? options_.clip_norm / norm : 1.0;
    ++steps_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    for (std::size_t k = 0; k < store.size(); ++k) {
      auto& p = store[k];
      if (!p.trainable) continue;
      auto value = p.value.data();
      auto grad = p.grad.data();
      auto m = m_[k].data();
      auto v = v_[k].data();
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = clip * static_cast<double>(grad[i]);
        m[i] = static_cast<T>(options_.beta1 * m[i] + (1.0 - options_.beta1) * g);
        v[i] = static_cast<T>(options_.beta2 * v[i] + (1.0 - options_.beta2) * g * g);
        const double mh = m[i] / bc1;
        const double vh = v[i] / bc2;
        value[i] = static_cast<T>(value[i] - options_.learning_rate * mh / (std::sqrt(vh) + options_.epsilon));
      }
    }
    return norm;
  }

  // Moment buffers, parallel to the store; exposed for checkpointing.
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }
  void set_steps(std::size_t s) { steps_ = s; }

  void init(const ParamStore<T>& store) {
    m_.clear();
    v_.clear();
    for (const auto& p : store) {
      m_.emplace_back(p.value.shape());
      v_.emplace_back(p.value.shape());
    }
  }

 private:
  Options options_;
  std::size_t steps_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace ncam
