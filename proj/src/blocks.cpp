#include "ncam/blocks.hpp"

#include "ncam/ops.hpp"

namespace ncam {

template <typename T>
ParamId add_leak(ParamStore<T>& store, const std::string& name, bool trainable) {
  const T init = trainable ? static_cast<T>(kLeakInit) : T{1};
  ParamId id = store.add(name, Tensor<T>({1}, std::vector<T>{init}), ParamRole::kLeak);
  store[id].trainable = trainable;
  return id;
}

template <typename T>
std::pair<ParamId, ParamId> add_dense(ParamStore<T>& store, const std::string& prefix, std::size_t in,
                                      std::size_t out, Rng& rng) {
  ParamId w = store.add(prefix + ".w", he_normal<T>({out, in}, in, rng));
  ParamId b = store.add(prefix + ".b", Tensor<T>({out}));
  return {w, b};
}

template <typename T>
std::pair<ParamId, ParamId> add_conv(ParamStore<T>& store, const std::string& prefix, std::size_t in,
                                     std::size_t out, std::size_t k, Rng& rng) {
  ParamId w = store.add(prefix + ".w", he_normal<T>({out, in, k, k}, in * k * k, rng));
  ParamId b = store.add(prefix + ".b", Tensor<T>({out}));
  return {w, b};
}

template <typename T>
ResidualBlock<T>::ResidualBlock(ParamStore<T>& store, const std::string& prefix, BlockKind kind, std::size_t width,
                                std::size_t expansion, Rng& rng, bool trainable_leak)
    : kind_(kind), width_(width) {
  const std::size_t inner = width * expansion;
  if (kind == BlockKind::kFCB) {
    std::tie(w_in_, b_in_) = add_dense(store, prefix + ".expand", width, inner, rng);
    std::tie(w_out_, b_out_) = add_dense(store, prefix + ".contract", inner, width, rng);
  } else {
    const std::size_t k = kind == BlockKind::kCB3 ? 3 : 1;
    std::tie(w_in_, b_in_) = add_conv(store, prefix + ".expand", width, inner, k, rng);
    std::tie(w_out_, b_out_) = add_conv(store, prefix + ".contract", inner, width, k, rng);
  }
  leak_ = add_leak(store, prefix + ".leak", trainable_leak);
}

template <typename T>
Var<T> ResidualBlock<T>::inner(Binding<T>& bind, const Var<T>& x) const {
  const Shape& s = x.shape();
  const bool ok = kind_ == BlockKind::kFCB ? (s.size() == 1 && s[0] == width_) : (s.size() == 3 && s[0] == width_);
  if (!ok) {
    throw ShapeError(to_string(kind_) + " block of width " + std::to_string(width_) + " got input " + to_string(s));
  }
  if (kind_ == BlockKind::kFCB) {
    auto h = ops::relu(ops::dense(x, bind[w_in_], bind[b_in_]));
    return ops::dense(h, bind[w_out_], bind[b_out_]);
  }
  auto h = ops::relu(ops::conv2d(x, bind[w_in_], std::optional<Var<T>>(bind[b_in_])));
  return ops::conv2d(h, bind[w_out_], std::optional<Var<T>>(bind[b_out_]));
}

template <typename T>
Var<T> ResidualBlock<T>::forward(Binding<T>& bind, const Var<T>& x) const {
  return ops::add(x, ops::scale_by(inner(bind, x), bind[leak_]));
}

template class ResidualBlock<float>;
template class ResidualBlock<double>;
template ParamId add_leak(ParamStore<float>&, const std::string&, bool);
template ParamId add_leak(ParamStore<double>&, const std::string&, bool);
template std::pair<ParamId, ParamId> add_dense(ParamStore<float>&, const std::string&, std::size_t, std::size_t,
                                               Rng&);
template std::pair<ParamId, ParamId> add_dense(ParamStore<double>&, const std::string&, std::size_t, std::size_t,
                                               Rng&);
template std::pair<ParamId, ParamId> add_conv(ParamStore<float>&, const std::string&, std::size_t, std::size_t,
                                              std::size_t, Rng&);
template std::pair<ParamId, ParamId> add_conv(ParamStore<double>&, const std::string&, std::size_t, std::size_t,
                                              std::size_t, Rng&);

}  // namespace ncam
