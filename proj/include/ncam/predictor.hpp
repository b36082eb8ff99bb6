#pragma once

#include <vector>

#include "ncam/blocks.hpp"
#include "ncam/nca.hpp"

namespace ncam {

// Maps an encoding to the flat parameter vector of one automaton: dense
// projection, FCB stack, then a head whose output is split into (w1,b1,w2,b2).
//
// Head initialization: the rows emitting w2 and b2 start at exactly zero, so
// every freshly initialized automaton leaves its seed unchanged. The rows
// emitting w1 start with small random weights around a shared random bias
// (a He-initialized first update layer); zeroing them too would leave the
// hidden layer at relu(0) and no gradient could reach w1 or w2.
template <typename T>
class ParamPredictor {
 public:
  ParamPredictor() = default;
  ParamPredictor(ParamStore<T>& store, const PredictorConfig& cfg, std::size_t input_dim, const NcaConfig& nca,
                 Rng& rng, bool trainable_leaks);

  Var<T> forward_flat(Binding<T>& bind, const Var<T>& encoding) const;
  nca::NcaParams<T> forward(Binding<T>& bind, const Var<T>& encoding) const;

  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_length() const { return nca_.param_count(); }
  ParamId head_weights() const { return head_w_; }
  ParamId head_bias() const { return head_b_; }

 private:
  PredictorConfig cfg_;
  NcaConfig nca_;
  std::size_t input_dim_ = 0;
  ParamId in_w_ = 0, in_b_ = 0, head_w_ = 0, head_b_ = 0;
  std::vector<ResidualBlock<T>> fcbs_;
};

}  // namespace ncam
