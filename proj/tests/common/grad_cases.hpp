#pragma once

// Finite-difference gradient cases shared by the unit tests and the
// acceptance oracle. Each case builds fresh random inputs (and, for modules,
// fresh random parameters) from a seed and returns the worst norm-wise
// relative error over every checked tensor.

#include <functional>
#include <string>
#include <vector>

#include "ncam/dna.hpp"
#include "ncam/encoder.hpp"
#include "ncam/gradcheck.hpp"
#include "ncam/nca.hpp"
#include "ncam/predictor.hpp"
#include "ncam/train.hpp"

namespace ncam::test {

inline constexpr double kOpTolerance = 1e-5;
inline constexpr double kCompositeTolerance = 1e-4;
inline constexpr int kGradSeeds = 20;

struct GradCase {
  std::string name;
  std::function<gradcheck::Result(std::uint64_t seed)> run;
};

namespace detail {

using Vars = std::vector<Var<double>>;
using Build = std::function<Var<double>(Graph<double>&, const Vars&)>;
using Shapes = std::vector<Shape>;
using gradcheck::random_tensor;

inline GradCase op(std::string name, Shapes shapes, Build build, double scale = 1.0) {
  return {std::move(name), [shapes = std::move(shapes), build = std::move(build), scale](std::uint64_t seed) {
            Rng rng(1000 + seed);
            std::vector<Tensor<double>> inputs;
            for (const auto& s : shapes) inputs.push_back(random_tensor(s, rng, scale));
            return gradcheck::check(std::move(inputs), build, 77 + seed);
          }};
}

// Leak factors are moved off 0.1 so the residual branches carry weight.
inline void randomize_leaks(ParamStore<double>& store, Rng& rng) {
  for (auto& p : store)
    if (p.role == ParamRole::kLeak && p.trainable)
      for (auto& v : p.value.data()) v = 0.5 + rng.uniform();
}

inline NcaConfig small_nca(double p) {
  NcaConfig cfg;
  cfg.channels = 16;
  cfg.hidden = 8;
  cfg.update_prob = p;
  cfg.steps = 3;
  return cfg;
}

}  // namespace detail

inline std::vector<GradCase> op_cases() {
  using namespace detail;
  std::vector<GradCase> cases;
  for (std::size_t k : {1u, 3u}) {
    const std::string K = std::to_string(k);
    cases.push_back(op("conv2d " + K + "x" + K + " +bias", {{3, 5, 4}, {2, 3, k, k}, {2}},
                       [](Graph<double>&, const Vars& v) { return ops::conv2d(v[0], v[1], v[2]); }));
    cases.push_back(op("conv2d " + K + "x" + K, {{2, 4, 4}, {3, 2, k, k}},
                       [](Graph<double>&, const Vars& v) { return ops::conv2d(v[0], v[1]); }));
  }
  cases.push_back(op("depthwise 3x3", {{3, 5, 6}}, [](Graph<double>&, const Vars& v) {
    static const Tensor<double> kernel({3, 3}, {0.5, -1, 2, 0.25, 1, -0.5, 3, 0, -2});
    return ops::depthwise_conv3x3(v[0], kernel);
  }));
  for (bool norm : {false, true}) {
    cases.push_back(op(norm ? "stencil stack +norm" : "stencil stack", {{3, 5, 5}},
                       [norm](Graph<double>&, const Vars& v) {
                         return ops::stencil_stack(v[0], nca::sobel_x<double>(), nca::sobel_y<double>(), norm);
                       }));
  }
  cases.push_back(op("dense", {{7}, {5, 7}, {5}},
                     [](Graph<double>&, const Vars& v) { return ops::dense(v[0], v[1], v[2]); }));
  cases.push_back(op("instance_norm", {{4, 3, 5}},
                     [](Graph<double>&, const Vars& v) { return ops::instance_norm(v[0]); }));
  cases.push_back(op("relu", {{40}}, [](Graph<double>&, const Vars& v) { return ops::relu(v[0]); }));
  cases.push_back(op(
      "softmax", {{3, 4, 4}}, [](Graph<double>&, const Vars& v) { return ops::softmax_lastdim(v[0]); }, 2.0));
  cases.push_back(op("mse", {{3, 4}, {3, 4}}, [](Graph<double>&, const Vars& v) { return ops::mse(v[0], v[1]); }));
  cases.push_back(op("sum", {{3, 4}}, [](Graph<double>&, const Vars& v) { return ops::sum(v[0]); }));
  cases.push_back(op("add", {{2, 3, 3}, {2, 3, 3}}, [](Graph<double>&, const Vars& v) { return ops::add(v[0], v[1]); }));
  cases.push_back(op("sub", {{2, 3, 3}, {2, 3, 3}}, [](Graph<double>&, const Vars& v) { return ops::sub(v[0], v[1]); }));
  cases.push_back(op("mul", {{2, 3, 3}, {2, 3, 3}}, [](Graph<double>&, const Vars& v) { return ops::mul(v[0], v[1]); }));
  cases.push_back(op("scale", {{5}}, [](Graph<double>&, const Vars& v) { return ops::scale(v[0], -1.75); }));
  cases.push_back(
      op("scale_by", {{2, 4}, {1}}, [](Graph<double>&, const Vars& v) { return ops::scale_by(v[0], v[1]); }));
  for (const std::vector<std::size_t>& axes : {std::vector<std::size_t>{0}, {1}, {2}, {1, 2}, {0, 2}, {0, 1, 2}}) {
    std::string name = "mean_over_axes {";
    for (std::size_t a : axes) name += std::to_string(a);
    cases.push_back(op(name + "}", {{3, 4, 5}},
                       [axes](Graph<double>&, const Vars& v) { return ops::mean_over_axes(v[0], axes); }));
  }
  cases.push_back(op("concat axis 0", {{2, 3}, {4, 3}}, [](Graph<double>&, const Vars& v) { return ops::concat(v, 0); }));
  cases.push_back(
      op("concat axis 1", {{2, 3, 2}, {2, 1, 2}}, [](Graph<double>&, const Vars& v) { return ops::concat(v, 1); }));
  cases.push_back(op("reshape", {{2, 6}}, [](Graph<double>&, const Vars& v) { return ops::reshape(v[0], {3, 4}); }));
  cases.push_back(op("transpose2d", {{3, 5}}, [](Graph<double>&, const Vars& v) { return ops::transpose2d(v[0]); }));
  cases.push_back(
      op("slice_flat", {{20}}, [](Graph<double>&, const Vars& v) { return ops::slice_flat(v[0], 3, {2, 5}); }));
  cases.push_back(op("slice_pool", {{3, 4, 5}}, [](Graph<double>&, const Vars& v) { return slice_pool(v[0]); }));
  cases.push_back(op("apply_mutation", {{2, 3, 4}}, [](Graph<double>&, const Vars& v) {
    Rng plan_rng(5);
    return apply_mutation(v[0], plan_mutation(6, 4, 0.5, plan_rng));
  }));
  for (std::size_t c : {3u, 4u}) {
    cases.push_back(op(c == 3 ? "reconstruction_loss RGB" : "reconstruction_loss RGBA", {{c, 3, 3}},
                       [c](Graph<double>&, const Vars& v) {
                         Rng tr(11);
                         return reconstruction_loss(v[0], random_tensor({c, 3, 3}, tr));
                       }));
  }
  return cases;
}

inline std::vector<GradCase> composite_cases() {
  using namespace detail;
  std::vector<GradCase> cases;
  for (BlockKind kind : {BlockKind::kCB1, BlockKind::kCB3, BlockKind::kFCB}) {
    cases.push_back({to_string(kind), [kind](std::uint64_t seed) {
                       const Shape input = kind == BlockKind::kFCB ? Shape{6} : Shape{4, 5, 5};
                       Rng rng(200 + seed);
                       ParamStore<double> store;
                       ResidualBlock<double> block(store, "b", kind, input[0], default_expansion(kind), rng, true);
                       randomize_leaks(store, rng);
                       return gradcheck::check_module(
                           store, random_tensor(input, rng),
                           [&](Binding<double>& b, const Var<double>& x) { return block.forward(b, x); }, 300 + seed);
                     }});
  }
  cases.push_back(op("perception+norm", {{4, 6, 6}},
                     [](Graph<double>&, const Vars& v) { return nca::perceive(v[0], true); }));
  for (double p : {1.0, 0.5}) {
    cases.push_back({p == 1.0 ? "NCA step p=1" : "NCA step p=0.5", [p](std::uint64_t seed) {
                       const NcaConfig cfg = small_nca(p);
                       Rng rng(600 + seed);
                       std::vector<Tensor<double>> inputs{random_tensor({cfg.channels, 5, 5}, rng),
                                                          random_tensor({cfg.param_count()}, rng, 0.3),
                                                          Tensor<double>({1}, {0.5 + rng.uniform()})};
                       return gradcheck::check(
                           std::move(inputs),
                           [&cfg, seed](Graph<double>&, const Vars& v) {
                             Rng mask_rng(900 + seed);  // same mask on every evaluation
                             return nca::step(nca::CellGrid<double>{v[0]}, nca::split_params(v[1], cfg), v[2], cfg,
                                              mask_rng)
                                 .state;
                           },
                           700 + seed);
                     }});
  }
  for (bool encode : {true, false}) {
    cases.push_back({encode ? "dna encode" : "dna decode", [encode](std::uint64_t seed) {
                       DnaConfig cfg;
                       cfg.width = 6;
                       cfg.depth = 2;
                       Rng rng(1000 + seed);
                       ParamStore<double> store;
                       DnaCodec<double> codec(store, cfg, 3, rng, true);
                       randomize_leaks(store, rng);
                       if (encode) {
                         return gradcheck::check_module(
                             store, random_tensor({3}, rng),
                             [&](Binding<double>& b, const Var<double>& x) { return codec.encode(b, x); }, 1100 + seed);
                       }
                       return gradcheck::check_module(
                           store, random_tensor({3, cfg.gene_length, cfg.categories}, rng, 0.5),
                           [&](Binding<double>& b, const Var<double>& x) { return codec.decode(b, x); }, 1200 + seed);
                     }});
  }
  cases.push_back({"parameter predictor", [](std::uint64_t seed) {
                     PredictorConfig cfg;
                     cfg.fcb_width = 12;
                     NcaConfig nca = small_nca(1.0);
                     nca.hidden = 4;
                     Rng rng(1300 + seed);
                     ParamStore<double> store;
                     ParamPredictor<double> pred(store, cfg, 6, nca, rng, true);
                     randomize_leaks(store, rng);
                     // Give the zero-initialized head rows weight so every path is exercised.
                     for (auto& v : store[pred.head_weights()].value.data()) v += 0.05 * rng.normal();
                     return gradcheck::check_module(
                         store, random_tensor({6}, rng),
                         [&](Binding<double>& b, const Var<double>& x) { return pred.forward_flat(b, x); },
                         1400 + seed);
                   }});
  for (bool slices : {true, false}) {
    cases.push_back({slices ? "encoder" : "encoder (no slices)", [slices](std::uint64_t seed) {
                       EncoderConfig cfg;
                       cfg.width = 4;
                       cfg.blocks = {BlockKind::kCB3, BlockKind::kCB1};
                       cfg.fcb_width = 10;
                       cfg.dim = 5;
                       cfg.slices = slices;
                       Rng rng(1500 + seed);
                       ParamStore<double> store;
                       Encoder<double> enc(store, cfg, 3, 6, 6, rng, true);
                       randomize_leaks(store, rng);
                       return gradcheck::check_module(
                           store, random_tensor({3, 6, 6}, rng),
                           [&](Binding<double>& b, const Var<double>& x) { return enc.forward(b, x); }, 1600 + seed);
                     }});
  }
  cases.push_back({"predictor -> growth -> loss", [](std::uint64_t seed) {
                     PredictorConfig pcfg;
                     pcfg.fcb_width = 8;
                     pcfg.fcb_count = 1;
                     NcaConfig nca = small_nca(1.0);
                     nca.hidden = 4;
                     Rng rng(1700 + seed);
                     ParamStore<double> store;
                     ParamPredictor<double> pred(store, pcfg, 4, nca, rng, true);
                     const ParamId leak = add_leak(store, "nca.leak", true);
                     randomize_leaks(store, rng);
                     for (auto& v : store[pred.head_weights()].value.data()) v += 0.05 * rng.normal();
                     const Tensor<double> target = random_tensor({nca.visible, 5, 5}, rng, 0.5);
                     return gradcheck::check_module(
                         store, random_tensor({4}, rng),
                         [&](Binding<double>& b, const Var<double>& x) {
                           auto grown = nca::grow(b.graph(), pred.forward(b, x), b[leak], nca, 5, 5, 0);
                           return reconstruction_loss(nca::visible(grown.grid.state, nca.visible), target);
                         },
                         1800 + seed);
                   }});
  return cases;
}

}  // namespace ncam::test
