#include <doctest.h>

#include <cmath>
#include <cstring>

#include "fixtures.hpp"
#include "ncam/gradcheck.hpp"
#include "ncam/model.hpp"
#include "ncam/nca.hpp"
#include "ncam/ops.hpp"

using namespace ncam;
using gradcheck::random_tensor;

namespace {

NcaConfig cfg16(double p = 1.0, std::size_t visible = 3) {
  NcaConfig c;
  c.channels = 16;
  c.visible = visible;
  c.hidden = 8;
  c.update_prob = p;
  c.steps = 10;
  return c;
}

// Straightforward loop implementation of the update network.
Tensor<double> reference_update(const Tensor<double>& state, const Tensor<double>& flat, const NcaConfig& cfg) {
  const std::size_t ch = cfg.channels, hid = cfg.hidden, pch = 3 * ch;
  const std::size_t h = state.dim(1), w = state.dim(2);
  const double kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  const double ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  Tensor<double> perc({pch, h, w});
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double gx = 0, gy = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const long sy = static_cast<long>(y) + dy, sx = static_cast<long>(x) + dx;
            if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w)) continue;
            const double v = state.at(c, sy, sx);
            gx += kx[dy + 1][dx + 1] * v;
            gy += ky[dy + 1][dx + 1] * v;
          }
        }
        perc.at(c, y, x) = state.at(c, y, x);
        perc.at(ch + c, y, x) = gx;
        perc.at(2 * ch + c, y, x) = gy;
      }
    }
  }
  for (std::size_t c = 0; c < pch; ++c) {
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < h * w; ++i) mean += perc[c * h * w + i];
    mean /= static_cast<double>(h * w);
    for (std::size_t i = 0; i < h * w; ++i) var += std::pow(perc[c * h * w + i] - mean, 2);
    var /= static_cast<double>(h * w);
    for (std::size_t i = 0; i < h * w; ++i) perc[c * h * w + i] = (perc[c * h * w + i] - mean) / std::sqrt(var + 1e-5);
  }
  const double* w1 = flat.raw();
  const double* b1 = w1 + hid * pch;
  const double* w2 = b1 + hid;
  const double* b2 = w2 + ch * hid;
  Tensor<double> out({ch, h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    std::vector<double> hidden(hid);
    for (std::size_t k = 0; k < hid; ++k) {
      double a = b1[k];
      for (std::size_t c = 0; c < pch; ++c) a += w1[k * pch + c] * perc[c * h * w + i];
      hidden[k] = std::max(0.0, a);
    }
    for (std::size_t c = 0; c < ch; ++c) {
      double a = b2[c];
      for (std::size_t k = 0; k < hid; ++k) a += w2[c * hid + k] * hidden[k];
      out[c * h * w + i] = a;
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("nca") {
  TEST_CASE("seed grid has one live cell") {
    for (std::size_t visible : {3u, 4u}) {
      const auto cfg = cfg16(1.0, visible);
      const Tensor<float> s = nca::seed_state<float>(9, 7, cfg);
      std::size_t ones = 0, others = 0;
      for (std::size_t c = 0; c < cfg.channels; ++c) {
        for (std::size_t y = 0; y < 9; ++y) {
          for (std::size_t x = 0; x < 7; ++x) {
            const float v = s.at(c, y, x);
            if (v == 1.0f && y == 4 && x == 3) ++ones;
            else if (v != 0.0f) ++others;
          }
        }
      }
      // RGB: 13 hidden channels. RGBA: alpha plus 12 hidden channels.
      CHECK(ones == 13);
      CHECK(others == 0);
      if (visible == 4) CHECK(s.at(3, 4, 3) == 1.0f);
      for (std::size_t c = 0; c < 3; ++c) CHECK(s.at(c, 4, 3) == 0.0f);
    }
  }

  TEST_CASE("Bernoulli cell mask") {
    Rng rng(17);
    const std::size_t h = 64, w = 64;
    const auto mask = nca::cell_mask<float>(4, h, w, 0.5, rng);
    std::size_t fired = 0;
    for (std::size_t i = 0; i < h * w; ++i) {
      fired += mask[i] == 1.0f;
      for (std::size_t c = 1; c < 4; ++c) CHECK_EQ(mask[c * h * w + i], mask[i]);  // shared across channels
    }
    const double rate = static_cast<double>(fired) / static_cast<double>(h * w);
    // 4 standard deviations of a Binomial(4096, 0.5) proportion.
    CHECK(std::abs(rate - 0.5) <= 4 * std::sqrt(0.25 / (h * w)));

    Rng untouched(3);
    const std::string before = untouched.state();
    const auto all = nca::cell_mask<float>(2, 5, 5, 1.0, untouched);
    for (float v : all.data()) CHECK(v == 1.0f);
    CHECK(untouched.state() == before);  // p = 1 draws nothing
  }

  TEST_CASE("perception statistics are normalized") {
    Rng rng(2);
    Graph<double> g;
    auto p = nca::perceive(g.constant(random_tensor({16, 12, 12}, rng)), true);
    const std::size_t hw = 144;
    for (std::size_t c = 0; c < 48; ++c) {
      double mean = 0, var = 0;
      for (std::size_t i = 0; i < hw; ++i) mean += p.value()[c * hw + i];
      mean /= hw;
      for (std::size_t i = 0; i < hw; ++i) var += std::pow(p.value()[c * hw + i] - mean, 2);
      var /= hw;
      CHECK(std::abs(mean) < 1e-12);
      CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
    }
  }

  TEST_CASE("update matches a loop reference") {
    const auto cfg = cfg16();
    for (int s = 0; s < 10; ++s) {
      Rng rng(40 + s);
      const auto state = random_tensor({16, 6, 7}, rng);
      const auto flat = random_tensor({cfg.param_count()}, rng, 0.3);
      Graph<double> g(GradMode::kNoGrad);
      auto params = nca::split_params(g.constant(flat), cfg);
      const auto got = nca::update(g.constant(state), params, cfg).value();
      const auto want = reference_update(state, flat, cfg);
      double worst = 0;
      for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
      CHECK(worst < 1e-10);
    }
  }

  TEST_CASE("predicted kernels run exactly like constant kernels") {
    const ModelConfig mcfg = test::tiny_model();
    NcamModel<float> model(mcfg, 1);
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
      Tensor<float> enc({mcfg.encoder.dim});
      for (auto& v : enc.data()) v = static_cast<float>(rng.normal());
      Tensor<float> state({16, 8, 8});
      for (auto& v : state.data()) v = static_cast<float>(rng.normal());

      Graph<float> g;
      Binding<float> bind(g, model.params());
      const auto predicted = model.predictor().forward(bind, g.variable(enc));
      const Tensor<float> dynamic = nca::update(g.variable(state), predicted, mcfg.nca).value();

      Graph<float> ref(GradMode::kNoGrad);
      const nca::NcaParams<float> fixed{ref.constant(predicted.w1.value()), ref.constant(predicted.b1.value()),
                                        ref.constant(predicted.w2.value()), ref.constant(predicted.b2.value())};
      const Tensor<float> constant = nca::update(ref.constant(state), fixed, mcfg.nca).value();
      REQUIRE(dynamic.size() == constant.size());
      CHECK(std::memcmp(dynamic.raw(), constant.raw(), dynamic.size() * sizeof(float)) == 0);
    }
  }

  TEST_CASE("frame export count") {
    auto cfg = cfg16();
    cfg.steps = 32;
    Rng rng(1);
    for (auto [stride, want] : {std::pair<std::size_t, std::size_t>{0, 0}, {1, 32}, {5, 7}, {8, 4}, {40, 1}}) {
      Graph<float> g(GradMode::kNoGrad);
      const auto flat = random_tensor({cfg.param_count()}, rng, 0.1).cast<float>();
      auto params = nca::split_params(g.constant(flat), cfg);
      auto res = nca::grow(g, params, g.constant(Tensor<float>({1}, {0.1f})), cfg, 6, 6, 0, stride);
      CHECK(res.frames.size() == want);
      if (!res.frames.empty()) CHECK(res.frames.back() == nca::visible(res.grid.state.value(), 3));
    }
  }

  TEST_CASE("synchronous growth is deterministic, stochastic growth depends on the seed") {
    Rng rng(4);
    const auto flat = random_tensor({cfg16().param_count()}, rng, 0.3).cast<float>();
    auto run = [&](double p, std::uint64_t seed, GradMode mode) {
      const auto cfg = cfg16(p);
      Graph<float> g(mode);
      auto params = nca::split_params(g.variable(flat), cfg);
      return nca::grow(g, params, g.variable(Tensor<float>({1}, {0.5f})), cfg, 10, 10, seed).grid.state.value();
    };
    CHECK(run(1.0, 1, GradMode::kRecord) == run(1.0, 2, GradMode::kRecord));
    CHECK(run(1.0, 1, GradMode::kRecord) == run(1.0, 1, GradMode::kNoGrad));
    CHECK(run(0.5, 1, GradMode::kRecord) == run(0.5, 1, GradMode::kNoGrad));
    CHECK_FALSE(run(0.5, 1, GradMode::kNoGrad) == run(0.5, 2, GradMode::kNoGrad));
  }

  TEST_CASE("every cell follows the same rule") {
    // Shifting the grid contents shifts the update away from the borders:
    // no cell is gated by an alive mask.
    const auto cfg = cfg16();
    Rng rng(12);
    const auto flat = random_tensor({cfg.param_count()}, rng, 0.3);
    Tensor<double> a({16, 12, 12}), b({16, 12, 12});
    for (std::size_t c = 0; c < 16; ++c)
      for (std::size_t y = 4; y < 7; ++y)
        for (std::size_t x = 4; x < 7; ++x) {
          const double v = rng.normal();
          a.at(c, y, x) = v;
          b.at(c, y + 1, x + 2) = v;
        }
    NcaConfig raw = cfg;
    raw.normalize = false;
    Graph<double> g(GradMode::kNoGrad);
    auto params = nca::split_params(g.constant(flat), raw);
    const auto ua = nca::update(g.constant(a), params, raw).value();
    const auto ub = nca::update(g.constant(b), params, raw).value();
    for (std::size_t c = 0; c < 16; ++c)
      for (std::size_t y = 1; y < 9; ++y)
        for (std::size_t x = 1; x < 9; ++x) CHECK(ua.at(c, y, x) == doctest::Approx(ub.at(c, y + 1, x + 2)));
  }

  TEST_CASE("gradients reach the parameters and the leak factor through all steps") {
    const auto cfg = cfg16();
    Rng rng(6);
    Graph<double> g;
    auto flat = g.variable(random_tensor({cfg.param_count()}, rng, 0.3));
    auto leak = g.variable(Tensor<double>({1}, {0.3}));
    auto res = nca::grow(g, nca::split_params(flat, cfg), leak, cfg, 8, 8, 0);
    const auto target = random_tensor({3, 8, 8}, rng);
    auto loss = ops::mse(nca::visible(res.grid.state, 3), g.constant(target));
    g.backward(loss);
    double n = 0;
    for (double v : g.grad(flat).data()) n += v * v;
    CHECK(n > 0);
    CHECK(g.grad(leak)[0] != 0.0);
  }

  TEST_CASE("zero update weights leave the seed unchanged") {
    const ModelConfig mcfg = test::tiny_model();
    NcamModel<float> model(mcfg, 9);
    Rng rng(1);
    Tensor<float> image({3, 8, 8});
    for (auto& v : image.data()) v = static_cast<float>(rng.uniform());
    Graph<float> g(GradMode::kNoGrad);
    Binding<float> bind(g, model.params());
    auto f = model.reconstruct(bind, image, {});
    CHECK(f.growth.grid.state.value() == nca::seed_state<float>(8, 8, mcfg.nca));
  }

  TEST_CASE("leak factors are clamped") {
    ParamStore<float> store;
    const ParamId a = add_leak(store, "a", true);
    const ParamId b = add_leak(store, "b", true);
    const ParamId frozen = add_leak(store, "c", false);
    CHECK(store[a].value[0] == doctest::Approx(kLeakInit));
    CHECK(store[frozen].value[0] == 1.0f);
    CHECK_FALSE(store[frozen].trainable);
    store[a].value[0] = 1e-7f;
    store[b].value[0] = 5e4f;
    store.clamp_leaks();
    CHECK(store[a].value[0] == static_cast<float>(kLeakMin));
    CHECK(store[b].value[0] == static_cast<float>(kLeakMax));
  }

  TEST_CASE("configuration validation") {
    NcaConfig c = cfg16();
    c.channels = 12;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = cfg16();
    c.update_prob = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = cfg16();
    c.visible = 2;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(cfg16().param_count() == 3 * 16 * 8 + 8 + 8 * 16 + 16);
  }
}
