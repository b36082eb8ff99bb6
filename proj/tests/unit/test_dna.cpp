#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "ncam/dna.hpp"
#include "ncam/model.hpp"
#include "ncam/ops.hpp"

using namespace ncam;

namespace {

DnaEncoding soft_dna(std::size_t features, Rng& rng) {
  DnaEncoding d{Tensor<float>({features, 16, 4})};
  for (std::size_t r = 0; r < d.rows(); ++r) {
    float total = 0;
    for (std::size_t c = 0; c < 4; ++c) total += d.probs[r * 4 + c] = static_cast<float>(rng.uniform()) + 0.01f;
    for (std::size_t c = 0; c < 4; ++c) d.probs[r * 4 + c] /= total;
  }
  return d;
}

Tensor<float> run_encode(const NcamModel<float>& model, const Tensor<float>& e) {
  Graph<float> g(GradMode::kNoGrad);
  Binding<float> bind(g, model.params());
  return model.dna_encode(bind, g.constant(e)).value();
}

Tensor<float> run_decode(const NcamModel<float>& model, const Tensor<float>& dna) {
  Graph<float> g(GradMode::kNoGrad);
  Binding<float> bind(g, model.params());
  return model.dna_decode(bind, g.constant(dna)).value();
}

}  // namespace

TEST_SUITE("dna") {
  TEST_CASE("discretize takes the argmax, ties to the lowest category, keeps none rows") {
    DnaEncoding d{Tensor<float>({1, 4, 4}, {0.1f, 0.6f, 0.2f, 0.1f,      //
                                            0.3f, 0.3f, 0.3f, 0.1f,      //
                                            0.0f, 0.0f, 0.0f, 0.0f,      //
                                            0.25f, 0.25f, 0.25f, 0.25f})};
    const DnaEncoding h = discretize(d);
    CHECK(h.probs == Tensor<float>({1, 4, 4}, {0, 1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0}));
    CHECK(to_letters(d) == "GC-C");
    CHECK(discretize(h) == h);
  }

  TEST_CASE("letter strings and the export format") {
    const std::string letters = "CGATTAGC--CCGGAA";
    const DnaEncoding d = from_letters(letters, 16);
    CHECK(d.features() == 1);
    CHECK(to_letters(d) == letters);
    Rng rng(3);
    const DnaEncoding soft = soft_dna(5, rng);
    const std::string text = format_dna(soft);
    CHECK(text.rfind("NCAM-DNA v1 D=5\n", 0) == 0);
    CHECK(text.size() == std::string("NCAM-DNA v1 D=5\n").size() + 5 * 16);
    CHECK(text.find('\n') == text.rfind('\n'));  // body is newline-free
    CHECK(parse_dna(text) == discretize(soft));
    CHECK(parse_dna(text + "\n") == discretize(soft));
    CHECK_THROWS_AS(parse_dna("CGAT"), std::invalid_argument);
    CHECK_THROWS_AS(parse_dna("NCAM-DNA v1 D=3\nCGATCGATCGATCGAT"), std::invalid_argument);
    CHECK_THROWS_AS(from_letters("CGAX", 4), std::invalid_argument);
  }

  TEST_CASE("mutation replaces exactly floor(rate * rows) rows") {
    Rng rng(11);
    for (double rate : {0.0, 0.1, 0.5, 0.77, 1.0}) {
      const auto plan = plan_mutation(1024, 4, rate, rng);
      CHECK(plan.replaced_count() == static_cast<std::size_t>(std::floor(rate * 1024)));
    }
    CHECK_THROWS_AS(plan_mutation(8, 4, 1.5, rng), std::invalid_argument);

    const DnaEncoding d = soft_dna(8, rng);
    const auto plan = plan_mutation(d.rows(), 4, 0.5, rng);
    const Tensor<float> m = apply_mutation(d.probs, plan);
    for (std::size_t r = 0; r < d.rows(); ++r) {
      float total = 0;
      for (std::size_t c = 0; c < 4; ++c) total += m[r * 4 + c];
      CHECK(total == doctest::Approx(1.0f).epsilon(1e-6));  // rows stay stochastic
      for (std::size_t c = 0; c < 4; ++c) {
        if (plan.replaced[r]) CHECK(m[r * 4 + c] == (c == plan.letter[r] ? 1.0f : 0.0f));
        else CHECK(m[r * 4 + c] == d.probs[r * 4 + c]);
      }
    }
  }

  TEST_CASE("replacement letters and rows are uniform") {
    Rng rng(23);
    std::array<double, 4> letters{};
    std::vector<double> rows(64, 0);
    const int trials = 4000;
    for (int t = 0; t < trials; ++t) {
      const auto plan = plan_mutation(64, 4, 0.25, rng);
      for (std::size_t r = 0; r < 64; ++r) {
        if (!plan.replaced[r]) continue;
        rows[r] += 1;
        letters[plan.letter[r]] += 1;
      }
    }
    auto chi2 = [](const auto& counts) {
      const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
      const double expected = total / static_cast<double>(counts.size());
      double x = 0;
      for (double c : counts) x += (c - expected) * (c - expected) / expected;
      return x;
    };
    // 99.9th percentiles of chi-square with 3 and 63 degrees of freedom.
    CHECK(chi2(letters) < 16.27);
    CHECK(chi2(rows) < 103.4);
  }

  TEST_CASE("encoder output rows are probability vectors") {
    NcamModel<float> model(test::tiny_model(EncodingMode::kDna), 2);
    Rng rng(1);
    Tensor<float> e({6});
    for (auto& v : e.data()) v = static_cast<float>(3 * rng.normal());
    const DnaEncoding d{run_encode(model, e)};
    CHECK(d.probs.shape() == Shape{6, 16, 4});
    for (std::size_t r = 0; r < d.rows(); ++r) {
      float total = 0;
      for (std::size_t c = 0; c < 4; ++c) {
        CHECK(d.probs[r * 4 + c] >= 0.0f);
        total += d.probs[r * 4 + c];
      }
      CHECK(total == doctest::Approx(1.0f).epsilon(1e-6));
    }
  }

  TEST_CASE("codec weights are shared across features") {
    NcamModel<float> model(test::tiny_model(EncodingMode::kDna), 4);
    Rng rng(5);
    Tensor<float> e({6});
    for (auto& v : e.data()) v = static_cast<float>(rng.normal());
    const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    Tensor<float> pe({6});
    for (std::size_t i = 0; i < 6; ++i) pe[i] = e[perm[i]];
    const auto a = run_encode(model, e), b = run_encode(model, pe);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t k = 0; k < 64; ++k) CHECK(b[i * 64 + k] == doctest::Approx(a[perm[i] * 64 + k]).epsilon(1e-6));

    const DnaEncoding d = soft_dna(6, rng);
    Tensor<float> pd(d.probs.shape());
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t k = 0; k < 64; ++k) pd[i * 64 + k] = d.probs[perm[i] * 64 + k];
    const auto x = run_decode(model, d.probs), y = run_decode(model, pd);
    for (std::size_t i = 0; i < 6; ++i) CHECK(y[i] == doctest::Approx(x[perm[i]]).epsilon(1e-6));
  }

  TEST_CASE("a none gene decodes to a fixed value regardless of the other genes") {
    NcamModel<float> model(test::tiny_model(EncodingMode::kDna), 6);
    Rng rng(9);
    std::vector<float> decoded;
    for (int t = 0; t < 3; ++t) {
      DnaEncoding d = soft_dna(6, rng);
      for (std::size_t k = 0; k < 64; ++k) d.probs[2 * 64 + k] = 0.0f;  // gene 2 is all "none"
      decoded.push_back(run_decode(model, d.probs)[2]);
    }
    CHECK(decoded[1] == doctest::Approx(decoded[0]).epsilon(1e-6));
    CHECK(decoded[2] == doctest::Approx(decoded[0]).epsilon(1e-6));
  }

  TEST_CASE("gradients flow from decode back through encode past a mutation") {
    NcamModel<float> model(test::tiny_model(EncodingMode::kDna), 7);
    Rng rng(2);
    Graph<float> g;
    Binding<float> bind(g, model.params());
    Tensor<float> e0({6});
    for (auto& v : e0.data()) v = static_cast<float>(rng.normal());
    auto e = g.variable(e0);
    auto dna = apply_mutation(model.dna_encode(bind, e), plan_mutation(96, 4, 0.5, rng));
    auto out = ops::sum(model.dna_decode(bind, dna));
    g.backward(out);
    double n = 0;
    for (float v : g.grad(e).data()) n += v * v;
    CHECK(n > 0);
  }

  TEST_CASE("continuous models have no codec") {
    NcamModel<float> model(test::tiny_model(), 1);
    Graph<float> g(GradMode::kNoGrad);
    Binding<float> bind(g, model.params());
    CHECK_THROWS_AS(model.dna_encode(bind, g.constant(Tensor<float>({6}))), ConfigError);
  }
}
