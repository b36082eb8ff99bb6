#include <doctest.h>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "ncam/genelab.hpp"

using namespace ncam;
using namespace ncam::genelab;

namespace {

DnaEncoding random_code(std::size_t features, Rng& rng) {
  std::string s(features * 16, 'C');
  for (auto& ch : s) ch = kDnaLetters[rng.below(4)];
  return from_letters(s);
}

// Copy of `base` with each row independently redrawn with probability p.
DnaEncoding perturbed(const DnaEncoding& base, double p, Rng& rng) {
  std::string s = to_letters(base);
  for (auto& ch : s)
    if (rng.uniform() < p) ch = kDnaLetters[rng.below(4)];
  return from_letters(s);
}

}  // namespace

TEST_SUITE("genelab") {
  TEST_CASE("row rule: assert the argmax only when it reaches tau and is unique") {
    // Four sources, one gene of 16 rows; the first rows are set by hand.
    std::vector<std::string> src = {"CCCGAAAAAAAAAAAA", "CCGGAAAAAAAAAAAA", "CCAAAAAAAAAAAAAA",
                                    "CGTTAAAAAAAAAAAA"};
    std::vector<DnaEncoding> codes;
    for (const auto& s : src) codes.push_back(from_letters(s));
    // Row 0: C x4 (1.0). Row 1: C x3 (0.75). Row 2: C,G,A,T (0.25 each).
    // Row 3: G,G,A,T -> G at 0.5, unique.
    CHECK(to_letters(mean_encoding(codes, 1.0).dna).substr(0, 4) == "C---");
    CHECK(to_letters(mean_encoding(codes, 0.75).dna).substr(0, 4) == "CC--");
    CHECK(to_letters(mean_encoding(codes, 0.5).dna).substr(0, 4) == "CC-G");
    // 0.5 / 0.5 split: no unique maximum, so the row is none at any tau.
    std::vector<DnaEncoding> split{from_letters("CCCCCCCCCCCCCCCC"), from_letters("GCCCCCCCCCCCCCCC")};
    CHECK(to_letters(mean_encoding(split, 0.5).dna)[0] == '-');
    CHECK(mean_encoding(split, 0.5).asserted() == 15);
    CHECK_THROWS_AS(mean_encoding(codes, 0.25), GeneLabError);
    CHECK_THROWS_AS(mean_encoding(codes, 1.01), GeneLabError);
    CHECK_THROWS_AS(mean_encoding({}, 0.5), GeneLabError);
  }

  TEST_CASE("asserted rows are monotone non-increasing in tau") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const DnaEncoding base = random_code(8, rng);
      std::vector<DnaEncoding> group;
      for (int i = 0; i < 2 + trial % 5; ++i) group.push_back(perturbed(base, 0.5, rng));
      std::size_t prev = std::numeric_limits<std::size_t>::max();
      for (double tau = 0.26; tau <= 1.0 + 1e-12; tau += 0.01) {
        const auto m = mean_encoding(group, std::min(tau, 1.0));
        CHECK(m.asserted() <= prev);
        prev = m.asserted();
      }
    }
  }

  TEST_CASE("splicing a unanimous mean into a group member is the identity") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
      const DnaEncoding base = random_code(6, rng);
      std::vector<DnaEncoding> group(4, base);
      for (double tau : {0.3, 0.5, 1.0}) {
        const auto m = mean_encoding(group, tau);
        CHECK(m.asserted() == base.rows());
        for (const auto& member : group) CHECK(splice(member, m) == member);
      }
    }
  }

  TEST_CASE("splice overwrites asserted rows and nothing else") {
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
      const DnaEncoding base = random_code(5, rng);
      std::vector<DnaEncoding> group;
      for (int i = 0; i < 3; ++i) group.push_back(perturbed(base, 0.4, rng));
      const auto m = mean_encoding(group, 0.6);
      const DnaEncoding target = random_code(5, rng);
      const DnaEncoding out = splice(target, m);
      for (std::size_t r = 0; r < target.rows(); ++r) {
        for (std::size_t c = 0; c < 4; ++c) {
          const float want = m.is_asserted(r) ? m.dna.probs[r * 4 + c] : target.probs[r * 4 + c];
          CHECK(out.probs[r * 4 + c] == want);
        }
      }
    }
    CHECK_THROWS_AS(splice(random_code(3, rng), mean_encoding({random_code(4, rng)}, 0.5)), GeneLabError);
  }

  TEST_CASE("means are taken over discretized codes unless soft") {
    DnaEncoding a{Tensor<float>({1, 1, 4}, {0.4f, 0.3f, 0.2f, 0.1f})};
    DnaEncoding b{Tensor<float>({1, 1, 4}, {0.4f, 0.3f, 0.2f, 0.1f})};
    CHECK(mean_encoding({a, b}, 0.9).is_asserted(0));       // both discretize to C
    CHECK_FALSE(mean_encoding({a, b}, 0.9, true).is_asserted(0));  // soft mean of C is 0.4
  }

  TEST_CASE("models: encode and grow from DNA") {
    NcamModel<float> model(test::tiny_model(EncodingMode::kDna), 4);
    const Dataset data = test::tiny_glyphs(2);
    const DnaEncoding soft = encode_image(model, data.items[0].image);
    CHECK(soft.probs.shape() == Shape{6, 16, 4});
    const Growth g = grow_from_dna(model, discretize(soft), 0, 2);
    CHECK(g.frames.size() == 3);  // 6 steps, every 2nd
    CHECK(g.image.shape() == Shape{3, 8, 8});
    const Growth again = grow_from_dna(model, discretize(soft), 0, 2);
    CHECK(g.image == again.image);
    NcamModel<float> ce(test::tiny_model(), 4);
    CHECK_THROWS(encode_image(ce, data.items[0].image));
  }

  TEST_CASE("splice recipes as structured text") {
    const SpliceRecipe r{{"g1", "g2"}, 0.75, "g3", false};
    nlohmann::json j = r;
    CHECK(j.at("tau") == 0.75);
    const SpliceRecipe back = j.get<SpliceRecipe>();
    CHECK(back.sources == r.sources);
    CHECK(back.target == "g3");
    CHECK(back.tau == 0.75);
  }
}
