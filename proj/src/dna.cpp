#include "ncam/dna.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "ncam/ops.hpp"

namespace ncam {

DnaEncoding discretize(const DnaEncoding& dna) {
  DnaEncoding out{Tensor<float>(dna.probs.shape())};
  const std::size_t k = dna.categories();
  for (std::size_t r = 0; r < dna.rows(); ++r) {
    const float* row = dna.probs.raw() + r * k;
    if (std::all_of(row, row + k, [](float v) { return v == 0.0f; })) continue;
    const std::size_t best = static_cast<std::size_t>(std::max_element(row, row + k) - row);
    out.probs[r * k + best] = 1.0f;
  }
  return out;
}

std::string to_letters(const DnaEncoding& dna) {
  if (dna.categories() != 4) throw ShapeError("letter export needs 4 categories, got " + to_string(dna.probs.shape()));
  const DnaEncoding hard = discretize(dna);
  std::string s(dna.rows(), '-');
  for (std::size_t r = 0; r < dna.rows(); ++r) {
    for (std::size_t c = 0; c < 4; ++c)
      if (hard.probs[r * 4 + c] == 1.0f) s[r] = kDnaLetters[c];
  }
  return s;
}

DnaEncoding from_letters(const std::string& letters, std::size_t gene_length) {
  if (gene_length == 0 || letters.size() % gene_length != 0) {
    throw std::invalid_argument("letter string length " + std::to_string(letters.size()) +
                                " is not a multiple of the gene length " + std::to_string(gene_length));
  }
  DnaEncoding dna{Tensor<float>({letters.size() / gene_length, gene_length, 4})};
  for (std::size_t r = 0; r < letters.size(); ++r) {
    if (letters[r] == '-') continue;
    const char* hit = std::find(std::begin(kDnaLetters), std::end(kDnaLetters), letters[r]);
    if (hit == std::end(kDnaLetters)) {
      throw std::invalid_argument("invalid DNA letter '" + std::string(1, letters[r]) + "' at position " +
                                  std::to_string(r));
    }
    dna.probs[r * 4 + static_cast<std::size_t>(hit - kDnaLetters)] = 1.0f;
  }
  return dna;
}

std::string format_dna(const DnaEncoding& dna) {
  return "NCAM-DNA v1 D=" + std::to_string(dna.features()) + "\n" + to_letters(dna);
}

DnaEncoding parse_dna(const std::string& text) {
  const auto nl = text.find('\n');
  const std::string header = text.substr(0, nl);
  const std::string prefix = "NCAM-DNA v1 D=";
  if (nl == std::string::npos || header.rfind(prefix, 0) != 0) {
    throw std::invalid_argument("missing 'NCAM-DNA v1 D=<D>' header");
  }
  const std::size_t d = std::stoul(header.substr(prefix.size()));
  std::string body = text.substr(nl + 1);
  while (!body.empty() && (body.back() == '\n' || body.back() == '\r')) body.pop_back();
  if (d == 0 || body.size() % d != 0) {
    throw std::invalid_argument("DNA body of " + std::to_string(body.size()) + " letters does not split into D=" +
                                std::to_string(d) + " genes");
  }
  return from_letters(body, body.size() / d);
}

std::size_t MutationPlan::replaced_count() const {
  return static_cast<std::size_t>(std::count(replaced.begin(), replaced.end(), std::uint8_t{1}));
}

MutationPlan plan_mutation(std::size_t rows, std::size_t categories, double rate, Rng& rng) {
  if (rate < 0.0 || rate > 1.0) throw std::invalid_argument("mutation rate must lie in [0, 1]");
  MutationPlan plan{rows, categories, std::vector<std::uint8_t>(rows, 0), std::vector<std::uint8_t>(rows, 0)};
  const auto count = static_cast<std::size_t>(rate * static_cast<double>(rows));
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Partial Fisher-Yates: the first `count` entries are a uniform subset.
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(order[i], order[i + rng.below(rows - i)]);
    plan.replaced[order[i]] = 1;
    plan.letter[order[i]] = static_cast<std::uint8_t>(rng.below(categories));
  }
  return plan;
}

template <typename T>
Tensor<T> apply_mutation(const Tensor<T>& probs, const MutationPlan& plan) {
  if (probs.size() != plan.rows * plan.categories) {
    throw ShapeError("mutation plan for " + std::to_string(plan.rows) + " rows applied to " + to_string(probs.shape()));
  }
  Tensor<T> out(probs);
  for (std::size_t r = 0; r < plan.rows; ++r) {
    if (!plan.replaced[r]) continue;
    for (std::size_t c = 0; c < plan.categories; ++c) out[r * plan.categories + c] = c == plan.letter[r] ? T{1} : T{0};
  }
  return out;
}

template <typename T>
Var<T> apply_mutation(const Var<T>& probs, const MutationPlan& plan) {
  if (probs.size() != plan.rows * plan.categories) {
    throw ShapeError("mutation plan for " + std::to_string(plan.rows) + " rows applied to " + to_string(probs.shape()));
  }
  Tensor<T> keep(probs.shape(), T{1});
  Tensor<T> replacement(probs.shape());
  for (std::size_t r = 0; r < plan.rows; ++r) {
    if (!plan.replaced[r]) continue;
    for (std::size_t c = 0; c < plan.categories; ++c) keep[r * plan.categories + c] = T{0};
    replacement[r * plan.categories + plan.letter[r]] = T{1};
  }
  Graph<T>& g = probs.graph();
  return ops::add(ops::mul(probs, g.constant(std::move(keep))), g.constant(std::move(replacement)));
}

DnaEncoding mutate(const DnaEncoding& dna, double rate, std::uint64_t seed) {
  Rng rng(seed);
  return DnaEncoding{apply_mutation(dna.probs, plan_mutation(dna.rows(), dna.categories(), rate, rng))};
}

template <typename T>
DnaCodec<T>::DnaCodec(ParamStore<T>& store, const DnaConfig& cfg, std::size_t features, Rng& rng,
                      bool trainable_leaks)
    : cfg_(cfg), features_(features) {
  const std::size_t letters = cfg.gene_length * cfg.categories;
  std::tie(enc_in_w_, enc_in_b_) = add_conv(store, "dna.enc.in", 1, cfg.width, 1, rng);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    enc_blocks_.emplace_back(store, "dna.enc.cb" + std::to_string(i), BlockKind::kCB1, cfg.width,
                             default_expansion(BlockKind::kCB1), rng, trainable_leaks);
  }
  std::tie(enc_out_w_, enc_out_b_) = add_conv(store, "dna.enc.out", cfg.width, letters, 1, rng);

  std::tie(dec_in_w_, dec_in_b_) = add_conv(store, "dna.dec.in", letters, cfg.width, 1, rng);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    dec_blocks_.emplace_back(store, "dna.dec.cb" + std::to_string(i), BlockKind::kCB1, cfg.width,
                             default_expansion(BlockKind::kCB1), rng, trainable_leaks);
  }
  std::tie(dec_out_w_, dec_out_b_) = add_conv(store, "dna.dec.out", cfg.width, 1, 1, rng);
}

template <typename T>
Var<T> DnaCodec<T>::encode(Binding<T>& bind, const Var<T>& encoding) const {
  if (encoding.shape() != Shape{features_}) {
    throw ShapeError("DNA encoder expects [" + std::to_string(features_) + "], got " + to_string(encoding.shape()));
  }
  const std::size_t letters = cfg_.gene_length * cfg_.categories;
  auto x = ops::reshape(encoding, {1, 1, features_});
  x = ops::conv2d(x, bind[enc_in_w_], std::optional<Var<T>>(bind[enc_in_b_]));
  for (const auto& b : enc_blocks_) x = b.forward(bind, x);
  x = ops::conv2d(x, bind[enc_out_w_], std::optional<Var<T>>(bind[enc_out_b_]));
  x = ops::transpose2d(ops::reshape(x, {letters, features_}));
  return ops::softmax_lastdim(ops::reshape(x, {features_, cfg_.gene_length, cfg_.categories}));
}

template <typename T>
Var<T> DnaCodec<T>::decode(Binding<T>& bind, const Var<T>& dna) const {
  const Shape expected{features_, cfg_.gene_length, cfg_.categories};
  if (dna.shape() != expected) {
    throw ShapeError("DNA decoder expects " + to_string(expected) + ", got " + to_string(dna.shape()));
  }
  const std::size_t letters = cfg_.gene_length * cfg_.categories;
  auto x = ops::transpose2d(ops::reshape(dna, {features_, letters}));
  x = ops::reshape(x, {letters, 1, features_});
  x = ops::conv2d(x, bind[dec_in_w_], std::optional<Var<T>>(bind[dec_in_b_]));
  for (const auto& b : dec_blocks_) x = b.forward(bind, x);
  x = ops::conv2d(x, bind[dec_out_w_], std::optional<Var<T>>(bind[dec_out_b_]));
  return ops::reshape(x, {features_});
}

template Tensor<float> apply_mutation(const Tensor<float>&, const MutationPlan&);
template Tensor<double> apply_mutation(const Tensor<double>&, const MutationPlan&);
template Var<float> apply_mutation(const Var<float>&, const MutationPlan&);
template Var<double> apply_mutation(const Var<double>&, const MutationPlan&);
template class DnaCodec<float>;
template class DnaCodec<double>;

}  // namespace ncam
