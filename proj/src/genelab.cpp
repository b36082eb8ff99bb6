#include "ncam/genelab.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

namespace ncam::genelab {

namespace {

bool row_nonzero(const DnaEncoding& dna, std::size_t row) {
  const std::size_t k = dna.categories();
  for (std::size_t c = 0; c < k; ++c) {
    if (dna.probs[row * k + c] != 0.0f) return true;
  }
  return false;
}

}  // namespace

bool MeanEncoding::is_asserted(std::size_t row) const { return row_nonzero(dna, row); }

std::size_t MeanEncoding::asserted() const {
  std::size_t n = 0;
  for (std::size_t r = 0; r < dna.rows(); ++r) n += is_asserted(r);
  return n;
}

MeanEncoding mean_encoding(const std::vector<DnaEncoding>& sources, double tau, bool soft) {
  if (sources.empty()) throw GeneLabError("mean encoding needs at least one source");
  if (!(tau > 0.25 && tau <= 1.0)) throw GeneLabError("tau must lie in (0.25, 1], got " + std::to_string(tau));
  const Shape shape = sources.front().probs.shape();
  for (const auto& s : sources) {
    if (s.probs.shape() != shape) {
      throw GeneLabError("source shapes differ: " + to_string(shape) + " vs " + to_string(s.probs.shape()));
    }
  }
  const std::size_t k = shape.at(2), rows = shape[0] * shape[1];
  std::vector<double> avg(rows * k, 0.0);
  for (const auto& s : sources) {
    const DnaEncoding d = soft ? s : discretize(s);
    for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += d.probs[i];
  }
  for (auto& v : avg) v /= static_cast<double>(sources.size());
  MeanEncoding out{DnaEncoding{Tensor<float>(shape)}, tau};
  for (std::size_t r = 0; r < rows; ++r) {
    const double* a = &avg[r * k];
    const std::size_t best = static_cast<std::size_t>(std::max_element(a, a + k) - a);
    bool unique = true;
    for (std::size_t c = 0; c < k; ++c) unique = unique && (c == best || a[c] < a[best]);
    // Tolerance absorbs rounding in the average of identical one-hot rows.
    if (unique && a[best] >= tau - 1e-12) out.dna.probs[r * k + best] = 1.0f;
  }
  return out;
}

DnaEncoding splice(const DnaEncoding& target, const MeanEncoding& mean) {
  if (target.probs.shape() != mean.dna.probs.shape()) {
    throw GeneLabError("splice target " + to_string(target.probs.shape()) + " does not match mean encoding " +
                       to_string(mean.dna.probs.shape()));
  }
  DnaEncoding out = target;
  const std::size_t k = target.categories();
  for (std::size_t r = 0; r < target.rows(); ++r) {
    if (!mean.is_asserted(r)) continue;
    std::copy_n(mean.dna.probs.raw() + r * k, k, out.probs.raw() + r * k);
  }
  return out;
}

DnaEncoding encode_image(const NcamModel<float>& model, const Tensor<float>& image) {
  Graph<float> g(GradMode::kNoGrad);
  Binding<float> bind(g, model.params());
  const Var<float> e = model.encode(bind, g.constant(image));
  return DnaEncoding{model.dna_encode(bind, e).value()};
}

Growth grow_from_dna(const NcamModel<float>& model, const DnaEncoding& dna, std::uint64_t grow_seed,
                     std::size_t frame_stride) {
  Graph<float> g(GradMode::kNoGrad);
  Binding<float> bind(g, model.params());
  NcamModel<float>::Options opt;
  opt.grow_seed = grow_seed;
  opt.frame_stride = frame_stride;
  auto f = model.grow_from_dna(bind, dna.probs, opt);
  return Growth{f.image.value(), std::move(f.growth.frames)};
}

void to_json(nlohmann::json& j, const SpliceRecipe& r) {
  j = {{"sources", r.sources}, {"tau", r.tau}, {"target", r.target}, {"soft", r.soft}};
}

void from_json(const nlohmann::json& j, SpliceRecipe& r) {
  j.at("sources").get_to(r.sources);
  j.at("tau").get_to(r.tau);
  j.at("target").get_to(r.target);
  r.soft = j.value("soft", false);
}

}  // namespace ncam::genelab
