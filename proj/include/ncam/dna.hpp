#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ncam/blocks.hpp"

namespace ncam {

inline constexpr char kDnaLetters[4] = {'C', 'G', 'A', 'T'};

// [D, gene_length, 4] rows over the categories C, G, A, T. Rows are
// probability vectors, one-hot after discretize(), or all-zero ("none") in
// gene-lab mean encodings.
struct DnaEncoding {
  Tensor<float> probs;

  std::size_t features() const { return probs.dim(0); }
  std::size_t gene_length() const { return probs.dim(1); }
  std::size_t categories() const { return probs.dim(2); }
  std::size_t rows() const { return features() * gene_length(); }
  bool operator==(const DnaEncoding&) const = default;
};

// Argmax per row; ties go to the lowest category index. "None" rows stay zero.
DnaEncoding discretize(const DnaEncoding& dna);
std::string to_letters(const DnaEncoding& dna);
// '-' marks "none" rows; any other character must be one of CGAT.
DnaEncoding from_letters(const std::string& letters, std::size_t gene_length = 16);

// Letter-string export: "NCAM-DNA v1 D=<D>\n" followed by D*16 letters.
std::string format_dna(const DnaEncoding& dna);
DnaEncoding parse_dna(const std::string& text);

// Rows picked for replacement and the one-hot category each receives.
struct MutationPlan {
  std::size_t rows = 0;
  std::size_t categories = 4;
  std::vector<std::uint8_t> replaced;  // per row: 0/1
  std::vector<std::uint8_t> letter;    // per row: replacement category

  std::size_t replaced_count() const;
};

// Uniformly random subset of floor(rate * rows) rows, each given a uniformly
// drawn category.
MutationPlan plan_mutation(std::size_t rows, std::size_t categories, double rate, Rng& rng);

template <typename T>
Tensor<T> apply_mutation(const Tensor<T>& probs, const MutationPlan& plan);

// keep_mask * dna + replacement, both constants.
template <typename T>
Var<T> apply_mutation(const Var<T>& probs, const MutationPlan& plan);

DnaEncoding mutate(const DnaEncoding& dna, double rate, std::uint64_t seed);

// Per-feature gene encoder/decoder with weights shared across the D features.
// Each feature is processed in isolation as a 1x1 convolution over a
// [channels, 1, D] layout.
template <typename T>
class DnaCodec {
 public:
  DnaCodec() = default;
  DnaCodec(ParamStore<T>& store, const DnaConfig& cfg, std::size_t features, Rng& rng, bool trainable_leaks);

  // [D] -> [D, gene_length, categories], softmax over categories.
  Var<T> encode(Binding<T>& bind, const Var<T>& encoding) const;
  // [D, gene_length, categories] -> [D]
  Var<T> decode(Binding<T>& bind, const Var<T>& dna) const;

  std::size_t features() const { return features_; }

 private:
  DnaConfig cfg_;
  std::size_t features_ = 0;
  ParamId enc_in_w_ = 0, enc_in_b_ = 0, enc_out_w_ = 0, enc_out_b_ = 0;
  ParamId dec_in_w_ = 0, dec_in_b_ = 0, dec_out_w_ = 0, dec_out_b_ = 0;
  std::vector<ResidualBlock<T>> enc_blocks_, dec_blocks_;
};

}  // namespace ncam
