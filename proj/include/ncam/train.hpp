#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ncam/data.hpp"
#include "ncam/model.hpp"

namespace ncam {

inline constexpr double kSynchronousProb = 1.0;
inline constexpr double kStochasticProb = 0.5;

enum class UpdateMode { kSynchronous, kStochastic };
UpdateMode parse_update_mode(const std::string& s);
std::string to_string(UpdateMode mode);
UpdateMode update_mode(const ModelConfig& cfg);
void set_update_mode(ModelConfig& cfg, UpdateMode mode);

struct TrainConfig {
  ModelConfig model;
  std::size_t batch_size = 8;
  Adam<float>::Options adam;
  std::size_t total_steps = 2000;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: only at the end of a run
  std::string dataset;               // spec string the run was started with

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Raised when the loss stops being finite; the model state is the last
// finite one (no optimizer step was applied).
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t step, double loss);
  std::size_t step() const { return step_; }
  double loss() const { return loss_; }

 private:
  std::size_t step_;
  double loss_;
};

// Complete training state: model parameters (all leak factors included),
// optimizer moments, step counter, rng stream and batch sampler position.
struct Checkpoint {
  TrainConfig config;
  NcamModel<float> model;
  Adam<float> optimizer;
  std::size_t step = 0;
  std::string rng_state;
  std::vector<std::size_t> order;  // current epoch permutation
  std::size_t cursor = 0;          // next position in `order`

  // Fresh state for a configuration (model initialized from config.seed).
  static Checkpoint initial(const TrainConfig& config);
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[5] = {'N', 'C', 'A', 'M', '1'};

// Binary container: magic "NCAM1", u32 tensor count, then per tensor
// (u32 name length, name, u8 dtype tag, u32 rank, u64 dims, little-endian
// payload), then u32 length + JSON config blob.
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// MSE between the final visible channels and the target. With four visible
// channels both sides are composited onto white (rgb * a + 1 - a) first.
template <typename T>
Var<T> reconstruction_loss(const Var<T>& prediction, const Tensor<T>& target);

// Composites an RGBA tensor onto white; RGB tensors are returned unchanged.
Tensor<float> composite_white(const Tensor<float>& image);

struct StepStats {
  std::size_t step = 0;  // 1-based index of the completed step
  double loss = 0;       // batch mean
  double lf_nca = 0;     // NCA update leak factor after the step
  double grad_norm = 0;  // pre-clip
  double wallclock_ms = 0;
};

class Trainer {
 public:
  Trainer(const Dataset& data, TrainConfig cfg);
  // Resumes from a checkpoint (dataset must match the model's image shape).
  Trainer(const Dataset& data, Checkpoint ckpt);

  const NcamModel<float>& model() const { return ckpt_.model; }
  const Checkpoint& state() const { return ckpt_; }
  const TrainConfig& config() const { return ckpt_.config; }
  std::size_t steps_done() const { return ckpt_.step; }

  // Loss of the current model on one item with a given grow seed (no update).
  double item_loss(std::size_t index, std::uint64_t grow_seed) const;

  StepStats step();

  // Runs until total_steps; writes "step,loss,lf_nca,wallclock_ms" lines to
  // `metrics` and saves to `ckpt_path` every checkpoint_every steps and at the
  // end. On divergence the last finite state is saved before rethrowing.
  void run(std::ostream* metrics = nullptr, const std::optional<std::filesystem::path>& ckpt_path = std::nullopt,
           const std::function<void(const StepStats&)>& on_step = {});

 private:
  const Dataset& data_;
  Checkpoint ckpt_;
  Rng rng_;
  std::chrono::steady_clock::time_point start_;

  void check_dataset() const;
  std::vector<std::size_t> next_batch();
};

struct EvalOptions {
  std::size_t seeds = 5;                // repetitions when the forward pass is stochastic
  std::uint64_t seed = 0;               // base seed for growth masks and mutations
  bool discretize = false;              // one-hot DNA before decoding
  std::optional<double> mutation_rate;  // DNA mode: mutate at this rate
};

struct EvalResult {
  std::vector<std::string> ids;
  std::vector<double> per_image;     // mean over repetitions
  std::vector<double> per_seed;      // dataset mean per repetition
  double mean = 0;
  double sd = 0;                     // across repetitions (0 when deterministic)
  std::size_t repetitions = 1;
};

// Evaluation is deterministic (one repetition) unless the update mode is
// stochastic or mutations are applied.
EvalResult evaluate(const NcamModel<float>& model, const Dataset& data, const EvalOptions& options);

// Reconstruction of one image, optionally keeping every k-th frame.
struct Reconstruction {
  Tensor<float> image;                   // final visible channels
  std::vector<Tensor<float>> frames;     // visible channels per kept step
  Tensor<float> encoding;                // continuous encoding [D]
  std::optional<DnaEncoding> dna;        // DNA mode: encoding fed to the decoder
  double mse = 0;
};

Reconstruction reconstruct(const NcamModel<float>& model, const Tensor<float>& image,
                           const typename NcamModel<float>::Options& options);

}  // namespace ncam
