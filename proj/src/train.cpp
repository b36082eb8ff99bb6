#include "ncam/train.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include <nlohmann/json.hpp>

#include "ncam/ops.hpp"

namespace ncam {

using json = nlohmann::json;

UpdateMode parse_update_mode(const std::string& s) {
  if (s == "synchronous" || s == "syn") return UpdateMode::kSynchronous;
  if (s == "stochastic" || s == "sto") return UpdateMode::kStochastic;
  throw ConfigError("unknown update mode '" + s + "' (expected synchronous or stochastic)");
}

std::string to_string(UpdateMode mode) { return mode == UpdateMode::kSynchronous ? "synchronous" : "stochastic"; }

UpdateMode update_mode(const ModelConfig& cfg) {
  return cfg.nca.update_prob >= 1.0 ? UpdateMode::kSynchronous : UpdateMode::kStochastic;
}

void set_update_mode(ModelConfig& cfg, UpdateMode mode) {
  cfg.nca.update_prob = mode == UpdateMode::kSynchronous ? kSynchronousProb : kStochasticProb;
}

void TrainConfig::validate() const {
  model.validate();
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(adam.learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1)) {
    throw ConfigError("Adam moment parameters must lie in [0, 1)");
  }
  if (!(adam.epsilon > 0)) throw ConfigError("Adam epsilon must be positive");
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"model", c.model},
       {"batch_size", c.batch_size},
       {"adam",
        {{"learning_rate", c.adam.learning_rate},
         {"beta1", c.adam.beta1},
         {"beta2", c.adam.beta2},
         {"epsilon", c.adam.epsilon},
         {"clip_norm", c.adam.clip_norm}}},
       {"total_steps", c.total_steps},
       {"seed", c.seed},
       {"checkpoint_every", c.checkpoint_every},
       {"dataset", c.dataset}};
}

void from_json(const json& j, TrainConfig& c) {
  j.at("model").get_to(c.model);
  j.at("batch_size").get_to(c.batch_size);
  const json& a = j.at("adam");
  a.at("learning_rate").get_to(c.adam.learning_rate);
  a.at("beta1").get_to(c.adam.beta1);
  a.at("beta2").get_to(c.adam.beta2);
  a.at("epsilon").get_to(c.adam.epsilon);
  a.at("clip_norm").get_to(c.adam.clip_norm);
  j.at("total_steps").get_to(c.total_steps);
  j.at("seed").get_to(c.seed);
  j.at("checkpoint_every").get_to(c.checkpoint_every);
  j.at("dataset").get_to(c.dataset);
}

DivergenceError::DivergenceError(std::size_t step, double loss)
    : std::runtime_error("loss became non-finite (" + std::to_string(loss) + ") at step " + std::to_string(step)),
      step_(step),
      loss_(loss) {}

Checkpoint Checkpoint::initial(const TrainConfig& config) {
  config.validate();
  Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  return Checkpoint{config, NcamModel<float>(config.model, config.seed), Adam<float>(config.adam), 0, rng.state(), {},
                    0};
}

// ---------------------------------------------------------------------------
// Checkpoint container

namespace {

enum DType : std::uint8_t { kF32 = 0, kF64 = 1 };

class Writer {
 public:
  template <typename U>
  void put(U v) {
    static_assert(std::is_integral_v<U> || std::is_floating_point_v<U>);
    std::array<std::uint8_t, sizeof(U)> raw;
    std::memcpy(raw.data(), &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    bytes_.insert(bytes_.end(), raw.begin(), raw.end());
  }
  void put_bytes(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void tensor(const std::string& name, const Tensor<float>& t) {
    put(static_cast<std::uint32_t>(name.size()));
    put_bytes(name);
    put(static_cast<std::uint8_t>(kF32));
    put(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put(static_cast<std::uint64_t>(d));
    for (float v : t.data()) put(v);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  std::size_t offset() const { return pos_; }

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    std::array<std::uint8_t, sizeof(U)> raw;
    std::memcpy(raw.data(), b_.data() + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    U v;
    std::memcpy(&v, raw.data(), sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string get_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::pair<std::string, Tensor<float>> tensor() {
    const std::size_t at = pos_;
    const auto name = get_string(get<std::uint32_t>("name length"), "tensor name");
    const auto dtype = get<std::uint8_t>("dtype tag");
    const auto rank = get<std::uint32_t>("rank");
    if (rank > 8) fail("implausible rank " + std::to_string(rank) + " for " + name, at);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>("dimension"));
    const std::size_t n = numel(shape);
    Tensor<float> t(shape);
    if (dtype == kF32) {
      if (n * 4 > b_.size() - pos_) fail("payload of " + name + " runs past end of file", pos_);
      for (auto& v : t.data()) v = get<float>("payload");
    } else if (dtype == kF64) {
      if (n * 8 > b_.size() - pos_) fail("payload of " + name + " runs past end of file", pos_);
      for (auto& v : t.data()) v = static_cast<float>(get<double>("payload"));
    } else {
      fail("unknown dtype tag " + std::to_string(dtype) + " for " + name, at);
    }
    return {name, std::move(t)};
  }
  bool at_end() const { return pos_ == b_.size(); }
  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw CheckpointError("checkpoint: " + msg + " (byte offset " + std::to_string(at) + ")");
  }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;

  void need(std::size_t n, const char* what) const {
    if (n > b_.size() - pos_) fail(std::string("truncated while reading ") + what, pos_);
  }
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  const auto& store = ckpt.model.params();
  const bool moments = ckpt.optimizer.first_moments().size() == store.size();
  Writer w;
  w.put_bytes(std::string(kCheckpointMagic, sizeof(kCheckpointMagic)));
  w.put(static_cast<std::uint32_t>(store.size() * (moments ? 3 : 1)));
  for (const auto& p : store) w.tensor("param/" + p.name, p.value);
  if (moments) {
    for (std::size_t k = 0; k < store.size(); ++k) w.tensor("adam.m/" + store[k].name, ckpt.optimizer.first_moments()[k]);
    for (std::size_t k = 0; k < store.size(); ++k) w.tensor("adam.v/" + store[k].name, ckpt.optimizer.second_moments()[k]);
  }
  const json blob = {{"format", 1},
                     {"train", ckpt.config},
                     {"step", ckpt.step},
                     {"adam_steps", ckpt.optimizer.steps()},
                     {"rng", ckpt.rng_state},
                     {"sampler", {{"order", ckpt.order}, {"cursor", ckpt.cursor}}}};
  const std::string text = blob.dump();
  w.put(static_cast<std::uint32_t>(text.size()));
  w.put_bytes(text);
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.get_string(sizeof(kCheckpointMagic), "magic") != std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    r.fail("bad magic, not an NCAM1 checkpoint", 0);
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  std::unordered_map<std::string, Tensor<float>> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    auto [name, t] = r.tensor();
    if (!tensors.emplace(name, std::move(t)).second) r.fail("duplicate tensor " + name, at);
  }
  const std::size_t blob_at = r.offset();
  const std::string text = r.get_string(r.get<std::uint32_t>("config length"), "config blob");
  if (!r.at_end()) r.fail("trailing bytes after config blob", r.offset());
  json blob;
  TrainConfig cfg;
  try {
    blob = json::parse(text);
    if (blob.at("format").get<int>() != 1) r.fail("unsupported format version", blob_at);
    blob.at("train").get_to(cfg);
  } catch (const json::exception& e) {
    r.fail(std::string("invalid config blob: ") + e.what(), blob_at);
  }
  Checkpoint ckpt{cfg, NcamModel<float>(cfg.model, cfg.seed), Adam<float>(cfg.adam), 0, {}, {}, 0};
  auto& store = ckpt.model.params();
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor<float>& {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError("checkpoint: missing tensor " + name);
    if (it->second.shape() != shape) {
      throw CheckpointError("checkpoint: tensor " + name + " has shape " + to_string(it->second.shape()) +
                            ", model expects " + to_string(shape));
    }
    return it->second;
  };
  for (auto& p : store) p.value = fetch("param/" + p.name, p.value.shape());
  if (tensors.size() == 3 * store.size()) {
    ckpt.optimizer.init(store);
    for (std::size_t k = 0; k < store.size(); ++k) {
      ckpt.optimizer.first_moments()[k] = fetch("adam.m/" + store[k].name, store[k].value.shape());
      ckpt.optimizer.second_moments()[k] = fetch("adam.v/" + store[k].name, store[k].value.shape());
    }
  } else if (tensors.size() != store.size()) {
    throw CheckpointError("checkpoint: " + std::to_string(tensors.size()) + " tensors do not match a model with " +
                          std::to_string(store.size()) + " parameters");
  }
  try {
    ckpt.step = blob.at("step").get<std::size_t>();
    ckpt.optimizer.set_steps(blob.at("adam_steps").get<std::size_t>());
    ckpt.rng_state = blob.at("rng").get<std::string>();
    ckpt.order = blob.at("sampler").at("order").get<std::vector<std::size_t>>();
    ckpt.cursor = blob.at("sampler").at("cursor").get<std::size_t>();
  } catch (const json::exception& e) {
    r.fail(std::string("invalid config blob: ") + e.what(), blob_at);
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  // Write-then-rename so an interrupted save never clobbers the previous file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return deserialize_checkpoint(bytes);
}

// ---------------------------------------------------------------------------
// Loss

template <typename T>
Var<T> reconstruction_loss(const Var<T>& prediction, const Tensor<T>& target) {
  Graph<T>& g = prediction.graph();
  if (prediction.shape() != target.shape()) {
    throw ShapeError("prediction " + to_string(prediction.shape()) + " vs target " + to_string(target.shape()));
  }
  if (target.dim(0) != 4) return ops::mse(prediction, g.constant(target));
  const std::size_t h = target.dim(1), w = target.dim(2), hw = h * w;
  auto composite = [&](const Var<T>& x) {
    const Var<T> rgb = ops::slice_flat(x, 0, {3, h, w});
    const Var<T> a = ops::slice_flat(x, 3 * hw, {1, h, w});
    const Var<T> a3 = ops::concat(std::vector<Var<T>>{a, a, a}, 0);
    Tensor<T> ones({3, h, w});
    std::fill(ones.data().begin(), ones.data().end(), T{1});
    return ops::add(ops::sub(ops::mul(rgb, a3), a3), g.constant(ones));
  };
  return ops::mse(composite(prediction), composite(g.constant(target)));
}

template Var<float> reconstruction_loss(const Var<float>&, const Tensor<float>&);
template Var<double> reconstruction_loss(const Var<double>&, const Tensor<double>&);

Tensor<float> composite_white(const Tensor<float>& image) {
  if (image.dim(0) != 4) return image;
  const std::size_t hw = image.dim(1) * image.dim(2);
  Tensor<float> out({3, image.dim(1), image.dim(2)});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < hw; ++i) {
      const float a = image[3 * hw + i];
      out[c * hw + i] = image[c * hw + i] * a + 1.0f - a;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

// SplitMix64 finalizer over a combination of inputs; decorrelates per-item
// and per-repetition streams derived from one base seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1) + 0xbf58476d1ce4e5b9ULL * (c + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::size_t dna_rows(const ModelConfig& cfg) { return cfg.encoder.dim * cfg.dna.gene_length; }

}  // namespace

Trainer::Trainer(const Dataset& data, TrainConfig cfg) : Trainer(data, Checkpoint::initial(cfg)) {}

Trainer::Trainer(const Dataset& data, Checkpoint ckpt)
    : data_(data), ckpt_(std::move(ckpt)), start_(std::chrono::steady_clock::now()) {
  ckpt_.config.validate();
  check_dataset();
  rng_.restore(ckpt_.rng_state);
}

void Trainer::check_dataset() const {
  const ModelConfig& m = ckpt_.config.model;
  if (data_.size() == 0) throw DataError("training dataset is empty");
  if (data_.channels != m.nca.visible || data_.height != m.height || data_.width != m.width) {
    throw ConfigError("dataset images " + to_string(Shape{data_.channels, data_.height, data_.width}) +
                      " do not match the model's visible grid " +
                      to_string(Shape{m.nca.visible, m.height, m.width}));
  }
}

std::vector<std::size_t> Trainer::next_batch() {
  // Without replacement within an epoch; the batch never repeats an item.
  const std::size_t n = std::min(ckpt_.config.batch_size, data_.size());
  std::vector<std::size_t> batch;
  batch.reserve(n);
  while (batch.size() < n) {
    if (ckpt_.cursor >= ckpt_.order.size() || ckpt_.order.size() != data_.size()) {
      ckpt_.order.resize(data_.size());
      std::iota(ckpt_.order.begin(), ckpt_.order.end(), std::size_t{0});
      for (std::size_t i = ckpt_.order.size(); i > 1; --i) std::swap(ckpt_.order[i - 1], ckpt_.order[rng_.below(i)]);
      ckpt_.cursor = 0;
    }
    const std::size_t idx = ckpt_.order[ckpt_.cursor++];
    if (std::find(batch.begin(), batch.end(), idx) == batch.end()) batch.push_back(idx);
  }
  return batch;
}

double Trainer::item_loss(std::size_t index, std::uint64_t grow_seed) const {
  Graph<float> g(GradMode::kNoGrad);
  Binding<float> bind(g, ckpt_.model.params());
  NcamModel<float>::Options opt;
  opt.grow_seed = grow_seed;
  auto f = ckpt_.model.reconstruct(bind, data_.items.at(index).image, opt);
  return reconstruction_loss(f.image, data_.items[index].image).value()[0];
}

StepStats Trainer::step() {
  const TrainConfig& cfg = ckpt_.config;
  auto& store = ckpt_.model.params();
  const auto batch = next_batch();
  store.zero_grad();
  const float weight = 1.0f / static_cast<float>(batch.size());
  double loss_sum = 0;
  for (std::size_t idx : batch) {
    NcamModel<float>::Options opt;
    opt.grow_seed = rng_.next();
    if (cfg.model.mode == EncodingMode::kDna && cfg.model.dna.mutation_rate > 0) {
      opt.mutation = plan_mutation(dna_rows(cfg.model), cfg.model.dna.categories, cfg.model.dna.mutation_rate, rng_);
    }
    Graph<float> g;
    Binding<float> bind(g, store);
    auto f = ckpt_.model.reconstruct(bind, data_.items[idx].image, opt);
    Var<float> loss = reconstruction_loss(f.image, data_.items[idx].image);
    const double l = loss.value()[0];
    if (!std::isfinite(l)) throw DivergenceError(ckpt_.step + 1, l);
    loss_sum += l;
    g.backward(loss);
    bind.accumulate_grads(store, weight);
  }
  for (const auto& p : store) {
    for (float v : p.grad.data()) {
      if (!std::isfinite(v)) throw DivergenceError(ckpt_.step + 1, v);
    }
  }
  const double norm = ckpt_.optimizer.step(store);
  store.clamp_leaks();
  ++ckpt_.step;
  ckpt_.rng_state = rng_.state();
  StepStats s;
  s.step = ckpt_.step;
  s.loss = loss_sum / static_cast<double>(batch.size());
  s.lf_nca = store[ckpt_.model.nca_leak_id()].value[0];
  s.grad_norm = norm;
  s.wallclock_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  return s;
}

void Trainer::run(std::ostream* metrics, const std::optional<std::filesystem::path>& ckpt_path,
                  const std::function<void(const StepStats&)>& on_step) {
  const std::size_t every = ckpt_.config.checkpoint_every;
  while (ckpt_.step < ckpt_.config.total_steps) {
    // A diverging step throws before the optimizer runs, so the state
    // saved here is the last finite one.
    StepStats s;
    try {
      s = step();
    } catch (const DivergenceError&) {
      if (ckpt_path) save_checkpoint(*ckpt_path, ckpt_);
      throw;
    }
    if (metrics) *metrics << s.step << ',' << s.loss << ',' << s.lf_nca << ',' << s.wallclock_ms << '\n';
    if (on_step) on_step(s);
    if (ckpt_path && every > 0 && s.step % every == 0) save_checkpoint(*ckpt_path, ckpt_);
  }
  if (metrics) metrics->flush();
  if (ckpt_path) save_checkpoint(*ckpt_path, ckpt_);
}

// ---------------------------------------------------------------------------
// Evaluation

Reconstruction reconstruct(const NcamModel<float>& model, const Tensor<float>& image,
                           const NcamModel<float>::Options& options) {
  Graph<float> g(GradMode::kNoGrad);
  Binding<float> bind(g, model.params());
  auto f = model.reconstruct(bind, image, options);
  Reconstruction r;
  r.image = f.image.value();
  r.frames = std::move(f.growth.frames);
  r.encoding = f.encoding.value();
  if (f.dna) r.dna = DnaEncoding{f.dna->value()};
  r.mse = reconstruction_loss(f.image, image).value()[0];
  return r;
}

EvalResult evaluate(const NcamModel<float>& model, const Dataset& data, const EvalOptions& options) {
  const ModelConfig& cfg = model.config();
  if (data.channels != cfg.nca.visible || data.height != cfg.height || data.width != cfg.width) {
    throw ConfigError("dataset images " + to_string(Shape{data.channels, data.height, data.width}) +
                      " do not match the model's visible grid " +
                      to_string(Shape{cfg.nca.visible, cfg.height, cfg.width}));
  }
  const bool mutating = cfg.mode == EncodingMode::kDna && options.mutation_rate && *options.mutation_rate > 0;
  const bool stochastic = update_mode(cfg) == UpdateMode::kStochastic || mutating;
  EvalResult res;
  res.repetitions = stochastic ? std::max<std::size_t>(1, options.seeds) : 1;
  res.per_image.assign(data.size(), 0.0);
  for (const auto& item : data.items) res.ids.push_back(item.id);
  for (std::size_t r = 0; r < res.repetitions; ++r) {
    double total = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      NcamModel<float>::Options opt;
      opt.grow_seed = mix_seed(options.seed, r, i);
      opt.discretize = options.discretize && cfg.mode == EncodingMode::kDna;
      if (mutating) {
        Rng mrng(mix_seed(options.seed ^ 0x5bd1e995ULL, r, i));
        opt.mutation = plan_mutation(dna_rows(cfg), cfg.dna.categories, *options.mutation_rate, mrng);
      }
      const double mse = reconstruct(model, data.items[i].image, opt).mse;
      res.per_image[i] += mse / static_cast<double>(res.repetitions);
      total += mse;
    }
    res.per_seed.push_back(total / static_cast<double>(data.size()));
  }
  res.mean = std::accumulate(res.per_seed.begin(), res.per_seed.end(), 0.0) / static_cast<double>(res.repetitions);
  if (res.repetitions > 1) {
    double sq = 0;
    for (double v : res.per_seed) sq += (v - res.mean) * (v - res.mean);
    res.sd = std::sqrt(sq / static_cast<double>(res.repetitions - 1));
  }
  return res;
}

}  // namespace ncam
