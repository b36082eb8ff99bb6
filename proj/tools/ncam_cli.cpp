// ncam: train, evaluate and explore NCA-manifold models from the shell.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric divergence.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ncam/genelab.hpp"
#include "ncam/image_io.hpp"
#include "ncam/service.hpp"
#include "ncam/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ncam;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitDiverged = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainArgs {
  std::string dataset = "glyphs";
  std::string out = "ncam.ckpt";
  std::string mode = "continuous";
  std::string update = "synchronous";
  std::size_t steps = 2000;
  std::size_t batch = 8;
  double lr = 2e-4;
  std::size_t channels = 16;
  std::size_t hidden = 32;
  std::size_t nca_steps = 32;
  std::size_t dim = 64;
  double mutation_rate = 0.5;
  bool no_leak = false;
  bool no_norm = false;
  bool no_slices = false;
  std::string metrics;
  std::size_t checkpoint_every = 0;
  bool resume = false;
  bool quiet = false;
};

struct CommonArgs {
  std::string ckpt;
  std::string dataset;  // empty: the dataset recorded in the checkpoint
  std::uint64_t seed = 0;
};

std::uint64_t env_seed() { return service::default_seed(0); }

Dataset dataset_for(const CommonArgs& a, const Checkpoint& ckpt) {
  const std::string spec = a.dataset.empty() ? ckpt.config.dataset : a.dataset;
  if (spec.empty()) throw UsageError("no --dataset given and the checkpoint does not record one");
  return load_dataset(spec);
}

std::size_t resolve_item(const Dataset& data, const std::string& token) {
  if (auto idx = data.find(token)) return *idx;
  if (!token.empty() && token.find_first_not_of("0123456789") == std::string::npos) {
    const std::size_t i = std::stoul(token);
    if (i < data.size()) return i;
  }
  throw DataError("unknown image id '" + token + "' (dataset has " + std::to_string(data.size()) + " items)");
}

void require_dna(const Checkpoint& ckpt, const char* verb) {
  if (ckpt.config.model.mode != EncodingMode::kDna) {
    throw UsageError(std::string(verb) + " needs a checkpoint trained in dna mode");
  }
}

void write_frames(const fs::path& dir, const std::string& stem, const std::vector<Tensor<float>>& frames) {
  fs::create_directories(dir);
  std::vector<Rgba8> rasters;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    rasters.push_back(to_rgba8(frames[i]));
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%03zu.png", stem.c_str(), i);
    write_png(dir / name, rasters.back());
  }
  if (!rasters.empty()) write_gif(dir / (stem + ".gif"), rasters);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// --- verbs -------------------------------------------------------------

int cmd_train(const TrainArgs& a, std::uint64_t seed) {
  TrainConfig cfg;
  std::optional<Checkpoint> resume;
  if (a.resume && fs::exists(a.out)) {
    resume = load_checkpoint(a.out);
    cfg = resume->config;
    cfg.total_steps = a.steps;
    resume->config.total_steps = a.steps;
  } else {
    cfg.dataset = a.dataset;
    cfg.model.mode = parse_encoding_mode(a.mode);
    set_update_mode(cfg.model, parse_update_mode(a.update));
    cfg.model.nca.channels = a.channels;
    cfg.model.nca.hidden = a.hidden;
    cfg.model.nca.steps = a.nca_steps;
    cfg.model.nca.normalize = !a.no_norm;
    cfg.model.encoder.dim = a.dim;
    cfg.model.encoder.slices = !a.no_slices;
    cfg.model.dna.mutation_rate = a.mutation_rate;
    cfg.model.leak_factors = !a.no_leak;
    cfg.batch_size = a.batch;
    cfg.adam.learning_rate = a.lr;
    cfg.total_steps = a.steps;
    cfg.seed = seed;
    cfg.checkpoint_every = a.checkpoint_every;
  }
  const Dataset data = load_dataset(cfg.dataset);
  cfg.model.nca.visible = data.channels;
  cfg.model.height = data.height;
  cfg.model.width = data.width;
  cfg.validate();
  if (resume) resume->config = cfg;

  std::ofstream metrics;
  if (!a.metrics.empty()) {
    metrics.open(a.metrics, a.resume ? std::ios::app : std::ios::trunc);
    if (!metrics) throw DataError("cannot open metrics log " + a.metrics);
  }
  Trainer trainer = resume ? Trainer(data, std::move(*resume)) : Trainer(data, cfg);
  if (!a.quiet) {
    std::cerr << "training " << to_string(cfg.model.mode) << "/" << to_string(update_mode(cfg.model)) << " on "
              << data.name << " (" << data.size() << " images), " << trainer.model().params().scalar_count()
              << " parameters, steps " << trainer.steps_done() << " -> " << cfg.total_steps << "\n";
  }
  const std::size_t report = std::max<std::size_t>(1, cfg.total_steps / 20);
  try {
    trainer.run(a.metrics.empty() ? nullptr : &metrics, fs::path(a.out), [&](const StepStats& s) {
      if (!a.quiet && (s.step % report == 0 || s.step == cfg.total_steps)) {
        std::cerr << "step " << s.step << " loss " << s.loss << " lf_nca " << s.lf_nca << " |g| " << s.grad_norm
                  << " " << s.wallclock_ms / 1000.0 << "s\n";
      }
    });
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "; last finite state kept in " << a.out << "\n";
    return kExitDiverged;
  }
  std::cout << json{{"checkpoint", a.out}, {"steps", trainer.steps_done()}}.dump() << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& c, std::size_t seeds, bool discretize, std::optional<double> mutation, bool quiet) {
  const Checkpoint ckpt = load_checkpoint(c.ckpt);
  const Dataset data = dataset_for(c, ckpt);
  EvalOptions opt;
  opt.seeds = seeds;
  opt.seed = c.seed;
  opt.discretize = discretize;
  opt.mutation_rate = mutation;
  if (mutation && ckpt.config.model.mode != EncodingMode::kDna) throw UsageError("--mutation-rate needs a dna checkpoint");
  const EvalResult r = evaluate(ckpt.model, data, opt);
  json per = json::array();
  for (std::size_t i = 0; i < r.ids.size(); ++i) per.push_back({{"id", r.ids[i]}, {"mse", r.per_image[i]}});
  json out = {{"dataset", data.name}, {"mean", r.mean}, {"sd", r.sd}, {"repetitions", r.repetitions},
              {"per_seed", r.per_seed}};
  if (!quiet) out["per_image"] = per;
  std::cout << out.dump(2) << "\n";
  std::cerr << "mean MSE " << r.mean << " ± " << r.sd << " over " << r.repetitions << " repetition(s)\n";
  return 0;
}

int cmd_grow(const CommonArgs& c, const std::string& image_id, const std::string& dna_file, std::size_t every,
             const std::string& out_dir) {
  const Checkpoint ckpt = load_checkpoint(c.ckpt);
  std::vector<Tensor<float>> frames;
  Tensor<float> final_image;
  json summary;
  if (!dna_file.empty()) {
    require_dna(ckpt, "grow --dna");
    const DnaEncoding dna = parse_dna(read_text(dna_file));
    auto g = genelab::grow_from_dna(ckpt.model, dna, c.seed, every);
    frames = std::move(g.frames);
    final_image = std::move(g.image);
    summary["dna"] = dna_file;
  } else {
    const Dataset data = dataset_for(c, ckpt);
    const std::size_t idx = resolve_item(data, image_id);
    NcamModel<float>::Options opt;
    opt.grow_seed = c.seed;
    opt.frame_stride = every;
    opt.discretize = ckpt.config.model.mode == EncodingMode::kDna;
    auto r = reconstruct(ckpt.model, data.items[idx].image, opt);
    frames = std::move(r.frames);
    final_image = std::move(r.image);
    summary["image_id"] = data.items[idx].id;
    summary["mse"] = r.mse;
  }
  write_frames(out_dir, "frame", frames);
  summary["frames"] = frames.size();
  summary["out_dir"] = out_dir;
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_encode(const CommonArgs& c, const std::string& image_id) {
  const Checkpoint ckpt = load_checkpoint(c.ckpt);
  const Dataset data = dataset_for(c, ckpt);
  const std::size_t idx = resolve_item(data, image_id);
  json out = {{"image_id", data.items[idx].id}};
  if (ckpt.config.model.mode == EncodingMode::kDna) {
    out["dna"] = to_letters(discretize(genelab::encode_image(ckpt.model, data.items[idx].image)));
  } else {
    NcamModel<float>::Options opt;
    const auto r = reconstruct(ckpt.model, data.items[idx].image, opt);
    out["encoding"] = std::vector<float>(r.encoding.data().begin(), r.encoding.data().end());
  }
  std::cout << out.dump() << "\n";
  return 0;
}

int cmd_export_dna(const CommonArgs& c, const std::string& image_id, const std::string& out_path) {
  const Checkpoint ckpt = load_checkpoint(c.ckpt);
  require_dna(ckpt, "export-dna");
  const Dataset data = dataset_for(c, ckpt);
  std::vector<std::size_t> items;
  if (image_id.empty()) {
    for (std::size_t i = 0; i < data.size(); ++i) items.push_back(i);
  } else {
    items.push_back(resolve_item(data, image_id));
  }
  if (items.size() > 1) fs::create_directories(out_path);
  for (std::size_t idx : items) {
    const std::string text = format_dna(discretize(genelab::encode_image(ckpt.model, data.items[idx].image)));
    const fs::path p = items.size() > 1 ? fs::path(out_path) / (data.items[idx].id + ".dna") : fs::path(out_path);
    write_text(p, text);
    std::cout << json{{"image_id", data.items[idx].id}, {"path", p.string()}}.dump() << "\n";
  }
  return 0;
}

int cmd_splice(const CommonArgs& c, genelab::SpliceRecipe recipe, const std::string& recipe_file, std::size_t every,
               const std::string& out_dir) {
  if (!recipe_file.empty()) {
    try {
      recipe = json::parse(read_text(recipe_file)).get<genelab::SpliceRecipe>();
    } catch (const json::exception& e) {
      throw DataError("invalid splice recipe " + recipe_file + ": " + e.what());
    }
  }
  if (recipe.sources.empty() || recipe.target.empty()) throw UsageError("splice needs sources and a target");
  if (!(recipe.tau > 0.25 && recipe.tau <= 1.0)) throw UsageError("--tau must lie in (0.25, 1]");
  const Checkpoint ckpt = load_checkpoint(c.ckpt);
  require_dna(ckpt, "splice");
  const Dataset data = dataset_for(c, ckpt);
  std::vector<DnaEncoding> sources;
  for (const auto& id : recipe.sources) {
    sources.push_back(genelab::encode_image(ckpt.model, data.items[resolve_item(data, id)].image));
  }
  const std::size_t target = resolve_item(data, recipe.target);
  const auto mean = genelab::mean_encoding(sources, recipe.tau, recipe.soft);
  const DnaEncoding spliced =
      genelab::splice(discretize(genelab::encode_image(ckpt.model, data.items[target].image)), mean);
  auto grown = genelab::grow_from_dna(ckpt.model, spliced, c.seed, every);
  fs::create_directories(out_dir);
  write_png(fs::path(out_dir) / "spliced.png", to_rgba8(grown.image));
  write_png(fs::path(out_dir) / "mean.png", to_rgba8(genelab::grow_from_dna(ckpt.model, mean.dna, c.seed).image));
  write_text(fs::path(out_dir) / "spliced.dna", format_dna(spliced));
  write_text(fs::path(out_dir) / "recipe.json", json(recipe).dump(2) + "\n");
  write_frames(fs::path(out_dir) / "frames", "frame", grown.frames);
  std::cout << json{{"target", data.items[target].id},
                    {"asserted", mean.asserted()},
                    {"rows", mean.dna.rows()},
                    {"dna", to_letters(spliced)},
                    {"png", (fs::path(out_dir) / "spliced.png").string()}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_serve(const CommonArgs& c, const std::string& host, int port) {
  Checkpoint ckpt = load_checkpoint(c.ckpt);
  Dataset data = dataset_for(c, ckpt);
  service::Service svc(std::move(ckpt.model), std::move(data), c.seed);
  std::cerr << "serving on http://" << host << ":" << port << "\n";
  service::serve(svc, host, port);
  return 0;
}

int cmd_gen_dataset(const std::string& style, std::size_t n, std::size_t size, std::uint64_t seed, bool rgba,
                    const std::string& out_dir) {
  const Dataset data = gen_glyphs(n, size, parse_glyph_style(style), seed, rgba ? 4 : 3);
  fs::create_directories(out_dir);
  for (const auto& item : data.items) write_png(fs::path(out_dir) / (item.id + ".png"), to_rgba8(item.image));
  std::cout << json{{"dataset", data.name}, {"count", data.size()}, {"out_dir", out_dir}}.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ncam - neural cellular automata manifold"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every verb");

  std::uint64_t seed = 0;
  bool seed_given = false;
  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t s) { seed = s, seed_given = true; }, "RNG seed (default: $NCAM_SEED or 0)");
  };
  CommonArgs common;
  auto add_ckpt = [&](CLI::App* cmd, bool dataset = true) {
    cmd->add_option("--ckpt", common.ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
    if (dataset) cmd->add_option("--dataset", common.dataset, "Dataset spec (default: the training dataset)");
    add_seed(cmd);
  };

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model end to end");
  train->add_option("--dataset", ta.dataset, "glyphs[:style[:n[:size[:seed]]]] | cifar:<path>[:limit] | png:<dir>[:size]")
      ->capture_default_str();
  train->add_option("--out", ta.out, "Checkpoint path")->capture_default_str();
  train->add_option("--mode", ta.mode, "Encoding")->check(CLI::IsMember({"continuous", "dna"}))->capture_default_str();
  train->add_option("--update", ta.update, "NCA update")
      ->check(CLI::IsMember({"synchronous", "stochastic"}))
      ->capture_default_str();
  train->add_option("--steps", ta.steps, "Total optimizer steps")->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--batch", ta.batch, "Batch size")->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--lr", ta.lr, "Learning rate")->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--channels", ta.channels, "Cell channels")->check(CLI::IsMember({16, 32}))->capture_default_str();
  train->add_option("--hidden", ta.hidden, "NCA hidden width")->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--nca-steps", ta.nca_steps, "Growth steps T")->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--dim", ta.dim, "Encoding dimension D")->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--mutation-rate", ta.mutation_rate, "Training mutation rate (dna mode)")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  train->add_flag("--no-leak-factors", ta.no_leak, "Freeze every leak factor at 1.0");
  train->add_flag("--no-norm", ta.no_norm, "Disable perception instance norm");
  train->add_flag("--no-slices", ta.no_slices, "Mean-only encoder pooling");
  train->add_option("--metrics", ta.metrics, "Append step,loss,lf_nca,wallclock_ms lines here");
  train->add_option("--checkpoint-every", ta.checkpoint_every, "Save every N steps (0: end only)");
  train->add_flag("--resume", ta.resume, "Continue from --out if it exists");
  train->add_flag("--quiet", ta.quiet, "No progress output");
  add_seed(train);

  std::size_t eval_seeds = 5;
  bool eval_discretize = false, eval_quiet = false;
  std::optional<double> eval_mutation;
  auto* eval = app.add_subcommand("eval", "Per-image and mean reconstruction MSE");
  add_ckpt(eval);
  eval->add_option("--seeds", eval_seeds, "Repetitions for stochastic evaluation")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  eval->add_flag("--discretize", eval_discretize, "One-hot DNA before decoding");
  eval->add_option("--mutation-rate", eval_mutation, "Mutate DNA at this rate")->check(CLI::Range(0.0, 1.0));
  eval->add_flag("--summary", eval_quiet, "Omit per-image results");

  std::string image_id, dna_file, out_dir = "frames";
  std::size_t every = 4;
  auto* grow = app.add_subcommand("grow", "Grow an image and write per-step PNG frames plus a GIF");
  add_ckpt(grow);
  auto* grow_id = grow->add_option("--image-id", image_id, "Dataset item id or index");
  auto* grow_dna = grow->add_option("--dna", dna_file, "DNA letter file")->check(CLI::ExistingFile);
  grow_id->excludes(grow_dna);
  grow->add_option("--frames-every", every, "Keep every k-th step")->check(CLI::PositiveNumber)->capture_default_str();
  grow->add_option("--out-dir", out_dir, "Output directory")->capture_default_str();

  auto* encode = app.add_subcommand("encode", "Print an image's encoding (DNA letters or vector)");
  add_ckpt(encode);
  encode->add_option("--image-id", image_id, "Dataset item id or index")->required();

  std::string export_out = "image.dna";
  auto* export_dna = app.add_subcommand("export-dna", "Write NCAM-DNA letter files");
  add_ckpt(export_dna);
  export_dna->add_option("--image-id", image_id, "Item id or index (default: every item, --out is a directory)");
  export_dna->add_option("--out", export_out, "Output file or directory")->capture_default_str();

  genelab::SpliceRecipe recipe;
  std::string recipe_file, sources_csv;
  auto* splice = app.add_subcommand("splice", "Splice a group-mean gene set into a target and regrow it");
  add_ckpt(splice);
  splice->add_option("--sources", sources_csv, "Comma-separated source ids");
  splice->add_option("--tau", recipe.tau, "Mean threshold in (0.25, 1]")->capture_default_str();
  splice->add_option("--target", recipe.target, "Target id");
  splice->add_flag("--soft", recipe.soft, "Average soft probabilities instead of one-hot codes");
  splice->add_option("--recipe", recipe_file, "JSON recipe {sources, tau, target}")->check(CLI::ExistingFile);
  splice->add_option("--frames-every", every, "Keep every k-th step")->check(CLI::PositiveNumber);
  splice->add_option("--out-dir", out_dir, "Output directory")->capture_default_str();

  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "HTTP/JSON service over a checkpoint");
  add_ckpt(serve);
  serve->add_option("--host", host, "Bind address")->capture_default_str();
  serve->add_option("--port", port, "Port")->check(CLI::Range(1, 65535))->capture_default_str();

  std::string style = "lines";
  std::size_t gen_n = 16, gen_size = 32;
  bool rgba = false;
  auto* gen = app.add_subcommand("gen-dataset", "Write a procedural glyph set as PNGs");
  gen->add_option("--style", style, "Glyph style")->check(CLI::IsMember({"lines", "round"}))->capture_default_str();
  gen->add_option("--n", gen_n, "Number of glyphs")->check(CLI::PositiveNumber)->capture_default_str();
  gen->add_option("--size", gen_size, "Side length")->check(CLI::Range(8, 4096))->capture_default_str();
  gen->add_flag("--rgba", rgba, "Transparent background (RGBA)");
  gen->add_option("--out-dir", out_dir, "Output directory")->capture_default_str();
  add_seed(gen);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (!seed_given) seed = env_seed();
    common.seed = seed;
    if (*train) return cmd_train(ta, seed);
    if (*eval) return cmd_eval(common, eval_seeds, eval_discretize, eval_mutation, eval_quiet);
    if (*grow) {
      if (image_id.empty() && dna_file.empty()) throw UsageError("grow needs --image-id or --dna");
      return cmd_grow(common, image_id, dna_file, every, out_dir);
    }
    if (*encode) return cmd_encode(common, image_id);
    if (*export_dna) return cmd_export_dna(common, image_id, export_out);
    if (*splice) {
      std::stringstream ss(sources_csv);
      for (std::string id; std::getline(ss, id, ',');) {
        if (!id.empty()) recipe.sources.push_back(id);
      }
      return cmd_splice(common, recipe, recipe_file, every, out_dir);
    }
    if (*serve) return cmd_serve(common, host, port);
    if (*gen) return cmd_gen_dataset(style, gen_n, gen_size, seed == 0 && !seed_given ? 7 : seed, rgba, out_dir);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    // Data, image, checkpoint and file-system errors.
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
