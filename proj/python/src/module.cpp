// Python bindings. Tensors cross the boundary as float32 numpy arrays,
// configurations and service bodies as JSON text (the Python package wraps
// them into dicts).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include <nlohmann/json.hpp>

#include "ncam/genelab.hpp"
#include "ncam/image_io.hpp"
#include "ncam/service.hpp"
#include "ncam/train.hpp"

namespace py = pybind11;
using namespace ncam;
using nlohmann::json;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using Bytes = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Tensor<float>& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::memcpy(out.mutable_data(), t.raw(), t.size() * sizeof(float));
  return out;
}

Tensor<float> from_numpy(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  Tensor<float> t(shape);
  std::memcpy(t.raw(), a.data(), t.size() * sizeof(float));
  return t;
}

py::list to_numpy_list(const std::vector<Tensor<float>>& ts) {
  py::list out;
  for (const auto& t : ts) out.append(to_numpy(t));
  return out;
}

// [H,W,4] uint8 <-> Rgba8
Bytes rgba_to_numpy(const Rgba8& im) {
  Bytes out({static_cast<py::ssize_t>(im.height), static_cast<py::ssize_t>(im.width), py::ssize_t{4}});
  std::memcpy(out.mutable_data(), im.pixels.data(), im.pixels.size());
  return out;
}

Rgba8 rgba_from_numpy(const Bytes& a) {
  if (a.ndim() != 3 || a.shape(2) != 4) throw std::invalid_argument("expected a uint8 array of shape [H, W, 4]");
  Rgba8 im;
  im.height = static_cast<std::size_t>(a.shape(0));
  im.width = static_cast<std::size_t>(a.shape(1));
  im.pixels.assign(a.data(), a.data() + a.size());
  return im;
}

py::bytes to_bytes(const std::vector<std::uint8_t>& v) {
  return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

std::vector<std::uint8_t> from_bytes(const py::bytes& b) {
  const std::string s = b;
  return {s.begin(), s.end()};
}

py::dict reconstruction_dict(const Reconstruction& r) {
  py::dict d;
  d["image"] = to_numpy(r.image);
  d["frames"] = to_numpy_list(r.frames);
  d["encoding"] = to_numpy(r.encoding);
  d["dna"] = r.dna ? py::object(py::str(to_letters(*r.dna))) : py::object(py::none());
  d["mse"] = r.mse;
  return d;
}

DnaEncoding dna_from_text(const std::string& text) {
  return text.rfind("NCAM-DNA", 0) == 0 ? parse_dna(text) : from_letters(text);
}

}  // namespace

PYBIND11_MODULE(_ncam, m) {
  m.doc() = "Neural cellular automata manifold: training, encoding, growth and DNA splicing";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_IOError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);
  py::register_exception<genelab::GeneLabError>(m, "GeneLabError", PyExc_ValueError);
  py::register_exception<ImageError>(m, "ImageError", PyExc_ValueError);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("name", &Dataset::name)
      .def_readonly("channels", &Dataset::channels)
      .def_readonly("height", &Dataset::height)
      .def_readonly("width", &Dataset::width)
      .def("__len__", &Dataset::size)
      .def_property_readonly("ids",
                             [](const Dataset& d) {
                               std::vector<std::string> ids;
                               for (const auto& it : d.items) ids.push_back(it.id);
                               return ids;
                             })
      .def_property_readonly("labels",
                             [](const Dataset& d) {
                               std::vector<int> labels;
                               for (const auto& it : d.items) labels.push_back(it.label);
                               return labels;
                             })
      .def("image", [](const Dataset& d, std::size_t i) { return to_numpy(d.items.at(i).image); }, py::arg("index"));

  m.def("gen_glyphs",
        [](std::size_t n, std::size_t size, const std::string& style, std::uint64_t seed, std::size_t channels) {
          return gen_glyphs(n, size, parse_glyph_style(style), seed, channels);
        },
        py::arg("n"), py::arg("size") = 32, py::arg("style") = "lines", py::arg("seed") = 0, py::arg("channels") = 3);
  m.def("load_dataset", &load_dataset, py::arg("spec"));
  m.def("parse_cifar10", [](const py::bytes& b, std::size_t limit) { return parse_cifar10(from_bytes(b), limit); },
        py::arg("data"), py::arg("limit") = 0);

  m.def("default_config_json", [] { return json(TrainConfig{}).dump(); });

  // A model together with its training state (a checkpoint).
  py::class_<Checkpoint>(m, "Model")
      .def(py::init([](const std::string& config_json) {
             return Checkpoint::initial(json::parse(config_json).get<TrainConfig>());
           }),
           py::arg("config_json"))
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def_static("from_bytes", [](const py::bytes& b) { return deserialize_checkpoint(from_bytes(b)); })
      .def("save", [](const Checkpoint& c, const std::filesystem::path& p) { save_checkpoint(p, c); }, py::arg("path"))
      .def("to_bytes", [](const Checkpoint& c) { return to_bytes(serialize_checkpoint(c)); })
      .def_readonly("step", &Checkpoint::step)
      .def_property_readonly("config_json", [](const Checkpoint& c) { return json(c.config).dump(); })
      .def_property_readonly("mode", [](const Checkpoint& c) { return to_string(c.config.model.mode); })
      .def_property_readonly("parameter_count", [](const Checkpoint& c) { return c.model.params().scalar_count(); })
      .def(
          "reconstruct",
          [](const Checkpoint& c, const Array& image, std::uint64_t seed, std::size_t frames_every, bool discretize,
             std::optional<double> mutation_rate) {
            NcamModel<float>::Options opt;
            opt.grow_seed = seed;
            opt.frame_stride = frames_every;
            opt.discretize = discretize;
            if (mutation_rate) {
              Rng rng(seed);
              opt.mutation = plan_mutation(c.config.model.encoder.dim * c.config.model.dna.gene_length,
                                           c.config.model.dna.categories, *mutation_rate, rng);
            }
            Reconstruction r;
            {
              py::gil_scoped_release release;
              r = reconstruct(c.model, from_numpy(image), opt);
            }
            return reconstruction_dict(r);
          },
          py::arg("image"), py::arg("seed") = 0, py::arg("frames_every") = 0, py::arg("discretize") = true,
          py::arg("mutation_rate") = std::nullopt)
      .def(
          "encode_dna",
          [](const Checkpoint& c, const Array& image) {
            return to_numpy(genelab::encode_image(c.model, from_numpy(image)).probs);
          },
          py::arg("image"))
      .def(
          "grow_dna",
          [](const Checkpoint& c, const std::string& dna, std::uint64_t seed, std::size_t frames_every) {
            const auto g = genelab::grow_from_dna(c.model, dna_from_text(dna), seed, frames_every);
            py::dict d;
            d["image"] = to_numpy(g.image);
            d["frames"] = to_numpy_list(g.frames);
            return d;
          },
          py::arg("dna"), py::arg("seed") = 0, py::arg("frames_every") = 0)
      .def(
          "evaluate",
          [](const Checkpoint& c, const Dataset& data, std::size_t seeds, std::uint64_t seed, bool discretize,
             std::optional<double> mutation_rate) {
            EvalOptions opt;
            opt.seeds = seeds;
            opt.seed = seed;
            opt.discretize = discretize;
            opt.mutation_rate = mutation_rate;
            EvalResult r;
            {
              py::gil_scoped_release release;
              r = evaluate(c.model, data, opt);
            }
            py::dict d;
            d["ids"] = r.ids;
            d["per_image"] = r.per_image;
            d["per_seed"] = r.per_seed;
            d["mean"] = r.mean;
            d["sd"] = r.sd;
            d["repetitions"] = r.repetitions;
            return d;
          },
          py::arg("data"), py::arg("seeds") = 5, py::arg("seed") = 0, py::arg("discretize") = false,
          py::arg("mutation_rate") = std::nullopt);

  // The trainer keeps a reference to its dataset; keep_alive ties lifetimes.
  py::class_<Trainer>(m, "Trainer")
      .def(py::init([](const Dataset& data, const std::string& config_json) {
             return std::make_unique<Trainer>(data, json::parse(config_json).get<TrainConfig>());
           }),
           py::arg("data"), py::arg("config_json"), py::keep_alive<1, 2>())
      .def(py::init([](const Dataset& data, const Checkpoint& c) { return std::make_unique<Trainer>(data, c); }),
           py::arg("data"), py::arg("model"), py::keep_alive<1, 2>())
      .def(
          "step",
          [](Trainer& t) {
            StepStats s;
            {
              py::gil_scoped_release release;
              s = t.step();
            }
            py::dict d;
            d["step"] = s.step;
            d["loss"] = s.loss;
            d["lf_nca"] = s.lf_nca;
            d["grad_norm"] = s.grad_norm;
            return d;
          })
      .def_property_readonly("steps_done", &Trainer::steps_done)
      .def_property_readonly("model", [](const Trainer& t) { return t.state(); });

  m.def("discretize", [](const Array& probs) { return to_numpy(discretize(DnaEncoding{from_numpy(probs)}).probs); },
        py::arg("probs"));
  m.def("to_letters", [](const Array& probs) { return to_letters(DnaEncoding{from_numpy(probs)}); },
        py::arg("probs"));
  m.def("from_letters", [](const std::string& letters) { return to_numpy(from_letters(letters).probs); },
        py::arg("letters"));
  m.def("format_dna", [](const std::string& letters) { return format_dna(from_letters(letters)); },
        py::arg("letters"));
  m.def("parse_dna", [](const std::string& text) { return to_letters(parse_dna(text)); }, py::arg("text"));
  m.def("mutate", [](const std::string& letters, double rate, std::uint64_t seed) {
        return to_letters(mutate(from_letters(letters), rate, seed));
      },
      py::arg("letters"), py::arg("rate"), py::arg("seed") = 0);
  m.def(
      "mean_encoding",
      [](const std::vector<std::string>& sources, double tau) {
        std::vector<DnaEncoding> group;
        for (const auto& s : sources) group.push_back(from_letters(s));
        const auto mean = genelab::mean_encoding(group, tau);
        return py::make_tuple(to_letters(mean.dna), mean.asserted());
      },
      py::arg("sources"), py::arg("tau"));
  m.def(
      "splice",
      [](const std::string& target, const std::vector<std::string>& sources, double tau) {
        std::vector<DnaEncoding> group;
        for (const auto& s : sources) group.push_back(from_letters(s));
        return to_letters(genelab::splice(from_letters(target), genelab::mean_encoding(group, tau)));
      },
      py::arg("target"), py::arg("sources"), py::arg("tau"));

  m.def("encode_png", [](const Bytes& rgba) { return to_bytes(encode_png(rgba_from_numpy(rgba))); },
        py::arg("rgba"));
  m.def("decode_png", [](const py::bytes& b) { return rgba_to_numpy(decode_png(from_bytes(b))); }, py::arg("data"));
  m.def("to_rgba8", [](const Array& image) { return rgba_to_numpy(to_rgba8(from_numpy(image))); }, py::arg("image"));
  m.def(
      "encode_gif",
      [](const std::vector<Bytes>& frames, unsigned delay_cs) {
        std::vector<Rgba8> rasters;
        for (const auto& f : frames) rasters.push_back(rgba_from_numpy(f));
        return to_bytes(encode_gif(rasters, delay_cs));
      },
      py::arg("frames"), py::arg("delay_cs") = 8);

  py::class_<service::Service>(m, "Service")
      .def(py::init([](const Checkpoint& c, const Dataset& data, std::uint64_t seed) {
             return std::make_unique<service::Service>(c.model, data, seed);
           }),
           py::arg("model"), py::arg("data"), py::arg("seed") = 0)
      .def(
          "handle",
          [](const service::Service& s, const std::string& method, const std::string& path, const std::string& body) {
            service::Response r;
            {
              py::gil_scoped_release release;
              r = s.handle(method, path, body);
            }
            return py::make_tuple(r.status, r.body.dump());
          },
          py::arg("method"), py::arg("path"), py::arg("body") = "");
}
