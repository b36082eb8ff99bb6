#include "ncam/service.hpp"

#include <cmath>
#include <cstdlib>

#include <httplib.h>

#include "ncam/image_io.hpp"

namespace ncam::service {

using json = nlohmann::json;

namespace {

constexpr std::size_t kDefaultFramesEvery = 4;

struct RequestError {
  int status;
  std::string field;
  std::string message;
};

[[noreturn]] void bad(const std::string& field, const std::string& message) {
  throw RequestError{400, field, message};
}

const json& require(const json& req, const std::string& field) {
  auto it = req.find(field);
  if (it == req.end()) bad(field, "missing field '" + field + "'");
  return *it;
}

std::string get_id(const json& req, const std::string& field) {
  const json& v = require(req, field);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_unsigned()) return v.dump();
  bad(field, "'" + field + "' must be a string or non-negative integer id");
}

double get_number(const json& req, const std::string& field, std::optional<double> fallback = std::nullopt) {
  if (!req.contains(field)) {
    if (fallback) return *fallback;
    bad(field, "missing field '" + field + "'");
  }
  const json& v = req.at(field);
  if (!v.is_number()) bad(field, "'" + field + "' must be a number");
  return v.get<double>();
}

std::uint64_t get_count(const json& req, const std::string& field, std::uint64_t fallback) {
  if (!req.contains(field)) return fallback;
  const json& v = req.at(field);
  if (!v.is_number_unsigned()) bad(field, "'" + field + "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

std::string png_b64(const Tensor<float>& image) { return base64_encode(encode_png(to_rgba8(image))); }

json frames_json(const genelab::Growth& g) {
  json frames = json::array();
  for (const auto& f : g.frames) frames.push_back(png_b64(f));
  return {{"frames", std::move(frames)}, {"final", png_b64(g.image)}};
}

}  // namespace

Service::Service(NcamModel<float> model, Dataset data, std::uint64_t default_seed)
    : model_(std::move(model)), data_(std::move(data)), default_seed_(default_seed) {
  const ModelConfig& cfg = model_.config();
  if (data_.size() > 0 && (data_.channels != cfg.nca.visible || data_.height != cfg.height || data_.width != cfg.width)) {
    throw ConfigError("dataset images " + to_string(Shape{data_.channels, data_.height, data_.width}) +
                      " do not match the checkpoint's grid " + to_string(Shape{cfg.nca.visible, cfg.height, cfg.width}));
  }
}

Response Service::handle(const std::string& method, const std::string& path, const std::string& body) const {
  try {
    if (path == "/images") {
      if (method != "GET") return {405, {{"error", "use GET for /images"}}};
      return images();
    }
    using Handler = Response (Service::*)(const json&) const;
    static const std::vector<std::pair<std::string, Handler>> routes = {
        {"/encode", &Service::encode}, {"/grow", &Service::grow},     {"/mean", &Service::mean},
        {"/splice", &Service::splice}, {"/mutate", &Service::mutate}};
    for (const auto& [route, fn] : routes) {
      if (path != route) continue;
      if (method != "POST") return {405, {{"error", "use POST for " + route}}};
      json req;
      try {
        req = json::parse(body);
      } catch (const json::parse_error& e) {
        return {400, {{"error", std::string("malformed JSON body: ") + e.what()}, {"field", "body"}}};
      }
      if (!req.is_object()) return {400, {{"error", "request body must be a JSON object"}, {"field", "body"}}};
      return (this->*fn)(req);
    }
    return {404, {{"error", "no such endpoint: " + path}}};
  } catch (const RequestError& e) {
    return {e.status, {{"error", e.message}, {"field", e.field}}};
  }
}

Response Service::images() const {
  json items = json::array();
  for (const auto& item : data_.items) {
    json j = {{"id", item.id}, {"png", png_b64(item.image)}};
    if (item.label >= 0) j["label"] = item.label;
    items.push_back(std::move(j));
  }
  return {200, {{"images", std::move(items)}, {"count", data_.size()}}};
}

namespace {

// Ids are matched against item ids first; a bare non-negative integer that
// is not an id selects the item at that index.
std::size_t lookup(const Dataset& data, const json& req, const std::string& field) {
  const std::string id = get_id(req, field);
  if (auto idx = data.find(id)) return *idx;
  if (!id.empty() && id.find_first_not_of("0123456789") == std::string::npos && id.size() < 10) {
    const std::size_t i = std::stoul(id);
    if (i < data.size()) return i;
  }
  throw RequestError{404, field, "unknown image id '" + id + "'"};
}

void require_dna(const NcamModel<float>& model) {
  if (model.config().mode != EncodingMode::kDna) {
    throw RequestError{400, "mode", "the loaded checkpoint uses continuous encodings; DNA endpoints need a DNA model"};
  }
}

DnaEncoding parse_letters(const NcamModel<float>& model, const json& req, const std::string& field) {
  const json& v = require(req, field);
  if (!v.is_string()) bad(field, "'" + field + "' must be a letter string");
  const ModelConfig& cfg = model.config();
  const std::size_t expected = cfg.encoder.dim * cfg.dna.gene_length;
  std::string letters = v.get<std::string>();
  if (letters.rfind("NCAM-DNA", 0) == 0) {
    try {
      return parse_dna(letters);
    } catch (const std::exception& e) {
      bad(field, e.what());
    }
  }
  if (letters.size() != expected) {
    bad(field, "'" + field + "' has " + std::to_string(letters.size()) + " letters, the model expects " +
                   std::to_string(expected));
  }
  try {
    return from_letters(letters, cfg.dna.gene_length);
  } catch (const std::exception& e) {
    bad(field, e.what());
  }
}

std::size_t frames_every(const json& req) {
  const std::uint64_t k = get_count(req, "frames_every", kDefaultFramesEvery);
  if (k == 0) bad("frames_every", "'frames_every' must be at least 1");
  return k;
}

std::vector<DnaEncoding> source_codes(const NcamModel<float>& model, const Dataset& data, const json& req) {
  const json& ids = require(req, "source_ids");
  if (!ids.is_array()) bad("source_ids", "'source_ids' must be an array of ids");
  if (ids.empty()) bad("source_ids", "'source_ids' must name at least one image");
  std::vector<DnaEncoding> codes;
  for (const auto& id : ids) {
    const json one = {{"source_ids", id}};
    codes.push_back(genelab::encode_image(model, data.items[lookup(data, one, "source_ids")].image));
  }
  return codes;
}

genelab::MeanEncoding mean_of(const NcamModel<float>& model, const Dataset& data, const json& req) {
  const double tau = get_number(req, "tau");
  if (!(tau > 0.25 && tau <= 1.0)) bad("tau", "'tau' must lie in (0.25, 1]");
  bool soft = false;
  if (req.contains("soft")) {
    if (!req.at("soft").is_boolean()) bad("soft", "'soft' must be a boolean");
    soft = req.at("soft").get<bool>();
  }
  return genelab::mean_encoding(source_codes(model, data, req), tau, soft);
}

}  // namespace

Response Service::encode(const json& req) const {
  require_dna(model_);
  const std::size_t idx = lookup(data_, req, "image_id");
  const DnaEncoding soft = genelab::encode_image(model_, data_.items[idx].image);
  // Summary of the soft code: how decided the rows are.
  const std::size_t k = soft.categories(), rows = soft.rows();
  double max_sum = 0, min_max = 1, entropy = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    double m = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double p = soft.probs[r * k + c];
      m = std::max(m, p);
      if (p > 0) entropy -= p * std::log2(p);
    }
    max_sum += m;
    min_max = std::min(min_max, m);
  }
  const double n = static_cast<double>(rows);
  return {200,
          {{"image_id", data_.items[idx].id},
           {"dna", to_letters(discretize(soft))},
           {"features", soft.features()},
           {"gene_length", soft.gene_length()},
           {"summary", {{"mean_max_prob", max_sum / n}, {"min_max_prob", min_max}, {"mean_entropy_bits", entropy / n}}}}};
}

Response Service::grow(const json& req) const {
  const std::size_t every = frames_every(req);
  const std::uint64_t seed = get_count(req, "seed", default_seed_);
  const bool has_dna = req.contains("dna"), has_id = req.contains("image_id");
  if (has_dna == has_id) bad("dna", "give exactly one of 'dna' or 'image_id'");
  json out;
  genelab::Growth g;
  if (has_dna) {
    require_dna(model_);
    const DnaEncoding dna = parse_letters(model_, req, "dna");
    g = genelab::grow_from_dna(model_, dna, seed, every);
    out["dna"] = to_letters(dna);
  } else {
    const std::size_t idx = lookup(data_, req, "image_id");
    if (model_.config().mode == EncodingMode::kDna) {
      const DnaEncoding dna = discretize(genelab::encode_image(model_, data_.items[idx].image));
      g = genelab::grow_from_dna(model_, dna, seed, every);
      out["dna"] = to_letters(dna);
    } else {
      NcamModel<float>::Options opt;
      opt.grow_seed = seed;
      opt.frame_stride = every;
      auto r = reconstruct(model_, data_.items[idx].image, opt);
      g = genelab::Growth{r.image, std::move(r.frames)};
    }
    out["image_id"] = data_.items[idx].id;
  }
  out.update(frames_json(g));
  out["steps"] = model_.config().nca.steps;
  out["frames_every"] = every;
  out["seed"] = seed;
  return {200, out};
}

Response Service::mean(const json& req) const {
  require_dna(model_);
  const std::size_t every = frames_every(req);
  const std::uint64_t seed = get_count(req, "seed", default_seed_);
  const auto m = mean_of(model_, data_, req);
  json out = {{"dna", to_letters(m.dna)}, {"tau", m.tau}, {"asserted", m.asserted()}, {"rows", m.dna.rows()}};
  out.update(frames_json(genelab::grow_from_dna(model_, m.dna, seed, every)));
  return {200, out};
}

Response Service::splice(const json& req) const {
  require_dna(model_);
  const std::size_t every = frames_every(req);
  const std::uint64_t seed = get_count(req, "seed", default_seed_);
  const std::size_t target = lookup(data_, req, "target_id");
  const auto m = mean_of(model_, data_, req);
  const DnaEncoding target_dna = discretize(genelab::encode_image(model_, data_.items[target].image));
  const DnaEncoding spliced = genelab::splice(target_dna, m);
  json out = {{"dna", to_letters(spliced)},
              {"target_id", data_.items[target].id},
              {"tau", m.tau},
              {"asserted", m.asserted()},
              {"rows", m.dna.rows()}};
  out.update(frames_json(genelab::grow_from_dna(model_, spliced, seed, every)));
  return {200, out};
}

Response Service::mutate(const json& req) const {
  require_dna(model_);
  const std::size_t every = frames_every(req);
  const DnaEncoding dna = parse_letters(model_, req, "dna");
  const double rate = get_number(req, "rate");
  if (!(rate >= 0 && rate <= 1)) bad("rate", "'rate' must lie in [0, 1]");
  const std::uint64_t seed = get_count(req, "seed", default_seed_);
  Rng rng(seed);
  const MutationPlan plan = plan_mutation(dna.rows(), dna.categories(), rate, rng);
  const DnaEncoding mutated{apply_mutation(dna.probs, plan)};
  json out = {{"dna", to_letters(mutated)}, {"rate", rate}, {"seed", seed}, {"replaced", plan.replaced_count()}};
  out.update(frames_json(genelab::grow_from_dna(model_, mutated, seed, every)));
  return {200, out};
}

void serve(const Service& service, const std::string& host, int port) {
  httplib::Server server;
  auto bridge = [&service](const httplib::Request& req, httplib::Response& res) {
    const Response r = service.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  server.Get(R"(/.*)", bridge);
  server.Post(R"(/.*)", bridge);
  server.set_pre_routing_handler([](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    return httplib::Server::HandlerResponse::Unhandled;
  });
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

std::uint64_t default_seed(std::uint64_t fallback) {
  const char* env = std::getenv("NCAM_SEED");
  if (!env || !*env) return fallback;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0') throw ConfigError(std::string("NCAM_SEED is not an unsigned integer: ") + env);
  return v;
}

}  // namespace ncam::service
