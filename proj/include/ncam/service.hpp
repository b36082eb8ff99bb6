#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "ncam/data.hpp"
#include "ncam/genelab.hpp"
#include "ncam/train.hpp"

namespace ncam::service {

struct Response {
  int status = 200;
  nlohmann::json body;
};

// Stateless request handler over an immutable model and dataset. Every
// endpoint is a pure function of (checkpoint, dataset, request body).
class Service {
 public:
  Service(NcamModel<float> model, Dataset data, std::uint64_t default_seed = 0);

  Response handle(const std::string& method, const std::string& path, const std::string& body) const;

  const NcamModel<float>& model() const { return model_; }
  const Dataset& data() const { return data_; }

 private:
  NcamModel<float> model_;
  Dataset data_;
  std::uint64_t default_seed_;

  Response images() const;
  Response encode(const nlohmann::json& req) const;
  Response grow(const nlohmann::json& req) const;
  Response mean(const nlohmann::json& req) const;
  Response splice(const nlohmann::json& req) const;
  Response mutate(const nlohmann::json& req) const;
};

// Blocks serving HTTP on host:port until the process is stopped.
void serve(const Service& service, const std::string& host, int port);

// Default rng seed: NCAM_SEED when set, otherwise `fallback`.
std::uint64_t default_seed(std::uint64_t fallback = 0);

}  // namespace ncam::service
