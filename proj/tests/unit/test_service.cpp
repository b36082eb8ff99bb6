#include <doctest.h>

#include <cstdlib>

#include "fixtures.hpp"
#include "ncam/image_io.hpp"
#include "ncam/service.hpp"

using namespace ncam;
using nlohmann::json;

namespace {

const service::Service& dna_service() {
  static const service::Service s(NcamModel<float>(test::tiny_model(EncodingMode::kDna), 3), test::tiny_glyphs(4), 11);
  return s;
}

const service::Service& ce_service() {
  static const service::Service s(NcamModel<float>(test::tiny_model(), 3), test::tiny_glyphs(4), 11);
  return s;
}

service::Response post(const service::Service& s, const std::string& path, const json& body) {
  return s.handle("POST", path, body.dump());
}

Rgba8 png_of(const json& b64) { return decode_png(base64_decode(b64.get<std::string>())); }

}  // namespace

TEST_SUITE("service") {
  TEST_CASE("GET /images lists every item as base64 PNG") {
    const auto r = dna_service().handle("GET", "/images", "");
    REQUIRE(r.status == 200);
    CHECK(r.body.at("count") == 4);
    const auto& first = r.body.at("images").at(0);
    CHECK(first.at("id") == "g0");
    const Rgba8 im = png_of(first.at("png"));
    CHECK(im.width == 8);
    CHECK(im == to_rgba8(test::tiny_glyphs(4).items[0].image));
  }

  TEST_CASE("POST /encode returns the discretized letters and a confidence summary") {
    const auto r = post(dna_service(), "/encode", {{"image_id", "g2"}});
    REQUIRE(r.status == 200);
    const std::string dna = r.body.at("dna");
    CHECK(dna.size() == 6 * 16);
    CHECK(dna.find_first_not_of("CGAT") == std::string::npos);
    CHECK(r.body.at("features") == 6);
    const double mean_max = r.body.at("summary").at("mean_max_prob");
    CHECK(mean_max >= 0.25);
    CHECK(mean_max <= 1.0);
    // Numeric ids select by index.
    CHECK(post(dna_service(), "/encode", {{"image_id", 2}}).body.at("dna") == dna);
  }

  TEST_CASE("POST /grow from letters or from an image id") {
    const std::string dna = post(dna_service(), "/encode", {{"image_id", "g1"}}).body.at("dna");
    const auto a = post(dna_service(), "/grow", {{"dna", dna}, {"frames_every", 2}, {"seed", 5}});
    REQUIRE(a.status == 200);
    CHECK(a.body.at("frames").size() == 3);
    CHECK(a.body.at("steps") == 6);
    CHECK(a.body.at("seed") == 5);
    CHECK(png_of(a.body.at("final")).width == 8);
    const auto b = post(dna_service(), "/grow", {{"image_id", "g1"}, {"frames_every", 2}, {"seed", 5}});
    CHECK(b.body.at("final") == a.body.at("final"));
    CHECK(b.body.at("dna") == dna);
    // Default seed comes from the service.
    CHECK(post(dna_service(), "/grow", {{"dna", dna}}).body.at("seed") == 11);
    // Continuous checkpoints grow from image ids.
    const auto c = post(ce_service(), "/grow", {{"image_id", "g0"}});
    CHECK(c.status == 200);
    CHECK(c.body.at("frames").size() == 2);  // 6 steps, default every 4th plus the last
  }

  TEST_CASE("POST /mean and /splice") {
    const auto m = post(dna_service(), "/mean", {{"source_ids", {"g0", "g0", "g0"}}, {"tau", 1.0}});
    REQUIRE(m.status == 200);
    CHECK(m.body.at("asserted") == 96);
    CHECK(m.body.at("rows") == 96);
    const std::string g0 = post(dna_service(), "/encode", {{"image_id", "g0"}}).body.at("dna");
    CHECK(m.body.at("dna") == g0);

    // Unanimous mean spliced into a member leaves it unchanged.
    const auto s = post(dna_service(), "/splice", {{"source_ids", {"g0", "g0"}}, {"tau", 0.5}, {"target_id", "g0"}});
    REQUIRE(s.status == 200);
    CHECK(s.body.at("dna") == g0);
    CHECK(s.body.at("target_id") == "g0");

    const auto t = post(dna_service(), "/splice", {{"source_ids", {"g0", "g1"}}, {"tau", 0.9}, {"target_id", "g3"}});
    REQUIRE(t.status == 200);
    const std::string g3 = post(dna_service(), "/encode", {{"image_id", "g3"}}).body.at("dna");
    const std::string g1 = post(dna_service(), "/encode", {{"image_id", "g1"}}).body.at("dna");
    const std::string out = t.body.at("dna");
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == (g0[i] == g1[i] ? g0[i] : g3[i]));
  }

  TEST_CASE("POST /mutate replaces floor(rate * rows) rows deterministically") {
    const std::string dna(96, 'A');
    const auto r = post(dna_service(), "/mutate", {{"dna", dna}, {"rate", 0.5}, {"seed", 3}});
    REQUIRE(r.status == 200);
    CHECK(r.body.at("replaced") == 48);
    CHECK(post(dna_service(), "/mutate", {{"dna", dna}, {"rate", 0.5}, {"seed", 3}}).body == r.body);
    CHECK(post(dna_service(), "/mutate", {{"dna", dna}, {"rate", 0.0}}).body.at("dna") == dna);
  }

  TEST_CASE("request errors name the offending field") {
    auto field = [](const service::Response& r) { return r.body.value("field", std::string()); };
    const auto& s = dna_service();
    CHECK(s.handle("POST", "/encode", "{not json").status == 400);
    CHECK(field(s.handle("POST", "/encode", "[1]")) == "body");
    auto r = post(s, "/encode", json::object());
    CHECK(r.status == 400);
    CHECK(field(r) == "image_id");
    r = post(s, "/encode", {{"image_id", "nope"}});
    CHECK(r.status == 404);
    CHECK(post(s, "/encode", {{"image_id", 99}}).status == 404);
    r = post(s, "/grow", {{"dna", "CGAT"}});
    CHECK(r.status == 400);
    CHECK(field(r) == "dna");
    CHECK(field(post(s, "/grow", {{"dna", std::string(96, 'X')}})) == "dna");
    CHECK(field(post(s, "/grow", json::object())) == "dna");
    CHECK(field(post(s, "/grow", {{"image_id", "g0"}, {"frames_every", 0}})) == "frames_every");
    CHECK(field(post(s, "/grow", {{"image_id", "g0"}, {"seed", -1}})) == "seed");
    CHECK(field(post(s, "/mean", {{"source_ids", {"g0"}}, {"tau", 0.2}})) == "tau");
    CHECK(field(post(s, "/mean", {{"source_ids", json::array()}, {"tau", 0.5}})) == "source_ids");
    CHECK(post(s, "/mean", {{"source_ids", {"g0", "zz"}}, {"tau", 0.5}}).status == 404);
    CHECK(field(post(s, "/mutate", {{"dna", std::string(96, 'A')}, {"rate", 2}})) == "rate");
    CHECK(s.handle("GET", "/encode", "").status == 405);
    CHECK(s.handle("POST", "/images", "{}").status == 405);
    CHECK(s.handle("GET", "/nowhere", "").status == 404);
    r = post(ce_service(), "/encode", {{"image_id", "g0"}});
    CHECK(r.status == 400);
    CHECK(field(r) == "mode");
  }

  TEST_CASE("identical requests give identical responses") {
    const json req = {{"source_ids", {"g0", "g1", "g2"}}, {"tau", 0.6}, {"seed", 4}};
    CHECK(post(dna_service(), "/mean", req).body == post(dna_service(), "/mean", req).body);
  }

  TEST_CASE("default seed from the environment") {
    ::setenv("NCAM_SEED", "1234", 1);
    CHECK(service::default_seed(7) == 1234);
    ::unsetenv("NCAM_SEED");
    CHECK(service::default_seed(7) == 7);
  }

  TEST_CASE("dataset and checkpoint shapes must agree") {
    CHECK_THROWS_AS(service::Service(NcamModel<float>(test::tiny_model(), 1), gen_glyphs(2, 16, GlyphStyle::kLines, 1)),
                    ConfigError);
  }
}
