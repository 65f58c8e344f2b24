#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "nao/adam.hpp"
#include "nao/checkpoint.hpp"
#include "nao/rng.hpp"

using nao::AdamConfig;
using nao::AdamState;
using nao::ParamStore;
using nao::Rng;
using nao::ValueGrid;

namespace {
std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "nao_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}
}  // namespace

TEST_CASE("zero gradients leave parameters unchanged") {
  ParamStore params;
  Rng rng(2);
  params.add("w", rng.uniform_matrix(3, 3, -1.0, 1.0));
  const std::vector<double> before = params.at("w").values;
  AdamState adam(params, AdamConfig{});
  std::vector<ValueGrid> zero = {ValueGrid({3, 3})};
  for (int i = 0; i < 7; ++i) adam.step(params, zero);
  REQUIRE(params.at("w").values == before);
  REQUIRE(adam.step_count() == 7);
}

TEST_CASE("first step matches the bias-corrected hand value") {
  ParamStore params;
  params.add("theta", ValueGrid::scalar(1.0));
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  AdamState adam(params, cfg);
  std::vector<ValueGrid> g = {ValueGrid::scalar(1.0)};
  adam.step(params, g);
  // mhat = vhat = 1 exactly, so the update is -alpha / (1 + eps).
  REQUIRE(params.at("theta")[0] == Catch::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("identical runs are bitwise identical") {
  auto run = [] {
    ParamStore params;
    Rng rng(77);
    params.add("a", rng.uniform_matrix(4, 2, -1.0, 1.0));
    params.add("b", rng.uniform_matrix(1, 5, -1.0, 1.0));
    AdamState adam(params, AdamConfig{});
    Rng grads(78);
    for (int step = 0; step < 25; ++step) {
      std::vector<ValueGrid> g = {grads.uniform_matrix(4, 2, -1.0, 1.0),
                                  grads.uniform_matrix(1, 5, -1.0, 1.0)};
      adam.step(params, g);
    }
    std::vector<double> flat = params.at("a").values;
    flat.insert(flat.end(), params.at("b").values.begin(), params.at("b").values.end());
    return flat;
  };
  REQUIRE(run() == run());
}

TEST_CASE("gradient shape mismatch is a dimension error") {
  ParamStore params;
  params.add("w", ValueGrid::matrix(2, 2));
  AdamState adam(params, AdamConfig{});
  std::vector<ValueGrid> bad = {ValueGrid::matrix(2, 3)};
  REQUIRE_THROWS_AS(adam.step(params, bad), nao::ShapeError);
}

TEST_CASE("checkpoint round trip preserves names, shapes and bits") {
  ParamStore params;
  Rng rng(5);
  params.add("attn1.wq", rng.uniform_matrix(7, 3, -2.0, 2.0));
  params.add("head.u.w0", rng.uniform_matrix(1, 32, -0.5, 0.5));
  params.add("head.f", ValueGrid::scalar(-0.25));
  const auto path = temp_file("roundtrip.ckpt");
  nao::ckpt::save(path.string(), params);
  ParamStore loaded = nao::ckpt::load(path.string());
  REQUIRE(loaded.size() == params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    REQUIRE(loaded.name(i) == params.name(i));
    REQUIRE(loaded.value(i).shape == params.value(i).shape);
    REQUIRE(loaded.value(i).values == params.value(i).values);
  }
}

TEST_CASE("checkpoint magic bytes are the documented header") {
  ParamStore params;
  params.add("x", ValueGrid::scalar(1.0));
  const auto path = temp_file("magic.ckpt");
  nao::ckpt::save(path.string(), params);
  std::ifstream is(path, std::ios::binary);
  char head[8];
  is.read(head, 8);
  REQUIRE(std::string(head, 8) == "NAOCKPT1");
  // name length field, little endian
  unsigned char len[4];
  is.read(reinterpret_cast<char*>(len), 4);
  REQUIRE(len[0] == 1);
  REQUIRE(len[1] == 0);
}

TEST_CASE("corrupt magic is rejected") {
  const auto path = temp_file("bad.ckpt");
  std::ofstream os(path, std::ios::binary);
  os << "NOTACKPT";
  os.close();
  REQUIRE_THROWS_AS(nao::ckpt::load(path.string()), nao::ConfigError);
}
