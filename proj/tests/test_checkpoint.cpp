#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "poseadapt/checkpoint.hpp"

using namespace poseadapt;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("checkpoint round trip", "[checkpoint]") {
  Checkpoint c;
  c.arrays.emplace("w1", Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  c.arrays.emplace("b1", Tensor({3}, {-0.5, 0.25, 1e-300}));
  c.meta = {{"epoch", 7}, {"kind", "test"}};

  const std::string path = temp_path("padckpt_roundtrip.bin");
  save_checkpoint(path, c);
  Checkpoint r = load_checkpoint(path);

  REQUIRE(r.arrays.size() == 2);
  REQUIRE(r.arrays.at("w1").shape() == Shape{2, 3});
  for (std::size_t i = 0; i < 6; ++i) REQUIRE(r.arrays.at("w1")[i] == c.arrays.at("w1")[i]);
  REQUIRE(r.arrays.at("b1")[2] == 1e-300);
  REQUIRE(r.meta.at("epoch") == 7);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint serialization is byte-stable", "[checkpoint]") {
  Checkpoint c;
  c.arrays.emplace("alpha", Tensor({2}, {0.1, 0.2}));
  c.arrays.emplace("zeta", Tensor({1}, {3.0}));
  c.meta = {{"seed", 42}};

  const std::string p1 = temp_path("padckpt_a.bin");
  const std::string p2 = temp_path("padckpt_b.bin");
  save_checkpoint(p1, c);
  save_checkpoint(p2, c);
  REQUIRE(file_bytes(p1) == file_bytes(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("checkpoint errors", "[checkpoint]") {
  SECTION("missing file") {
    REQUIRE_THROWS_AS(load_checkpoint("/nonexistent/nope.bin"), std::runtime_error);
  }

  SECTION("bad magic") {
    const std::string path = temp_path("padckpt_bad.bin");
    std::ofstream(path, std::ios::binary) << "NOTACKPTxxxxxxxxxxxx";
    REQUIRE_THROWS_AS(load_checkpoint(path), std::runtime_error);
    std::remove(path.c_str());
  }
}
