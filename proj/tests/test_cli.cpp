#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "poseadapt/cli.hpp"
#include "poseadapt/config.hpp"
#include "poseadapt/report.hpp"

using namespace poseadapt;
namespace fs = std::filesystem;

namespace {

// Fresh scratch directory per section; removed on destruction.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("poseadapt_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  os << content;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int run(const std::vector<std::string>& argv) { return cli::run_cli(argv); }

const char* kTinyConfig = R"({
  "model": {"c1": 4, "c2": 8, "c3": 8, "feat_channels": 8, "dec_channels": 8},
  "data": {"source": {"train_count": 12, "test_count": 6}, "aux_count": 40},
  "train": {"epochs": 1, "lr_drops": [], "batch": 4},
  "prior": {"epochs": 1, "batch": 16, "kprime": 20},
  "adapt": {"epochs": 1, "lr_drops": [], "batch": 6, "lambda2": 0},
  "ablate": {"p_grid": [0.5], "seeds": [1]}
})";

}  // namespace

TEST_CASE("sha256 known vectors", "[report]") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
  // Multi-block input (> 64 bytes).
  CHECK(sha256_hex(std::string(1000, 'a')) ==
        "41edece42d63e8d9bf515a9ba6932e1c20cbc9f5a5d134645adb5db1b9737ea3");

  TempDir tmp("sha");
  write_file(tmp / "f.txt", "abc");
  CHECK(sha256_file(tmp / "f.txt") == sha256_hex("abc"));
}

TEST_CASE("hash_path covers directory trees deterministically", "[report]") {
  TempDir tmp("hashpath");
  fs::create_directories(tmp.path / "d/sub");
  write_file(tmp / "d/a.txt", "alpha");
  write_file(tmp / "d/sub/b.txt", "beta");
  const std::string h1 = hash_path(tmp / "d");
  const std::string h2 = hash_path(tmp / "d");
  CHECK(h1 == h2);
  // Content change moves the hash; rename does too (names are hashed).
  write_file(tmp / "d/a.txt", "gamma");
  CHECK(hash_path(tmp / "d") != h1);
  write_file(tmp / "d/a.txt", "alpha");
  CHECK(hash_path(tmp / "d") == h1);
  fs::rename(tmp.path / "d/a.txt", tmp.path / "d/a2.txt");
  CHECK(hash_path(tmp / "d") != h1);
  CHECK_THROWS(hash_path(tmp / "missing"));
}

TEST_CASE("fmt_double round-trips exactly", "[report]") {
  const std::vector<double> vals = {0.0,       -0.0,   0.1,    1.0 / 3.0, 2.0 / 3.0, 1e-300,
                                    1.7e308,   -1e-17, 123456789.123456789, 5e-324};
  for (double v : vals) {
    const std::string s = fmt_double(v);
    double back = 0.0;
    std::sscanf(s.c_str(), "%lf", &back);
    INFO(s);
    CHECK(std::memcmp(&back, &v, sizeof(double)) == 0);
  }
  // Readability: simple values stay short.
  CHECK(fmt_double(0.5) == "0.5");
  CHECK(fmt_double(30.0) == "30");
}

TEST_CASE("csv writer", "[report]") {
  TempDir tmp("csv");
  CsvTable t;
  t.header = {"a", "b"};
  t.rows = {{"1", "x"}, {"2", "y"}};
  write_csv(tmp / "t.csv", t);
  CHECK(read_file(tmp / "t.csv") == "a,b\n1,x\n2,y\n");
  t.rows.push_back({"only-one"});
  CHECK_THROWS(write_csv(tmp / "t2.csv", t));
}

TEST_CASE("manifest round trip", "[report]") {
  TempDir tmp("manifest");
  RunManifest m;
  m.command = "adapt";
  m.config_hash = "deadbeef";
  m.seed = 42;
  m.inputs["in/a"] = "h1";
  m.outputs["out/b"] = "h2";
  m.wall_seconds = 1.25;
  save_manifest(tmp / "", m);
  const RunManifest back = load_manifest(tmp / "");
  CHECK(back.command == m.command);
  CHECK(back.config_hash == m.config_hash);
  CHECK(back.seed == m.seed);
  CHECK(back.inputs == m.inputs);
  CHECK(back.outputs == m.outputs);
  CHECK(back.wall_seconds == m.wall_seconds);
}

TEST_CASE("svg histogram", "[report]") {
  TempDir tmp("svg");
  write_histogram_svg(tmp / "h.svg", {0.0, 1.0, 2.0}, 1.0,
                      {{"clean", "#4682b4", {5, 2, 0}}, {"corrupted", "#cd5c5c", {1, 3, 4}}},
                      "title", "score");
  const std::string svg = read_file(tmp / "h.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("clean") != std::string::npos);
  CHECK(svg.find("corrupted") != std::string::npos);
  // Zero-count bins draw no bar: clean series has 1 empty bin, corrupted none,
  // so bars = 2 + 3, legend swatches = 2, background = 1 -> 8 rects total.
  std::size_t rects = 0;
  for (std::size_t p = svg.find("<rect"); p != std::string::npos; p = svg.find("<rect", p + 1)) ++rects;
  CHECK(rects == 8);
  CHECK_THROWS(write_histogram_svg(tmp / "bad.svg", {0.0}, 1.0, {{"s", "#000", {1, 2}}}, "t", "x"));
}

TEST_CASE("run config round trip and overrides", "[config]") {
  RunConfig def;
  const nlohmann::json j = config_to_json(def);
  const RunConfig back = config_from_json(j);
  CHECK(config_canonical(back) == config_canonical(def));

  // Defaults echo the shipped scale.
  CHECK(def.data.source.train_count == 2000);
  CHECK(def.data.source.test_count == 500);
  CHECK(def.data.aux_count == 5000);

  // Partial override keeps everything else at defaults.
  const RunConfig part = config_from_json(nlohmann::json::parse(R"({"adapt": {"p": 0.7}})"));
  CHECK(part.adapt.p == 0.7);
  CHECK(part.adapt.alpha == def.adapt.alpha);
  CHECK(part.model.keypoints == def.model.keypoints);

  // Nested domain override merges onto the default spec.
  const RunConfig dom = config_from_json(
      nlohmann::json::parse(R"({"data": {"source": {"train_count": 5}}})"));
  CHECK(dom.data.source.train_count == 5);
  CHECK(dom.data.source.pose.angles.size() == def.data.source.pose.angles.size());

  CHECK_THROWS(config_from_json(nlohmann::json::parse(R"({"adapt": {"p": 0}})")));
  CHECK_THROWS(config_from_json(nlohmann::json::parse(R"({"ablate": {"p_grid": []}})")));
}

TEST_CASE("cli end to end at miniature scale", "[cli]") {
  TempDir tmp("cli");
  const std::string cfg = tmp / "cfg.json";
  write_file(cfg, kTinyConfig);

  REQUIRE(run({"gen-data", "--config", cfg, "--out", tmp / "data"}) == 0);
  CHECK(fs::is_regular_file(tmp.path / "data/source/train/poses.jsonl"));
  CHECK(fs::is_regular_file(tmp.path / "data/target/test/poses.jsonl"));
  CHECK(fs::is_regular_file(tmp.path / "data/aux/poses.jsonl"));
  CHECK(fs::is_regular_file(tmp.path / "data/manifest.json"));

  // Rerun into a second directory: identical content hashes.
  REQUIRE(run({"gen-data", "--config", cfg, "--out", tmp / "data2"}) == 0);
  const RunManifest g1 = load_manifest(tmp / "data");
  const RunManifest g2 = load_manifest(tmp / "data2");
  REQUIRE(g1.outputs.size() == g2.outputs.size());
  for (auto it1 = g1.outputs.begin(), it2 = g2.outputs.begin(); it1 != g1.outputs.end();
       ++it1, ++it2) {
    CHECK(it1->second == it2->second);  // same hash under different roots
  }

  REQUIRE(run({"train-source", "--config", cfg, "--data", tmp / "data", "--out", tmp / "src"}) == 0);
  CHECK(fs::is_regular_file(tmp.path / "src/source_model.ckpt"));
  CHECK(fs::is_regular_file(tmp.path / "src/train_trace.csv"));

  REQUIRE(run({"adapt", "--config", cfg, "--images", tmp / "data/target/train", "--model",
               tmp / "src/source_model.ckpt", "--out", tmp / "ad"}) == 0);
  CHECK(fs::is_regular_file(tmp.path / "ad/student.ckpt"));
  CHECK(fs::is_regular_file(tmp.path / "ad/teacher.ckpt"));

  REQUIRE(run({"eval", "--config", cfg, "--model", tmp / "ad", "--split", tmp / "data/target/test",
               "--out", tmp / "ev"}) == 0);
  const std::string metrics = read_file(tmp / "ev/metrics.csv");
  CHECK(metrics.rfind("model,sld,elb,wrist,hip,knee,ankle,avg\n", 0) == 0);
  CHECK(metrics.find("student,") != std::string::npos);
  CHECK(metrics.find("teacher,") != std::string::npos);

  // --which narrows the report to one row.
  REQUIRE(run({"eval", "--config", cfg, "--model", tmp / "ad", "--split", tmp / "data/target/test",
               "--out", tmp / "ev_t", "--which", "teacher"}) == 0);
  const std::string only_teacher = read_file(tmp / "ev_t/metrics.csv");
  CHECK(only_teacher.find("teacher,") != std::string::npos);
  CHECK(only_teacher.find("student,") == std::string::npos);

  // The adaptation manifest must not list any label file among its inputs.
  const RunManifest am = load_manifest(tmp / "ad");
  for (const auto& [path, hash] : am.inputs) {
    CHECK(path.find("poses.jsonl") == std::string::npos);
  }
}

TEST_CASE("cli error contract", "[cli]") {
  TempDir tmp("clierr");
  CHECK(run({"bogus-command"}) == 1);
  CHECK(run({"adapt", "--frobnicate", "x"}) == 1);
  CHECK(run({"train-source", "--out", tmp / "o"}) == 1);                    // missing --data
  CHECK(run({"eval", "--model", tmp / "nope.ckpt", "--split", tmp / "s",
             "--out", tmp / "o"}) == 1);                                    // missing checkpoint
  CHECK(run({"gen-data", "--out", tmp / "g", "--seed", "banana"}) == 1);    // bad seed
  CHECK(run({}) == 1);
  CHECK(run({"--help"}) == 0);

  // Empty pose file is rejected by score-poses.
  write_file(tmp / "empty.jsonl", "");
  CHECK(run({"score-poses", "--prior", tmp / "nope.ckpt", "--out", tmp / "o2",
             tmp / "empty.jsonl"}) == 1);
}
