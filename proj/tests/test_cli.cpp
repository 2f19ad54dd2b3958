#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tsa/geometry.hpp"
#include "tsa/io.hpp"
#include "tsa/train.hpp"

using namespace tsa;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "tsa_cli";

int run(const std::string& args) {
  const std::string cmd = std::string(TSA_CLI_PATH) + " " + args + " > " + (kRoot / "stdout.txt").string() + " 2> " +
                          (kRoot / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path write_config(const std::string& name, const nlohmann::json& doc) {
  const fs::path p = kRoot / name;
  write_json_file(p, doc);
  return p;
}

nlohmann::json tiny_config() {
  ExperimentConfig cfg;
  cfg.synth.videos = 6;
  cfg.synth.frames = 40;
  cfg.synth.frame_width = 64;
  cfg.synth.frame_height = 64;
  cfg.synth.grid_h = 4;
  cfg.synth.grid_w = 4;
  cfg.synth.clips = 3;
  cfg.synth.clip_length = 8;
  cfg.synth.channels = 4;
  cfg.model.hidden = {8};
  cfg.train.epochs = 2;
  cfg.train.optimizer.lr = 3e-3;
  return to_json(cfg);
}

struct Fresh {
  Fresh() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
  ~Fresh() { fs::remove_all(kRoot); }
};

}  // namespace

TEST_CASE_FIXTURE(Fresh, "help and argument errors") {
  CHECK(run("--help") == 0);
  CHECK(slurp(kRoot / "stdout.txt").find("gen-synth") != std::string::npos);
  CHECK(run("") == 1);
  CHECK(run("masks --boxes x.jsonl --bogus") == 1);
  CHECK(run("flops --dims 2,2 --no-measure") == 1);
  CHECK(run("flops --dims 2,4,7,7 --tau 1.5") == 1);
}

TEST_CASE_FIXTURE(Fresh, "gen-synth exit codes and determinism") {
  const fs::path cfg = write_config("cfg.json", tiny_config());
  CHECK(run("gen-synth --config " + cfg.string() + " --out " + (kRoot / "a").string()) == 0);
  CHECK(run("gen-synth --config " + cfg.string() + " --out " + (kRoot / "b").string()) == 0);
  CHECK(slurp(kRoot / "a" / "manifest.json") == slurp(kRoot / "b" / "manifest.json"));
  CHECK(slurp(kRoot / "a" / "features" / "v0003.ft1") == slurp(kRoot / "b" / "features" / "v0003.ft1"));
  CHECK(run("gen-synth --config " + cfg.string() + " --out " + (kRoot / "a").string()) == 2);
  CHECK(run("gen-synth --config " + cfg.string() + " --out " + (kRoot / "a").string() + " --force") == 0);

  auto bad = tiny_config();
  bad["synth"]["noise"] = -1.0;
  const fs::path bad_cfg = write_config("bad.json", bad);
  CHECK(run("gen-synth --config " + bad_cfg.string() + " --out " + (kRoot / "c").string()) == 1);
  CHECK(slurp(kRoot / "stderr.txt").find("synth.noise") != std::string::npos);
  CHECK(run("gen-synth --config " + (kRoot / "missing.json").string() + " --out " + (kRoot / "d").string()) != 0);
}

TEST_CASE_FIXTURE(Fresh, "masks dump decodes to the library tube") {
  std::vector<TrackBox> boxes;
  for (std::int64_t f = 0; f < 40; f += 3) {
    const double x = 10 + f;
    boxes.push_back({f, {Point2(x, 20), Point2(x + 60, 30), Point2(x + 50, 110), Point2(x - 10, 100)}});
  }
  write_boxes(kRoot / "boxes.jsonl", boxes);
  const std::string geo = "--grid 7x7 --frame 112x112 --clips 4 --clip-len 8 --frames 40 --stride 4";
  REQUIRE(run("masks --boxes " + (kRoot / "boxes.jsonl").string() + " " + geo + " --out " +
              (kRoot / "masks.json").string()) == 0);
  const auto doc = read_json_file(kRoot / "masks.json");

  GridSpec spec;
  spec.frame_width = 112;
  spec.frame_height = 112;
  spec.grid_h = 7;
  spec.grid_w = 7;
  spec.layout = ClipLayout::uniform(40, 4, 8);
  const TubeIndex tube = build_tube(boxes, spec);
  CHECK(doc["total"] == tube.total());
  REQUIRE(doc["slices"].size() == 8);
  for (const auto& slice : doc["slices"]) {
    const Index n = slice["clip"], t = slice["step"];
    for (Index i = 0; i < 7; ++i) {
      const auto& runs = slice["rows"][static_cast<std::size_t>(i)];
      std::vector<bool> row;
      bool on = false;
      for (const auto& r : runs) {
        for (int k = 0; k < r.get<int>(); ++k) row.push_back(on);
        on = !on;
      }
      REQUIRE(row.size() == 7);
      for (Index j = 0; j < 7; ++j) CHECK(row[static_cast<std::size_t>(j)] == tube.mask(n, t, i, j));
    }
  }
  CHECK(run("masks --boxes " + (kRoot / "nope.jsonl").string()) == 2);
}

TEST_CASE_FIXTURE(Fresh, "flops report") {
  REQUIRE(run("flops --dims 10,4,14,14 --occupancy 0.5 --out " + (kRoot / "flops.json").string()) == 0);
  const auto doc = read_json_file(kRoot / "flops.json");
  CHECK(doc.dump().find("61465600") != std::string::npos);
}

TEST_CASE_FIXTURE(Fresh, "train and eval") {
  const fs::path cfg = write_config("cfg.json", tiny_config());
  REQUIRE(run("gen-synth --config " + cfg.string() + " --out " + (kRoot / "data").string()) == 0);
  const std::string manifest = (kRoot / "data" / "manifest.json").string();
  REQUIRE(run("train --config " + cfg.string() + " --manifest " + manifest + " --out " + (kRoot / "run").string()) ==
          0);
  CHECK(fs::exists(kRoot / "run" / "reports" / "train_best_test.json"));
  CHECK(fs::exists(kRoot / "run" / "checkpoints" / "train" / "last" / "weights.bin"));
  const std::string ckpt = (kRoot / "run" / "checkpoints" / "train" / "last").string();
  REQUIRE(run("eval --manifest " + manifest + " --checkpoint " + ckpt + " --out " + (kRoot / "ev1").string()) == 0);
  REQUIRE(run("eval --manifest " + manifest + " --checkpoint " + ckpt + " --out " + (kRoot / "ev2").string()) == 0);
  CHECK(slurp(kRoot / "ev1" / "reports" / "eval_test.json") == slurp(kRoot / "ev2" / "reports" / "eval_test.json"));
  CHECK(run("eval --manifest " + manifest + " --checkpoint " + (kRoot / "none").string()) == 2);
  CHECK(run("eval --manifest " + manifest + " --checkpoint " + ckpt + " --split valid") == 1);
}
