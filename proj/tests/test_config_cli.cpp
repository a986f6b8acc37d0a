#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "edge/cli.hpp"
#include "edge/config.hpp"
#include "edge/error.hpp"
#include "edge/image_io.hpp"
#include "edge/keyvalue.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace edge;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("edge_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const char* kSmallNet =
    "network.channels = 4, 4, 8, 8, 8\n"
    "network.subblocks = 1, 1, 1, 1, 1\n"
    "racmix.heads = 2\n"
    "racmix.window_radius = 1\n";

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

// n image/gt pairs of size h×w with a vertical gt line, plus a manifest.
fs::path make_dataset(const fs::path& dir, int n, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  std::ofstream m(dir / "manifest.tsv");
  for (int k = 0; k < n; ++k) {
    Tensor img = testutil::random_tensor({3, h, w}, rng, 0, 1);
    Tensor gt(Shape{1, h, w});
    for (int i = 0; i < h; ++i) gt.at(0, i, (k + 3) % w) = 1.0f;
    const std::string name = "img" + std::to_string(k);
    write_png((dir / (name + ".png")).string(), img);
    write_png((dir / (name + "_gt.png")).string(), gt);
    m << name << ".png\t" << name << "_gt.png\n";
  }
  return dir / "manifest.tsv";
}

std::size_t count_files(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.is_regular_file();
  return n;
}

double value_after(const std::string& text, const std::string& key) {
  const auto pos = text.find(key + " ");
  REQUIRE(pos != std::string::npos);
  return std::stod(text.substr(pos + key.size() + 1));
}

}  // namespace

TEST_CASE("key-value parsing") {
  const auto kv = parse_key_values("# comment\n\n a = 1 \nb=x, y # trailing\n");
  REQUIRE(kv.size() == 2);
  CHECK(kv[0].key == "a");
  CHECK(kv[0].value == "1");
  CHECK(kv[0].line == 3);
  CHECK(kv[1].value == "x, y");
  CHECK_THROWS_AS(parse_key_values("a = 1\na = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_key_values("novalue\n"), ConfigError);
  CHECK(parse_int_list(KeyValue{"k", "1, 2,3", 1}) == std::vector<int>{1, 2, 3});
  CHECK_THROWS_AS(parse_int(KeyValue{"k", "1.5", 1}), ConfigError);
  CHECK_THROWS_AS(parse_double(KeyValue{"k", "abc", 1}), ConfigError);
  CHECK_THROWS_AS(parse_bool(KeyValue{"k", "maybe", 1}), ConfigError);
}

TEST_CASE("run config") {
  SUBCASE("defaults survive a text round trip") {
    RunConfig cfg;
    const RunConfig back = RunConfig::from_text(cfg.to_text());
    CHECK(back.network == cfg.network);
    CHECK(back.augment.factor() == 108);
    CHECK(back.augment.crop_size == cfg.augment.crop_size);
    CHECK(back.eval.thresholds.size() == 99);
    CHECK(back.eval.maxdist == cfg.eval.maxdist);
    CHECK(back.train.adam.lr == cfg.train.adam.lr);
    CHECK(back.train.batch_size == cfg.train.batch_size);
  }
  SUBCASE("values are applied") {
    const RunConfig cfg = RunConfig::from_text(std::string(kSmallNet) +
                                               "augment.crop = 32\naugment.gammas = 0.5\neval.maxdist = 0.01\n"
                                               "eval.nms = false\ntrain.lr = 0.01\ntrain.batch_size = 4\nseed = 7\n");
    CHECK(cfg.network.channels[0] == 4);
    CHECK(cfg.network.racmix.heads == 2);
    CHECK(cfg.augment.crop_size == 32);
    CHECK(cfg.augment.factor() == 2 * (1 + 15 + 1) * 3);
    CHECK(cfg.eval.maxdist == 0.01);
    CHECK_FALSE(cfg.eval.apply_nms);
    CHECK(cfg.train.adam.lr == 0.01);
    CHECK(cfg.train.batch_size == 4);
    CHECK(cfg.seed == 7);
  }
  SUBCASE("rejections") {
    CHECK_THROWS_AS(RunConfig::from_text("train.learning_rate = 0.1\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_text("network.bogus = 1\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_text("train.batch_size = 0\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_text("network.channels = 1, 2\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_text("eval.thresholds = 0\n"), ConfigError);
  }
}

TEST_CASE("cli usage") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"bogus"}).code == 2);
  CHECK(cli({"augment"}).code == 2);
  const Run help = cli({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("augment") != std::string::npos);
}

TEST_CASE("cli augment") {
  const fs::path dir = fresh_dir("augment");
  write_text(dir / "cfg.txt", "augment.crop = 8\n");
  SUBCASE("one source gives 108 files") {
    const fs::path manifest = make_dataset(dir, 1, 12, 24, 1);
    const Run r = cli({"augment", "--manifest", manifest.string(), "--out", (dir / "out").string(), "--config",
                       (dir / "cfg.txt").string()});
    CHECK(r.code == 0);
    CHECK(r.out.find("emitted 108") != std::string::npos);
    CHECK(count_files(dir / "out" / "images") == 108);
    CHECK(count_files(dir / "out" / "gt") == 108);
    CHECK(read_manifest((dir / "out" / "manifest.tsv").string()).size() == 108);
  }
  SUBCASE("empty manifest fails") {
    write_text(dir / "empty.tsv", "# nothing\n");
    const Run r = cli({"augment", "--manifest", (dir / "empty.tsv").string(), "--out", (dir / "out").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("error") != std::string::npos);
  }
  SUBCASE("crop too large fails") {
    const fs::path manifest = make_dataset(dir, 1, 12, 24, 1);
    const Run r = cli({"augment", "--manifest", manifest.string(), "--out", (dir / "out").string()});
    CHECK(r.code == 1);
  }
  fs::remove_all(dir);
}

TEST_CASE("cli train, infer, eval") {
  const fs::path dir = fresh_dir("pipeline");
  write_text(dir / "cfg.txt", std::string(kSmallNet) + "train.steps = 3\ntrain.batch_size = 2\n");
  const fs::path manifest = make_dataset(dir, 3, 16, 16, 2);
  const std::string ckpt = (dir / "net.ckpt").string();

  const Run t = cli({"train", "--config", (dir / "cfg.txt").string(), "--data", manifest.string(), "--checkpoint",
                     ckpt, "--seed", "3"});
  REQUIRE(t.code == 0);
  CHECK(t.out.find("step 3") != std::string::npos);
  {
    std::ifstream log(ckpt + ".log.csv");
    std::string line;
    std::getline(log, line);
    CHECK(line == "step,total,side1,side2,side3,side4,side5,side6,fused");
    int rows = 0;
    while (std::getline(log, line)) ++rows;
    CHECK(rows == 3);
  }

  SUBCASE("resume continues the step counter") {
    const Run r = cli({"train", "--config", (dir / "cfg.txt").string(), "--data", dir.string(), "--checkpoint",
                       ckpt, "--resume", ckpt, "--steps", "2"});
    CHECK(r.code == 0);
    CHECK(r.out.find("step 5") != std::string::npos);
    CHECK(load_checkpoint(ckpt).step == 5);
  }
  SUBCASE("invalid config key") {
    write_text(dir / "bad.txt", "train.speed = 9\n");
    const Run r = cli({"train", "--config", (dir / "bad.txt").string(), "--data", manifest.string(),
                       "--checkpoint", (dir / "other.ckpt").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("unknown key") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "other.ckpt"));
  }
  SUBCASE("infer writes one map per image") {
    Rng rng(5);
    write_png((dir / "x64.png").string(), testutil::random_tensor({3, 64, 64}, rng, 0, 1));
    const Run r = cli({"infer", "--checkpoint", ckpt, "--out", (dir / "pred").string(), (dir / "x64.png").string()});
    CHECK(r.code == 0);
    CHECK(count_files(dir / "pred") == 1);
    const Tensor m = read_png((dir / "pred" / "x64.png").string());
    CHECK(m.shape() == Shape{1, 64, 64});
  }
  SUBCASE("infer with side maps") {
    Rng rng(6);
    write_png((dir / "y.png").string(), testutil::random_tensor({3, 32, 32}, rng, 0, 1));
    const Run r = cli({"infer", "--checkpoint", ckpt, "--out", (dir / "side").string(), "--side-maps",
                       (dir / "y.png").string()});
    CHECK(r.code == 0);
    CHECK(count_files(dir / "side") == 7);
    for (const char* suffix : {"_s1", "_s2", "_s3", "_s4", "_s5", "_s6", "_fused"}) {
      CHECK(fs::exists(dir / "side" / (std::string("y") + suffix + ".png")));
    }
  }
  SUBCASE("infer pads indivisible sizes and crops back") {
    Rng rng(7);
    write_png((dir / "odd.png").string(), testutil::random_tensor({3, 65, 65}, rng, 0, 1));
    const Run r = cli({"infer", "--checkpoint", ckpt, "--out", (dir / "pred").string(), (dir / "odd.png").string()});
    CHECK(r.code == 0);
    CHECK(r.err.find("warning") != std::string::npos);
    CHECK(read_png((dir / "pred" / "odd.png").string()).shape() == Shape{1, 65, 65});
  }
  SUBCASE("infer on a missing image") {
    const Run r = cli({"infer", "--checkpoint", ckpt, "--out", (dir / "pred").string(), (dir / "nope.png").string()});
    CHECK(r.code == 1);
  }
  fs::remove_all(dir);
}

TEST_CASE("reflect padding") {
  Tensor x(Shape{1, 2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  const Tensor p = reflect_pad_to_multiple(x, 4);
  CHECK(p.shape() == Shape{1, 4, 4});
  const float want[] = {1, 2, 3, 2, 4, 5, 6, 5, 1, 2, 3, 2, 4, 5, 6, 5};
  for (int i = 0; i < 16; ++i) CHECK(p.data()[i] == want[i]);
  const Tensor c = crop_top_left(p, 2, 3);
  for (int i = 0; i < 6; ++i) CHECK(c.data()[i] == x.data()[i]);
}

TEST_CASE("cli eval") {
  const fs::path dir = fresh_dir("eval");
  fs::create_directories(dir / "pred");
  fs::create_directories(dir / "gt");
  Rng rng(8);
  std::vector<std::vector<float>> thinned, gvals;
  for (int n = 0; n < 3; ++n) {
    Tensor gt(Shape{1, 5, 5});
    for (float& v : gt.data()) v = rng.uniform() < 0.3 ? 1.0f : 0.0f;
    Tensor pred(Shape{1, 5, 5});
    for (float& v : pred.data()) v = static_cast<float>(rng.uniform_int(0, 255)) / 255.0f;
    const std::string name = "im" + std::to_string(n) + ".png";
    write_png((dir / "gt" / name).string(), gt);
    write_png((dir / "pred" / name).string(), pred);
    const Tensor t = nms_thin(read_png_gray((dir / "pred" / name).string()));
    thinned.emplace_back(t.data().begin(), t.data().end());
    gvals.emplace_back(gt.data().begin(), gt.data().end());
  }
  SUBCASE("printed values equal the independent implementation") {
    const std::string csv = (dir / "pr.csv").string();
    const Run r = cli({"eval", "--pred", (dir / "pred").string(), "--gt", (dir / "gt").string(), "--csv", csv});
    REQUIRE(r.code == 0);
    const oracle::Metrics m =
        oracle::evaluate(thinned, gvals, 5, 5, 0.0075 * std::sqrt(50.0), EvalConfig::default_thresholds());
    CHECK(std::abs(value_after(r.out, "ODS") - m.ods) < 1e-6);
    CHECK(std::abs(value_after(r.out, "OIS") - m.ois) < 1e-6);
    CHECK(std::abs(value_after(r.out, "AP") - m.ap) < 1e-6);
    const EvalReport back = load_pr(csv);
    CHECK(std::abs(back.ods - m.ods) < 1e-9);
    CHECK(std::abs(back.ap - m.ap) < 1e-9);
  }
  SUBCASE("perfect predictions") {
    const Run r = cli({"eval", "--pred", (dir / "gt").string(), "--gt", (dir / "gt").string(), "--config",
                       (write_text(dir / "c.txt", "eval.nms = false\n"), (dir / "c.txt").string())});
    REQUIRE(r.code == 0);
    CHECK(value_after(r.out, "ODS") == 1.0);
    CHECK(value_after(r.out, "OIS") == 1.0);
    CHECK(value_after(r.out, "AP") == 1.0);
  }
  SUBCASE("unmatched filenames are listed") {
    write_png((dir / "pred" / "extra.png").string(), Tensor(Shape{1, 5, 5}));
    const Run r = cli({"eval", "--pred", (dir / "pred").string(), "--gt", (dir / "gt").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("extra.png") != std::string::npos);
  }
  SUBCASE("pr-export requires an output path") {
    CHECK(cli({"pr-export", "--pred", (dir / "pred").string(), "--gt", (dir / "gt").string()}).code == 2);
    const Run r = cli({"pr-export", "--pred", (dir / "pred").string(), "--gt", (dir / "gt").string(), "--out",
                       (dir / "x.csv").string()});
    CHECK(r.code == 0);
    CHECK(load_pr((dir / "x.csv").string()).curve.size() == 99);
  }
  fs::remove_all(dir);
}

TEST_CASE("installed binary") {
  const std::string bin = EDGE_CLI_PATH;
  CHECK(std::system((bin + " --help > /dev/null").c_str()) == 0);
  CHECK(WEXITSTATUS(std::system((bin + " frobnicate > /dev/null 2>&1").c_str())) == 2);
}
