#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "s2m/io/file_util.hpp"
#include "s2m/io/tiff.hpp"
#include "s2m/net/train.hpp"

using namespace s2m;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(S2M_BIN_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf;
  while (std::size_t n = fread(buf.data(), 1, buf.size(), pipe)) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path tmpdir(const char* name) {
  auto d = fs::temp_directory_path() / "s2m-cli-tests" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

const std::string kMicroNet = " --patch 16,16 --base-channels 4 --depth 2 --time-dim 8 ";
const std::string kTinyToy = " --toy-count 4 --toy-shape 32,32 ";

}  // namespace

TEST_CASE("simulate writes deterministic mask/sketch pairs with sidecars") {
  const auto out1 = tmpdir("sim1"), out2 = tmpdir("sim2");
  const std::string flags = " simulate --style nuclei --count 5 --shape 48,48 ";
  CHECK(run("--seed 7 --out " + out1.string() + flags).code == 0);
  CHECK(run("--seed 7 --out " + out2.string() + flags).code == 0);
  for (int i = 0; i < 5; ++i) {
    char name[16];
    std::snprintf(name, sizeof(name), "%04d.tif", i);
    CHECK(io::read_file(out1 / "masks" / name) == io::read_file(out2 / "masks" / name));
    CHECK(io::read_file(out1 / "sketches" / name) == io::read_file(out2 / "sketches" / name));
  }
  CHECK(fs::exists(out1 / "params" / "0000.json"));
  const auto sidecar = nlohmann::json::parse(io::read_file(out1 / "params" / "0000.json"));
  CHECK(sidecar.at("style") == "nuclei");
  CHECK(sidecar.at("sim").at("image_shape").get<Shape>() == Shape{48, 48});
}

TEST_CASE("simulate membrane masks partition the field") {
  const auto out = tmpdir("sim-membrane");
  CHECK(run("--seed 3 --out " + out.string() + " simulate --style membrane --count 2 --shape 128,128").code == 0);
  const auto mask = io::read_tiff_labels(out / "masks" / "0000.tif");
  CHECK(mask.shape == Shape{128, 128});
  CHECK((mask.labels > 0).all());
}

TEST_CASE("unwritable output directory exits with code 2") {
  const auto r = run("--out /dev/null/nope simulate --count 1");
  CHECK(r.code == 2);
  CHECK(r.output.find("error") != std::string::npos);
}

TEST_CASE("unknown flags and missing subcommands exit with code 2") {
  CHECK(run("simulate --definitely-not-a-flag 1").code == 2);
  CHECK(run("").code == 2);
  CHECK(run("generate --n 1").code == 2);  // missing required --checkpoint
}

TEST_CASE("train --steps 0 writes a checkpoint identical to initialization") {
  const auto out = tmpdir("train0");
  const auto r = run("--seed 5 --out " + out.string() + " train --toy-corpus --steps 0" + kMicroNet + kTinyToy);
  CHECK(r.code == 0);
  const auto loaded = net::load_denoiser(out / "checkpoint.ckpt");
  net::DenoiserConfig cfg;
  cfg.base_channels = 4;
  cfg.depth = 2;
  cfg.time_embed_dim = 8;
  cfg.patch_shape = {16, 16};
  const net::TimeUnet<float> init(cfg, 5);
  REQUIRE(loaded.net.params().entries.size() == init.params().entries.size());
  for (std::size_t i = 0; i < init.params().entries.size(); ++i)
    CHECK((loaded.net.params().entries[i].w.array() == init.params().entries[i].w.array()).all());
}

TEST_CASE("resumed CLI training appends the loss history without renumbering") {
  const auto out_a = tmpdir("resume-a"), out_b = tmpdir("resume-b"), out_c = tmpdir("resume-c");
  CHECK(run("--seed 9 --out " + out_a.string() + " train --toy-corpus --steps 6" + kMicroNet + kTinyToy).code == 0);
  CHECK(run("--seed 9 --out " + out_b.string() + " train --toy-corpus --steps 3" + kMicroNet + kTinyToy).code == 0);
  CHECK(run("--seed 9 --out " + out_c.string() + " train --toy-corpus --steps 6 --resume " +
            (out_b / "checkpoint.ckpt").string() + kMicroNet + kTinyToy)
            .code == 0);
  const auto straight = io::read_file(out_a / "loss.csv");
  const auto resumed = io::read_file(out_c / "loss.csv");
  CHECK(straight == resumed);
  CHECK(straight.find("step,loss\n1,") != std::string::npos);
  CHECK(straight.find("\n6,") != std::string::npos);
  CHECK(fs::exists(out_a / "loss.png"));
}

TEST_CASE("generate produces a verifiable dataset, deterministically, and validates t_start") {
  const auto train_out = tmpdir("gen-train");
  REQUIRE(run("--seed 4 --out " + train_out.string() + " train --toy-corpus --steps 5" + kMicroNet + kTinyToy).code == 0);
  const std::string ckpt = (train_out / "checkpoint.ckpt").string();

  const auto d1 = tmpdir("gen-1"), d2 = tmpdir("gen-2");
  const std::string flags =
      " generate --checkpoint " + ckpt + " --n 2 --t-start 5 --sigma 1 --shape 32,32 --instances 2,3 --radius 3,5";
  CHECK(run("--seed 3 --out " + d1.string() + flags).code == 0);
  CHECK(run("--seed 3 --out " + d2.string() + flags).code == 0);
  for (const char* rel : {"images/0000.tif", "images/0001.tif", "masks/0000.tif", "sketches/0001.tif"})
    CHECK(io::read_file(d1 / rel) == io::read_file(d2 / rel));
  const auto manifest = nlohmann::json::parse(io::read_file(d1 / "manifest.json"));
  CHECK(manifest.at("format") == "s2m-dataset-1");
  CHECK(manifest.at("entries").size() == 2);

  const auto bad = run("--out " + tmpdir("gen-bad").string() + " generate --checkpoint " + ckpt +
                       " --n 1 --t-start 4000");
  CHECK(bad.code == 2);
  CHECK(bad.output.find("[1,1000]") != std::string::npos);
}

TEST_CASE("sweep emits the grid CSV, metadata and plots") {
  const auto train_out = tmpdir("sweep-train");
  REQUIRE(run("--seed 8 --out " + train_out.string() + " train --toy-corpus --steps 5" + kMicroNet + kTinyToy).code == 0);
  const auto out = tmpdir("sweep-out");
  const auto r = run("--seed 2 --out " + out.string() + " sweep --checkpoint " +
                     (train_out / "checkpoint.ckpt").string() +
                     " --t-grid 100,400,1000 --sigma-grid 0,1,2 --refs 1" + kTinyToy);
  CHECK(r.code == 0);
  const auto csv = io::read_file(out / "sweep.csv");
  int rows = 0;
  for (char c : csv)
    if (c == '\n') ++rows;
  CHECK(rows == 10);  // header + 9 grid cells
  CHECK(csv.find("\n400,1,") != std::string::npos);
  // the recommended flag marks (400, 1)
  const auto line_at = csv.find("\n400,1,");
  const auto line_end = csv.find('\n', line_at + 1);
  CHECK(csv.substr(line_at, line_end - line_at).ends_with(",1"));
  for (const char* f : {"sweep.json", "heatmap_psnr.png", "heatmap_zncc.png", "heatmap_hist.png",
                        "lines_psnr.png", "lines_zncc.png", "lines_hist.png"})
    CHECK(fs::file_size(out / f) > 0);

  // reproducible
  const auto out2 = tmpdir("sweep-out2");
  CHECK(run("--seed 2 --out " + out2.string() + " sweep --checkpoint " +
            (train_out / "checkpoint.ckpt").string() +
            " --t-grid 100,400,1000 --sigma-grid 0,1,2 --refs 1" + kTinyToy)
            .code == 0);
  CHECK(io::read_file(out2 / "sweep.csv") == csv);
}

TEST_CASE("evaluate scores predictions and runs the rank-sum comparison") {
  const auto sim_out = tmpdir("eval-sim");
  REQUIRE(run("--seed 6 --out " + sim_out.string() + " simulate --count 3 --shape 48,48").code == 0);

  const auto out = tmpdir("eval-out");
  const auto r = run("--out " + out.string() + " evaluate --pred " + (sim_out / "masks").string() +
                     " --truth " + (sim_out / "masks").string());
  CHECK(r.code == 0);
  const auto csv = io::read_file(out / "iou.csv");
  CHECK(csv.find("0000.tif,1,") != std::string::npos);
  const auto summary = nlohmann::json::parse(io::read_file(out / "summary.json"));
  CHECK(summary.at("mean_iou").get<double>() == doctest::Approx(1.0));

  const auto sa = tmpdir("eval-scores") / "a.txt";
  const auto sb = sa.parent_path() / "b.txt";
  io::atomic_write_file(sa, "1\n2\n3\n");
  io::atomic_write_file(sb, "4\n5\n6\n");
  const auto out2 = tmpdir("eval-rs");
  const auto r2 = run("--out " + out2.string() + " evaluate --scores-a " + sa.string() +
                      " --scores-b " + sb.string());
  CHECK(r2.code == 0);
  const auto summary2 = nlohmann::json::parse(io::read_file(out2 / "summary.json"));
  CHECK(summary2.at("rank_sum").at("p_two_sided").get<double>() == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(summary2.at("rank_sum").at("method") == "exact");

  // identical score lists carry no evidence
  const auto out3 = tmpdir("eval-same");
  CHECK(run("--out " + out3.string() + " evaluate --scores-a " + sa.string() + " --scores-b " +
            sa.string())
            .code == 0);
  const auto summary3 = nlohmann::json::parse(io::read_file(out3 / "summary.json"));
  CHECK(summary3.at("rank_sum").at("p_two_sided").get<double>() == doctest::Approx(1.0));
}

TEST_CASE("simulate -> train -> generate -> evaluate round trip") {
  const auto root = tmpdir("e2e");
  CHECK(run("--seed 1 --out " + (root / "sim").string() + " simulate --count 2 --shape 32,32").code == 0);
  REQUIRE(run("--seed 1 --out " + (root / "train").string() + " train --toy-corpus --steps 5" +
              kMicroNet + kTinyToy)
              .code == 0);
  REQUIRE(run("--seed 1 --out " + (root / "data").string() + " generate --checkpoint " +
              (root / "train" / "checkpoint.ckpt").string() +
              " --n 2 --t-start 5 --shape 32,32 --instances 2,3 --radius 3,5")
              .code == 0);
  const auto r = run("--out " + (root / "eval").string() + " evaluate --pred " +
                     (root / "data" / "masks").string() + " --truth " +
                     (root / "data" / "masks").string());
  CHECK(r.code == 0);
  CHECK(r.output.find("mean IoU") != std::string::npos);
}

TEST_CASE("a TOML config file supplies defaults and flags still win") {
  const auto root = tmpdir("config");
  const auto cfg = root / "run.toml";
  io::atomic_write_file(cfg, "seed = 7\nout = \"" + (root / "from-config").string() +
                                 "\"\n\n[simulate]\ncount = 2\nshape = \"48,48\"\n");
  CHECK(run("--config " + cfg.string() + " simulate").code == 0);
  CHECK(fs::exists(root / "from-config" / "masks" / "0001.tif"));
  CHECK(!fs::exists(root / "from-config" / "masks" / "0002.tif"));

  // flag overrides the config's count
  CHECK(run("--config " + cfg.string() + " --out " + (root / "override").string() +
            " simulate --count 3")
            .code == 0);
  CHECK(fs::exists(root / "override" / "masks" / "0002.tif"));

  // identical to passing --seed 7 on the command line
  CHECK(run("--seed 7 --out " + (root / "direct").string() + " simulate --count 2 --shape 48,48").code == 0);
  CHECK(io::read_file(root / "from-config" / "masks" / "0000.tif") ==
        io::read_file(root / "direct" / "masks" / "0000.tif"));
}
