#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "test_helpers.hpp"
#include "uqseg/cli.hpp"
#include "uqseg/voxvol.hpp"

using namespace uqseg;
using namespace uqseg::test;

namespace {

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv{"uqseg"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli_main(int(argv.size()), argv.data());
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
}

// dataset small enough that a CLI train run stays around a second
std::string synth_config(const std::string& dir, uint64_t seed) {
    const std::string path = dir + "/synth.json";
    write_text(path, R"({
  "dims": [8, 8, 8],
  "modalities": 2,
  "schema": "CM",
  "tumor-count-range": [1, 1],
  "tumor-radius-range": [2.0, 3.0],
  "noise-sigma": 0.05,
  "seed": )" + std::to_string(seed) +
                        R"(,
  "n-cases": 4,
  "split-fraction": 0.25
})");
    return path;
}

std::string train_config(const std::string& dir, const std::string& data_dir,
                         const std::string& out_dir) {
    const std::string path = dir + "/train.json";
    write_text(path, R"({
  "run-kind": "CM1",
  "epochs": 1,
  "train-batches-per-epoch": 2,
  "batch-size": 2,
  "patch-dims": [8, 8, 8],
  "seed": 3,
  "depth": 2,
  "base-width": 2,
  "data": ")" + data_dir +
                        R"(",
  "out": ")" + out_dir + R"("
})");
    return path;
}

}  // namespace

TEST_CASE("unknown subcommands and flags exit with code 1") {
    REQUIRE(run_cli({"frobnicate"}) == 1);
    REQUIRE(run_cli({"synth", "--bogus-flag"}) == 1);
    REQUIRE(run_cli({}) == 1);
}

TEST_CASE("help exits cleanly at top level and per subcommand") {
    REQUIRE(run_cli({"--help"}) == 0);
    for (const char* sub : {"synth", "train", "eval", "target", "render"})
        REQUIRE(run_cli({sub, "--help"}) == 0);
}

TEST_CASE("missing or malformed inputs exit with code 2") {
    const std::string dir = scratch_dir("cli_errors");
    REQUIRE(run_cli({"synth", "--config", dir + "/absent.json"}) == 2);

    write_text(dir + "/broken.json", "{ not json");
    REQUIRE(run_cli({"synth", "--config", dir + "/broken.json"}) == 2);

    // target on a non-vxv file
    write_text(dir + "/junk.vxv", "XXXXjunkjunkjunkjunkjunkjunk");
    REQUIRE(run_cli({"target", "--pred", dir + "/junk.vxv", "--gt", dir + "/junk.vxv", "--out",
                     dir + "/t.vxv"}) == 2);
}

TEST_CASE("full pipeline: synth, train, eval, target, render") {
    const std::string dir = scratch_dir("cli_pipeline");
    const std::string data_dir = dir + "/data";
    const std::string run_dir = dir + "/run";
    const std::string eval_dir = dir + "/eval";

    REQUIRE(run_cli({"synth", "--config", synth_config(dir, 21), "--out", data_dir}) == 0);
    REQUIRE(std::filesystem::exists(data_dir + "/manifest.json"));
    REQUIRE(std::filesystem::exists(data_dir + "/case_0000_img.vxv"));

    REQUIRE(run_cli({"train", "--config", train_config(dir, data_dir, run_dir)}) == 0);
    REQUIRE(std::filesystem::exists(run_dir + "/metrics.csv"));
    REQUIRE(std::filesystem::exists(run_dir + "/summary.json"));
    REQUIRE(std::filesystem::exists(run_dir + "/checkpoints/epoch_000/state.json"));

    REQUIRE(run_cli({"eval", "--checkpoint", run_dir + "/checkpoints/epoch_000", "--data",
                     data_dir, "--out", eval_dir}) == 0);
    REQUIRE(std::filesystem::exists(eval_dir + "/metrics.csv"));
    REQUIRE(std::filesystem::exists(eval_dir + "/summary.json"));
    REQUIRE(std::filesystem::exists(eval_dir + "/cases/case_0003/pred.vxv"));

    // target from the dumped prediction against ground truth
    const std::string case_dir = eval_dir + "/cases/case_0003";
    REQUIRE(run_cli({"target", "--pred", case_dir + "/pred.vxv", "--gt", case_dir + "/gt.vxv",
                     "--schema", case_dir + "/schema.json", "--out", dir + "/target.vxv"}) == 0);
    const VoxelGrid target = read_vxv_grid(dir + "/target.vxv");
    for (float v : target.data) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
    }

    REQUIRE(run_cli({"render", "--case", case_dir, "--out", dir + "/img", "--axes",
                     "axial,coronal"}) == 0);
    REQUIRE(std::filesystem::exists(dir + "/img/case_axial_overlay.ppm"));
    REQUIRE(std::filesystem::exists(dir + "/img/case_coronal_gt.ppm"));
}

TEST_CASE("cli runs are deterministic end to end") {
    const std::string dir = scratch_dir("cli_det");
    const std::string cfg = synth_config(dir, 33);
    REQUIRE(run_cli({"synth", "--config", cfg, "--out", dir + "/a"}) == 0);
    REQUIRE(run_cli({"synth", "--config", cfg, "--out", dir + "/b"}) == 0);
    REQUIRE(read_bytes(dir + "/a/case_0001_img.vxv") == read_bytes(dir + "/b/case_0001_img.vxv"));
    REQUIRE(read_bytes(dir + "/a/manifest.json") == read_bytes(dir + "/b/manifest.json"));
}

TEST_CASE("render exits 2 when a case volume is missing") {
    const std::string dir = scratch_dir("cli_render_missing");
    REQUIRE(run_cli({"render", "--case", dir, "--out", dir + "/img"}) == 2);
}
