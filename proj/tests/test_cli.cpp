#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "causalab/io.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(CAUSALAB_BIN) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    if (status == -1) return -1;
    return WEXITSTATUS(status);
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string tiny_overrides() {
    return "--set model.sigma=16 --set model.n_layers=1 "
           "--set finetune.steps=3 --set finetune.steps_per_epoch=3 "
           "--set finetune.batch_size=2 --set pretrain.steps=2 "
           "--set pretrain.steps_per_epoch=2 --set pretrain.batch_size=2 "
           "--set experiment.dictionary_scenes=60 --set experiment.eval_scene_count=300";
}

}  // namespace

TEST_CASE("gen-world is byte-for-byte deterministic") {
    const fs::path d1 = fresh_dir("causalab_cli_gen1");
    const fs::path d2 = fresh_dir("causalab_cli_gen2");
    REQUIRE(run("--seed 7 --out " + d1.string() + " gen-world --scenes 50") == 0);
    REQUIRE(run("--seed 7 --out " + d2.string() + " gen-world --scenes 50") == 0);
    CHECK(causalab::io::read_file(d1 / "world.json") == causalab::io::read_file(d2 / "world.json"));
    CHECK(causalab::io::read_file(d1 / "scenes.jsonl") ==
          causalab::io::read_file(d2 / "scenes.jsonl"));
    CHECK(fs::exists(d1 / "manifest.json"));
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("unknown subcommand exits 2") {
    CHECK(run("frobnicate") == 2);
    CHECK(run("") == 2);
}

TEST_CASE("missing input file exits 1") {
    const fs::path d = fresh_dir("causalab_cli_err");
    CHECK(run("--out " + d.string() + " train --world /nonexistent/world.json") == 1);
    fs::remove_all(d);
}

TEST_CASE("train, build-dict, eval and analyze chain through files") {
    const fs::path base = fresh_dir("causalab_cli_chain");
    const fs::path wdir = base / "w";
    const fs::path tdir = base / "t";
    const fs::path ddir = base / "d";
    const fs::path edir = base / "e";
    const fs::path adir = base / "a";

    REQUIRE(run("--seed 11 --out " + wdir.string() + " gen-world --scenes 40") == 0);
    const std::string world_arg = " --world " + (wdir / "world.json").string();

    REQUIRE(run("--seed 11 --out " + tdir.string() + " " + tiny_overrides() +
                " train --stage finetune" + world_arg) == 0);
    CHECK(fs::exists(tdir / "checkpoint.bin"));
    CHECK(fs::exists(tdir / "curve.csv"));

    REQUIRE(run("--seed 11 --out " + ddir.string() + " " + tiny_overrides() + " build-dict" +
                world_arg + " --checkpoint " + (tdir / "checkpoint.bin").string()) == 0);
    CHECK(fs::exists(ddir / "dict_proj_v.bin"));
    CHECK(fs::exists(ddir / "dict_final_v.bin"));
    CHECK(fs::exists(ddir / "dict_final_t.bin"));

    REQUIRE(run("--seed 11 --out " + edir.string() + " " + tiny_overrides() + " eval" +
                world_arg + " --checkpoint " + (tdir / "checkpoint.bin").string() +
                " --scenes 300") == 0);
    CHECK(fs::exists(edir / "report.json"));
    CHECK(fs::exists(edir / "manifest.json"));

    REQUIRE(run("--seed 11 --out " + adir.string() + " " + tiny_overrides() + " analyze" +
                world_arg + " --checkpoint " + (tdir / "checkpoint.bin").string() +
                " --scenes 400") == 0);
    CHECK(fs::exists(adir / "profile.json"));
    CHECK(fs::exists(adir / "profile.csv"));

    // A causal training run wired through --dict-dir.
    const fs::path cdir = base / "c";
    REQUIRE(run("--seed 11 --out " + cdir.string() + " " + tiny_overrides() +
                " --set model.causal_projector=true --set model.causal_final_layer=true" +
                " train --stage finetune" + world_arg + " --dict-dir " + ddir.string()) == 0);
    CHECK(fs::exists(cdir / "checkpoint.bin"));

    fs::remove_all(base);
}
