#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <doctest.h>

#include "usat/errors.hpp"

namespace {

namespace fs = std::filesystem;

struct CmdResult {
    int exit_code = -1;
    std::string output;
};

CmdResult run_cmd(const std::string& args) {
    const std::string cmd = std::string(USAT_BIN) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CmdResult res;
    std::array<char, 4096> buf{};
    while (fgets(buf.data(), buf.size(), pipe)) res.output += buf.data();
    const int status = pclose(pipe);
    res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return res;
}

fs::path temp_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("usat_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), {});
}

} // namespace

TEST_CASE("help enumerates subcommands and flags") {
    const CmdResult help = run_cmd("--help");
    CHECK(help.exit_code == 0);
    for (const char* sub : {"synth", "pair", "pretrain", "finetune", "evaluate", "reconstruct",
                            "encviz"})
        CHECK(help.output.find(sub) != std::string::npos);

    const CmdResult pre = run_cmd("pretrain --help");
    CHECK(pre.exit_code == 0);
    for (const char* flag : {"--config", "--seed", "--out", "--data", "--bands", "--sensors",
                             "--mask-ratio", "--epochs", "--preset"})
        CHECK(pre.output.find(flag) != std::string::npos);

    const CmdResult ft = run_cmd("finetune --help");
    CHECK(ft.output.find("--group-index-mode") != std::string::npos);
    CHECK(ft.output.find("--linear-probe") != std::string::npos);
}

TEST_CASE("usage errors exit 1") {
    CHECK(run_cmd("").exit_code == 1);
    CHECK(run_cmd("unknowncmd").exit_code == 1);
    CHECK(run_cmd("synth").exit_code == 1); // missing --out
}

TEST_CASE("synth is reproducible under a fixed seed") {
    const auto a = temp_dir("synth_a");
    const auto b = temp_dir("synth_b");
    const std::string common = " --n 3 --seed 5 --classes 3";
    CHECK(run_cmd("synth --out " + a.string() + common).exit_code == 0);
    CHECK(run_cmd("synth --out " + b.string() + common).exit_code == 0);
    for (const auto& entry : fs::directory_iterator(a / "rasters"))
        CHECK(slurp(entry.path()) == slurp(b / "rasters" / entry.path().filename()));
    CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
}

TEST_CASE("root seed is printed at startup") {
    const auto dir = temp_dir("seedprint");
    const CmdResult res = run_cmd("synth --out " + dir.string() + " --n 1 --seed 321");
    CHECK(res.output.find("root seed = 321") != std::string::npos);
}

TEST_CASE("invalid config file exits 1") {
    const auto dir = temp_dir("badcfg");
    const auto cfg = dir / "bad.json";
    {
        std::ofstream os(cfg);
        os << R"({"run": {"learning_rate_typo": 1}})";
    }
    const CmdResult res = run_cmd("synth --out " + dir.string() + " --config " + cfg.string());
    CHECK(res.exit_code == 1);
    CHECK(res.output.find("unknown key") != std::string::npos);
}

TEST_CASE("missing data store exits 2") {
    const auto dir = temp_dir("nodata");
    const CmdResult res = run_cmd("pretrain --data " + (dir / "nope").string() + " --out " +
                                  (dir / "out").string() + " --preset tiny");
    CHECK(res.exit_code == 2);
}

TEST_CASE("encviz writes one similarity map per coarse patch") {
    const auto dir = temp_dir("encviz");
    const CmdResult res = run_cmd("encviz --out " + dir.string() + " --group 1 --pos-dim 64");
    CHECK(res.exit_code == 0);
    int count = 0;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.path().extension() == ".pgm") ++count;
    CHECK(count == 16); // 4x4 coarse grid in the default geometry
    CHECK(fs::exists(dir / "sim_0_0.pgm"));
    CHECK(fs::exists(dir / "sim_3_3.pgm"));
}

TEST_CASE("pipeline: synth, pair, short pretrain, evaluate flow") {
    const auto root = temp_dir("pipeline");
    const auto ds = root / "ds";
    REQUIRE(run_cmd("synth --out " + ds.string() + " --n 6 --seed 9 --classes 3").exit_code == 0);

    const auto paired = root / "paired";
    REQUIRE(run_cmd("pair --fine " + ds.string() + " --coarse " + ds.string() + " --out " +
                    paired.string())
                .exit_code == 0);
    CHECK(fs::exists(paired / "manifest.json"));

    const auto ckpt = root / "ckpt";
    const CmdResult pre = run_cmd("pretrain --data " + paired.string() + " --out " +
                                  ckpt.string() + " --preset tiny --epochs 1 --batch 3 --seed 2");
    REQUIRE(pre.exit_code == 0);
    CHECK(pre.output.find("step=0 lr=") != std::string::npos);
    CHECK(fs::exists(ckpt / "manifest.json"));
    CHECK(fs::exists(ckpt / "params.bin"));

    const auto ft = root / "ft";
    const CmdResult fine = run_cmd("finetune --data " + paired.string() + " --ckpt " +
                                   ckpt.string() + " --out " + ft.string() +
                                   " --preset tiny --epochs 1 --batch 3 --sensors Sentinel-2" +
                                   " --bands Red,Green --seed 3");
    REQUIRE(fine.exit_code == 0);

    const auto metrics = root / "metrics.json";
    const CmdResult ev = run_cmd("evaluate --ckpt " + ft.string() + " --data " + paired.string() +
                                 " --out " + metrics.string());
    REQUIRE(ev.exit_code == 0);
    const std::string m = slurp(metrics);
    CHECK(m.find("macro_ap") != std::string::npos);
    CHECK(m.find("micro_ap") != std::string::npos);

    const auto recon = root / "recon";
    const CmdResult rc = run_cmd("reconstruct --ckpt " + ckpt.string() + " --data " +
                                 paired.string() + " --out " + recon.string() + " --n 1");
    REQUIRE(rc.exit_code == 0);
    int panels = 0;
    for (const auto& entry : fs::directory_iterator(recon)) {
        const auto ext = entry.path().extension();
        if (ext == ".ppm" || ext == ".pgm") ++panels;
    }
    CHECK(panels == 3); // one per spectral group
}
