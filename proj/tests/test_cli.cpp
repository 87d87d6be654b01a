#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "kronmri/kronmri.hpp"

using namespace kronmri;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
    int code;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

/// Runs the CLI with stdout and stderr captured to files.
Result run(const std::string& args) {
    static int counter = 0;
    const fs::path base = fs::temp_directory_path() / ("kronmri_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    const std::string cmd = std::string(KRONMRI_CLI) + " " + args + " >" + base.string() + ".out 2>" + base.string() + ".err";
    const int status = std::system(cmd.c_str());
    Result r{WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(base.string() + ".out"), slurp(base.string() + ".err")};
    fs::remove(base.string() + ".out");
    fs::remove(base.string() + ".err");
    return r;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& f) const { return (path / f).string(); }
};

json error_json(const Result& r) { return json::parse(r.err.substr(0, r.err.find('\n'))); }

}  // namespace

class HelpSnapshot : public ::testing::TestWithParam<std::string> {};

TEST_P(HelpSnapshot, MatchesGoldenFile) {
    const std::string cmd = GetParam();
    const Result r = run(cmd == "main" ? "--help" : cmd + " --help");
    EXPECT_EQ(r.code, 0);
    const fs::path golden = fs::path(KRONMRI_GOLDEN_DIR) / ("help_" + cmd + ".txt");
    ASSERT_TRUE(fs::exists(golden)) << golden;
    EXPECT_EQ(r.out, slurp(golden));
}

INSTANTIATE_TEST_SUITE_P(Commands, HelpSnapshot,
                         ::testing::Values("main", "gen-data", "gen-mask", "train", "reconstruct", "metrics",
                                           "count-params", "verify-algebra", "grad-check", "bench"),
                         [](const auto& info) {
                             std::string s = info.param;
                             for (auto& c : s)
                                 if (c == '-') c = '_';
                             return s;
                         });

TEST(Cli, HelpListsEveryFlagWithDefaults) {
    const Result r = run("gen-data --help");
    for (const char* flag : {"--seed", "--count", "--height", "--width", "--ellipses", "--af", "--center-fraction", "--out"})
        EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
    EXPECT_NE(r.out.find("[8]"), std::string::npos);
}

TEST(Cli, GenDataIsByteIdenticalAcrossRuns) {
    TempDir a("kronmri_cli_gd_a"), b("kronmri_cli_gd_b");
    ASSERT_EQ(run("gen-data --seed 7 --count 2 --height 32 --width 32 --out " + a.path.string()).code, 0);
    ASSERT_EQ(run("gen-data --seed 7 --count 2 --height 32 --width 32 --out " + b.path.string()).code, 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(a.path)) {
        EXPECT_EQ(slurp(e.path()), slurp(b.path / e.path().filename())) << e.path();
        ++files;
    }
    EXPECT_EQ(files, 8u);
    const auto img = load_kten<float>(a / "image_0001.kten");
    EXPECT_EQ(img.shape(), (Shape{2, 32, 32}));
}

TEST(Cli, GenMaskReportsCenterBlock) {
    const Result r = run("gen-mask --seed 3 --width 320 --af 8");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = json::parse(r.out);
    EXPECT_EQ(j["center_cols"], 13);
    EXPECT_EQ(j["pattern"].get<std::string>().size(), 320u);
    const std::string pattern = j["pattern"];
    for (std::size_t c = j["center_start"]; c < j["center_start"].get<std::size_t>() + 13; ++c) EXPECT_EQ(pattern[c], '1');
}

TEST(Cli, ReconstructZeroFilledPassThroughIsBitExact) {
    TempDir d("kronmri_cli_recon");
    ASSERT_EQ(run("gen-data --seed 1 --count 1 --height 32 --width 32 --out " + d.path.string()).code, 0);
    const Result r = run("reconstruct --input " + (d / "kspace_0000.kten") + " --truth " + (d / "image_0000.kten") +
                         " --out " + (d / "out"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto k = load_kten<float>(d / "kspace_0000.kten");
    EXPECT_EQ(load_kten<float>(d / "out/recon.kten"), zero_filled(k));
    EXPECT_TRUE(fs::exists(d / "out/recon.pgm"));
    const auto m = json::parse(slurp(d / "out/metrics.json"));
    EXPECT_EQ(m["psnr_db"], m["zero_filled_psnr_db"]);
}

TEST(Cli, ReconstructWithUntrainedCheckpointRoundTripsShapes) {
    TempDir d("kronmri_cli_recon_ckpt");
    Rng rng(2);
    UNetConfig u;
    u.channel_multiples = {1, 2};
    u.base_channels = 4;
    auto net = build_unet<float>(u, rng);
    save_checkpoint(d.path / "ckpt", net);
    const auto image = gen_phantom<float>(16, 16, 3, rng);
    save_kten(d.path / "k.kten", fft2c(image));
    const Result r = run("reconstruct --checkpoint " + (d / "ckpt") + " --input " + (d / "k.kten") + " --out " + (d / "o"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto recon = load_kten<float>(d / "o/recon.kten");
    EXPECT_EQ(recon.shape(), image.shape());
    EXPECT_EQ(recon, unet_apply(net, zero_filled(fft2c(image))));

    save_kten(d.path / "odd.kten", Tensor<float>({2, 15, 15}));
    const Result bad = run("reconstruct --checkpoint " + (d / "ckpt") + " --input " + (d / "odd.kten"));
    EXPECT_EQ(bad.code, 2);
    EXPECT_EQ(error_json(bad)["error"], "config_error");
}

TEST(Cli, MetricsRecordsAndSummary) {
    TempDir d("kronmri_cli_metrics");
    Rng rng(3);
    const auto a = gen_phantom<float>(16, 16, 3, rng), b = gen_phantom<float>(16, 16, 3, rng);
    save_kten(d.path / "a.kten", a);
    save_kten(d.path / "b.kten", b);
    const Result r = run("metrics --pred " + (d / "a.kten") + " " + (d / "b.kten") + " --truth " + (d / "a.kten") + " " +
                         (d / "a.kten"));
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream lines(r.out);
    std::string line;
    std::vector<json> records;
    while (std::getline(lines, line)) records.push_back(json::parse(line));
    ASSERT_EQ(records.size(), 3u);
    EXPECT_EQ(records[0]["sample_id"], 0);
    EXPECT_EQ(records[0]["psnr_db"], "inf");
    EXPECT_EQ(records[0]["ssim"], 1.0);
    const auto m = complex_image_metrics(b, a);
    EXPECT_NEAR(records[1]["psnr_db"].get<double>(), m.psnr_db, 1e-9);
    EXPECT_EQ(records[2]["summary"]["count"], 2);
    EXPECT_NEAR(records[2]["summary"]["ssim_mean"].get<double>(), (1.0 + m.ssim) / 2, 1e-12);
}

TEST(Cli, CountParamsTotalsMatchParamCount) {
    const Result r = run("count-params --format json");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = json::parse(r.out);
    UNetConfig full;
    EXPECT_EQ(j["total"]["model"], unet_param_count(full));
    full.layer_kind = LayerKind::dense;
    EXPECT_EQ(j["total"]["dense"], unet_param_count(full));
    std::size_t sum = 0;
    for (const auto& l : j["layers"]) sum += l["model"].get<std::size_t>();
    EXPECT_EQ(sum, j["total"]["model"]);
}

TEST(Cli, CountParamsDenseConfigHasRatioOne) {
    TempDir d("kronmri_cli_count");
    write_text_file(d.path / "dense.json", R"({"layer_kind": "dense", "base_channels": 16})");
    const Result r = run("count-params --format json --config " + (d / "dense.json"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(json::parse(r.out)["total"]["ratio"], 1.0);
}

TEST(Cli, CountParamsAttentionStackN4BelowN2) {
    TempDir d("kronmri_cli_attn");
    write_text_file(d.path / "a.json", R"({"attention": {"embed_dim": 16, "heads": 2, "window": 4}, "blocks": 2})");
    auto ratio = [&](int n) {
        const Result r = run("count-params --format json --n " + std::to_string(n) + " --config " + (d / "a.json"));
        EXPECT_EQ(r.code, 0) << r.err;
        return json::parse(r.out)["total"]["ratio"].get<double>();
    };
    EXPECT_LT(ratio(4), ratio(2));
    EXPECT_LT(ratio(2), 1.0);
}

TEST(Cli, MalformedConfigNamesPathAndField) {
    TempDir d("kronmri_cli_badcfg");
    write_text_file(d.path / "bad.json", R"({"base_channels": "wide"})");
    const Result r = run("count-params --config " + (d / "bad.json"));
    EXPECT_EQ(r.code, 2);
    const auto e = error_json(r);
    EXPECT_EQ(e["error"], "config_error");
    const std::string msg = e["message"];
    EXPECT_NE(msg.find("bad.json"), std::string::npos);
    EXPECT_NE(msg.find("base_channels"), std::string::npos);
}

TEST(Cli, VerifyAlgebraReportsPass) {
    const Result r = run("verify-algebra --trials 50");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = json::parse(r.out);
    EXPECT_TRUE(j["passed"].get<bool>());
    EXPECT_EQ(j["algebras"].size(), 3u);
    EXPECT_EQ(j["algebras"][2]["preset"], "quaternion");
}

TEST(Cli, GradCheckSingleTarget) {
    const Result r = run("grad-check --target kron-linear");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(json::parse(r.out)["passed"].get<bool>());
    EXPECT_EQ(run("grad-check --target nope").code, 2);
}

TEST(Cli, BenchCsvCountsAreExactAndDeterministic) {
    const std::string args = "bench --shapes linear:64x32 --n 2 --repetitions 3 --batch 4";
    const Result r = run(args);
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream lines(r.out);
    std::string header, dense, kron;
    std::getline(lines, header);
    std::getline(lines, dense);
    std::getline(lines, kron);
    EXPECT_EQ(header, "layer,kind,n,params,wall_time_s,macs");
    auto fields = [](const std::string& s) {
        std::vector<std::string> f;
        std::stringstream ss(s);
        std::string x;
        while (std::getline(ss, x, ',')) f.push_back(x);
        return f;
    };
    const auto fd = fields(dense), fk = fields(kron);
    EXPECT_EQ(fd[3], std::to_string(dense_linear_count(64, 32)));
    EXPECT_EQ(fk[3], std::to_string(kron_linear_count(64, 32, 2)));
    EXPECT_EQ(fd[5], std::to_string(4 * 64 * 32));
    EXPECT_EQ(fk[5], std::to_string(4 * 64 * 32 + 2 * 32 * 64));
    std::istringstream rerun(run(args).out);
    std::string line;
    for (int i = 0; i < 3; ++i) std::getline(rerun, line);
    const auto again = fields(line);
    EXPECT_EQ(again[5], fk[5]);
    EXPECT_EQ(run("bench --repetitions 2").code, 2);
}

TEST(Cli, ErrorsAreJsonOnStderrWithExitCodes) {
    Result r = run("gen-mask --af 4");
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(error_json(r)["error"], "config_error");
    r = run("reconstruct --input /nonexistent/k.kten");
    EXPECT_EQ(r.code, 4);
    EXPECT_EQ(error_json(r)["error"], "io_error");
    r = run("train --bogus");
    EXPECT_EQ(r.code, 2);
    r = run("");
    EXPECT_EQ(r.code, 2);
}

TEST(Cli, TrainWritesHistoryCheckpointAndSummary) {
    TempDir d("kronmri_cli_train");
    const Result r = run("train --steps 3 --batch 2 --dataset-size 2 --eval-size 1 --eval-every 0 --size 16 --base 4 "
                         "--multiples 1,2 --lr 1e-3 --seed 5 --out " + d.path.string());
    ASSERT_EQ(r.code, 0) << r.err;
    const auto summary = json::parse(slurp(d / "summary.json"));
    EXPECT_TRUE(summary.contains("psnr_gain_db"));
    const auto net = load_checkpoint<float>(d / "checkpoint");
    EXPECT_EQ(summary["param_count"], param_count(net));
    std::istringstream hist(slurp(d / "history.jsonl"));
    std::string line;
    std::size_t lines = 0;
    while (std::getline(hist, line)) ++lines;
    EXPECT_EQ(lines, 3u);
}
