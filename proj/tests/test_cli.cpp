#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "depthforge/acw.hpp"
#include "depthforge/datagen.hpp"
#include "depthforge/model3d.hpp"
#include "test_support.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>

using namespace depthforge;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;
};

const char* binary() {
    const char* bin = std::getenv("DEPTHFORGE_BIN");
    REQUIRE_MESSAGE(bin != nullptr, "DEPTHFORGE_BIN must point at the CLI binary");
    return bin;
}

RunResult run_cli(const std::string& args) {
    const std::string cmd = std::string(binary()) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    RunResult result;
    char buf[4096];
    while (size_t n = fread(buf, 1, sizeof buf, pipe)) result.output.append(buf, n);
    const int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

} // namespace

TEST_CASE("toy-model writes a loadable model and is seed-deterministic") {
    testutil::TempDir dir("cli_toy_model");
    const std::string m1 = dir.file("a.mdl1");
    const RunResult r =
        run_cli("toy-model --out " + m1 + " --seed 11 --v-rings 8 --k-id 3 --k-exp 2");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("V=") != std::string::npos);
    CHECK(r.output.find("K_id=3") != std::string::npos);

    const MorphableModel model = load_model(m1);
    CHECK(model.n_id == 3);
    CHECK(model.n_exp == 2);

    const std::string m2 = dir.file("b.mdl1");
    run_cli("toy-model --out " + m2 + " --seed 11 --v-rings 8 --k-id 3 --k-exp 2");
    CHECK(testutil::read_file(m1) == testutil::read_file(m2));

    const std::string m3 = dir.file("c.mdl1");
    run_cli("toy-model --out " + m3 + " --seed 12 --v-rings 8 --k-id 3 --k-exp 2");
    CHECK(testutil::read_file(m1) != testutil::read_file(m3));
}

TEST_CASE("toy-model rejects v-rings below 4 with a usage hint") {
    testutil::TempDir dir("cli_toy_model_bad");
    const RunResult r =
        run_cli("toy-model --out " + dir.file("x.mdl1") + " --seed 1 --v-rings 2");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("--v-rings") != std::string::npos);

    // Missing required --seed is also a usage error.
    const RunResult no_seed = run_cli("toy-model --out " + dir.file("y.mdl1"));
    CHECK(no_seed.exit_code == 2);
}

TEST_CASE("generate renders the dataset, prints counts, and verifies clean") {
    testutil::TempDir dir("cli_generate");
    const std::string model_path = dir.file("m.mdl1");
    run_cli("toy-model --out " + model_path + " --seed 3 --v-rings 10 --k-id 3 --k-exp 2");

    const std::string base = "generate --model " + model_path + " --seed 9 " +
                             "--identities 2 --expressions 2 --res 64 --focal 90";
    const RunResult r = run_cli(base + " --out " + dir.file("d1") + " --verify");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("depth images: 72") != std::string::npos); // 2*3*12
    CHECK(r.output.find("normal images: 72") != std::string::npos);
    CHECK(r.output.find("images/s") != std::string::npos);
    CHECK(r.output.find(" 0 violations") != std::string::npos);
    CHECK(std::filesystem::exists(dir.file("d1/manifest.json")));

    // Re-running with the same seed at a different thread count reproduces
    // the tree bit-for-bit.
    const RunResult r2 = run_cli(base + " --out " + dir.file("d2") + " --threads 3");
    CHECK(r2.exit_code == 0);
    auto t1 = testutil::snapshot_tree(dir.file("d1"));
    auto t2 = testutil::snapshot_tree(dir.file("d2"));
    // The manifests differ only in their out_dir echo.
    t1.erase("manifest.json");
    t2.erase("manifest.json");
    CHECK(t1 == t2);

    // Expressions 0 renders identities x 12 neutral images.
    const RunResult r3 = run_cli("generate --model " + model_path + " --seed 9 " +
                                 "--identities 2 --expressions 0 --res 64 --focal 90" +
                                 " --out " + dir.file("d3"));
    CHECK(r3.exit_code == 0);
    CHECK(r3.output.find("depth images: 24") != std::string::npos);

    // A missing model file is a runtime error.
    const RunResult bad = run_cli("generate --model " + dir.file("nope.mdl1") +
                                  " --seed 1 --out " + dir.file("d4"));
    CHECK(bad.exit_code == 1);
}

TEST_CASE("generate defaults reproduce the reference dataset scale") {
    // 10 identities x (1 + 40 expressions) x 12 poses = 4920 images.
    testutil::TempDir dir("cli_generate_scale");
    run_cli("toy-model --out " + dir.file("m.mdl1") + " --seed 1");
    const RunResult r = run_cli("generate --model " + dir.file("m.mdl1") +
                                " --seed 42 --threads 2 --out " + dir.file("d"));
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("depth images: 4920") != std::string::npos);
}

TEST_CASE("toy-data writes the protocol files deterministically") {
    testutil::TempDir dir("cli_toy_data");
    const std::string base =
        "toy-data --seed 5 --classes 6 --dim 12 --samples 4 --corrupt-fraction 0.25";
    const RunResult r = run_cli(base + " --out " + dir.file("p1"));
    CHECK(r.exit_code == 0);
    for (const char* name :
         {"gallery_rgb.emb1", "gallery_depth.emb1", "probe_rgb.emb1",
          "probe_depth.emb1", "train_rgb.emb1", "train_depth.emb1",
          "probe_tags.csv", "train_tags.csv"})
        CHECK(std::filesystem::exists(dir.file(std::string("p1/") + name)));

    const EmbeddingSet gallery = load_embeddings(dir.file("p1/gallery_rgb.emb1"));
    CHECK(gallery.count() == 6);
    CHECK(gallery.dim == 12);
    const EmbeddingSet probes = load_embeddings(dir.file("p1/probe_depth.emb1"));
    CHECK(probes.count() == 6 * 4);

    run_cli(base + " --out " + dir.file("p2"));
    CHECK(testutil::snapshot_tree(dir.file("p1")) ==
          testutil::snapshot_tree(dir.file("p2")));

    const RunResult bad = run_cli("toy-data --seed 5 --corrupt-fraction 1.5 --out " +
                                  dir.file("p3"));
    CHECK(bad.exit_code == 2);
    CHECK(bad.output.find("--corrupt-fraction") != std::string::npos);
}

TEST_CASE("train-acw trains heads, logs 20 epochs, and handles lr=0") {
    testutil::TempDir dir("cli_train");
    run_cli("toy-data --seed 5 --classes 6 --dim 12 --samples 4 --out " + dir.file("p"));

    const std::string files = " --train-rgb " + dir.file("p/train_rgb.emb1") +
                              " --train-depth " + dir.file("p/train_depth.emb1") +
                              " --gallery-rgb " + dir.file("p/gallery_rgb.emb1") +
                              " --gallery-depth " + dir.file("p/gallery_depth.emb1");
    const RunResult r =
        run_cli("train-acw" + files + " --seed 2 --batch 64 --out " + dir.file("t1"));
    CHECK(r.exit_code == 0);
    CHECK(std::filesystem::exists(dir.file("t1/acw_rgb.acw1")));
    CHECK(std::filesystem::exists(dir.file("t1/acw_depth.acw1")));

    // Default epochs is 20, giving 20 loss rows after the header.
    std::ifstream loss(dir.file("t1/loss.csv"));
    std::string line;
    size_t rows = 0;
    REQUIRE(std::getline(loss, line));
    CHECK(line == "epoch,mean_loss");
    while (std::getline(loss, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 20);

    // lr = 0 leaves the heads at their seeded initialization regardless of
    // the epoch count.
    run_cli("train-acw" + files + " --seed 2 --batch 64 --lr 0 --epochs 1 --out " +
            dir.file("t2"));
    run_cli("train-acw" + files + " --seed 2 --batch 64 --lr 0 --epochs 20 --out " +
            dir.file("t3"));
    CHECK(testutil::read_file(dir.file("t2/acw_rgb.acw1")) ==
          testutil::read_file(dir.file("t3/acw_rgb.acw1")));
    CHECK(testutil::read_file(dir.file("t2/acw_depth.acw1")) ==
          testutil::read_file(dir.file("t3/acw_depth.acw1")));
    // ...and trained heads differ from the initialization.
    CHECK(testutil::read_file(dir.file("t1/acw_rgb.acw1")) !=
          testutil::read_file(dir.file("t2/acw_rgb.acw1")));

    // Declaring a depth training file without its gallery names the
    // missing modality input.
    const RunResult missing = run_cli(
        "train-acw --train-rgb " + dir.file("p/train_rgb.emb1") + " --train-depth " +
        dir.file("p/train_depth.emb1") + " --gallery-rgb " +
        dir.file("p/gallery_rgb.emb1") + " --seed 2 --out " + dir.file("t4"));
    CHECK(missing.exit_code == 2);
    CHECK(missing.output.find("gallery-depth") != std::string::npos);

    // A nonexistent depth file is a runtime error naming the modality.
    const RunResult gone = run_cli(
        "train-acw --train-rgb " + dir.file("p/train_rgb.emb1") + " --train-depth " +
        dir.file("p/missing.emb1") + " --gallery-rgb " + dir.file("p/gallery_rgb.emb1") +
        " --gallery-depth " + dir.file("p/gallery_depth.emb1") + " --seed 2 --out " +
        dir.file("t5"));
    CHECK(gone.exit_code == 1);
    CHECK(gone.output.find("depth") != std::string::npos);
}

TEST_CASE("evaluate runs all fusion modes and the missing-modality path") {
    testutil::TempDir dir("cli_eval");
    run_cli("toy-data --seed 5 --classes 6 --dim 12 --samples 4 --out " + dir.file("p"));
    run_cli("train-acw --train-rgb " + dir.file("p/train_rgb.emb1") +
            " --train-depth " + dir.file("p/train_depth.emb1") + " --gallery-rgb " +
            dir.file("p/gallery_rgb.emb1") + " --gallery-depth " +
            dir.file("p/gallery_depth.emb1") + " --seed 2 --batch 64 --out " +
            dir.file("t"));

    const std::string pairs = " --gallery-rgb " + dir.file("p/gallery_rgb.emb1") +
                              " --probe-rgb " + dir.file("p/probe_rgb.emb1") +
                              " --gallery-depth " + dir.file("p/gallery_depth.emb1") +
                              " --probe-depth " + dir.file("p/probe_depth.emb1") +
                              " --tags " + dir.file("p/probe_tags.csv");

    const RunResult acw = run_cli("evaluate" + pairs + " --mode acw --head-rgb " +
                                  dir.file("t/acw_rgb.acw1") + " --head-depth " +
                                  dir.file("t/acw_depth.acw1") + " --out " +
                                  dir.file("acw_report"));
    CHECK(acw.exit_code == 0);
    CHECK(std::filesystem::exists(dir.file("acw_report.json")));
    CHECK(std::filesystem::exists(dir.file("acw_report.txt")));
    CHECK(acw.output.find("overall") != std::string::npos);

    // fixed(1,0) equals single(rgb), report for report.
    const RunResult fixed10 = run_cli("evaluate" + pairs +
                                      " --mode fixed --weights 1,0 --out " +
                                      dir.file("fixed_report"));
    CHECK(fixed10.exit_code == 0);
    const RunResult single_rgb = run_cli("evaluate" + pairs +
                                         " --mode single --modality rgb --out " +
                                         dir.file("single_report"));
    CHECK(single_rgb.exit_code == 0);

    using nlohmann::json;
    json fixed_json, single_json;
    std::ifstream(dir.file("fixed_report.json")) >> fixed_json;
    std::ifstream(dir.file("single_report.json")) >> single_json;
    CHECK(fixed_json.at("overall_rank1") == single_json.at("overall_rank1"));
    REQUIRE(fixed_json.at("probes").size() == single_json.at("probes").size());
    for (size_t i = 0; i < fixed_json.at("probes").size(); ++i)
        CHECK(fixed_json.at("probes")[i].at("prediction") ==
              single_json.at("probes")[i].at("prediction"));

    // Missing-modality path: evaluate with only the depth pair present.
    const RunResult depth_only = run_cli(
        "evaluate --gallery-depth " + dir.file("p/gallery_depth.emb1") +
        " --probe-depth " + dir.file("p/probe_depth.emb1") +
        " --mode single --modality depth --out " + dir.file("depth_report"));
    CHECK(depth_only.exit_code == 0);

    // acw mode without a head is a config error.
    const RunResult no_head = run_cli("evaluate" + pairs + " --mode acw --out " +
                                      dir.file("x"));
    CHECK(no_head.exit_code == 2);
    CHECK(no_head.output.find("--head-") != std::string::npos);

    const RunResult bad_mode = run_cli("evaluate" + pairs + " --mode nonsense --out " +
                                       dir.file("y"));
    CHECK(bad_mode.exit_code == 2);
}

TEST_CASE("train-acw is bit-deterministic in the seed") {
    testutil::TempDir dir("cli_train_det");
    run_cli("toy-data --seed 5 --classes 6 --dim 12 --samples 4 --out " + dir.file("p"));
    const std::string files = " --train-rgb " + dir.file("p/train_rgb.emb1") +
                              " --train-depth " + dir.file("p/train_depth.emb1") +
                              " --gallery-rgb " + dir.file("p/gallery_rgb.emb1") +
                              " --gallery-depth " + dir.file("p/gallery_depth.emb1") +
                              " --seed 2 --batch 64 --epochs 5";
    run_cli("train-acw" + files + " --out " + dir.file("a"));
    run_cli("train-acw" + files + " --out " + dir.file("b"));
    CHECK(testutil::snapshot_tree(dir.file("a")) == testutil::snapshot_tree(dir.file("b")));

    run_cli("train-acw" + files + " --seed 3 --out " + dir.file("c"));
    CHECK(testutil::read_file(dir.file("a/acw_rgb.acw1")) !=
          testutil::read_file(dir.file("c/acw_rgb.acw1")));
}

TEST_CASE("end-to-end: acw beats fixed-equal fusion on the standard toy seed") {
    testutil::TempDir dir("cli_margin");
    // Standard protocol (classes 50, dim 64, samples 20, seed 7) and
    // default training; the margin below matches the acceptance suite.
    run_cli("toy-data --seed 7 --out " + dir.file("p"));
    const RunResult trained = run_cli(
        "train-acw --train-rgb " + dir.file("p/train_rgb.emb1") + " --train-depth " +
        dir.file("p/train_depth.emb1") + " --gallery-rgb " +
        dir.file("p/gallery_rgb.emb1") + " --gallery-depth " +
        dir.file("p/gallery_depth.emb1") + " --seed 7 --out " + dir.file("t"));
    REQUIRE(trained.exit_code == 0);

    const std::string pairs = " --gallery-rgb " + dir.file("p/gallery_rgb.emb1") +
                              " --probe-rgb " + dir.file("p/probe_rgb.emb1") +
                              " --gallery-depth " + dir.file("p/gallery_depth.emb1") +
                              " --probe-depth " + dir.file("p/probe_depth.emb1") +
                              " --tags " + dir.file("p/probe_tags.csv");
    REQUIRE(run_cli("evaluate" + pairs + " --mode acw --head-rgb " +
                    dir.file("t/acw_rgb.acw1") + " --head-depth " +
                    dir.file("t/acw_depth.acw1") + " --out " + dir.file("acw"))
                .exit_code == 0);
    REQUIRE(run_cli("evaluate" + pairs + " --mode fixed --weights 1,1 --out " +
                    dir.file("fixed"))
                .exit_code == 0);

    using nlohmann::json;
    json acw_json, fixed_json;
    std::ifstream(dir.file("acw.json")) >> acw_json;
    std::ifstream(dir.file("fixed.json")) >> fixed_json;
    const double acw = acw_json.at("overall_rank1").get<double>();
    const double fixed = fixed_json.at("overall_rank1").get<double>();
    CHECK(acw >= fixed + 1.0);
}

TEST_CASE("JSON config merges under explicit flags and rejects unknown keys") {
    testutil::TempDir dir("cli_config");
    {
        std::ofstream cfg(dir.file("toy.json"));
        cfg << R"({"seed": 11, "v-rings": 8, "k-id": 3, "k-exp": 2})";
    }
    const std::string out = dir.file("from_config.mdl1");
    const RunResult r =
        run_cli("toy-model --config " + dir.file("toy.json") + " --out " + out);
    CHECK(r.exit_code == 0);

    // Identical to passing everything on the command line.
    const std::string direct = dir.file("direct.mdl1");
    run_cli("toy-model --out " + direct + " --seed 11 --v-rings 8 --k-id 3 --k-exp 2");
    CHECK(testutil::read_file(out) == testutil::read_file(direct));

    // An explicit flag wins over the config value.
    const std::string override_path = dir.file("override.mdl1");
    run_cli("toy-model --config " + dir.file("toy.json") + " --seed 99 --out " +
            override_path);
    const std::string direct99 = dir.file("direct99.mdl1");
    run_cli("toy-model --out " + direct99 + " --seed 99 --v-rings 8 --k-id 3 --k-exp 2");
    CHECK(testutil::read_file(override_path) == testutil::read_file(direct99));

    // Unknown keys are rejected by name.
    {
        std::ofstream cfg(dir.file("bad.json"));
        cfg << R"({"seed": 11, "v_rings": 8})"; // underscore typo
    }
    const RunResult bad =
        run_cli("toy-model --config " + dir.file("bad.json") + " --out " + dir.file("z.mdl1"));
    CHECK(bad.exit_code == 2);
    CHECK(bad.output.find("v_rings") != std::string::npos);

    const RunResult gone = run_cli("toy-model --config " + dir.file("missing.json") +
                                   " --out " + dir.file("w.mdl1"));
    CHECK(gone.exit_code == 2);
}

TEST_CASE("DEPTHFORGE_THREADS env feeds the generate thread pool") {
    testutil::TempDir dir("cli_env");
    run_cli("toy-model --out " + dir.file("m.mdl1") + " --seed 3 --v-rings 8");
    const std::string cmd = "DEPTHFORGE_THREADS=2 " + std::string(binary()) +
                            " generate --model " + dir.file("m.mdl1") +
                            " --seed 4 --identities 2 --expressions 0 --res 32" +
                            " --focal 45 --out " + dir.file("d") + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string output;
    char buf[4096];
    while (size_t n = fread(buf, 1, sizeof buf, pipe)) output.append(buf, n);
    const int status = pclose(pipe);
    CHECK(WIFEXITED(status));
    CHECK(WEXITSTATUS(status) == 0);
    CHECK(output.find("depth images: 24") != std::string::npos);
}
