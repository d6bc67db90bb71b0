#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tailor/embedding.hpp"
#include "tailor/image_io.hpp"

using namespace tailor;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Tiny dimensions keep subprocess runs fast.
const char* kTinyArgs =
    " --set latent_dim=16 --set width=32 --set height=64 --set depth=2"
    " --set n_train=8 --set n_test=4 --set batch_size=2 --set prompt_kinds=texture";

std::string cli_path() {
    return (fs::path(CLI_BINARY_PATH)).string();
}

int run_cli(const std::string& args) {
    const std::string cmd = cli_path() + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::size_t file_count(const fs::path& dir) {
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(dir)) {
        (void)e;
        ++n;
    }
    return n;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
}

}  // namespace

TEST(Cli, GenWritesImagePlusParsePerSample) {
    TempDir dir("tailor_cli_gen");
    ASSERT_EQ(run_cli("gen --count 1 --out " + dir.str() + kTinyArgs), 0);
    EXPECT_EQ(file_count(dir.path), 2u);  // image + parse map
    EXPECT_TRUE(fs::exists(dir.path / "sample_000000.ppm"));
    EXPECT_TRUE(fs::exists(dir.path / "sample_000000_parse.pgm"));
}

TEST(Cli, GenDeterministicBytes) {
    TempDir d1("tailor_cli_gen_a"), d2("tailor_cli_gen_b");
    ASSERT_EQ(run_cli("gen --count 2 --seed 9 --out " + d1.str() + kTinyArgs), 0);
    ASSERT_EQ(run_cli("gen --count 2 --seed 9 --out " + d2.str() + kTinyArgs), 0);
    for (const char* name : {"sample_000000.ppm", "sample_000001.ppm", "sample_000000_parse.pgm"}) {
        EXPECT_EQ(slurp(d1.path / name), slurp(d2.path / name)) << name;
    }
}

TEST(Cli, GenPsiZeroCollapsesAllSamples) {
    TempDir dir("tailor_cli_gen_psi0");
    ASSERT_EQ(run_cli("gen --count 3 --set psi=0 --out " + dir.str() + kTinyArgs), 0);
    const auto first = slurp(dir.path / "sample_000000.ppm");
    EXPECT_EQ(slurp(dir.path / "sample_000001.ppm"), first);
    EXPECT_EQ(slurp(dir.path / "sample_000002.ppm"), first);
}

TEST(Cli, TrainEditEvalPipeline) {
    TempDir train_dir("tailor_cli_train"), edit_dir("tailor_cli_edit"), eval_dir("tailor_cli_eval");
    ASSERT_EQ(run_cli("train --set steps=3 --out " + train_dir.str() + kTinyArgs), 0);
    ASSERT_TRUE(fs::exists(train_dir.path / "checkpoint.bin"));
    ASSERT_TRUE(fs::exists(train_dir.path / "metrics.ndjson"));

    // metrics log: one JSON record per step with the loss components
    {
        std::ifstream log(train_dir.path / "metrics.ndjson");
        std::string line;
        std::size_t lines = 0;
        while (std::getline(log, line)) {
            json j = json::parse(line);
            EXPECT_TRUE(j.contains("step"));
            EXPECT_TRUE(j.contains("clip"));
            EXPECT_TRUE(j.contains("total"));
            EXPECT_TRUE(j.contains("wall_ms"));
            ++lines;
        }
        EXPECT_EQ(lines, 3u);
    }

    const std::string ckpt = (train_dir.path / "checkpoint.bin").string();

    // mode none: exactly 2 files; feature: 4 (incl. mask)
    ASSERT_EQ(run_cli("edit --checkpoint " + ckpt +
                      " --prompt \"a human wearing red upper body clothes\" --mode none --out " +
                      edit_dir.str()),
              0);
    EXPECT_EQ(file_count(edit_dir.path), 2u);
    ASSERT_EQ(run_cli("edit --checkpoint " + ckpt +
                      " --prompt \"a human wearing red upper body clothes\" --mode feature --out " +
                      edit_dir.str()),
              0);
    EXPECT_EQ(file_count(edit_dir.path), 4u);
    EXPECT_TRUE(fs::exists(edit_dir.path / "edit_masked.ppm"));
    EXPECT_TRUE(fs::exists(edit_dir.path / "edit_mask.pgm"));

    ASSERT_EQ(run_cli("eval --checkpoint " + ckpt + " --n-test 3 --mode feature --out " +
                      eval_dir.str()),
              0);
    std::ifstream rep(eval_dir.path / "report.json");
    ASSERT_TRUE(rep.good());
    json j = json::parse(rep);
    EXPECT_GE(j["clip_acc"].get<double>(), 0.0);
    EXPECT_LE(j["clip_acc"].get<double>(), 100.0);
    EXPECT_GE(j["bg_dist_proj"].get<double>(), 0.0);
    EXPECT_EQ(j["samples"].size(), 3u);
    // aggregate equals recomputation from the per-sample records
    std::size_t hits = 0;
    for (const auto& s : j["samples"]) hits += s["hit"].get<bool>() ? 1 : 0;
    EXPECT_DOUBLE_EQ(j["clip_acc"].get<double>(), 100.0 * hits / 3.0);
}

TEST(Cli, UntrainedCheckpointEditIsIdentity) {
    TempDir train_dir("tailor_cli_train_id"), edit_dir("tailor_cli_edit_id");
    // zero optimizer steps are not allowed; one step with lr=0 keeps identity
    ASSERT_EQ(run_cli("train --set steps=1 --set lr=0.000000001 --out " + train_dir.str() +
                      kTinyArgs),
              0);
    const std::string ckpt = (train_dir.path / "checkpoint.bin").string();
    ASSERT_EQ(run_cli("edit --checkpoint " + ckpt +
                      " --prompt \"a human wearing a hoodie\" --mode none --out " + edit_dir.str()),
              0);
    Tensor original = read_ppm((edit_dir.path / "edit_original.ppm").string());
    Tensor raw = read_ppm((edit_dir.path / "edit_raw.ppm").string());
    // near-identity: one tiny step cannot move the 8-bit render
    std::size_t diff = 0;
    for (std::size_t i = 0; i < original.numel(); ++i) {
        if (original.at(i) != raw.at(i)) ++diff;
    }
    EXPECT_EQ(diff, 0u);
}

TEST(Cli, ExitCodes) {
    EXPECT_EQ(run_cli(""), 1);                          // missing subcommand
    EXPECT_EQ(run_cli("frobnicate"), 1);                // unknown subcommand
    EXPECT_EQ(run_cli("edit --prompt x"), 1);           // missing required option
    EXPECT_EQ(run_cli("eval --checkpoint /nonexistent.bin"), 2);  // runtime error
    TempDir dir("tailor_cli_badkey");
    EXPECT_EQ(run_cli("gen --count 1 --set no_such_key=1 --out " + dir.str()), 2);
}

TEST(Cli, ShippedLexiconParses) {
    Lexicon lex = Lexicon::load(std::string(PROJECT_SOURCE_DIR) + "/assets/lexicon.txt");
    Lexicon builtin = Lexicon::builtin();
    ASSERT_EQ(lex.shapes.size(), builtin.shapes.size());
    ASSERT_EQ(lex.textures.size(), builtin.textures.size());
    for (std::size_t i = 0; i < lex.textures.size(); ++i) {
        EXPECT_EQ(lex.textures[i].label, builtin.textures[i].label);
        for (int c = 0; c < 3; ++c) {
            EXPECT_DOUBLE_EQ(lex.textures[i].rgb[static_cast<std::size_t>(c)],
                             builtin.textures[i].rgb[static_cast<std::size_t>(c)]);
        }
    }
}

TEST(ImageIo, PpmRoundTrip) {
    Tensor img = Tensor::from({3, 2, 2}, {0.0, 0.25, 0.5, 1.0, 0.1, 0.2, 0.3, 0.4,
                                          0.9, 0.8, 0.7, 0.6});
    const std::string path = "/tmp/tailor_io_test.ppm";
    write_ppm(path, img);
    Tensor back = read_ppm(path);
    for (std::size_t i = 0; i < img.numel(); ++i) {
        EXPECT_NEAR(back.at(i), img.at(i), 0.5 / 255.0 + 1e-9);
    }
    std::remove(path.c_str());
}
