// End-to-end tests of the command-line binary: every subcommand plus the
// exit-code contract (0 ok, 2 validation/usage, 3 numeric failure).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "swinseg/checkpoint.hpp"
#include "swinseg/synthetic.hpp"
#include "swinseg/trainer.hpp"

using namespace swinseg;
namespace fs = std::filesystem;

namespace {

const std::string kCli = CLI_PATH;

struct TmpDir {
    fs::path path;
    TmpDir() : path(fs::temp_directory_path() /
                    ("swinseg_cli_" + std::to_string(::getpid()) + "_" +
                     std::to_string(counter++))) {
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static inline int counter = 0;
};

int run(const std::string& args, const std::string& out_file = "/dev/null") {
    const std::string cmd = kCli + " " + args + " > " + out_file + " 2>&1";
    const int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -2;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_toy_config(const std::string& path, int steps, uint64_t seed = 7) {
    TrainConfig cfg;
    cfg.model = ModelConfig::tiny();
    cfg.seed = seed;
    cfg.steps = steps;
    cfg.batch_size = 2;
    cfg.lr = 1e-3;
    cfg.val_every = std::max(2, steps / 2);
    cfg.val_count = 2;
    cfg.log_every = 1000;
    std::ofstream(path) << cfg.to_json();
}

}  // namespace

TEST_CASE("synth command reproduces the in-process synthetic pool") {
    TmpDir tmp;
    REQUIRE(run("synth --count 3 --out " + tmp.file("cases") + " --seed 11") == 0);

    DirDataset from_cli(tmp.file("cases"));
    SyntheticDataset direct(3, 11);
    REQUIRE(from_cli.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(from_cli.id(i) == direct.id(i));
        const CaseRecord a = from_cli.get(i), b = direct.get(i);
        CHECK(a.image.raw == b.image.raw);
        CHECK(a.gts->raw == b.gts->raw);
        CHECK(a.boxes[0].x2 == b.boxes[0].x2);
    }
}

TEST_CASE("profile command prints budgets and honors --config") {
    TmpDir tmp;
    REQUIRE(run("profile", tmp.file("full.txt")) == 0);
    const std::string full = slurp(tmp.file("full.txt"));
    CHECK(full.find("encoder 9.29M") != std::string::npos);
    CHECK(full.find("total 14.98M") != std::string::npos);

    std::ofstream(tmp.file("tiny.json")) << ModelConfig::tiny().to_json();
    REQUIRE(run("profile --config " + tmp.file("tiny.json"), tmp.file("tiny.txt")) == 0);
    CHECK(slurp(tmp.file("tiny.txt")).find("image size: 64") != std::string::npos);
}

TEST_CASE("distill, train, eval, and infer round-trip through the binary") {
    TmpDir tmp;
    REQUIRE(run("synth --count 5 --out " + tmp.file("cases") + " --seed 4") == 0);
    write_toy_config(tmp.file("toy.json"), 4);

    // Stage 1 against the frozen teacher.
    REQUIRE(run("distill --teacher frozen:9 --config " + tmp.file("toy.json") +
                " --data synthetic:4 --out " + tmp.file("distilled.npz")) == 0);
    REQUIRE(fs::exists(tmp.file("distilled.npz")));

    // Stage 2 starting from the distilled weights.
    REQUIRE(run("train --config " + tmp.file("toy.json") + " --data synthetic:6 --init " +
                tmp.file("distilled.npz") + " --out " + tmp.file("model.npz")) == 0);
    ParamStore<float> trained;
    const CheckpointMeta meta = load_checkpoint(tmp.file("model.npz"), trained, nullptr);
    CHECK(meta.step == 4);
    CHECK(trained.config() == ModelConfig::tiny());

    // Evaluation writes one CSV row per case.
    REQUIRE(run("eval --model " + tmp.file("model.npz") + " --data " + tmp.file("cases") +
                " --report " + tmp.file("report.csv") + " --seed 3") == 0);
    const std::string csv = slurp(tmp.file("report.csv"));
    CHECK(csv.rfind("case_id,dsc,nsd,seconds", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);  // header + 5 cases

    // Inference writes one mask archive per case, same spatial shape, u8.
    REQUIRE(run("infer --model " + tmp.file("model.npz") + " --input " + tmp.file("cases") +
                " --output " + tmp.file("masks") + " --seed 3 --mode box+points") == 0);
    for (int i = 0; i < 5; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "synth_%06d.npz", i);
        const Npz out = npz_read_file((fs::path(tmp.file("masks")) / name).string());
        REQUIRE(out.items.size() == 1);
        CHECK(out.items[0].first == "segs");
        CHECK(out.items[0].second.shape == Shape{256, 256});
        CHECK(out.items[0].second.dtype == NpyArray::Dtype::U8);
    }

    // Inference is bitwise reproducible for a fixed seed.
    REQUIRE(run("infer --model " + tmp.file("model.npz") + " --input " + tmp.file("cases") +
                " --output " + tmp.file("masks2") + " --seed 3 --mode box+points") == 0);
    CHECK(read_file_bytes(tmp.file("masks") + "/synth_000002.npz") ==
          read_file_bytes(tmp.file("masks2") + "/synth_000002.npz"));
}

TEST_CASE("inference handles volumes slice by slice") {
    TmpDir tmp;
    const int64_t d = 3, h = 32, w = 32;
    std::vector<float> img(static_cast<size_t>(d) * h * w, 0.1f);
    std::vector<uint8_t> gts(img.size(), 0);
    for (int64_t z = 0; z < d; ++z)
        for (int64_t y = 10; y < 22; ++y)
            for (int64_t x = 8; x < 24; ++x) {
                img[(z * h + y) * w + x] = 0.9f;
                gts[(z * h + y) * w + x] = 1;
            }
    Npz vol;
    vol.add("imgs", make_npy_f32({d, h, w}, img));
    vol.add("gts", make_npy_u8({d, h, w}, gts));
    vol.add("boxes", make_npy_f64({1, 4}, {8.0, 10.0, 24.0, 22.0}));
    fs::create_directories(tmp.file("vol"));
    npz_write_file(tmp.file("vol/case3d.npz"), vol);

    write_toy_config(tmp.file("toy.json"), 2);
    REQUIRE(run("train --config " + tmp.file("toy.json") + " --data synthetic:4 --out " +
                tmp.file("m.npz")) == 0);
    REQUIRE(run("infer --model " + tmp.file("m.npz") + " --input " + tmp.file("vol") +
                " --output " + tmp.file("out")) == 0);
    const Npz out = npz_read_file(tmp.file("out/case3d.npz"));
    REQUIRE(out.items.size() == 1);
    CHECK(out.items[0].second.shape == Shape{d, h, w});
}

TEST_CASE("usage and validation failures exit with code 2") {
    TmpDir tmp;
    CHECK(run("") == 2);                       // missing subcommand
    CHECK(run("launder") == 2);                // unknown subcommand
    CHECK(run("synth --out /tmp/x") == 2);     // missing required --count
    CHECK(run("synth --count 0 --out " + tmp.file("c")) == 2);
    CHECK(run("profile --config /no/such.json") == 2);

    std::ofstream(tmp.file("bad.json")) << "{not json";
    CHECK(run("train --config " + tmp.file("bad.json") + " --data synthetic:2 --out " +
              tmp.file("o.npz")) == 2);

    write_toy_config(tmp.file("toy.json"), 2);
    CHECK(run("train --config " + tmp.file("toy.json") + " --data /no/such/dir --out " +
              tmp.file("o.npz")) == 2);
    CHECK(run("eval --model /no/such.npz --data synthetic:2 --report " +
              tmp.file("r.csv")) == 2);
    CHECK(run("distill --teacher /no/such/dir --config " + tmp.file("toy.json") +
              " --out " + tmp.file("o.npz")) == 2);
    CHECK(run("infer --model /no/such.npz --input " + tmp.file("nowhere") + " --output " +
              tmp.file("out")) == 2);
}

TEST_CASE("non-finite model outputs exit with code 3") {
    TmpDir tmp;
    ParamStore<float> store(ModelConfig::tiny());
    store.init(1);
    store.at("iou.fc1.w")->data[0] = std::numeric_limits<float>::quiet_NaN();
    save_checkpoint(tmp.file("nan.npz"), store, nullptr, CheckpointMeta{});

    REQUIRE(run("synth --count 1 --out " + tmp.file("cases")) == 0);
    CHECK(run("infer --model " + tmp.file("nan.npz") + " --input " + tmp.file("cases") +
              " --output " + tmp.file("out")) == 3);
}
