#include <cstdio>
#include <cstdlib>
#include <doctest.h>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "vsf/config.hpp"
#include "vsf/eval.hpp"
#include "vsf/util.hpp"

using namespace vsf;
namespace fs = std::filesystem;

namespace {

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

struct CommandResult {
    int exit_code = -1;
    std::string output;
};

// Runs the CLI binary (path from the VSF_CLI environment variable) and
// captures stdout+stderr.
CommandResult run_cli(const std::string& args) {
    const char* cli = std::getenv("VSF_CLI");
    REQUIRE_MESSAGE(cli != nullptr, "VSF_CLI must point at the vsf binary");
    const std::string cmd = std::string(cli) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CommandResult res;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) {
        res.output.append(buf, n);
        if (n < sizeof(buf)) break;
    }
    const int status = pclose(pipe);
    res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return res;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("empty config file yields all defaults") {
    const std::string path = "test_empty.cfg";
    write_file(path, "");
    const Config cfg = load_config(path);
    const Config defaults;
    CHECK(cfg.canonical() == defaults.canonical());
    fs::remove(path);

    const Config absent = load_config("");
    CHECK(absent.canonical() == defaults.canonical());
}

TEST_CASE("dotted keys and section headers set fields") {
    const std::string path = "test_keys.cfg";
    write_file(path, "sampling.steps=8\n[train]\nsteps=123\nlr=0.01\n[guidance.vsf]\nalpha=2.5\n");
    const Config cfg = load_config(path);
    CHECK(cfg.sampling_steps == 8);
    CHECK(cfg.train_steps == 123);
    CHECK(cfg.train_lr == 0.01);
    CHECK(cfg.vsf_alpha == 2.5);
    fs::remove(path);
}

TEST_CASE("duplicate keys warn and the last value wins") {
    const std::string path = "test_dup.cfg";
    write_file(path, "train.steps=10\ntrain.steps=20\n");
    std::vector<std::string> warnings;
    const Config cfg = load_config(path, &warnings);
    CHECK(cfg.train_steps == 20);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("train.steps") != std::string::npos);
    fs::remove(path);
}

TEST_CASE("unknown keys and malformed lines are rejected with context") {
    const std::string path = "test_bad.cfg";
    write_file(path, "nonsense.key=1\n");
    CHECK_THROWS_WITH_AS(load_config(path), doctest::Contains("nonsense.key"),
                         std::invalid_argument);

    write_file(path, "train.steps=10\nthis is not a key value line\n");
    CHECK_THROWS_WITH_AS(load_config(path), doctest::Contains("line 2"), std::invalid_argument);

    write_file(path, "train.steps=ten\n");
    CHECK_THROWS_AS(load_config(path), std::invalid_argument);
    fs::remove(path);
}

TEST_CASE("seed lists parse") {
    const std::string path = "test_seeds.cfg";
    write_file(path, "sampling.seeds=3,5,8\n");
    const Config cfg = load_config(path);
    REQUIRE(cfg.sampling_seeds.size() == 3);
    CHECK(cfg.sampling_seeds[0] == 3);
    CHECK(cfg.sampling_seeds[2] == 8);
    fs::remove(path);
}

TEST_CASE("every config key is documented with a default") {
    const Config defaults;
    const std::string canon = defaults.canonical();
    for (const ConfigKeyDoc& doc : config_key_docs()) {
        CHECK(canon.find(std::string(doc.key) + "=") != std::string::npos);
        Config cfg;
        CHECK_NOTHROW(config_apply(cfg, doc.key, doc.def));
    }
}

TEST_CASE("cli help exits zero and lists subcommands") {
    const CommandResult help = run_cli("--help");
    CHECK(help.exit_code == 0);
    for (const char* sub : {"train", "sample", "sweep", "frontier", "attnmap", "cost"}) {
        CHECK(help.output.find(sub) != std::string::npos);
    }
    const CommandResult sample_help = run_cli("sample --help");
    CHECK(sample_help.exit_code == 0);
    for (const char* flag : {"--variant", "--pos", "--neg", "--alpha", "--beta", "--phi", "--tau",
                             "--blend", "--lambda", "--steps", "--seed"}) {
        CHECK(sample_help.output.find(flag) != std::string::npos);
    }
}

TEST_CASE("cli cost subcommand prints the two-pass numbers for cfg") {
    const CommandResult res = run_cli("cost --variant cfg --ni 16 --np 8 --nn 4");
    CHECK(res.exit_code == 0);
    CHECK(res.output.find("forward count 2") != std::string::npos);
    CHECK(res.output.find("ratio 2.0") != std::string::npos);
}

TEST_CASE("cli rejects missing --neg for negative-guidance variants with exit 2") {
    const CommandResult res = run_cli("sample --variant vsf --pos \"a square\"");
    CHECK(res.exit_code == 2);
    CHECK(res.output.find("--neg") != std::string::npos);
}

TEST_CASE("cli frontier reproduces the hand-walk example") {
    fs::create_directories("test_cli_out");
    const std::string sweep_path = "test_cli_out/sweep_in.csv";
    {
        SweepResult rows;
        SweepRow a;
        a.neg = 0.7;
        a.pos = 0.5;
        SweepRow b;
        b.neg = 0.5;
        b.pos = 0.9;
        SweepRow c;
        c.neg = 0.3;
        c.pos = 0.8;
        rows = {a, b, c};
        write_sweep_csv(sweep_path, rows);
    }
    const CommandResult res =
        run_cli("frontier --in " + sweep_path + " --y pos --out test_cli_out");
    CHECK(res.exit_code == 0);

    // Find the frontier.csv under the run directory.
    std::string frontier_path;
    for (const auto& entry : fs::recursive_directory_iterator("test_cli_out")) {
        if (entry.path().filename() == "frontier.csv") frontier_path = entry.path().string();
    }
    REQUIRE_FALSE(frontier_path.empty());
    const SweepResult frontier = read_sweep_csv(frontier_path);
    REQUIRE(frontier.size() == 2);
    CHECK(frontier[0].neg == doctest::Approx(0.7));
    CHECK(frontier[1].neg == doctest::Approx(0.5));
    fs::remove_all("test_cli_out");
}

TEST_CASE("cli end-to-end: tiny train, sample, vsf degenerate empty negative") {
    fs::remove_all("test_cli_e2e");
    fs::create_directories("test_cli_e2e");
    write_file("test_cli_e2e/tiny.cfg",
               "[model]\ndim=8\nheads=2\nlayers=1\nmlp_hidden=12\n"
               "[train]\nsteps=3\nbatch=2\n[data]\nsize=18\n[paths]\nout=test_cli_e2e\n");

    const CommandResult tr = run_cli("--config test_cli_e2e/tiny.cfg train --ckpt "
                                     "test_cli_e2e/m.vsft");
    INFO(tr.output);
    CHECK(tr.exit_code == 0);
    CHECK(fs::exists("test_cli_e2e/m.vsft"));

    const CommandResult s1 = run_cli(
        "--config test_cli_e2e/tiny.cfg sample --variant none --pos \"a square\" --ckpt "
        "test_cli_e2e/m.vsft --seed 5");
    INFO(s1.output);
    CHECK(s1.exit_code == 0);

    const CommandResult s2 = run_cli(
        "--config test_cli_e2e/tiny.cfg sample --variant vsf --pos \"a square\" --neg \"\" "
        "--ckpt test_cli_e2e/m.vsft --seed 5");
    INFO(s2.output);
    CHECK(s2.exit_code == 0);

    // The degenerate VSF run produces the same image as the unguided run.
    std::string img_none, img_vsf;
    for (const auto& entry : fs::recursive_directory_iterator("test_cli_e2e")) {
        if (entry.path().filename() != "image.ppm") continue;
        const std::string rec = entry.path().parent_path().string() + "/record.csv";
        const RunRecord r = read_run_record_csv(rec);
        if (r.spec.variant == Variant::None) img_none = entry.path().string();
        if (r.spec.variant == Variant::Vsf) img_vsf = entry.path().string();
    }
    REQUIRE_FALSE(img_none.empty());
    REQUIRE_FALSE(img_vsf.empty());
    CHECK(read_file(img_none) == read_file(img_vsf));
    fs::remove_all("test_cli_e2e");
}

TEST_CASE("cli attnmap exports maps from a vsf run record") {
    fs::remove_all("test_cli_attn");
    fs::create_directories("test_cli_attn");
    write_file("test_cli_attn/tiny.cfg",
               "[model]\ndim=8\nheads=2\nlayers=2\nmlp_hidden=12\n"
               "[train]\nsteps=1\nbatch=2\n[data]\nsize=18\n[sampling]\nsteps=3\n"
               "[paths]\nout=test_cli_attn\n");
    const CommandResult tr =
        run_cli("--config test_cli_attn/tiny.cfg train --ckpt test_cli_attn/m.vsft");
    REQUIRE(tr.exit_code == 0);
    const CommandResult sm = run_cli(
        "--config test_cli_attn/tiny.cfg sample --variant vsf --pos \"a square\" --neg red "
        "--ckpt test_cli_attn/m.vsft");
    INFO(sm.output);
    REQUIRE(sm.exit_code == 0);

    std::string record_dir;
    for (const auto& entry : fs::recursive_directory_iterator("test_cli_attn")) {
        if (entry.path().filename() == "neg_attn.csv") {
            record_dir = entry.path().parent_path().string();
        }
    }
    REQUIRE_FALSE(record_dir.empty());

    const CommandResult am =
        run_cli("--config test_cli_attn/tiny.cfg attnmap --record " + record_dir);
    INFO(am.output);
    CHECK(am.exit_code == 0);
    std::size_t maps = 0;
    for (const auto& entry : fs::recursive_directory_iterator("test_cli_attn")) {
        if (entry.path().extension() == ".ppm" &&
            entry.path().string().find("attnmap-") != std::string::npos) {
            ++maps;
        }
    }
    CHECK(maps == 6);  // 3 steps x 2 layers

    // A non-VSF record is rejected.
    const CommandResult s_none = run_cli(
        "--config test_cli_attn/tiny.cfg sample --variant none --pos \"a square\" --ckpt "
        "test_cli_attn/m.vsft");
    REQUIRE(s_none.exit_code == 0);
    std::string none_dir;
    for (const auto& entry : fs::recursive_directory_iterator("test_cli_attn")) {
        if (entry.path().filename() == "record.csv") {
            const RunRecord r = read_run_record_csv(entry.path().string());
            if (r.spec.variant == Variant::None) {
                none_dir = entry.path().parent_path().string();
            }
        }
    }
    REQUIRE_FALSE(none_dir.empty());
    const CommandResult bad = run_cli("attnmap --record " + none_dir);
    CHECK(bad.exit_code != 0);
    CHECK(bad.output.find("VSF") != std::string::npos);
    fs::remove_all("test_cli_attn");
}

TEST_CASE("config canonical string drives stable run ids") {
    const Config a;
    const Config b;
    CHECK(fnv1a64(a.canonical()) == fnv1a64(b.canonical()));
    Config c;
    c.train_steps = 777;
    CHECK(fnv1a64(a.canonical()) != fnv1a64(c.canonical()));
}
