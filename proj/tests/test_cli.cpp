// End-to-end checks of the command-line binary. The binary path arrives via
// the BRAINFED_CLI environment variable (set by the test harness).

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "brainfed/message.hpp"
#include "brainfed/synthdata.hpp"

namespace fs = std::filesystem;

namespace {

std::string cli() {
    const char* path = std::getenv("BRAINFED_CLI");
    REQUIRE_MESSAGE(path != nullptr, "BRAINFED_CLI must point at the binary");
    return path;
}

struct Cmd {
    int exit_code;
    std::string output;
};

Cmd run(const std::string& args, const std::string& env_prefix = "") {
    const std::string out_file = "/tmp/brainfed_cli_out.txt";
    const std::string full = env_prefix + cli() + " " + args + " > " + out_file + " 2>&1";
    const int raw = std::system(full.c_str());
    std::ifstream in(out_file);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WEXITSTATUS(raw), ss.str()};
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct Workspace {
    fs::path dir;
    Workspace() : dir("/tmp/brainfed_cli_ws") {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Workspace() { fs::remove_all(dir); }
    std::string p(const std::string& name) const { return (dir / name).string(); }
};

// Small corpus + short schedule so each training invocation stays sub-second.
const std::string kGenFlags =
    " --subjects 2 --voxel-dims 10,12 --latent-dim 4 --train-per-subject 24 --test-count 8"
    " --image-dim 6 --text-dim 5";
const std::string kTrainFlags =
    " --epochs 2 --batch-size 8 --hidden-dim 8 --residual-blocks 1 --dfl-steps 1";

}  // namespace

TEST_CASE("generate writes a loadable dataset with the requested shape") {
    Workspace ws;
    const Cmd gen = run("generate --out " + ws.p("data.bgds") + kGenFlags);
    CHECK(gen.exit_code == 0);
    const auto corpus = brainfed::load_corpus(ws.p("data.bgds"));
    CHECK(corpus.subjects.size() == 2);
    CHECK(corpus.subjects[0].x_train.rows() == 24);

    const Cmd solo = run("generate --out " + ws.p("solo.bgds") + " --subjects 1 --voxel-dims 10" +
                         " --latent-dim 4 --train-per-subject 24 --test-count 8");
    CHECK(solo.exit_code == 0);
    CHECK(brainfed::load_corpus(ws.p("solo.bgds")).subjects.size() == 1);
}

TEST_CASE("generate is byte-deterministic under a fixed seed") {
    Workspace ws;
    REQUIRE(run("generate --out " + ws.p("a.bgds") + kGenFlags + " --seed 9").exit_code == 0);
    REQUIRE(run("generate --out " + ws.p("b.bgds") + kGenFlags + " --seed 9").exit_code == 0);
    REQUIRE(run("generate --out " + ws.p("c.bgds") + kGenFlags + " --seed 10").exit_code == 0);
    CHECK(slurp(ws.p("a.bgds")) == slurp(ws.p("b.bgds")));
    CHECK_FALSE(slurp(ws.p("a.bgds")) == slurp(ws.p("c.bgds")));
}

TEST_CASE("train writes checkpoints, metrics, and a clean audit log") {
    Workspace ws;
    REQUIRE(run("generate --out " + ws.p("data.bgds") + kGenFlags).exit_code == 0);
    const Cmd train =
        run("train --data " + ws.p("data.bgds") + " --out " + ws.p("run") + kTrainFlags + " --seed 5");
    CHECK(train.exit_code == 0);
    CHECK(fs::exists(ws.p("run/global_ep2.bgck")));
    CHECK(fs::exists(ws.p("run/client0_ep2.bgck")));
    CHECK(fs::exists(ws.p("run/client1_ep2.bgck")));
    CHECK(fs::exists(ws.p("run/fusion0_ep2.bgck")));
    CHECK(fs::exists(ws.p("run/audit.bin")));

    // epochs x subjects records.
    std::ifstream metrics(ws.p("run/metrics.jsonl"));
    std::size_t lines = 0;
    std::string line;
    while (std::getline(metrics, line)) {
        ++lines;
        CHECK(line.find("\"split\":\"test\"") != std::string::npos);
    }
    CHECK(lines == 2 * 2);

    // Re-running with the same seed reproduces the checkpoints bit-for-bit.
    REQUIRE(run("train --data " + ws.p("data.bgds") + " --out " + ws.p("rerun") + kTrainFlags +
                " --seed 5")
                .exit_code == 0);
    CHECK(slurp(ws.p("run/client0_ep2.bgck")) == slurp(ws.p("rerun/client0_ep2.bgck")));
    CHECK(slurp(ws.p("run/global_ep2.bgck")) == slurp(ws.p("rerun/global_ep2.bgck")));

    // The audit command passes on honest traffic.
    const Cmd audit = run("audit --log " + ws.p("run/audit.bin") + " --data " + ws.p("data.bgds"));
    CHECK(audit.exit_code == 0);
    CHECK(audit.output.find("PASS") != std::string::npos);
    CHECK(audit.output.find("frames") != std::string::npos);

    // eval reads the run directory back and emits one record per subject.
    const Cmd eval = run("eval --data " + ws.p("data.bgds") + " --run " + ws.p("run"));
    CHECK(eval.exit_code == 0);
    std::size_t eval_lines = 0;
    std::stringstream es(eval.output);
    while (std::getline(es, line)) {
        if (!line.empty() && line.front() == '{') ++eval_lines;
    }
    CHECK(eval_lines == 2);
}

TEST_CASE("BRAINFED_SEED env var acts as the seed fallback") {
    Workspace ws;
    REQUIRE(run("generate --out " + ws.p("data.bgds") + kGenFlags).exit_code == 0);
    REQUIRE(run("train --data " + ws.p("data.bgds") + " --out " + ws.p("env_run") + kTrainFlags,
                "BRAINFED_SEED=5 ")
                .exit_code == 0);
    REQUIRE(run("train --data " + ws.p("data.bgds") + " --out " + ws.p("flag_run") + kTrainFlags +
                " --seed 5")
                .exit_code == 0);
    CHECK(slurp(ws.p("env_run/client0_ep2.bgck")) == slurp(ws.p("flag_run/client0_ep2.bgck")));
}

TEST_CASE("audit fails with exit code 3 on leaky traffic") {
    Workspace ws;
    REQUIRE(run("generate --out " + ws.p("data.bgds") + kGenFlags).exit_code == 0);
    const auto corpus = brainfed::load_corpus(ws.p("data.bgds"));

    brainfed::MessageLog log;
    brainfed::ProtocolMessage leak;
    leak.kind = brainfed::MessageKind::UploadShadow;
    leak.sender = 0;
    leak.sample_count = 1;
    const brainfed::Tensor& x = corpus.subjects[0].x_train;
    leak.payload.resize(x.cols() * sizeof(double));
    std::memcpy(leak.payload.data(), x.data.data(), leak.payload.size());
    log.append(leak);
    brainfed::save_log(ws.p("leaky.bin"), log);

    const Cmd audit = run("audit --log " + ws.p("leaky.bin") + " --data " + ws.p("data.bgds"));
    CHECK(audit.exit_code == 3);
    CHECK(audit.output.find("FAIL") != std::string::npos);
    CHECK(audit.output.find("offset") != std::string::npos);
}

TEST_CASE("ablate emits one CSV row per configuration with finite cells") {
    Workspace ws;
    REQUIRE(run("generate --out " + ws.p("data.bgds") + kGenFlags).exit_code == 0);
    const Cmd ablate = run("ablate --data " + ws.p("data.bgds") + " --mode sync_tiers --out " +
                           ws.p("sync.csv") + kTrainFlags + " --seeds 1,2");
    CHECK(ablate.exit_code == 0);

    std::ifstream csv(ws.p("sync.csv"));
    std::string line;
    REQUIRE(std::getline(csv, line));
    CHECK(line.rfind("config,", 0) == 0);
    std::size_t rows = 0;
    while (std::getline(csv, line)) {
        ++rows;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');  // label
        while (std::getline(ss, cell, ',')) {
            const double v = std::stod(cell);
            CHECK(std::isfinite(v));
        }
    }
    CHECK(rows == 4);

    // Subject sweep on a 2-subject corpus: two rows.
    const Cmd subjects = run("ablate --data " + ws.p("data.bgds") + " --mode subjects --out " +
                             ws.p("subj.csv") + kTrainFlags + " --seeds 1");
    CHECK(subjects.exit_code == 0);
    std::ifstream subj_csv(ws.p("subj.csv"));
    rows = 0;
    while (std::getline(subj_csv, line)) ++rows;
    CHECK(rows == 1 + 2);

    // m sweep over the 4-layer stack: m in {1,2,3}.
    const Cmd layers = run("ablate --data " + ws.p("data.bgds") + " --mode m_layers --out " +
                           ws.p("m.csv") + kTrainFlags + " --seeds 1");
    CHECK(layers.exit_code == 0);
    std::ifstream m_csv(ws.p("m.csv"));
    rows = 0;
    while (std::getline(m_csv, line)) ++rows;
    CHECK(rows == 1 + 3);
}

TEST_CASE("config file values apply and flags take precedence") {
    Workspace ws;
    REQUIRE(run("generate --out " + ws.p("data.bgds") + kGenFlags).exit_code == 0);
    {
        std::ofstream cfg(ws.p("run.cfg"));
        cfg << "# reference schedule\n"
            << "epochs = 2\n"
            << "batch_size = 8\n"
            << "hidden_dim = 8\n"
            << "num_residual_blocks = 1\n"
            << "dfl_steps = 1\n"
            << "seed = 5\n";
    }
    REQUIRE(run("train --data " + ws.p("data.bgds") + " --out " + ws.p("cfg_run") + " --config " +
                ws.p("run.cfg"))
                .exit_code == 0);
    CHECK(fs::exists(ws.p("cfg_run/global_ep2.bgck")));

    // Flag overrides the file's epoch count.
    REQUIRE(run("train --data " + ws.p("data.bgds") + " --out " + ws.p("cfg_run3") + " --config " +
                ws.p("run.cfg") + " --epochs 3")
                .exit_code == 0);
    CHECK(fs::exists(ws.p("cfg_run3/global_ep3.bgck")));

    // Bad config lines are rejected with their line number.
    {
        std::ofstream cfg(ws.p("bad.cfg"));
        cfg << "epochs = 2\nnot a key value line\n";
    }
    const Cmd bad = run("train --data " + ws.p("data.bgds") + " --out " + ws.p("bad_run") +
                        " --config " + ws.p("bad.cfg"));
    CHECK(bad.exit_code == 2);
    CHECK(bad.output.find("line 2") != std::string::npos);
}

TEST_CASE("validation failures exit with code 2") {
    Workspace ws;
    CHECK(run("train --data /nonexistent.bgds --out " + ws.p("x")).exit_code == 2);
    CHECK(run("train").exit_code == 2);                  // missing required flags
    CHECK(run("bogus_command").exit_code == 2);
    CHECK(run("generate --out " + ws.p("d.bgds") + " --subjects 2 --voxel-dims 8,8 --latent-dim 4")
              .exit_code == 2);  // duplicate voxel dims
}

TEST_CASE("help screens list the flags with defaults") {
    const Cmd help = run("--help");
    CHECK(help.exit_code == 0);
    for (const char* sub : {"generate", "train", "eval", "ablate", "audit"}) {
        CHECK(help.output.find(sub) != std::string::npos);
    }
    const Cmd train_help = run("train --help");
    CHECK(train_help.exit_code == 0);
    CHECK(train_help.output.find("--epochs") != std::string::npos);
    CHECK(train_help.output.find("--sync-mode") != std::string::npos);

    const Cmd gen_help = run("generate --help");
    CHECK(gen_help.exit_code == 0);
    CHECK(gen_help.output.find("512") != std::string::npos);  // train-per-subject default
}
