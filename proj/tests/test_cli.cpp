// End-to-end tests run against the installed binary (path injected by CMake).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>
#include <sys/wait.h>

#include "mixmerge/checkpoint_io.hpp"
#include "mixmerge/lab.hpp"
#include "mixmerge/merge.hpp"
#include "mixmerge/tensor_map.hpp"

using namespace mixmerge;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr
};

RunResult run(const std::string& args) {
    const fs::path out_file = fs::temp_directory_path() / "mixmerge_cli_out.txt";
    const std::string cmd =
        std::string(MIXMERGE_BIN) + " " + args + " > '" + out_file.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult result;
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out_file);
    result.output.assign((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
    return result;
}

fs::path work_dir() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "mixmerge_cli_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

/// Toy pair checkpoints shared by the tests, built once via the lab command.
fs::path lab_dir() {
    static const fs::path dir = [] {
        const fs::path d = work_dir() / "lab";
        const RunResult r = run("lab --seed 3 --out-dir '" + d.string() + "'");
        REQUIRE(r.exit_code == 0);
        return d;
    }();
    return dir;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_CASE("lab writes the three checkpoints and scan artifacts") {
    const fs::path d = lab_dir();
    CHECK(fs::exists(d / "pretrained.ckpt"));
    CHECK(fs::exists(d / "task1.ckpt"));
    CHECK(fs::exists(d / "task2.ckpt"));
    CHECK(fs::exists(d / "path_scan.csv"));
    CHECK(fs::exists(d / "lab.json"));
}

TEST_CASE("average merge equals m3-average at lambda one half") {
    const fs::path d = lab_dir();
    const fs::path out_a = work_dir() / "avg.ckpt";
    const fs::path out_b = work_dir() / "m3avg.ckpt";
    REQUIRE(run("merge --method average " + q(d / "task1.ckpt") + " " +
                q(d / "task2.ckpt") + " -o " + q(out_a))
                .exit_code == 0);
    REQUIRE(run("merge --method m3-average --lambda-m 0.5 " + q(d / "task1.ckpt") + " " +
                q(d / "task2.ckpt") + " -o " + q(out_b))
                .exit_code == 0);
    const MergeManifest ma = read_manifest(out_a.string() + ".manifest.json");
    const MergeManifest mb = read_manifest(out_b.string() + ".manifest.json");
    REQUIRE(ma.output.has_value());
    REQUIRE(mb.output.has_value());
    CHECK(ma.output->digest == mb.output->digest);
}

TEST_CASE("sampled merges record alpha, seed, and lambda in the manifest") {
    const fs::path d = lab_dir();
    const fs::path out = work_dir() / "sampled.ckpt";
    const RunResult r = run("merge --method m3-average --alpha 2 --seed 7 " +
                            q(d / "task1.ckpt") + " " + q(d / "task2.ckpt") + " -o " +
                            q(out));
    REQUIRE(r.exit_code == 0);
    const MergeManifest m = read_manifest(out.string() + ".manifest.json");
    REQUIRE(m.sampling.has_value());
    CHECK(m.sampling->alpha == 2.0);
    CHECK(m.sampling->seed == 7);
    CHECK(m.sampling->lambda_m > 0.0);
    CHECK(m.sampling->lambda_m < 1.0);

    // replaying the recorded lambda reproduces the digest
    char lambda_text[64];
    std::snprintf(lambda_text, sizeof lambda_text, "%.17g", m.sampling->lambda_m);
    const fs::path replay = work_dir() / "replay.ckpt";
    REQUIRE(run("merge --method m3-average --lambda-m " + std::string(lambda_text) + " " +
                q(d / "task1.ckpt") + " " + q(d / "task2.ckpt") + " -o " + q(replay))
                .exit_code == 0);
    const MergeManifest mr = read_manifest(replay.string() + ".manifest.json");
    CHECK(mr.output->digest == m.output->digest);
}

TEST_CASE("dare merges record both sampling and drop rate") {
    const fs::path d = lab_dir();
    const fs::path out = work_dir() / "dared.ckpt";
    const RunResult r = run("merge --method m3-task-arithmetic --alpha 0.5 --seed 3 "
                            "--dare-p 0.2 --base " +
                            q(d / "pretrained.ckpt") + " " + q(d / "task1.ckpt") + " " +
                            q(d / "task2.ckpt") + " -o " + q(out));
    REQUIRE(r.exit_code == 0);
    const MergeManifest m = read_manifest(out.string() + ".manifest.json");
    REQUIRE(m.sampling.has_value());
    CHECK(m.sampling->alpha == 0.5);
    REQUIRE(m.dare.has_value());
    CHECK(m.dare->drop_rate == 0.2);
}

TEST_CASE("usage errors exit 2 and leave no output behind") {
    const fs::path d = lab_dir();
    const fs::path out = work_dir() / "never_written.ckpt";

    // --lambda-m and --alpha together
    RunResult r = run("merge --method m3-average --lambda-m 0.4 --alpha 2 " +
                      q(d / "task1.ckpt") + " " + q(d / "task2.ckpt") + " -o " + q(out));
    CHECK(r.exit_code == 2);
    CHECK_FALSE(fs::exists(out));

    // missing required hyperparameter
    r = run("merge --method ties --base " + q(d / "pretrained.ckpt") + " " +
            q(d / "task1.ckpt") + " " + q(d / "task2.ckpt") + " -o " + q(out));
    CHECK(r.exit_code == 2);
    CHECK_FALSE(fs::exists(out));

    // unknown method
    r = run("merge --method fisher " + q(d / "task1.ckpt") + " " + q(d / "task2.ckpt") +
            " -o " + q(out));
    CHECK(r.exit_code == 2);
    CHECK_FALSE(fs::exists(out));

    // unknown flag
    r = run("merge --no-such-flag");
    CHECK(r.exit_code == 2);

    // usage errors must not truncate an existing file either
    std::ofstream(out) << "sentinel";
    r = run("merge --method m3-average --lambda-m 0.4 --alpha 2 " + q(d / "task1.ckpt") +
            " " + q(d / "task2.ckpt") + " -o " + q(out));
    CHECK(r.exit_code == 2);
    std::ifstream check(out);
    std::string contents((std::istreambuf_iterator<char>(check)),
                         std::istreambuf_iterator<char>());
    CHECK(contents == "sentinel");
    fs::remove(out);
}

TEST_CASE("data errors exit 1") {
    const fs::path d = lab_dir();
    const fs::path bad = work_dir() / "incongruent.ckpt";
    TensorMap other("other");
    Tensor t;
    t.shape = {3};
    t.data = {1.0f, 2.0f, 3.0f};
    other.insert("something_else", t);
    write_checkpoint(other, bad);

    RunResult r = run("merge --method average " + q(d / "task1.ckpt") + " " + q(bad) +
                      " -o " + q(work_dir() / "x.ckpt"));
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("something_else") != std::string::npos);

    r = run("inspect " + q(work_dir() / "missing.ckpt"));
    CHECK(r.exit_code == 1);
}

TEST_CASE("delta then apply with coefficient one reproduces the fine checkpoint digest") {
    const fs::path d = lab_dir();
    const fs::path delta_file = work_dir() / "t1.delta.ckpt";
    REQUIRE(run("delta " + q(d / "task1.ckpt") + " " + q(d / "pretrained.ckpt") + " -o " +
                q(delta_file))
                .exit_code == 0);
    CHECK(fs::exists(delta_file.string() + ".manifest.json"));

    // sparsify with p=0 is the identity on the delta file
    const fs::path sparse = work_dir() / "t1.sparse.ckpt";
    REQUIRE(run("sparsify " + q(delta_file) + " --drop-rate 0 --seed 9 -o " + q(sparse))
                .exit_code == 0);
    CHECK(fs::exists(sparse.string() + ".manifest.json"));
    const DeltaSet a = read_delta(delta_file);
    const DeltaSet b = read_delta(sparse);
    CHECK(a.tensors.same_contents(b.tensors));

    // base + 1.0 * delta reproduces the fine model at storage precision (the
    // delta file itself is f32, so exact bit equality is not promised)
    const DeltaSet dset = read_delta(delta_file);
    const TensorMap base = read_checkpoint(d / "pretrained.ckpt");
    const WeightedDelta weighted[] = {{1.0, &dset}};
    TensorMap rebuilt = apply_deltas(base, weighted);
    rebuilt.set_identity(dset.tensors.identity());
    const TensorMap fine = read_checkpoint(d / "task1.ckpt");
    for (const auto& [name, tensor] : fine) {
        const Tensor& got = rebuilt.at(name);
        for (std::size_t i = 0; i < tensor.data.size(); ++i) {
            CHECK(got.data[i] == doctest::Approx(tensor.data[i]).epsilon(1e-5));
        }
    }
}

TEST_CASE("scan emits a csv with one row per grid point and exact endpoints") {
    const fs::path d = lab_dir();
    const fs::path csv = work_dir() / "scan.csv";
    REQUIRE(run("scan " + q(d / "task1.ckpt") + " " + q(d / "task2.ckpt") +
                " --grid 11 --lab-seed 3 -o " + q(csv))
                .exit_code == 0);
    std::ifstream in(csv);
    std::string line;
    std::vector<std::string> rows;
    REQUIRE(std::getline(in, line));
    CHECK(line == "lambda,loss_task1,loss_task2,combined");
    while (std::getline(in, line)) {
        if (!line.empty()) rows.push_back(line);
    }
    REQUIRE(rows.size() == 11);

    // endpoints must equal direct evaluation of the unmerged models
    const lab::ToyTaskPair pair = lab::build_toy_pair(3);
    const TensorMap t1 = read_checkpoint(d / "task1.ckpt");
    const TensorMap t2 = read_checkpoint(d / "task2.ckpt");
    const auto loss1_of = [&](const std::string& row) {
        std::istringstream s(row);
        std::string lambda_s, loss_s;
        std::getline(s, lambda_s, ',');
        std::getline(s, loss_s, ',');
        return std::stod(loss_s);
    };
    CHECK(loss1_of(rows.front()) == lab::toy_loss(t2, pair.task1.holdout));
    CHECK(loss1_of(rows.back()) == lab::toy_loss(t1, pair.task1.holdout));
}

TEST_CASE("pdr prints the expected rounded value") {
    const RunResult r = run("pdr 57.68 35.21");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("38.96") != std::string::npos);

    CHECK(run("pdr 0 1").exit_code == 1);       // undefined
    CHECK(run("pdr 1").exit_code == 2);         // wrong arity
}

TEST_CASE("sweep produces seven checkpoints and a stable sweep.json") {
    const fs::path d = lab_dir();
    const fs::path out1 = work_dir() / "sweep1";
    const fs::path out2 = work_dir() / "sweep2";
    const std::string common = "sweep --method m3-average --seed 11 --evaluator lab:3 " +
                               q(d / "task1.ckpt") + " " + q(d / "task2.ckpt");
    const RunResult r1 = run(common + " --out-dir " + q(out1));
    REQUIRE(r1.exit_code == 0);

    int checkpoints = 0;
    for (const auto& entry : fs::directory_iterator(out1)) {
        if (entry.path().extension() == ".ckpt") ++checkpoints;
    }
    CHECK(checkpoints == 7);
    CHECK(fs::exists(out1 / "sweep.json"));
    // table mirrors: alpha, lambda_m, per-task scores, avg
    CHECK(r1.output.find("alpha") != std::string::npos);
    CHECK(r1.output.find("lambda_m") != std::string::npos);
    CHECK(r1.output.find("avg") != std::string::npos);

    const RunResult r2 = run(common + " --out-dir " + q(out2));
    REQUIRE(r2.exit_code == 0);
    std::ifstream f1(out1 / "sweep.json");
    std::ifstream f2(out2 / "sweep.json");
    const std::string s1((std::istreambuf_iterator<char>(f1)),
                         std::istreambuf_iterator<char>());
    const std::string s2((std::istreambuf_iterator<char>(f2)),
                         std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
}

TEST_CASE("sweep with a singleton alpha list writes one record") {
    const fs::path d = lab_dir();
    const fs::path out = work_dir() / "sweep_single";
    const RunResult r = run("sweep --method m3-average --alphas 1 --seed 5 --evaluator "
                            "lab:3 " +
                            q(d / "task1.ckpt") + " " + q(d / "task2.ckpt") +
                            " --out-dir " + q(out));
    REQUIRE(r.exit_code == 0);
    int checkpoints = 0;
    for (const auto& entry : fs::directory_iterator(out)) {
        if (entry.path().extension() == ".ckpt") ++checkpoints;
    }
    CHECK(checkpoints == 1);
}

TEST_CASE("sweep with an external evaluator command") {
    const fs::path d = lab_dir();
    const fs::path script = work_dir() / "score.sh";
    {
        std::ofstream out(script);
        out << "#!/bin/sh\n# score: task id times ten\necho \"$2\"0\n";
    }
    fs::permissions(script, fs::perms::owner_all);
    const fs::path out_dir = work_dir() / "sweep_ext";
    const RunResult r = run("sweep --method m3-average --alphas 1 2 --seed 4 --evaluator " +
                            q(script) + " " + q(d / "task1.ckpt") + " " +
                            q(d / "task2.ckpt") + " --out-dir " + q(out_dir));
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("10.0") != std::string::npos);  // task1 score
    CHECK(r.output.find("20.0") != std::string::npos);  // task2 score

    // failing evaluator: all alphas fail -> exit 1
    const fs::path bad = work_dir() / "bad.sh";
    {
        std::ofstream out(bad);
        out << "#!/bin/sh\nexit 3\n";
    }
    fs::permissions(bad, fs::perms::owner_all);
    const RunResult rf = run("sweep --method m3-average --alphas 1 --seed 4 --evaluator " +
                             q(bad) + " " + q(d / "task1.ckpt") + " " +
                             q(d / "task2.ckpt") + " --out-dir " +
                             q(work_dir() / "sweep_fail"));
    CHECK(rf.exit_code == 1);
}

TEST_CASE("MIXMERGE_SEED supplies the default seed") {
    const fs::path d = lab_dir();
    const fs::path out = work_dir() / "env_seed.ckpt";
    const fs::path out_file = fs::temp_directory_path() / "mixmerge_cli_out.txt";
    const std::string cmd = std::string("MIXMERGE_SEED=7 ") + MIXMERGE_BIN +
                            " merge --method m3-average --alpha 2 " +
                            q(d / "task1.ckpt") + " " + q(d / "task2.ckpt") + " -o " +
                            q(out) + " > '" + out_file.string() + "' 2>&1";
    REQUIRE(std::system(cmd.c_str()) == 0);
    const MergeManifest m = read_manifest(out.string() + ".manifest.json");
    REQUIRE(m.sampling.has_value());
    CHECK(m.sampling->seed == 7);
    // and matches an explicit --seed 7 run
    const fs::path out2 = work_dir() / "explicit_seed.ckpt";
    REQUIRE(run("merge --method m3-average --alpha 2 --seed 7 " + q(d / "task1.ckpt") +
                " " + q(d / "task2.ckpt") + " -o " + q(out2))
                .exit_code == 0);
    const MergeManifest m2 = read_manifest(out2.string() + ".manifest.json");
    CHECK(m.sampling->lambda_m == m2.sampling->lambda_m);
    CHECK(m.output->digest == m2.output->digest);
}

TEST_CASE("version flag reports and exits cleanly") {
    const RunResult r = run("--version");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("mixmerge") != std::string::npos);
}

TEST_CASE("inspect prints names, shapes, and digest") {
    const fs::path d = lab_dir();
    const RunResult r = run("inspect " + q(d / "task1.ckpt"));
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("layer1.weight") != std::string::npos);
    CHECK(r.output.find("[32,2]") != std::string::npos);
    CHECK(r.output.find("digest:") != std::string::npos);
    CHECK(r.output.find("toy-task1-seed3") != std::string::npos);
}
