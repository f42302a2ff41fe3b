// Copyright 2026 The jvtoy Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "doctest.h"

#include "cli.hpp"

#include "jvtoy/config.hpp"
#include "jvtoy/params.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using namespace jvtoy;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "jvtoy");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path &p) {
    std::ifstream in(p);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path scratch(const std::string &name) {
    const auto p = fs::temp_directory_path() / ("jvtoy_test_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

const char *kTinyConfig = "seed = 2\nbatch_size = 2\nwarmup_steps = 1\nstages.1.steps = 2\nstages.2.steps = 1\n"
                          "am.d_model = 8\nam.n_layers = 1\nam.n_heads = 2\nam.d_ff = 16\n"
                          "fm.d_model = 8\nfm.n_layers = 1\nfm.n_heads = 2\nfm.d_ff = 16\nfm.time_dim = 8\n"
                          "eval.prompts = 2\neval.loss_samples = 2\n";

} // namespace

TEST_CASE("unknown subcommand and bad config keys fail fast") {
    CHECK(run({"frobnicate"}).code != 0);
    CHECK(run({}).code != 0);

    const auto dir = scratch("badkey");
    std::ofstream(dir / "bad.cfg") << "seed = 1\nlamda = 0.5\n";
    const auto r = run({"train", "--config", (dir / "bad.cfg").string(), "--run-dir", (dir / "run").string()});
    CHECK(r.code == 2);
    // the message lists the valid keys
    CHECK(r.err.find("lamda") != std::string::npos);
    CHECK(r.err.find("warmup_steps") != std::string::npos);
    CHECK(r.err.find("stages.1.steps") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "run" / "metrics.tsv"));
}

TEST_CASE("gradcheck exits non-zero when a check exceeds tolerance") {
    const auto dir = scratch("gradcheck");
    std::ofstream(dir / "toy.cfg") << kTinyConfig;
    const auto cfg = (dir / "toy.cfg").string();
    const auto run_dir = (dir / "run").string();
    CHECK(run({"gradcheck", "--config", cfg, "--run-dir", run_dir, "--tolerance", "1e-3"}).code == 0);
    CHECK(run({"gradcheck", "--config", cfg, "--run-dir", run_dir, "--tolerance", "0"}).code == 1);
    CHECK(fs::exists(dir / "run" / "reports" / "gradcheck.tsv"));
}

TEST_CASE("train, eval and sample write the run directory layout") {
    const auto dir = scratch("layout");
    std::ofstream(dir / "toy.cfg") << kTinyConfig;
    const auto run_dir = (dir / "run").string();
    REQUIRE(run({"train", "--config", (dir / "toy.cfg").string(), "--run-dir", run_dir}).code == 0);
    CHECK(fs::exists(dir / "run" / "config.echo"));
    CHECK(fs::exists(dir / "run" / "checkpoints" / "final.manifest"));
    const auto metrics = slurp(dir / "run" / "metrics.tsv");
    CHECK(metrics.rfind("step\tloss\tl_am\tl_fm\tlr\n", 0) == 0);
    CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 4);

    // the echoed config alone reproduces the run's settings
    const auto echoed = load_config(dir / "run" / "config.echo");
    CHECK(echoed.stage1_steps == 2);
    CHECK(echoed.am.d_model == 8);

    const auto ev = run({"eval", "--run-dir", run_dir, "--chunk-size", "4", "--euler-steps", "3"});
    REQUIRE(ev.code == 0);
    const auto eval_tsv = slurp(dir / "run" / "reports" / "eval.tsv");
    CHECK(eval_tsv.find("token_cer") != std::string::npos);
    CHECK(eval_tsv.find("cpcer") != std::string::npos);
    const auto eval_echo = slurp(dir / "run" / "reports" / "eval.config.echo");
    CHECK(eval_echo.find("eval.chunk = 4\n") != std::string::npos);
    CHECK(eval_echo.find("fm.euler_steps = 3\n") != std::string::npos);

    REQUIRE(run({"sample", "--run-dir", run_dir, "--speakers", "3", "--turns", "6", "--seed", "7"}).code == 0);
    const auto text = slurp(dir / "run" / "reports" / "sample_s3_t6_seed7.txt");
    CHECK(text.find("# tokens") != std::string::npos);
    CHECK(text.find("# transcript") != std::string::npos);
    CHECK(text.find("# frames") != std::string::npos);
    const auto blob = load_tensors(dir / "run" / "reports" / "sample_s3_t6_seed7.frames");
    REQUIRE(blob.size() == 1);
    CHECK(blob[0].name == "frames");
    CHECK(blob[0].tensor.cols() == 8);
    CHECK(blob[0].tensor.rows() % 8 == 0);
}

TEST_CASE("gen-data runs from built-in defaults without a config file") {
    const auto dir = scratch("defaults");
    const auto r = run({"gen-data", "--run-dir", (dir / "run").string(), "--count", "2"});
    CHECK(r.code == 0);
    CHECK(fs::exists(dir / "run" / "reports" / "gen-data.config.echo"));
    // model-loading commands still need the trained config
    CHECK(run({"eval", "--run-dir", (dir / "other").string()}).code == 2);
}
