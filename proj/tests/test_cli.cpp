/*
 * clmfit: constrained local model landmark fitting with convolutional experts
 *
 * Copyright 2026 The clmfit Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
// Drives the command-line tool as a subprocess and checks exit codes and outputs.

#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace {

const fs::path& work()
{
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / ("clmfit_cli_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Run cli(const std::string& args)
{
    const fs::path out = work() / "stdout.txt";
    const fs::path err = work() / "stderr.txt";
    const std::string cmd = "cd '" + work().string() + "' && '" CLMFIT_CLI_PATH "' " + args + " >'" + out.string()
        + "' 2>'" + err.string() + "'";
    const int raw = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

void write(const std::string& name, const std::string& text)
{
    std::ofstream(work() / name) << text;
}

// Builds a model, two scenes and a one-scale bank once.
void ensure_fixture()
{
    static bool done = false;
    if (done) {
        return;
    }
    REQUIRE(cli("--seed 3 pdm --modes 6 --out pdm.json").code == 0);
    REQUIRE(cli("--seed 3 synth --pdm pdm.json --count 2 --out scenes").code == 0);
    REQUIRE(cli("--seed 3 train --out m.json --epochs 2 --samples 60 --test-samples 20 --bank-dir bank "
                "--bank-landmarks 12")
                .code
            == 0);
    done = true;
}

} // namespace

TEST_CASE("usage errors exit with 4")
{
    CHECK(cli("").code == 4);
    CHECK(cli("frobnicate").code == 4);
    CHECK(cli("synth --count 2").code == 4);
    CHECK(cli("eval --pred a.csv").code == 4);
}

TEST_CASE("synth writes one image and one sidecar per scene")
{
    ensure_fixture();
    const Run r = cli("--seed 9 synth --pdm pdm.json --count 3 --out three");
    REQUIRE(r.code == 0);
    int pgm = 0, json = 0;
    for (const auto& e : fs::directory_iterator(work() / "three")) {
        pgm += e.path().extension() == ".pgm";
        json += e.path().extension() == ".json";
    }
    CHECK(pgm == 3);
    CHECK(json == 3);
}

TEST_CASE("fit input errors map to exit codes")
{
    ensure_fixture();
    Run r = cli("fit --pdm pdm.json --bank bank --image scenes/scene_0000.pgm --bbox 1,2,3 --out f.csv");
    CHECK(r.code == 4);
    CHECK(r.err.find("--bbox") != std::string::npos);
    CHECK(cli("fit --pdm pdm.json --bank bank --image scenes/scene_0000.pgm --bbox 1,2,x,4 --out f.csv").code == 4);
    CHECK(cli("fit --pdm pdm.json --bank bank --image scenes/scene_0000.pgm --bbox 1,2,-3,4 --out f.csv").code == 4);
    r = cli("fit --pdm pdm.json --bank bank --image missing.pgm --bbox 45,40,110,120 --out f.csv");
    CHECK(r.code == 3);
    CHECK(cli("fit --pdm missing.json --bank bank --image scenes/scene_0000.pgm --bbox 45,40,110,120 --out f.csv")
              .code
          == 3);
    write("v2.json", R"({"version": 2})");
    CHECK(cli("fit --pdm v2.json --bank bank --image scenes/scene_0000.pgm --bbox 45,40,110,120 --out f.csv").code
          == 4);
    write("neg.json", R"({"version": 1, "rho": -1})");
    CHECK(cli("fit --pdm pdm.json --bank bank --image scenes/scene_0000.pgm --bbox 45,40,110,120 --config neg.json "
              "--out f.csv")
              .code
          == 4);
}

TEST_CASE("fit succeeds or flags low confidence")
{
    ensure_fixture();
    Run r = cli("fit --pdm pdm.json --bank bank --image scenes/scene_0000.pgm --bbox 45,40,110,120 --out f.csv");
    CHECK((r.code == 0 || r.code == 2));
    CHECK(fs::exists(work() / "f.csv"));
    CHECK(r.out.find("map_score=") != std::string::npos);
    write("strict.json", R"({"version": 1, "accept_threshold": 1e9, "reject_threshold": 1e8})");
    r = cli("fit --pdm pdm.json --bank bank --image scenes/scene_0000.pgm --bbox 45,40,110,120 --config strict.json "
            "--out g.csv");
    CHECK(r.code == 2);
    CHECK(r.out.find("low_confidence=1") != std::string::npos);
}

TEST_CASE("fit output does not depend on the thread count")
{
    ensure_fixture();
    const std::string base = "fit --pdm pdm.json --bank bank --image scenes/scene_0001.pgm --bbox 45,40,110,120 ";
    const int one = cli("--threads 1 " + base + "--out t1.csv").code;
    const int four = cli("--threads 4 " + base + "--out t4.csv").code;
    CHECK(one == four);
    CHECK(slurp(work() / "t1.csv") == slurp(work() / "t4.csv"));
}

TEST_CASE("eval reports normalized errors")
{
    std::ostringstream truth, same, shifted;
    truth << R"({"version": 1, "eye_corners": [0, 1], "landmarks": [[10, 10], [50, 10], [30, 30], [30, 45]]})";
    same << "id,x,y,visible\n0,10,10,1\n1,50,10,1\n2,30,30,1\n3,30,45,1\n";
    shifted << "id,x,y,visible\n0,12,10,1\n1,52,10,1\n2,32,30,1\n3,32,45,1\n";
    write("truth.json", truth.str());
    write("same.csv", same.str());
    write("shifted.csv", shifted.str());
    write("short.csv", "id,x,y,visible\n0,12,10,1\n");

    Run r = cli("eval --pred same.csv --truth truth.json");
    CHECK(r.code == 0);
    CHECK(r.out.find("median_error=0 ") != std::string::npos);
    r = cli("eval --pred shifted.csv --truth truth.json --mode iod --curve c.csv --report rep.json");
    CHECK(r.code == 0);
    CHECK(r.out.find("median_error=0.05 ") != std::string::npos);
    CHECK(fs::exists(work() / "c.csv"));
    CHECK(fs::exists(work() / "rep.json"));
    CHECK(cli("eval --pred short.csv --truth truth.json").code == 4);
    CHECK(cli("eval --pred same.csv --pred same.csv --truth truth.json").code == 4);
    CHECK(cli("eval --pred same.csv --truth truth.json --mode mean").code == 4);
}

TEST_CASE("self-check recomputes sidecar geometry")
{
    ensure_fixture();
    Run r = cli("eval --self-check --pdm pdm.json --truth scenes/scene_0000.json --truth scenes/scene_0001.json");
    CHECK(r.code == 0);
    std::string text = slurp(work() / "scenes/scene_0001.json");
    const auto at = text.find("\"landmarks\"");
    REQUIRE(at != std::string::npos);
    const auto digit = text.find_first_of("123456789", at);
    text[digit] = text[digit] == '9' ? '1' : static_cast<char>(text[digit] + 1);
    write("tampered.json", text);
    r = cli("eval --self-check --pdm pdm.json --truth scenes/scene_0000.json --truth tampered.json");
    CHECK(r.code == 4);
}

TEST_CASE("train reports and writes its outputs")
{
    const Run r = cli("--seed 2 train --out t.json --epochs 2 --samples 60 --test-samples 20");
    CHECK(r.code == 0);
    CHECK(r.out.find("r2=") != std::string::npos);
    CHECK(fs::exists(work() / "t.json"));
    CHECK(fs::exists(work() / "t.json.loss.csv"));
    CHECK(cli("train --out t.json --lr -1").code == 4);
    CHECK(cli("train --out t.json --arch 4,4").code == 4);
}

TEST_CASE("cleanup")
{
    fs::remove_all(work());
}
