#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

// End-to-end checks of the command-line tool. Each test drives the built
// binary through std::system and inspects exit codes and output files.

namespace fs = std::filesystem;

namespace {

const std::string kBin = CLI_BINARY;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("egc_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& sub) const { return (path / sub).string(); }
};

int run(const std::string& args) {
  const std::string cmd = kBin + " " + args + " > /dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

bool same_bytes(const std::string& a, const std::string& b) { return slurp(a) == slurp(b); }

const std::string kTinyGen =
    " --set synth.count=6 --set synth.test_count=3 --seed 11";
const std::string kTinyTrain =
    " --set train.epochs=2 --set train.batch=3 --set train.lr_milestones=1"
    " --set train.alpha_schedule=1:0.1 --set model.heads=2 --set model.layers=2"
    " --set model.kernel=3 --seed 11 --threads 2";

}  // namespace

TEST_CASE("cli: gen is deterministic and refuses non-empty outputs without --force") {
  TempDir tmp("gen");
  const std::string d1 = tmp / "d1";
  const std::string d2 = tmp / "d2";
  REQUIRE(run("gen --out " + d1 + kTinyGen) == 0);
  REQUIRE(run("gen --out " + d2 + kTinyGen) == 0);
  CHECK(same_bytes(d1 + "/manifest.json", d2 + "/manifest.json"));
  CHECK(same_bytes(d1 + "/resolved.cfg", d2 + "/resolved.cfg"));
  CHECK(same_bytes(d1 + "/train/000000.hm", d2 + "/train/000000.hm"));
  CHECK(same_bytes(d1 + "/test/000002.hm", d2 + "/test/000002.hm"));

  // Occupied directory: refused without --force, allowed with it.
  CHECK(run("gen --out " + d1 + kTinyGen) == 2);
  CHECK(run("gen --out " + d1 + kTinyGen + " --force") == 0);

  // n=0 writes only the manifest.
  const std::string d3 = tmp / "d3";
  CHECK(run("gen --out " + d3 + " --set synth.count=0 --set synth.test_count=0") == 0);
  CHECK(fs::exists(d3 + "/manifest.json"));
  CHECK(fs::is_empty(d3 + "/train"));
}

TEST_CASE("cli: unknown config keys are usage errors with exit code 1") {
  TempDir tmp("badcfg");
  std::ofstream cfg(tmp / "bad.cfg");
  cfg << "[corrupt]\njiter_sigma = 2\n";
  cfg.close();
  CHECK(run("gen --out " + (tmp / "d") + " --config " + (tmp / "bad.cfg")) == 1);
  CHECK(run("gen --out " + (tmp / "d") + " --set synth.bogus=1") == 1);
}

TEST_CASE("cli: train/eval round trip with determinism and reports") {
  TempDir tmp("train");
  const std::string data = tmp / "data";
  REQUIRE(run("gen --out " + data + kTinyGen) == 0);

  const std::string r1 = tmp / "run1";
  const std::string r2 = tmp / "run2";
  REQUIRE(run("train --data " + data + " --out " + r1 + kTinyTrain) == 0);
  REQUIRE(run("train --data " + data + " --out " + r2 + kTinyTrain) == 0);
  CHECK(fs::exists(r1 + "/best.ckpt"));
  CHECK(fs::exists(r1 + "/last.ckpt"));
  CHECK(fs::exists(r1 + "/log.jsonl"));
  CHECK(same_bytes(r1 + "/last.ckpt", r2 + "/last.ckpt"));
  CHECK(same_bytes(r1 + "/best.ckpt", r2 + "/best.ckpt"));
  CHECK(same_bytes(r1 + "/log.jsonl", r2 + "/log.jsonl"));

  const std::string e1 = tmp / "eval1";
  const std::string e2 = tmp / "eval2";
  REQUIRE(run("eval --model " + r1 + "/best.ckpt --data " + data + " --out " + e1 + " --threads 2") == 0);
  REQUIRE(run("eval --model " + r1 + "/best.ckpt --data " + data + " --out " + e2 + " --threads 2") == 0);
  CHECK(same_bytes(e1 + "/report.txt", e2 + "/report.txt"));
  CHECK(same_bytes(e1 + "/report.json", e2 + "/report.json"));
  const std::string report = slurp(e1 + "/report.txt");
  CHECK(report.find("input-baseline") != std::string::npos);
  CHECK(report.find("model") != std::string::npos);
  CHECK(report.find("mPCK") != std::string::npos);
}

TEST_CASE("cli: resume continues the epoch counter and optimizer state exactly") {
  TempDir tmp("resume");
  const std::string data = tmp / "data";
  REQUIRE(run("gen --out " + data + kTinyGen) == 0);

  const std::string straight = tmp / "straight";
  REQUIRE(run("train --data " + data + " --out " + straight + kTinyTrain +
              " --set train.epochs=4") == 0);

  const std::string part = tmp / "part";
  REQUIRE(run("train --data " + data + " --out " + part + kTinyTrain) == 0);  // 2 epochs
  const std::string resumed = tmp / "resumed";
  REQUIRE(run("train --data " + data + " --out " + resumed + kTinyTrain +
              " --set train.epochs=4 --resume " + part + "/last.ckpt") == 0);
  CHECK(same_bytes(resumed + "/last.ckpt", straight + "/last.ckpt"));
}

TEST_CASE("cli: NaN injection aborts with exit code 3 and preserves the partial log") {
  TempDir tmp("nan");
  const std::string data = tmp / "data";
  REQUIRE(run("gen --out " + data + kTinyGen) == 0);
  const std::string out = tmp / "run";
  CHECK(run("train --data " + data + " --out " + out + kTinyTrain +
            " --set train.lr=1e6 --set train.optimizer=sgd --set train.epochs=9"
            " --set model.hidden_activation=identity") == 3);
  CHECK(fs::exists(out + "/log.jsonl"));
  CHECK(!slurp(out + "/log.jsonl").empty());
}

TEST_CASE("cli: dataset/graph mismatch is a startup data error") {
  TempDir tmp("mismatch");
  const std::string data = tmp / "data";
  REQUIRE(run("gen --out " + data + kTinyGen) == 0);

  // A 5-node chain graph file cannot train against a 21-channel dataset.
  std::ofstream g(tmp / "chain.graph");
  g << "node a\nnode b\nnode c\nnode d\nnode e\nbone a b\nbone b c\nbone c d\nbone d e\n";
  g.close();
  CHECK(run("train --data " + data + " --out " + (tmp / "run") + kTinyTrain +
            " --set graph.file=" + (tmp / "chain.graph")) == 2);
}

TEST_CASE("cli: eval without ground truth fails with a data error") {
  TempDir tmp("nogt");
  const std::string data = tmp / "data";
  REQUIRE(run("gen --out " + data + " --set synth.count=2 --set synth.test_count=1 --seed 3") == 0);
  // Strip the coordinate footer from the only test sample: keep bytes up to
  // the footer flag and append a zero flag.
  const std::string sample = data + "/test/000000.hm";
  std::string bytes = slurp(sample);
  const std::size_t maps_end = 8 + 4 + 12 + std::size_t(21 * 32 * 32 * 8);
  std::ofstream out(sample, std::ios::binary);
  out.write(bytes.data(), std::streamsize(maps_end));
  char zero = 0;
  out.write(&zero, 1);
  out.close();
  CHECK(run("eval --model missing.ckpt --data " + data + " --out " + (tmp / "e")) == 2);
}

TEST_CASE("cli: gradcheck passes on a small config and honors --params and tolerance") {
  const std::string small =
      " --set model.heads=2 --set model.layers=2 --set model.kernel=3"
      " --set synth.map_rows=12 --set synth.map_cols=12 --set corrupt.noise_floor=0.05"
      " --seed 5 --threads 2";
  CHECK(run("gradcheck" + small) == 0);
  CHECK(run("gradcheck --params pointer" + small) == 0);
  // An unachievable tolerance demonstrates the failure path.
  CHECK(run("gradcheck" + small + " --set gradcheck.tolerance=1e-15") == 3);
  // The parameter-count guard refuses oversized models.
  CHECK(run("gradcheck --set gradcheck.max_params=10" + small) == 1);
}

TEST_CASE("cli: inspect prints the graph and matrices") {
  TempDir tmp("inspect");
  const std::string cmd = kBin + " inspect > " + (tmp / "out.txt") + " 2>&1";
  REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  const std::string text = slurp(tmp / "out.txt");
  CHECK(text.find("21 nodes") != std::string::npos);
  CHECK(text.find("61 directed edges") != std::string::npos);
  CHECK(text.find("wrist") != std::string::npos);
  CHECK(text.find("edge order") != std::string::npos);
  CHECK(text.find("broadcast matrix") != std::string::npos);
  CHECK(text.find("aggregation matrix") != std::string::npos);
}
