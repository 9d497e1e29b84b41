#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ppgauth/data_io.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace ppgauth;

namespace {

struct RunResult {
  int code = 0;
  std::string err;
};

RunResult cli(const std::string& args, const fs::path& scratch) {
  const fs::path err = scratch / "stderr.txt";
  const std::string cmd = std::string(PPGAUTH_CLI) + " " + args + " >" + (scratch / "stdout.txt").string() + " 2>" +
                          err.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = fs::exists(err) ? read_file(err) : "";
  return r;
}

std::string last_line(const std::string& s) {
  std::istringstream in(s);
  std::string line, last;
  while (std::getline(in, line)) {
    if (!line.empty()) last = line;
  }
  return last;
}

}  // namespace

TEST_CASE("preprocess --dump-stages writes six stage files", "[cli]") {
  testutil::TempDir dir("cli_stages");
  SyntheticSubjectSpec s;
  s.subject_id = "one";
  save_recording(dir / "one.csv", generate_subject(s, 70.0, 14.0));
  const auto r = cli("preprocess --input " + (dir / "one.csv").string() + " --out " + (dir / "pre").string() +
                         " --dump-stages",
                     dir.path());
  REQUIRE(r.code == 0);
  const fs::path st = dir / "pre" / "stages" / "one";
  const std::vector<std::string> names = {"00_raw.csv",        "01_detrended.csv", "02_artifact_suppressed.csv",
                                          "03_bandpassed.csv", "04_resampled.csv", "05_normalized.csv"};
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(st)) files += e.is_regular_file();
  CHECK(files == 6);
  for (const auto& n : names) REQUIRE(fs::exists(st / n));
  CHECK(load_recording(st / "00_raw.csv").size() == 980);
  CHECK(load_recording(st / "05_normalized.csv").size() == 4900);
  CHECK(load_recording(dir / "pre" / "one.csv").samples() == load_recording(st / "05_normalized.csv").samples());
  CHECK(fs::exists(dir / "pre" / "manifest.json"));
}

TEST_CASE("stage subcommands rerun byte-identically", "[cli]") {
  testutil::TempDir dir("cli_rerun");
  const auto d = dir.path().string();
  for (const char* tag : {"a", "b"}) {
    const std::string t = tag;
    REQUIRE(cli("gen-data --subjects 2 --seed 3 --out " + d + "/data_" + t, dir.path()).code == 0);
    REQUIRE(cli("preprocess --input " + d + "/data_" + t + " --out " + d + "/pre_" + t, dir.path()).code == 0);
    REQUIRE(cli("segment --input " + d + "/pre_" + t + " --out " + d + "/seg_" + t, dir.path()).code == 0);
  }
  for (const char* sub : {"data_", "pre_", "seg_"}) {
    for (const auto& e : fs::directory_iterator(dir / (std::string(sub) + "a"))) {
      const fs::path other = dir / (std::string(sub) + "b") / e.path().filename();
      REQUIRE(fs::exists(other));
      CHECK(read_file(e.path()) == read_file(other));
    }
  }
}

TEST_CASE("errors are reported as JSON with a nonzero exit", "[cli]") {
  testutil::TempDir dir("cli_error");
  write_file_atomic(dir / "bad.csv", "s,14\n1\nnan\n");
  const auto r = cli("preprocess --input " + (dir / "bad.csv").string(), dir.path());
  CHECK(r.code != 0);
  const auto j = nlohmann::json::parse(last_line(r.err));
  CHECK(j.at("kind") == "parse_error");
  CHECK(j.at("line") == 3);
  CHECK(j.at("subcommand") == "preprocess");
}

TEST_CASE("small end-to-end pipeline", "[cli]") {
  testutil::TempDir dir("cli_pipeline");
  write_file_atomic(dir / "small.ini", "[model]\ninput_size = 32\n[train]\nepochs = 2\n[pipeline]\nablation = false\n");
  const fs::path run = dir / "run";
  const auto r = cli("pipeline --subjects 3 --seed 7 --config " + (dir / "small.ini").string() + " --run-dir " +
                         run.string(),
                     dir.path());
  INFO(r.err);
  REQUIRE(r.code == 0);
  for (const char* f : {"config.ini", "data/manifest.json", "archive/index.json", "archive/scal_00000.bin",
                        "checkpoint.bin", "gallery.json", "metrics.json", "metrics.csv", "train_metrics.csv",
                        "genuine_scores.csv", "impostor_scores.csv", "run.log"}) {
    INFO(f);
    CHECK(fs::exists(run / f));
  }
  const auto m = nlohmann::json::parse(read_file(run / "metrics.json"));
  CHECK(m.contains("auc"));
  CHECK(m.contains("roc"));

  // Downstream subcommands accept the pipeline's artifacts.
  const std::string ck = (run / "checkpoint.bin").string();
  CHECK(cli("evaluate --checkpoint " + ck + " --data-dir " + (run / "archive").string() + " --out " +
                (dir / "ev").string() + " --config " + (dir / "small.ini").string(),
            dir.path())
            .code == 0);
  CHECK(fs::exists(dir / "ev" / "metrics.json"));
  const auto a = cli("authenticate --checkpoint " + ck + " --gallery " + (run / "gallery.json").string() +
                         " --input " + (run / "data" / "subject_01.csv").string() + " --threshold -1 --config " +
                         (dir / "small.ini").string(),
                     dir.path());
  CHECK(a.code == 0);
  const auto decision = nlohmann::json::parse(read_file(dir / "stdout.txt"));
  CHECK(decision.at("decision").at("accepted") == true);
}
