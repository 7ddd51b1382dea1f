// Drives the built command-line tool end to end.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>

#include "selfteach/records.hpp"
#include "test_util.hpp"

using namespace selfteach;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result cli(const std::string& args) {
  const std::string cmd = std::string(SELFTEACH_CLI) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

const fs::path kData = SELFTEACH_TEST_DATA;

}  // namespace

TEST_CASE("forge matches the golden output") {
  testing::TempDir dir;
  const auto r = cli("forge " + (kData / "forge/qa.jsonl").string() + " --out " + dir.path().string() +
                     " --set corpus=" + (kData / "forge/docs.jsonl").string() + " --extractive --clean-context");
  REQUIRE(r.code == 0);
  for (const char* name : {"weak_mc.jsonl", "extractive.jsonl", "weak_mc_clean.jsonl", "forge_summary.json"}) {
    INFO(name);
    CHECK(read_file(dir / name) == read_file(kData / "forge/expected" / name));
  }
}

TEST_CASE("exit codes") {
  testing::TempDir dir;
  SUBCASE("usage errors exit 1") {
    CHECK(cli("").code == 1);
    CHECK(cli("no-such-command").code == 1);
    CHECK(cli("forge").code == 1);
    CHECK(cli("run m.json --set no_such_key=1").code == 1);
  }
  SUBCASE("an out-of-range lambda is a usage error") {
    REQUIRE(cli("synth --out " + dir.path().string() + " --n-train 4 --n-test 4 --n-weak 4").code == 0);
    const auto r = cli("run " + (dir / "manifest.json").string() + " --lambda 2");
    CHECK(r.code == 1);
    CHECK(r.out.find("lambda") != std::string::npos);
  }
  SUBCASE("help exits 0") { CHECK(cli("--help").code == 0); }
  SUBCASE("malformed data exits 2 and names the line") {
    dir.write("bad.jsonl", "{\"id\":\"a\",\"question\":\"q\",\"options\":[\"x\",\"y\"],\"answer_index\":0}\n{oops\n");
    const auto r = cli("forge " + (dir / "bad.jsonl").string() + " --out " + dir.path().string() +
                       " --set corpus=" + (kData / "forge/docs.jsonl").string());
    CHECK(r.code == 2);
    CHECK(r.out.find("bad.jsonl:2:") != std::string::npos);
  }
  SUBCASE("local backend without a corpus is a usage error") {
    CHECK(cli("forge " + (kData / "forge/qa.jsonl").string() + " --out " + dir.path().string()).code == 1);
  }
}

TEST_CASE("synth, teach, softlabels and eval") {
  testing::TempDir dir;
  const std::string d = dir.path().string();
  REQUIRE(cli("synth --out " + d + " --n-train 24 --n-test 12 --n-weak 40").code == 0);
  const std::string common = " --seed 3 --set d_emb=8 --set max_len=64 --epochs 1";
  const auto student_first = cli("teach " + d + "/manifest.json --stage student" + common);
  CHECK(student_first.code == 1);
  CHECK(student_first.out.find("has not completed") != std::string::npos);

  const auto teacher = cli("teach " + d + "/manifest.json --stage teacher" + common);
  REQUIRE(teacher.code == 0);
  CHECK(teacher.out.find("teacher-s3-") != std::string::npos);
  const std::string ckpt = d + "/run/checkpoints/seed3/teacher.ckpt";
  REQUIRE(fs::exists(ckpt));

  const auto soft = cli("softlabels --checkpoint " + ckpt + " --dataset " + d + "/train.jsonl --out " + d +
                        "/soft.jsonl --lambda 1");
  REQUIRE(soft.code == 0);
  CHECK(soft.out.find("\"records\":24") != std::string::npos);

  const auto eval = cli("eval --checkpoint " + ckpt + " --dataset " + d + "/test.jsonl --split test --out " + d +
                        "/eval.json");
  REQUIRE(eval.code == 0);
  const auto report = Json::parse(read_file(dir / "eval.json"));
  CHECK(report.at(0).at("metric") == "accuracy");
  CHECK(report.at(0).at("n") == 12);

  SUBCASE("eval refuses a dataset of the other task") {
    write_jsonl(dir / "spans.jsonl", {Json{{"id", "e1"}, {"context", "abc"}, {"question", "q"},
                                           {"answer_text", "b"}, {"answer_start", 1}, {"answer_end", 2}}});
    const auto r = cli("eval --checkpoint " + ckpt + " --dataset " + d + "/spans.jsonl");
    CHECK(r.code != 0);
  }
  SUBCASE("a changed manifest cannot reuse the run directory") {
    const auto r = cli("teach " + d + "/manifest.json --stage teacher --seed 3 --set d_emb=8 --set max_len=64 "
                       "--epochs 1 --lambda 0.2");
    CHECK(r.code == 1);
    CHECK(r.out.find("different manifest") != std::string::npos);
  }
}
