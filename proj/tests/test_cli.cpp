#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(MGSR_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path fresh_dir(const char* name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Each command creates one run directory under --out.
fs::path only_run_dir(const fs::path& out) {
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(out))
    if (e.is_directory()) dirs.push_back(e.path());
  REQUIRE(dirs.size() == 1);
  return dirs.front();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Generates a small shared corpus once per test binary run.
const fs::path& corpus_dir() {
  static const fs::path dir = [] {
    const fs::path out = fresh_dir("mgsr_cli_corpus");
    REQUIRE(run("gen-corpus --train-size 48 --val-size 8 --test-size 8 --seed 5 --out " +
                out.string()) == 0);
    return only_run_dir(out);
  }();
  return dir;
}

}  // namespace

TEST_CASE("exit codes") {
  CHECK(run("--help") == 0);
  CHECK(run("train-teacher --help") == 0);
  CHECK(run("--no-such-flag") == 2);
  CHECK(run("train-teacher --bogus") == 2);
  CHECK(run("no-such-command") == 2);
  CHECK(run("train-teacher --corpus /no/such/dir --out /tmp/mgsr_cli_nodir") == 1);
  CHECK(run("evaluate --corpus " + corpus_dir().string() +
            " --model /no/such/file.ckpt --out /tmp/mgsr_cli_nockpt") == 1);
}

TEST_CASE("gen-corpus is byte deterministic") {
  const auto a = fresh_dir("mgsr_cli_gen_a");
  const auto b = fresh_dir("mgsr_cli_gen_b");
  const std::string flags = "gen-corpus --train-size 32 --val-size 8 --test-size 8 --seed 9 --out ";
  REQUIRE(run(flags + a.string()) == 0);
  REQUIRE(run(flags + b.string()) == 0);
  for (const char* f : {"train.tsv", "valid.tsv", "test.tsv", "vocab.txt",
                        "lexicon.txt", "spans.train.txt"})
    CHECK(slurp(only_run_dir(a) / f) == slurp(only_run_dir(b) / f));
}

TEST_CASE("training through the CLI") {
  const std::string corpus = corpus_dir().string();
  const std::string small = " --layers 1 --heads 2 --d-model 16 --epochs 1 --seed 3";

  const auto tdir = fresh_dir("mgsr_cli_teacher");
  REQUIRE(run("train-teacher --corpus " + corpus + small + " --out " + tdir.string()) == 0);
  const fs::path trun = only_run_dir(tdir);
  CHECK(fs::exists(trun / "teacher.ckpt"));
  CHECK(fs::exists(trun / "config.json"));
  CHECK(fs::exists(trun / "metrics.jsonl"));

  SUBCASE("same flags and seed give identical checkpoint bytes") {
    const auto again = fresh_dir("mgsr_cli_teacher2");
    REQUIRE(run("train-teacher --corpus " + corpus + small + " --out " + again.string()) == 0);
    CHECK(slurp(only_run_dir(again) / "teacher.ckpt") == slurp(trun / "teacher.ckpt"));
  }

  SUBCASE("distill with SFT-only weights matches train-teacher") {
    const auto sdir = fresh_dir("mgsr_cli_sft_equiv");
    REQUIRE(run("distill --corpus " + corpus + " --teacher " +
                (trun / "teacher.ckpt").string() + small +
                " --policy fixed --loss-weights 1,0,0 --out " + sdir.string()) == 0);
    CHECK(slurp(only_run_dir(sdir) / "student.ckpt") == slurp(trun / "teacher.ckpt"));
  }

  SUBCASE("evaluate and generate consume the checkpoint") {
    const auto edir = fresh_dir("mgsr_cli_eval");
    REQUIRE(run("evaluate --corpus " + corpus + " --model " +
                (trun / "teacher.ckpt").string() + " --seeds 10 20 --out " +
                edir.string()) == 0);
    CHECK(fs::exists(only_run_dir(edir) / "scores.json"));

    const auto pfile = fs::temp_directory_path() / "mgsr_cli_prompts.txt";
    std::ofstream(pfile) << "describe the cat near the dog\n";
    const auto gdir = fresh_dir("mgsr_cli_gen");
    REQUIRE(run("generate --corpus " + corpus + " --model " +
                (trun / "teacher.ckpt").string() + " --prompts " + pfile.string() +
                " --out " + gdir.string()) == 0);
    CHECK(fs::exists(only_run_dir(gdir) / "completions.jsonl"));
  }

  SUBCASE("an overflowing loss weight aborts with exit code 3") {
    const auto ndir = fresh_dir("mgsr_cli_nan");
    CHECK(run("train-teacher --corpus " + corpus + small +
              " --loss-weights 1e308,0,0 --out " + ndir.string()) == 3);
  }
}
