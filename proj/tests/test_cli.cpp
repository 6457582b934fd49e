#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

namespace {

struct Outcome {
  int code = -1;
  std::string out;
};

Outcome run(const std::string& args) {
  const std::string cmd = std::string(SAPS_CLI_PATH) + " " + args + " 2>&1";
  Outcome o;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 4096> buf;
  std::size_t got;
  while ((got = std::fread(buf.data(), 1, buf.size(), p)) > 0) o.out.append(buf.data(), got);
  const int status = pclose(p);
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return o;
}

std::filesystem::path write_config(const std::string& name, const std::string& json) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p) << json;
  return p;
}

}  // namespace

TEST_CASE("cost subcommand prints the table values") {
  Outcome o = run("cost --algo SAPS-PSGD --N 100 --n 8 --T 10 --c 10");
  CHECK(o.code == 0);
  CHECK(o.out.find("= 100\n") != std::string::npos);
  CHECK(o.out.find("= 200\n") != std::string::npos);

  o = run("cost --algo D-PSGD --N 100 --n 8 --T 10 --c 1 --np 2");
  CHECK(o.code == 0);
  CHECK(o.out.find("= 8000\n") != std::string::npos);

  CHECK(run("cost --algo D-PSGD --N 100 --n 8 --T 10 --c 1").code == 1);
  CHECK(run("cost --algo nope --N 1 --n 1 --T 1 --c 1").code == 1);
}

TEST_CASE("run subcommand writes the CSV") {
  const auto cfg = write_config("saps_cli_run.json",
                                R"({"n": 4, "N": 5, "T": 12, "c": 2, "master_seed": 3})");
  const auto csv = std::filesystem::temp_directory_path() / "saps_cli_run.csv";
  const Outcome o = run("run --config " + cfg.string() + " --out " + csv.string());
  CHECK(o.code == 0);
  CHECK(o.out.find("final loss") != std::string::npos);
  std::ifstream f(csv);
  int lines = 0;
  for (std::string line; std::getline(f, line);) ++lines;
  CHECK(lines == 13);

  const Outcome tcp = run("run --config " + cfg.string() + " --transport tcp --seed 4");
  CHECK(tcp.code == 0);
  CHECK(tcp.out.find("tcp") != std::string::npos);
  std::filesystem::remove(csv);
  std::filesystem::remove(cfg);
}

TEST_CASE("invalid configs exit with 1") {
  const auto unknown = write_config("saps_cli_bad.json", R"({"n": 4, "workers": 8})");
  Outcome o = run("run --config " + unknown.string());
  CHECK(o.code == 1);
  CHECK(o.out.find("workers") != std::string::npos);

  const auto invalid = write_config("saps_cli_bad2.json", R"({"n": 1})");
  CHECK(run("run --config " + invalid.string()).code == 1);
  CHECK(run("run --config /nonexistent.json").code == 1);
  CHECK(run("frobnicate").code == 1);
  std::filesystem::remove(unknown);
  std::filesystem::remove(invalid);
}

TEST_CASE("rho subcommand") {
  const auto cfg = write_config("saps_cli_rho.json", R"({"n": 6, "c": 10})");
  const Outcome o = run("rho --config " + cfg.string() + " --samples 300");
  CHECK(o.code == 0);
  CHECK(o.out.find("rho") != std::string::npos);
  CHECK(o.out.find("D1") != std::string::npos);
  CHECK(run("rho --config " + cfg.string() + " --samples 10").code == 1);
  std::filesystem::remove(cfg);
}

TEST_CASE("verify passes and the injected bad matrix fails with exit 2") {
  Outcome ok = run("verify --quick");
  CHECK(ok.code == 0);
  CHECK(ok.out.find("all suites passed") != std::string::npos);

  Outcome bad = run("verify --quick --inject-bad-gossip");
  CHECK(bad.code == 2);
  CHECK(bad.out.find("row sums") != std::string::npos);
}
