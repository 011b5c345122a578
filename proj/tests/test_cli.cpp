#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hubrouter/cli.hpp"
#include "hubrouter/errors.hpp"

using namespace hubrouter;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "hubrouter");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("hubrouter_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("demo prints the worked-example shapes") {
  const auto dir = scratch("demo");
  const auto r = invoke({"demo", "--out", dir.string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("H' 2x64") != std::string::npos);
  CHECK(r.out.find("F 8x64") != std::string::npos);
  CHECK(r.out.find("|S| 4") != std::string::npos);
  CHECK(r.out.find("council 4x4") != std::string::npos);
  CHECK(fs::exists(dir / "manifest.txt"));
}

TEST_CASE("usage errors exit 1") {
  CHECK(invoke({}).code == 1);
  CHECK(invoke({"demo", "--bogus"}).code == 1);
  CHECK(invoke({"frobnicate"}).code == 1);
  CHECK(invoke({"audit", "--chunk-size", "zero", "--out", scratch("bad").string()}).code == 1);
  CHECK(invoke({"audit", "--set", "nonsense=1", "--out", scratch("bad2").string()}).code == 1);
  CHECK(invoke({"--help"}).code == 0);
}

TEST_CASE("audit exit codes follow the leak result") {
  const auto clean = invoke({"audit", "--chunk-size", "1", "--council-causal", "true", "--trials", "20", "--set",
                             "audit_n=32", "--out", scratch("audit_ok").string()});
  CHECK(clean.code == 0);
  CHECK(clean.out.find("violations: 0") != std::string::npos);
  const auto dir = scratch("audit_leak");
  const auto leak = invoke({"audit", "--chunk-size", "1", "--council-causal", "false", "--trials", "40", "--set",
                            "audit_n=32", "--out", dir.string()});
  CHECK(leak.code == 2);
  CHECK(slurp(dir / "audit_violations.csv").rfind("trial,q,i,delta\n", 0) == 0);
}

TEST_CASE("settings resolve defaults < file < flags and the manifest reproduces them") {
  const auto dir = scratch("precedence");
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "run.cfg");
    f << "# comment\n"
      << "trials = 3\n"
      << "seed = 9   # trailing comment\n"
      << "n_hubs = 5\n"
      << "audit_n = 16\n";
  }
  const auto out_dir = dir / "out";
  const auto r = invoke({"audit", "--config", (dir / "run.cfg").string(), "--seed", "4", "--chunk-size", "2", "--out",
                         out_dir.string()});
  REQUIRE(r.code == 0);
  const auto manifest = slurp(out_dir / "manifest.txt");
  CHECK(manifest.find("trials = 3\n") != std::string::npos);
  CHECK(manifest.find("seed = 4\n") != std::string::npos);
  CHECK(manifest.find("n_hubs = 5\n") != std::string::npos);
  CHECK(manifest.find("chunk_size = 2\n") != std::string::npos);
  CHECK(manifest.find("subcommand = audit\n") != std::string::npos);
  for (const auto& doc : cli::setting_docs()) CHECK(manifest.find(doc.key + " = ") != std::string::npos);

  const auto again = invoke({"audit", "--config", (out_dir / "manifest.txt").string(), "--out", (dir / "again").string()});
  CHECK(again.code == 0);
  CHECK(slurp(dir / "again" / "audit_violations.csv") == slurp(out_dir / "audit_violations.csv"));
}

TEST_CASE("config parsing rejects malformed lines and unknown keys") {
  CHECK_THROWS_AS(cli::parse_config_text("just words\n"), ConfigError);
  cli::RunConfig cfg;
  CHECK_THROWS_AS(cli::apply_setting(cfg, "no_such_key", "1"), ConfigError);
  CHECK_THROWS_AS(cli::apply_setting(cfg, "steps", "-3"), ConfigError);
  CHECK_THROWS_AS(cli::apply_setting(cfg, "council_causal", "maybe"), ConfigError);
  cli::apply_setting(cfg, "chunk_size", "bidir");
  CHECK_FALSE(cfg.router.chunk_size.has_value());
  cli::apply_setting(cfg, "m_list", "1, 6,10");
  CHECK(cfg.m_list == std::vector<std::size_t>{1, 6, 10});
  CHECK(cli::ortho_variants("both") == std::vector<bool>{false, true});
}

TEST_CASE("train is reproducible and checkpoints reload into matching configs only") {
  const auto base = scratch("train");
  const std::vector<std::string> common = {"--steps", "3", "--set", "seq_len=16", "--set", "vocab=16", "--set",
                                           "d_model=16", "--set", "top_k=4", "--set", "batch=2", "--set",
                                           "eval_samples=5", "--seed", "5"};
  auto args = [&](const std::string& sub, const fs::path& out, std::vector<std::string> extra = {"--n-hubs", "3"}) {
    std::vector<std::string> a = {sub};
    a.insert(a.end(), common.begin(), common.end());
    a.push_back("--out");
    a.push_back(out.string());
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  };
  REQUIRE(invoke(args("train", base / "a")).code == 0);
  REQUIRE(invoke(args("train", base / "b")).code == 0);
  CHECK(slurp(base / "a" / "model.ckpt") == slurp(base / "b" / "model.ckpt"));
  CHECK(slurp(base / "a" / "losses.csv") == slurp(base / "b" / "losses.csv"));

  const auto eval = invoke(args("train", base / "c", {"--n-hubs", "3", "--load", (base / "a" / "model.ckpt").string()}));
  CHECK(eval.code == 0);
  CHECK(eval.out.find("precision") != std::string::npos);

  const auto wrong = invoke(args("train", base / "d", {"--load", (base / "a" / "model.ckpt").string(), "--n-hubs", "6"}));
  CHECK(wrong.code == 1);
  CHECK(wrong.err.find("hub.H") != std::string::npos);
}

TEST_CASE("sweep writes per-cell and summary CSVs") {
  const auto dir = scratch("sweep");
  const auto r = invoke({"sweep", "--m", "1,2", "--seeds", "2", "--ortho", "both", "--steps", "2", "--set", "seq_len=16",
                         "--set", "vocab=16", "--set", "d_model=16", "--set", "top_k=4", "--set", "batch=2", "--set",
                         "eval_samples=4", "--out", dir.string()});
  REQUIRE(r.code == 0);
  std::istringstream cells(slurp(dir / "sweep.csv"));
  std::size_t lines = 0;
  for (std::string l; std::getline(cells, l);) ++lines;
  CHECK(lines == 1 + 8);
  CHECK(slurp(dir / "summary.csv").rfind("M,ortho,n_success,mean_precision\n", 0) == 0);
}
