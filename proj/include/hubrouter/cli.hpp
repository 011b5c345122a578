#pragma once
// Command-line driver: demo, audit, sweep, bench and train.
//
// Settings resolve as defaults < config file (--config) < flags. Every run
// writes manifest.txt into its output directory holding the full resolved
// configuration in the same key = value format, so
//   hubrouter <subcommand> --config <out>/manifest.txt
// repeats the run.
//
// Exit codes: 0 success, 1 usage / config / contract error, 2 a failed check
// (audit violations).

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hubrouter/bench.hpp"
#include "hubrouter/router.hpp"
#include "hubrouter/routing_task.hpp"

namespace hubrouter::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitCheckFailed = 2;

struct RunConfig {
  std::string subcommand;
  std::uint64_t seed = 0;
  std::string out = "hubrouter_out";

  HubRouterConfig router;
  TaskConfig task;

  // sweep
  std::vector<std::size_t> m_list = {1, 6, 10};
  std::size_t seeds = 5;
  std::string ortho = "off";  // on | off | both
  unsigned jobs = 1;

  // audit
  std::size_t trials = 100;
  std::size_t audit_n = 64;
  double threshold = 1e-9;

  // bench
  std::vector<std::size_t> lengths = {256, 512, 1024, 2048};
  std::size_t reps = 5;

  // train: evaluate this checkpoint instead of training when non-empty
  std::string load;
};

struct SettingDoc {
  std::string key;
  std::string help;
};

// Every key accepted in config files and by --set, with a one-line description.
const std::vector<SettingDoc>& setting_docs();

// Throws ConfigError for an unknown key or a malformed value.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

// key = value lines; '#' starts a comment.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);

// Resolved settings as key = value lines, one per setting_docs() key.
std::string manifest_text(const RunConfig& cfg);

std::vector<bool> ortho_variants(const std::string& mode);

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hubrouter::cli
