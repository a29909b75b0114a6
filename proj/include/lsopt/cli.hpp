#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace lsopt {

// Exit codes shared by every subcommand.
inline constexpr int kExitSuccess = 0;
inline constexpr int kExitConfig = 2;      // bad config, paths, or input files
inline constexpr int kExitNumeric = 3;     // numeric failure (incl. singular GP)
inline constexpr int kExitIncomplete = 4;  // run aborted before its budget

// Command-line overrides applied on top of the config file.
struct CliOverrides {
  std::optional<std::uint64_t> seed;  // replaces the relevant seed (list)
  std::optional<std::string> out;     // replaces the relevant output path
  std::optional<std::string> method;  // run only: lso|dbas|cem-pi|fbvae|rwr
};

// Each command returns its process exit code and reports errors on stderr.
int cmd_generate_data(const std::string& config_path, const CliOverrides& ov);
int cmd_train_vae(const std::string& config_path, const CliOverrides& ov);
int cmd_run(const std::string& config_path, const CliOverrides& ov);
int cmd_report(const std::vector<std::string>& run_dirs,
               const std::string& out_path);

}  // namespace lsopt
