#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lsopt/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{
      "Latent-space black-box optimization with weighted retraining "
      "(2-D shape-area benchmark)"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> method;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config file (JSON)")
        ->required();
    sub->add_option("--seed", seed, "override the config's seed(s)");
    sub->add_option("--out", out, "override the config's output path");
  };

  CLI::App* generate = app.add_subcommand(
      "generate-data",
      "generate the squares dataset (SHP1) and its weighted histogram CSV");
  add_common(generate);

  CLI::App* train = app.add_subcommand(
      "train-vae", "pretrain the VAE and write a parameter checkpoint");
  add_common(train);

  CLI::App* run = app.add_subcommand(
      "run", "run latent-space optimization or a CEM-family baseline");
  add_common(run);
  run->add_option("--method", method,
                  "optimization method: lso|dbas|cem-pi|fbvae|rwr")
      ->check(CLI::IsMember({"lso", "dbas", "cem-pi", "fbvae", "rwr"}));

  CLI::App* report = app.add_subcommand(
      "report", "aggregate run directories into mean/std Top-K curves");
  std::vector<std::string> run_dirs;
  std::string report_out = "report.csv";
  report->add_option("dirs", run_dirs, "run directories (each with results.csv)")
      ->required();
  report->add_option("--out", report_out, "output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : lsopt::kExitConfig;
  }

  const lsopt::CliOverrides overrides{seed, out, method};
  if (generate->parsed()) return lsopt::cmd_generate_data(config_path, overrides);
  if (train->parsed()) return lsopt::cmd_train_vae(config_path, overrides);
  if (run->parsed()) return lsopt::cmd_run(config_path, overrides);
  return lsopt::cmd_report(run_dirs, report_out);
}
