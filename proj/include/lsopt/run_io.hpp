#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "lsopt/lso.hpp"
#include "lsopt/shapes.hpp"
#include "lsopt/vae.hpp"

namespace lsopt {

// Experiment configuration file: one JSON document covering dataset
// generation, VAE pretraining, and the optimization run.  Every field has a
// default mirroring the reference hyperparameters, so an empty object "{}" is
// a valid config.  Unknown keys are rejected.  Infinite values (rank k = inf,
// never retrain) are spelled as JSON null.
struct DatasetSection {
  SquaresDatasetConfig gen;
  std::string path = "data/squares.shp1";
  // ks for the weight-mass columns of the generation histogram; inf = uniform.
  std::vector<double> histogram_ks = {1e-3,
                                      std::numeric_limits<double>::infinity()};
};

struct VaeSection {
  std::vector<int> hidden = {512, 128};
  TrainConfig train;  // pretraining schedule
  // Rank-weighting k for the pretraining weights; inf = uniform.
  double rank_k = std::numeric_limits<double>::infinity();
  std::string path = "models/vae.vaep";
  VaeSection() {
    train.epochs = 20.0;
    train.batch_size = 128;
  }
};

struct RunSection {
  std::string method = "lso";  // lso | dbas | cem-pi | fbvae | rwr
  std::string label;           // report grouping key; defaults to method
  LsoConfig lso;
  CemConfig cem;
};

struct ExperimentConfig {
  DatasetSection dataset;
  VaeSection vae;
  RunSection run;
  std::vector<std::uint64_t> seeds = {0};
  std::string out_dir = "out";
  std::string checkpoint_policy = "last";  // all | last | none
};

// Parse/validate a config document; throws ConfigError with the offending key
// path on unknown keys, wrong types, or out-of-range values.
ExperimentConfig parse_experiment_config(const nlohmann::json& doc);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// The fully-defaulted configuration as a canonical JSON document; this is
// what meta.json echoes.  parse(effective(c)) == c.
nlohmann::json effective_config_json(const ExperimentConfig& config);

// Shortest round-trip decimal form of a double ("nan" for NaN); the one
// formatter used for every CSV so reruns are byte-identical.
std::string format_double(double value);

// results.csv: header plus one row per accepted query,
// query_index,score,top1,top10,top50,novel,retrain_event.
std::string results_csv_text(const LsoRunRecord& record);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);
std::uint32_t file_crc32(const std::filesystem::path& path);

struct RunArtifacts {
  std::filesystem::path dir;
  std::filesystem::path results_csv;
  std::filesystem::path meta_json;
};

// Write one seed's run directory: results.csv plus meta.json (config echo,
// seed, dataset digest, GP hyperparameter history, retrain events, wall time,
// and the CRC-32 of the results table).  `checkpoint_files` lists checkpoint
// basenames already written into `dir` by the caller.
RunArtifacts write_run_directory(const std::filesystem::path& dir,
                                 const ExperimentConfig& config,
                                 std::uint64_t seed, const LsoRunRecord& record,
                                 std::uint32_t dataset_crc32,
                                 std::size_t dataset_count, double wall_seconds,
                                 const std::vector<std::string>& checkpoint_files);

}  // namespace lsopt
