#include "lsopt/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>

#include "lsopt/crc32.hpp"
#include "lsopt/rng.hpp"
#include "lsopt/run_io.hpp"

namespace fs = std::filesystem;

namespace lsopt {
namespace {

constexpr std::uint64_t kSaltVaeInit = 0x1717;

// Map domain exceptions onto the documented exit codes.
int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ExhaustedGridError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIncomplete;
  } catch (const NumericError& e) {  // covers SingularModelError
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {  // config, format, invalid input
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

void ensure_parent_dir(const fs::path& path) {
  const fs::path parent = path.parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

double area_objective(const BinaryImage& image) {
  return static_cast<double>(area(image));
}

WeightedDataset load_dataset(const std::string& path) {
  auto [points, scores] = read_shp1(path);
  WeightedDataset ds;
  ds.weights = {std::vector<double>(points.size(), 1.0 / points.size()),
                Normalization::SumToOne};
  ds.points = std::move(points);
  ds.scores = std::move(scores);
  return ds;
}

// Distinct areas ascending; per area the raw count, the plain frequency, and
// one rank-weight mass column per requested k (inf = uniform weighting).
std::string histogram_csv(const std::vector<double>& scores,
                          const std::vector<double>& ks) {
  std::map<double, std::size_t> order;  // area -> first index (dedup)
  for (double s : scores) order.emplace(s, order.size());

  std::string header = "area,count,frequency";
  std::vector<WeightVector> weights;
  weights.reserve(ks.size());
  for (double k : ks) {
    header += ",mass_k_" + format_double(k);
    weights.push_back(rank_weights(scores, k));
  }

  std::string out = header + "\n";
  for (const auto& [value, unused] : order) {
    std::size_t count = 0;
    std::vector<double> masses(ks.size(), 0.0);
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] == value) {
        ++count;
        for (std::size_t j = 0; j < ks.size(); ++j)
          masses[j] += weights[j].values[i];
      }
    }
    // Uniform weighting puts mass count/N on the group by definition; writing
    // it as the same expression as the frequency keeps the columns identical.
    for (std::size_t j = 0; j < ks.size(); ++j)
      if (!std::isfinite(ks[j]))
        masses[j] = static_cast<double>(count) /
                    static_cast<double>(scores.size());
    out += format_double(value);
    out += ',';
    out += std::to_string(count);
    out += ',';
    out += format_double(static_cast<double>(count) /
                         static_cast<double>(scores.size()));
    for (double mass : masses) {
      out += ',';
      out += format_double(mass);
    }
    out += '\n';
  }
  return out;
}

CemVariant variant_from_method(const std::string& method) {
  if (method == "dbas") return CemVariant::DbAS;
  if (method == "cem-pi") return CemVariant::CemPi;
  if (method == "fbvae") return CemVariant::Fbvae;
  if (method == "rwr") return CemVariant::Rwr;
  throw ConfigError("run: unknown method '" + method + "'");
}

// One parsed results.csv: the three Top-K columns.
struct ResultColumns {
  std::vector<double> top1, top10, top50;
};

double parse_csv_double(std::string_view field, const std::string& where) {
  double value = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size())
    throw ConfigError("report: bad numeric field '" + std::string(field) +
                      "' in " + where);
  return value;
}

ResultColumns parse_results_csv(const std::string& text, const std::string& where) {
  constexpr std::string_view kHeader =
      "query_index,score,top1,top10,top50,novel,retrain_event";
  ResultColumns cols;
  std::size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string_view line(text.data() + pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) continue;
    if (first) {
      if (line != kHeader)
        throw ConfigError("report: unexpected results.csv header in " + where);
      first = false;
      continue;
    }
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      fields.push_back(line.substr(start, comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (fields.size() != 7)
      throw ConfigError("report: malformed row in " + where);
    cols.top1.push_back(parse_csv_double(fields[2], where));
    cols.top10.push_back(parse_csv_double(fields[3], where));
    cols.top50.push_back(parse_csv_double(fields[4], where));
  }
  if (first) throw ConfigError("report: empty results.csv in " + where);
  return cols;
}

void append_aggregate_rows(std::string& out, const std::string& label,
                           const std::string& metric,
                           const std::vector<const std::vector<double>*>& runs) {
  const std::size_t rows = runs.front()->size();
  for (std::size_t i = 0; i < rows; ++i) {
    double mean = 0.0;
    for (const auto* run : runs) mean += (*run)[i];
    mean /= static_cast<double>(runs.size());
    double var = 0.0;
    for (const auto* run : runs) {
      const double d = (*run)[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(runs.size());
    out += label;
    out += ',';
    out += std::to_string(i + 1);
    out += ',';
    out += metric;
    out += ',';
    out += format_double(mean);
    out += ',';
    out += format_double(std::sqrt(var));
    out += '\n';
  }
}

}  // namespace

int cmd_generate_data(const std::string& config_path, const CliOverrides& ov) {
  return guarded([&] {
    ExperimentConfig c = load_experiment_config(config_path);
    if (ov.seed) c.dataset.gen.rng_seed = *ov.seed;
    if (ov.out) c.dataset.path = *ov.out;

    const WeightedDataset ds = generate_squares_dataset(c.dataset.gen);
    const fs::path path = c.dataset.path;
    ensure_parent_dir(path);
    write_shp1(path, ds.points, ds.scores);

    fs::path hist_path = path;
    hist_path.replace_extension();
    hist_path += "_histogram.csv";
    write_text_file(hist_path, histogram_csv(ds.scores, c.dataset.histogram_ks));

    std::cout << "wrote " << path.string() << " (" << ds.size()
              << " records) and " << hist_path.string() << "\n";
    return kExitSuccess;
  });
}

int cmd_train_vae(const std::string& config_path, const CliOverrides& ov) {
  return guarded([&] {
    ExperimentConfig c = load_experiment_config(config_path);
    if (ov.seed) c.vae.train.rng_seed = *ov.seed;
    if (ov.out) c.vae.path = *ov.out;

    WeightedDataset ds = load_dataset(c.dataset.path);
    ds.weights = rank_weights(ds.scores, c.vae.rank_k);

    VaeArchitecture arch;
    arch.hidden = c.vae.hidden;
    VaeParams params =
        init_vae_params(arch, split_seed(c.vae.train.rng_seed, kSaltVaeInit));
    params.train_seed = c.vae.train.rng_seed;
    params.config_echo = effective_config_json(c)["vae"].dump();

    TrainTrace trace;
    params = train(params, ds, c.vae.train, &trace);

    const fs::path path = c.vae.path;
    ensure_parent_dir(path);
    save_vae_params(path, params);

    std::string loss_csv = "step,loss\n";
    for (std::size_t i = 0; i < trace.step_values.size(); ++i) {
      loss_csv += std::to_string(i + 1);
      loss_csv += ',';
      loss_csv += format_double(-trace.step_values[i]);
      loss_csv += '\n';
    }
    fs::path loss_path = path;
    loss_path.replace_extension();
    loss_path += "_loss.csv";
    write_text_file(loss_path, loss_csv);

    std::cout << "wrote " << path.string() << " ("
              << params.parameter_count() << " parameters, "
              << trace.step_values.size() << " steps) and "
              << loss_path.string() << "\n";
    return kExitSuccess;
  });
}

int cmd_run(const std::string& config_path, const CliOverrides& ov) {
  return guarded([&] {
    ExperimentConfig c = load_experiment_config(config_path);
    if (ov.method) {
      static const char* kMethods[] = {"lso", "dbas", "cem-pi", "fbvae", "rwr"};
      if (std::find(std::begin(kMethods), std::end(kMethods), *ov.method) ==
          std::end(kMethods))
        throw ConfigError("run: --method must be one of lso, dbas, cem-pi, "
                          "fbvae, rwr");
      if (c.run.label == c.run.method) c.run.label = *ov.method;
      c.run.method = *ov.method;
    }
    if (ov.out) c.out_dir = *ov.out;
    const std::vector<std::uint64_t> seeds =
        ov.seed ? std::vector<std::uint64_t>{*ov.seed} : c.seeds;

    const WeightedDataset initial = load_dataset(c.dataset.path);
    const std::uint32_t dataset_crc = file_crc32(c.dataset.path);
    const VaeParams params0 = load_vae_params(c.vae.path);

    for (const std::uint64_t seed : seeds) {
      const fs::path dir = fs::path(c.out_dir) / ("seed_" + std::to_string(seed));
      fs::create_directories(dir);

      std::vector<std::string> checkpoints;
      LsoHooks hooks;
      if (c.checkpoint_policy == "all") {
        hooks.on_retrain = [&](std::size_t query_index, const VaeParams& p) {
          char name[40];
          std::snprintf(name, sizeof(name), "checkpoint_q%05zu.vaep",
                        query_index);
          save_vae_params(dir / name, p);
          checkpoints.emplace_back(name);
        };
      }

      const auto t0 = std::chrono::steady_clock::now();
      LsoResult result;
      if (c.run.method == "lso") {
        LsoConfig lc = c.run.lso;
        lc.rng_seed = seed;
        result = run_lso(initial, params0, area_objective, lc, hooks);
      } else {
        CemConfig cc = c.run.cem;
        cc.rng_seed = seed;
        result = run_cem_baseline(variant_from_method(c.run.method), initial,
                                  params0, area_objective, cc, hooks);
      }
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();

      if (c.checkpoint_policy == "all" || c.checkpoint_policy == "last") {
        save_vae_params(dir / "checkpoint_final.vaep", result.final_params);
        checkpoints.emplace_back("checkpoint_final.vaep");
      }
      const RunArtifacts artifacts =
          write_run_directory(dir, c, seed, result.record, dataset_crc,
                              initial.size(), wall, checkpoints);

      const std::vector<double> top1 = topk_curve(result.record, 1);
      std::cout << "seed " << seed << ": " << result.record.queries.size()
                << " queries, top1 "
                << (top1.empty() ? "nan" : format_double(top1.back()))
                << ", wrote " << artifacts.results_csv.string() << "\n";
      if (!result.record.complete) {
        std::cerr << "error: run incomplete: " << result.record.abort_reason
                  << "\n";
        return kExitIncomplete;
      }
    }
    return kExitSuccess;
  });
}

int cmd_report(const std::vector<std::string>& run_dirs,
               const std::string& out_path) {
  return guarded([&] {
    if (run_dirs.empty())
      throw ConfigError("report: at least one run directory is required");

    std::map<std::string, std::vector<ResultColumns>> groups;
    for (const std::string& dir : run_dirs) {
      const fs::path base = dir;
      const nlohmann::json meta =
          nlohmann::json::parse(read_text_file(base / "meta.json"));
      if (!meta.at("complete").get<bool>())
        throw ConfigError("report: run '" + dir + "' is incomplete (" +
                          meta.at("abort_reason").dump() + ")");
      const std::string csv = read_text_file(base / "results.csv");
      const std::uint32_t crc = crc32(std::span<const std::uint8_t>(
          reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
      if (crc != meta.at("results_crc32").get<std::uint32_t>())
        throw ConfigError("report: results.csv digest mismatch in '" + dir + "'");
      groups[meta.at("label").get<std::string>()].push_back(
          parse_results_csv(csv, dir));
    }

    std::string out = "label,query_index,metric,mean,std\n";
    for (const auto& [label, runs] : groups) {
      const std::size_t rows = runs.front().top1.size();
      for (const ResultColumns& r : runs)
        if (r.top1.size() != rows)
          throw ConfigError("report: aggregation error: runs labeled '" +
                            label + "' have mismatched budgets");
      const auto collect = [&](auto member) {
        std::vector<const std::vector<double>*> ptrs;
        for (const ResultColumns& r : runs) ptrs.push_back(&(r.*member));
        return ptrs;
      };
      append_aggregate_rows(out, label, "top1", collect(&ResultColumns::top1));
      append_aggregate_rows(out, label, "top10", collect(&ResultColumns::top10));
      append_aggregate_rows(out, label, "top50", collect(&ResultColumns::top50));
    }

    const fs::path path = out_path;
    ensure_parent_dir(path);
    write_text_file(path, out);
    std::cout << "wrote " << path.string() << " (" << groups.size()
              << " labels)\n";
    return kExitSuccess;
  });
}

}  // namespace lsopt
