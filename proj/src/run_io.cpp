#include "lsopt/run_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "lsopt/crc32.hpp"
#include "lsopt/errors.hpp"

namespace lsopt {
namespace {

// Strict object reader: typed getters record the keys they consume and
// check_unknown() rejects anything left over, so config typos fail loudly.
class Section {
 public:
  Section(const nlohmann::json& node, std::string path)
      : node_(node), path_(std::move(path)) {
    if (!node_.is_object())
      throw ConfigError("config: '" + path_ + "' must be an object");
  }

  const nlohmann::json* find(const std::string& key) {
    seen_.push_back(key);
    const auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  std::string key_path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void get_bool(const char* key, bool& out) {
    if (const auto* v = find(key)) {
      if (!v->is_boolean())
        throw ConfigError("config: '" + key_path(key) + "' must be a boolean");
      out = v->get<bool>();
    }
  }

  void get_string(const char* key, std::string& out) {
    if (const auto* v = find(key)) {
      if (!v->is_string())
        throw ConfigError("config: '" + key_path(key) + "' must be a string");
      out = v->get<std::string>();
    }
  }

  template <typename Int>
  void get_integer(const char* key, Int& out, std::int64_t lo) {
    if (const auto* v = find(key)) {
      bool ok = v->is_number_integer();
      if (ok) {
        if (v->is_number_unsigned())
          ok = v->get<std::uint64_t>() >=
               static_cast<std::uint64_t>(std::max<std::int64_t>(lo, 0));
        else
          ok = v->get<std::int64_t>() >= lo;
      }
      if (!ok)
        throw ConfigError("config: '" + key_path(key) +
                          "' must be an integer >= " + std::to_string(lo));
      out = v->get<Int>();
    }
  }

  // Finite double; integers accepted.
  void get_double(const char* key, double& out) {
    if (const auto* v = find(key)) {
      if (!v->is_number())
        throw ConfigError("config: '" + key_path(key) + "' must be a number");
      out = v->get<double>();
      if (!std::isfinite(out))
        throw ConfigError("config: '" + key_path(key) + "' must be finite");
    }
  }

  // Double where JSON null spells +infinity (rank k, histogram ks).
  void get_double_or_inf(const char* key, double& out) {
    if (const auto* v = find(key)) {
      if (v->is_null()) {
        out = std::numeric_limits<double>::infinity();
      } else if (v->is_number()) {
        out = v->get<double>();
        if (std::isnan(out))
          throw ConfigError("config: '" + key_path(key) + "' must not be NaN");
      } else {
        throw ConfigError("config: '" + key_path(key) +
                          "' must be a number or null (null = infinity)");
      }
    }
  }

  // Optional count where JSON null spells "never".
  void get_count_or_null(const char* key, std::optional<std::size_t>& out) {
    if (const auto* v = find(key)) {
      if (v->is_null()) {
        out = std::nullopt;
      } else if (v->is_number_integer() &&
                 (v->is_number_unsigned() || v->get<std::int64_t>() >= 1)) {
        out = v->get<std::size_t>();
        if (*out < 1)
          throw ConfigError("config: '" + key_path(key) + "' must be >= 1");
      } else {
        throw ConfigError("config: '" + key_path(key) +
                          "' must be an integer >= 1 or null (null = never)");
      }
    }
  }

  void check_unknown() const {
    for (const auto& item : node_.items())
      if (std::find(seen_.begin(), seen_.end(), item.key()) == seen_.end())
        throw ConfigError("config: unknown key '" + key_path(item.key()) + "'");
  }

  const nlohmann::json& node() const { return node_; }

 private:
  const nlohmann::json& node_;
  std::string path_;
  std::vector<std::string> seen_;
};

BatchStrategy parse_strategy(const std::string& name, const std::string& where) {
  if (name == "weighted_sampling") return BatchStrategy::WeightedSampling;
  if (name == "uniform_loss_weights") return BatchStrategy::UniformWithLossWeights;
  throw ConfigError("config: '" + where +
                    "' must be \"weighted_sampling\" or \"uniform_loss_weights\"");
}

std::string strategy_name(BatchStrategy strategy) {
  return strategy == BatchStrategy::WeightedSampling ? "weighted_sampling"
                                                     : "uniform_loss_weights";
}

void parse_train_fields(Section& s, TrainConfig& t, bool allow_seed) {
  s.get_double("epochs", t.epochs);
  if (!(t.epochs > 0.0))
    throw ConfigError("config: '" + s.key_path("epochs") + "' must be > 0");
  s.get_integer("batch_size", t.batch_size, 1);
  s.get_double("learning_rate", t.learning_rate);
  if (!(t.learning_rate > 0.0))
    throw ConfigError("config: '" + s.key_path("learning_rate") + "' must be > 0");
  s.get_double("beta1", t.beta1);
  s.get_double("beta2", t.beta2);
  s.get_double("adam_epsilon", t.adam_epsilon);
  std::string strategy = strategy_name(t.strategy);
  s.get_string("strategy", strategy);
  t.strategy = parse_strategy(strategy, s.key_path("strategy"));
  s.get_double("w_max", t.w_max);
  if (!(t.w_max > 0.0))
    throw ConfigError("config: '" + s.key_path("w_max") + "' must be > 0");
  if (allow_seed) s.get_integer("seed", t.rng_seed, 0);
}

nlohmann::json train_fields_json(const TrainConfig& t, bool with_seed) {
  nlohmann::json j{{"epochs", t.epochs},
                   {"batch_size", t.batch_size},
                   {"learning_rate", t.learning_rate},
                   {"beta1", t.beta1},
                   {"beta2", t.beta2},
                   {"adam_epsilon", t.adam_epsilon},
                   {"strategy", strategy_name(t.strategy)},
                   {"w_max", t.w_max}};
  if (with_seed) j["seed"] = t.rng_seed;
  return j;
}

// nlohmann serializes non-finite doubles as null; make that explicit so the
// echoed config round-trips through our null-means-infinity convention.
nlohmann::json json_or_null(double v) {
  if (std::isinf(v)) return nullptr;
  return v;
}

}  // namespace

ExperimentConfig parse_experiment_config(const nlohmann::json& doc) {
  ExperimentConfig c;
  Section root(doc, "");

  if (const auto* node = root.find("dataset")) {
    Section s(*node, "dataset");
    s.get_integer("count", c.dataset.gen.count, 1);
    s.get_integer("min_side", c.dataset.gen.min_side, 1);
    s.get_integer("max_side", c.dataset.gen.max_side, 1);
    s.get_integer("seed", c.dataset.gen.rng_seed, 0);
    s.get_string("path", c.dataset.path);
    if (const auto* ks = s.find("histogram_ks")) {
      if (!ks->is_array())
        throw ConfigError("config: 'dataset.histogram_ks' must be an array");
      c.dataset.histogram_ks.clear();
      for (const auto& e : *ks) {
        if (e.is_null())
          c.dataset.histogram_ks.push_back(
              std::numeric_limits<double>::infinity());
        else if (e.is_number())
          c.dataset.histogram_ks.push_back(e.get<double>());
        else
          throw ConfigError(
              "config: 'dataset.histogram_ks' entries must be numbers or null");
      }
    }
    s.check_unknown();
  }

  if (const auto* node = root.find("vae")) {
    Section s(*node, "vae");
    if (const auto* hidden = s.find("hidden")) {
      if (!hidden->is_array() || hidden->empty())
        throw ConfigError("config: 'vae.hidden' must be a non-empty array");
      c.vae.hidden.clear();
      for (const auto& e : *hidden) {
        if (!e.is_number_integer() || e.get<std::int64_t>() < 1)
          throw ConfigError("config: 'vae.hidden' entries must be integers >= 1");
        c.vae.hidden.push_back(e.get<int>());
      }
    }
    parse_train_fields(s, c.vae.train, /*allow_seed=*/true);
    s.get_double_or_inf("rank_k", c.vae.rank_k);
    s.get_string("path", c.vae.path);
    s.check_unknown();
  }

  if (const auto* node = root.find("run")) {
    Section s(*node, "run");
    s.get_string("method", c.run.method);
    s.get_string("label", c.run.label);
    s.get_integer("budget", c.run.lso.budget, 1);
    s.get_count_or_null("retrain_every", c.run.lso.retrain_every);
    s.get_double_or_inf("rank_k", c.run.lso.rank_k);
    s.get_integer("subset_n_best", c.run.lso.subset.n_best, 0);
    s.get_integer("subset_n_rand", c.run.lso.subset.n_rand, 0);
    s.get_double("grid_lo", c.run.lso.grid.lo);
    s.get_double("grid_hi", c.run.lso.grid.hi);
    s.get_integer("grid_resolution", c.run.lso.grid.resolution, 2);
    s.get_double("exclusion_tol", c.run.lso.exclusion_tol);
    s.get_bool("retrain_from_scratch", c.run.lso.retrain_from_scratch);
    s.get_integer("max_resample_attempts", c.run.lso.max_resample_attempts, 1);
    if (const auto* ft = s.find("finetune")) {
      Section f(*ft, "run.finetune");
      parse_train_fields(f, c.run.lso.finetune, /*allow_seed=*/false);
      f.check_unknown();
    }
    if (const auto* cem = s.find("cem")) {
      Section b(*cem, "run.cem");
      b.get_integer("budget", c.run.cem.budget, 1);
      b.get_integer("batch_size", c.run.cem.batch_size, 1);
      b.get_integer("retrain_every", c.run.cem.retrain_every, 1);
      b.get_double("quantile", c.run.cem.quantile);
      if (!(c.run.cem.quantile > 0.0) || !(c.run.cem.quantile < 1.0))
        throw ConfigError("config: 'run.cem.quantile' must be in (0, 1)");
      b.get_double("dbas_noise_variance", c.run.cem.dbas_noise_variance);
      if (!(c.run.cem.dbas_noise_variance > 0.0))
        throw ConfigError("config: 'run.cem.dbas_noise_variance' must be > 0");
      b.get_double("rwr_gamma", c.run.cem.rwr_gamma);
      if (!(c.run.cem.rwr_gamma > 0.0))
        throw ConfigError("config: 'run.cem.rwr_gamma' must be > 0");
      b.check_unknown();
    }
    s.check_unknown();
    if (!(c.run.lso.grid.hi > c.run.lso.grid.lo))
      throw ConfigError("config: 'run.grid_hi' must exceed 'run.grid_lo'");
    if (!(c.run.lso.exclusion_tol >= 0.0))
      throw ConfigError("config: 'run.exclusion_tol' must be >= 0");
    if (!(c.run.lso.rank_k >= 0.0))
      throw ConfigError("config: 'run.rank_k' must be >= 0 (null = infinity)");
    if (c.run.lso.subset.n_best + c.run.lso.subset.n_rand < 1)
      throw ConfigError("config: GP subset size must be >= 1");
    static const char* kMethods[] = {"lso", "dbas", "cem-pi", "fbvae", "rwr"};
    if (std::find(std::begin(kMethods), std::end(kMethods), c.run.method) ==
        std::end(kMethods))
      throw ConfigError(
          "config: 'run.method' must be one of lso, dbas, cem-pi, fbvae, rwr");
  }
  if (c.run.label.empty()) c.run.label = c.run.method;
  // Baseline runs share the run-level resampling cap and fine-tune schedule.
  c.run.cem.finetune = c.run.lso.finetune;
  c.run.cem.max_resample_attempts = c.run.lso.max_resample_attempts;

  if (const auto* seeds = root.find("seeds")) {
    if (!seeds->is_array() || seeds->empty())
      throw ConfigError("config: 'seeds' must be a non-empty array");
    c.seeds.clear();
    for (const auto& e : *seeds) {
      if (!e.is_number_integer() ||
          (!e.is_number_unsigned() && e.get<std::int64_t>() < 0))
        throw ConfigError("config: 'seeds' entries must be non-negative integers");
      c.seeds.push_back(e.get<std::uint64_t>());
    }
  }
  root.get_string("out_dir", c.out_dir);
  root.get_string("checkpoint_policy", c.checkpoint_policy);
  if (c.checkpoint_policy != "all" && c.checkpoint_policy != "last" &&
      c.checkpoint_policy != "none")
    throw ConfigError(
        "config: 'checkpoint_policy' must be one of all, last, none");
  root.check_unknown();

  if (!(c.vae.rank_k >= 0.0))
    throw ConfigError("config: 'vae.rank_k' must be >= 0 (null = infinity)");
  if (c.dataset.gen.max_side < c.dataset.gen.min_side)
    throw ConfigError("config: 'dataset.max_side' must be >= 'dataset.min_side'");
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("config: cannot open '" + path.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: '" + path.string() + "' is not valid JSON: " +
                      e.what());
  }
  return parse_experiment_config(doc);
}

nlohmann::json effective_config_json(const ExperimentConfig& c) {
  nlohmann::json dataset{{"count", c.dataset.gen.count},
                         {"min_side", c.dataset.gen.min_side},
                         {"max_side", c.dataset.gen.max_side},
                         {"seed", c.dataset.gen.rng_seed},
                         {"path", c.dataset.path}};
  dataset["histogram_ks"] = nlohmann::json::array();
  for (double k : c.dataset.histogram_ks)
    dataset["histogram_ks"].push_back(json_or_null(k));

  nlohmann::json vae = train_fields_json(c.vae.train, /*with_seed=*/true);
  vae["hidden"] = c.vae.hidden;
  vae["rank_k"] = json_or_null(c.vae.rank_k);
  vae["path"] = c.vae.path;

  nlohmann::json run{
      {"method", c.run.method},
      {"label", c.run.label},
      {"budget", c.run.lso.budget},
      {"rank_k", json_or_null(c.run.lso.rank_k)},
      {"subset_n_best", c.run.lso.subset.n_best},
      {"subset_n_rand", c.run.lso.subset.n_rand},
      {"grid_lo", c.run.lso.grid.lo},
      {"grid_hi", c.run.lso.grid.hi},
      {"grid_resolution", c.run.lso.grid.resolution},
      {"exclusion_tol", c.run.lso.exclusion_tol},
      {"retrain_from_scratch", c.run.lso.retrain_from_scratch},
      {"max_resample_attempts", c.run.lso.max_resample_attempts},
      {"finetune", train_fields_json(c.run.lso.finetune, /*with_seed=*/false)},
      {"cem",
       {{"budget", c.run.cem.budget},
        {"batch_size", c.run.cem.batch_size},
        {"retrain_every", c.run.cem.retrain_every},
        {"quantile", c.run.cem.quantile},
        {"dbas_noise_variance", c.run.cem.dbas_noise_variance},
        {"rwr_gamma", c.run.cem.rwr_gamma}}}};
  run["retrain_every"] = c.run.lso.retrain_every
                             ? nlohmann::json(*c.run.lso.retrain_every)
                             : nlohmann::json(nullptr);

  return nlohmann::json{{"dataset", dataset},
                        {"vae", vae},
                        {"run", run},
                        {"seeds", c.seeds},
                        {"out_dir", c.out_dir},
                        {"checkpoint_policy", c.checkpoint_policy}};
}

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  std::array<char, 32> buf;
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), res.ptr);
}

std::string results_csv_text(const LsoRunRecord& record) {
  std::unordered_set<std::size_t> retrain_at;
  for (const RetrainEvent& e : record.retrain_events)
    retrain_at.insert(e.query_index);

  std::string out = "query_index,score,top1,top10,top50,novel,retrain_event\n";
  TopKTracker tracker;
  for (const QueryRecord& q : record.queries) {
    tracker.push(q.score);
    out += std::to_string(q.index);
    out += ',';
    out += format_double(q.score);
    out += ',';
    out += format_double(tracker.value(1));
    out += ',';
    out += format_double(tracker.value(10));
    out += ',';
    out += format_double(tracker.value(50));
    out += ',';
    out += q.novel ? '1' : '0';
    out += ',';
    out += retrain_at.count(q.index) ? '1' : '0';
    out += '\n';
  }
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write file: '" + path.string() + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw ConfigError("write failed: '" + path.string() + "'");
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file: '" + path.string() + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return text;
}

std::uint32_t file_crc32(const std::filesystem::path& path) {
  const std::string bytes = read_text_file(path);
  return crc32(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

RunArtifacts write_run_directory(const std::filesystem::path& dir,
                                 const ExperimentConfig& config,
                                 std::uint64_t seed, const LsoRunRecord& record,
                                 std::uint32_t dataset_crc32,
                                 std::size_t dataset_count, double wall_seconds,
                                 const std::vector<std::string>& checkpoint_files) {
  std::filesystem::create_directories(dir);
  RunArtifacts paths;
  paths.dir = dir;
  paths.results_csv = dir / "results.csv";
  paths.meta_json = dir / "meta.json";

  const std::string csv = results_csv_text(record);
  write_text_file(paths.results_csv, csv);
  const std::uint32_t csv_crc = crc32(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));

  nlohmann::json meta;
  meta["schema"] = "lsopt-meta-v1";
  meta["method"] = config.run.method;
  meta["label"] = config.run.label;
  meta["seed"] = seed;
  meta["complete"] = record.complete;
  meta["abort_reason"] = record.abort_reason.empty()
                             ? nlohmann::json(nullptr)
                             : nlohmann::json(record.abort_reason);
  meta["queries_accepted"] = record.queries.size();
  meta["config"] = effective_config_json(config);
  meta["dataset"] = {{"path", config.dataset.path},
                     {"crc32", dataset_crc32},
                     {"count", dataset_count}};
  meta["results_crc32"] = csv_crc;
  meta["wall_seconds_total"] = wall_seconds;

  meta["retrain_events"] = nlohmann::json::array();
  for (const RetrainEvent& e : record.retrain_events)
    meta["retrain_events"].push_back({{"query_index", e.query_index},
                                      {"wall_seconds", e.wall_seconds},
                                      {"epochs", e.epochs}});

  meta["gp_history"] = nlohmann::json::array();
  for (const GpFitRecord& g : record.gp_fits)
    meta["gp_history"].push_back(
        {{"query_index", g.query_index},
         {"signal_variance", g.hp.signal_variance},
         {"lengthscales", {g.hp.lengthscales[0], g.hp.lengthscales[1]}},
         {"noise_variance", g.hp.noise_variance},
         {"log_marginal", g.log_marginal}});

  meta["checkpoints"] = checkpoint_files;

  write_text_file(paths.meta_json, meta.dump(2) + "\n");
  return paths;
}

}  // namespace lsopt
