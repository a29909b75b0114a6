#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lsopt/gp.hpp"
#include "lsopt/shapes.hpp"
#include "lsopt/vae.hpp"

namespace lsopt {

using Objective = std::function<double(const BinaryImage&)>;

struct LsoConfig {
  std::size_t budget = 500;                      // M objective evaluations
  std::optional<std::size_t> retrain_every = 5;  // r; nullopt = +infinity
  double rank_k = 1e-3;                          // +infinity = uniform weights
  SubsetRule subset;                             // GP training subset rule
  LatentGrid grid;                               // acquisition grid
  double exclusion_tol = 1e-6;                   // L-inf exclusion radius
  TrainConfig finetune{.epochs = 1.0};           // per-retrain fine-tune
  bool retrain_from_scratch = false;             // re-init instead of fine-tune
  std::size_t max_resample_attempts = 100;       // novelty retries per query
  std::uint64_t rng_seed = 0;
};

struct QueryRecord {
  std::size_t index = 0;  // 1-based position in the run
  Eigen::Vector2d latent = Eigen::Vector2d::Zero();
  std::uint64_t point_hash = 0;
  double score = 0.0;
  bool novel = true;
  std::size_t attempts = 1;  // candidates examined to place this query
};

struct RetrainEvent {
  std::size_t query_index = 0;  // completed queries when the retrain ran
  double wall_seconds = 0.0;
  double epochs = 0.0;
};

struct GpFitRecord {
  std::size_t query_index = 0;  // the query this fit proposed
  GpHyperparams hp;
  double log_marginal = 0.0;
};

struct LsoRunRecord {
  std::vector<QueryRecord> queries;
  std::vector<RetrainEvent> retrain_events;
  std::vector<GpFitRecord> gp_fits;
  bool complete = false;
  std::string abort_reason;
  std::uint64_t seed = 0;
};

struct LsoResult {
  LsoRunRecord record;
  VaeParams final_params;
};

// Exact-duplicate detector over packed image bytes (hash bucket + bytewise
// equality); holds the initial training points plus every accepted query.
class NoveltyFilter {
 public:
  explicit NoveltyFilter(std::span<const BinaryImage> initial = {});

  bool contains(const BinaryImage& image) const;
  void insert(const BinaryImage& image);

 private:
  std::unordered_map<std::uint64_t, std::vector<BinaryImage>> buckets_;
};

// Functional form: accepted iff the candidate equals no training point and no
// previously accepted query (bitwise image equality).
bool novelty_filter(const BinaryImage& candidate,
                    std::span<const BinaryImage> training_set,
                    std::span<const BinaryImage> queried_set);

// Optional observation hooks; invoked synchronously from the run loop.
struct LsoHooks {
  // After every fine-tune, including the initial one (query_index 0).  The
  // initial fine-tune is skipped when k = inf and r = inf (plain LSO).
  std::function<void(std::size_t query_index, const VaeParams&)> on_retrain;
  std::function<void(const QueryRecord&)> on_query;
};

// Weighted-retraining latent optimization (the main loop): periodic weighted
// fine-tuning plus GP/EI proposals on the acquisition grid with novelty
// filtering.  Deterministic given config.rng_seed.
LsoResult run_lso(const WeightedDataset& initial, const VaeParams& initial_params,
                  const Objective& objective, const LsoConfig& config,
                  const LsoHooks& hooks = {});

enum class CemVariant { DbAS, CemPi, Fbvae, Rwr };

struct CemConfig {
  std::size_t budget = 5000;
  std::size_t batch_size = 50;       // prior draws per round
  std::size_t retrain_every = 200;   // accepted evaluations between retrains
  double quantile = 0.95;            // DbAS / CEM-PI fallback / FBVAE threshold
  double dbas_noise_variance = 10.0;
  double rwr_gamma = 1e-3;
  TrainConfig finetune{.epochs = 1.0};
  std::size_t max_resample_attempts = 100;  // consecutive non-novel draws
  std::uint64_t rng_seed = 0;
};

// Cross-entropy-family baselines: propose by prior sampling, re-weight the
// dataset per variant, retrain on a fixed evaluation cadence.
LsoResult run_cem_baseline(CemVariant variant, const WeightedDataset& initial,
                           const VaeParams& initial_params,
                           const Objective& objective, const CemConfig& config,
                           const LsoHooks& hooks = {});

// Running K-th-largest tracker over novel scores.
class TopKTracker {
 public:
  void push(double score);
  // K-th largest so far; quiet NaN while fewer than k scores were pushed.
  double value(std::size_t k) const;
  std::size_t count() const { return sorted_desc_.size(); }

 private:
  std::vector<double> sorted_desc_;
};

// Entry b = K-th largest score among queries 1..b+1; NaN sentinel while the
// prefix holds fewer than K values.
std::vector<double> topk_curve(const LsoRunRecord& record, std::size_t k);

}  // namespace lsopt
