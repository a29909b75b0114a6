#include "lsopt/lso.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace lsopt {
namespace {

// Substream salt families, spaced so per-event offsets cannot collide.
constexpr std::uint64_t kSaltFinetune = 0x100000;
constexpr std::uint64_t kSaltScratch = 0x200000;
constexpr std::uint64_t kSaltSubset = 0x300000;
constexpr std::uint64_t kSaltPrior = 0x400000;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

double require_finite_score(double score, const char* who) {
  if (!std::isfinite(score))
    throw NumericError(std::string(who) + ": objective returned a non-finite score");
  return score;
}

}  // namespace

NoveltyFilter::NoveltyFilter(std::span<const BinaryImage> initial) {
  for (const BinaryImage& image : initial) insert(image);
}

bool NoveltyFilter::contains(const BinaryImage& image) const {
  const auto it = buckets_.find(image.content_hash());
  if (it == buckets_.end()) return false;
  for (const BinaryImage& held : it->second)
    if (held == image) return true;
  return false;
}

void NoveltyFilter::insert(const BinaryImage& image) {
  if (contains(image)) return;
  buckets_[image.content_hash()].push_back(image);
}

bool novelty_filter(const BinaryImage& candidate,
                    std::span<const BinaryImage> training_set,
                    std::span<const BinaryImage> queried_set) {
  for (const BinaryImage& held : training_set)
    if (held == candidate) return false;
  for (const BinaryImage& held : queried_set)
    if (held == candidate) return false;
  return true;
}

LsoResult run_lso(const WeightedDataset& initial, const VaeParams& initial_params,
                  const Objective& objective, const LsoConfig& config,
                  const LsoHooks& hooks) {
  if (initial.size() == 0)
    throw InvalidInputError("run_lso: initial dataset must be non-empty");
  if (initial.scores.size() != initial.size())
    throw InvalidInputError("run_lso: dataset scores/points length mismatch");
  if (!objective) throw InvalidInputError("run_lso: objective must be callable");
  if (config.budget < 1) throw InvalidInputError("run_lso: budget must be >= 1");
  if (config.retrain_every && *config.retrain_every < 1)
    throw InvalidInputError("run_lso: retrain frequency must be >= 1");
  if (config.max_resample_attempts < 1)
    throw InvalidInputError("run_lso: max_resample_attempts must be >= 1");

  LsoResult result;
  LsoRunRecord& rec = result.record;
  rec.seed = config.rng_seed;

  std::vector<BinaryImage> points = initial.points;
  std::vector<double> scores = initial.scores;
  NoveltyFilter seen(points);
  std::vector<Eigen::Vector2d> queried_latents;

  VaeParams params = initial_params;
  std::size_t retrain_count = 0;

  // Recompute weights from current scores and fine-tune (Algorithm 1 outer
  // step).  Logged as a retrain event only under a finite retrain frequency.
  const auto fine_tune = [&](std::size_t at_query) {
    WeightedDataset ds;
    ds.points = points;
    ds.scores = scores;
    ds.weights = rank_weights(scores, config.rank_k);
    TrainConfig ft = config.finetune;
    ft.rng_seed = split_seed(config.rng_seed, kSaltFinetune + retrain_count);
    const auto t0 = std::chrono::steady_clock::now();
    if (config.retrain_from_scratch) {
      const VaeParams fresh = init_vae_params(
          params.arch, split_seed(config.rng_seed, kSaltScratch + retrain_count));
      params = train(fresh, ds, ft);
    } else {
      params = train(params, ds, ft);
    }
    if (config.retrain_every)
      rec.retrain_events.push_back({at_query, seconds_since(t0), ft.epochs});
    ++retrain_count;
    if (hooks.on_retrain) hooks.on_retrain(at_query, params);
  };

  // The initial weighted fine-tune runs before the first query whenever the
  // configuration trains at all.  With k = inf AND r = inf the loop degenerates
  // to plain LSO on the supplied parameters, which must never change.
  if (std::isfinite(config.rank_k) || config.retrain_every) fine_tune(0);
  Eigen::MatrixXd latents = encode_means(params, points);

  std::optional<GpHyperparams> warm;
  bool fresh_latents = true;  // full hyperparameter search after re-encoding

  const auto abort_run = [&](std::string reason) {
    rec.complete = false;
    rec.abort_reason = std::move(reason);
    result.final_params = std::move(params);
    return std::move(result);
  };

  while (rec.queries.size() < config.budget) {
    const std::size_t completed = rec.queries.size();
    if (config.retrain_every && completed > 0 &&
        completed % *config.retrain_every == 0) {
      fine_tune(completed);
      latents = encode_means(params, points);
      fresh_latents = true;
    }

    SubsetRule rule = config.subset;
    rule.rng_seed = split_seed(config.rng_seed, kSaltSubset + completed);
    const std::vector<std::size_t> subset = select_subset(scores, rule);
    Eigen::MatrixXd sub_latents(static_cast<Eigen::Index>(subset.size()), 2);
    Eigen::VectorXd sub_targets(static_cast<Eigen::Index>(subset.size()));
    for (std::size_t i = 0; i < subset.size(); ++i) {
      sub_latents.row(static_cast<Eigen::Index>(i)) =
          latents.row(static_cast<Eigen::Index>(subset[i]));
      sub_targets[static_cast<Eigen::Index>(i)] = scores[subset[i]];
    }
    GpFitConfig fit_config;
    fit_config.warm_start = warm;
    fit_config.warm_only = warm.has_value() && !fresh_latents;
    fit_config.refine_sweeps = fresh_latents ? 3 : 1;
    const GpModel model = fit_gp(sub_latents, sub_targets, fit_config);
    warm = model.hp;
    fresh_latents = false;
    rec.gp_fits.push_back({completed + 1, model.hp, model.log_marginal});

    const double best = *std::max_element(scores.begin(), scores.end());
    const std::vector<GridCandidate> ranked = ranked_grid_candidates(
        model, best, config.grid, queried_latents, config.exclusion_tol);
    if (ranked.empty())
      return abort_run("acquisition grid exhausted at query " +
                       std::to_string(completed + 1));

    bool accepted = false;
    std::size_t attempts = 0;
    for (const GridCandidate& candidate : ranked) {
      ++attempts;
      BinaryImage x = decode_deterministic(params, candidate.z);
      if (!seen.contains(x)) {
        QueryRecord q;
        q.index = completed + 1;
        q.latent = candidate.z;
        q.point_hash = x.content_hash();
        q.score = require_finite_score(objective(x), "run_lso");
        q.attempts = attempts;
        seen.insert(x);
        queried_latents.push_back(candidate.z);
        points.push_back(std::move(x));
        scores.push_back(q.score);
        const Eigen::MatrixXd fresh_row =
            encode_means(params, std::span<const BinaryImage>(&points.back(), 1));
        latents.conservativeResize(latents.rows() + 1, Eigen::NoChange);
        latents.row(latents.rows() - 1) = fresh_row.row(0);
        rec.queries.push_back(q);
        if (hooks.on_query) hooks.on_query(q);
        accepted = true;
        break;
      }
      if (attempts >= config.max_resample_attempts) break;
    }
    if (!accepted) {
      if (attempts >= config.max_resample_attempts)
        return abort_run("max resample attempts (" +
                         std::to_string(config.max_resample_attempts) +
                         ") exceeded at query " + std::to_string(completed + 1));
      return abort_run("acquisition grid exhausted during resampling at query " +
                       std::to_string(completed + 1));
    }
  }

  rec.complete = true;
  result.final_params = std::move(params);
  return result;
}

LsoResult run_cem_baseline(CemVariant variant, const WeightedDataset& initial,
                           const VaeParams& initial_params,
                           const Objective& objective, const CemConfig& config,
                           const LsoHooks& hooks) {
  if (initial.size() == 0)
    throw InvalidInputError("run_cem_baseline: initial dataset must be non-empty");
  if (initial.scores.size() != initial.size())
    throw InvalidInputError("run_cem_baseline: scores/points length mismatch");
  if (!objective)
    throw InvalidInputError("run_cem_baseline: objective must be callable");
  if (config.budget < 1 || config.batch_size < 1 || config.retrain_every < 1)
    throw InvalidInputError(
        "run_cem_baseline: budget, batch_size, retrain_every must be >= 1");
  if (!(config.quantile > 0.0) || !(config.quantile < 1.0))
    throw InvalidInputError("run_cem_baseline: quantile must be in (0,1)");
  if (config.max_resample_attempts < 1)
    throw InvalidInputError("run_cem_baseline: max_resample_attempts must be >= 1");

  LsoResult result;
  LsoRunRecord& rec = result.record;
  rec.seed = config.rng_seed;

  std::vector<BinaryImage> points = initial.points;  // D: all evaluated points
  std::vector<double> scores = initial.scores;
  // FBVAE maintains its own training set T; other variants retrain on D.
  std::vector<BinaryImage> fb_points;
  std::vector<double> fb_scores;
  if (variant == CemVariant::Fbvae) {
    fb_points = points;
    fb_scores = scores;
  }

  NoveltyFilter seen(points);
  VaeParams params = initial_params;
  Rng prior_rng(split_seed(config.rng_seed, kSaltPrior));
  std::size_t evals = 0;
  std::size_t retrain_count = 0;
  std::size_t rejects_since_accept = 0;

  const auto retrain = [&](double best_before_round) {
    WeightedDataset ds;
    if (variant == CemVariant::Fbvae) {
      ds.points = fb_points;
      ds.scores = fb_scores;
      ds.weights = {std::vector<double>(fb_points.size(), 1.0 / fb_points.size()),
                    Normalization::SumToOne};
    } else {
      ds.points = points;
      ds.scores = scores;
      switch (variant) {
        case CemVariant::DbAS: {
          const double threshold =
              upper_quantile_threshold(scores, config.quantile);
          ds.weights =
              dbas_weights(scores, threshold, config.dbas_noise_variance);
          break;
        }
        case CemVariant::CemPi: {
          // Improvement indicator against the best score before this round;
          // all-zero indicators fall back to the quantile-binary scheme.
          std::vector<double> indicator(scores.size(), 0.0);
          double mass = 0.0;
          for (std::size_t i = 0; i < scores.size(); ++i)
            if (scores[i] > best_before_round) {
              indicator[i] = 1.0;
              mass += 1.0;
            }
          if (mass > 0.0) {
            for (double& v : indicator) v /= mass;
            ds.weights = {std::move(indicator), Normalization::SumToOne};
          } else {
            ds.weights = quantile_binary_weights(scores, config.quantile);
          }
          break;
        }
        case CemVariant::Rwr:
          ds.weights = rwr_weights(scores, config.rwr_gamma);
          break;
        case CemVariant::Fbvae:
          break;  // handled above
      }
    }
    TrainConfig ft = config.finetune;
    ft.rng_seed = split_seed(config.rng_seed, kSaltFinetune + retrain_count);
    const auto t0 = std::chrono::steady_clock::now();
    params = train(params, ds, ft);
    rec.retrain_events.push_back({evals, seconds_since(t0), ft.epochs});
    ++retrain_count;
    if (hooks.on_retrain) hooks.on_retrain(evals, params);
  };

  while (evals < config.budget) {
    const double best_before_round =
        *std::max_element(scores.begin(), scores.end());
    const double fb_threshold =
        variant == CemVariant::Fbvae
            ? upper_quantile_threshold(fb_scores, config.quantile)
            : 0.0;
    std::vector<std::size_t> fb_pending;  // indices into points/scores

    for (std::size_t draw = 0;
         draw < config.batch_size && evals < config.budget; ++draw) {
      Eigen::Vector2d z;
      z[0] = prior_rng.next_gaussian();
      z[1] = prior_rng.next_gaussian();
      BinaryImage x = decode_deterministic(params, z);
      if (seen.contains(x)) {
        if (++rejects_since_accept >= config.max_resample_attempts) {
          rec.complete = false;
          rec.abort_reason =
              "max resample attempts (" +
              std::to_string(config.max_resample_attempts) +
              ") consecutive non-novel prior samples at evaluation " +
              std::to_string(evals + 1);
          result.final_params = std::move(params);
          return result;
        }
        continue;
      }

      QueryRecord q;
      q.index = evals + 1;
      q.latent = z;
      q.point_hash = x.content_hash();
      q.score = require_finite_score(objective(x), "run_cem_baseline");
      q.attempts = rejects_since_accept + 1;
      rejects_since_accept = 0;
      seen.insert(x);
      points.push_back(std::move(x));
      scores.push_back(q.score);
      ++evals;
      rec.queries.push_back(q);
      if (hooks.on_query) hooks.on_query(q);
      if (variant == CemVariant::Fbvae && q.score >= fb_threshold)
        fb_pending.push_back(points.size() - 1);

      // Retrain exactly when the accepted-evaluation count crosses a multiple
      // of the cadence, so event indices stay aligned with it; the model
      // trained after the final evaluation would never be sampled, so skip it.
      if (evals % config.retrain_every == 0 && evals < config.budget) {
        if (variant == CemVariant::Fbvae) {
          for (std::size_t idx : fb_pending) {
            fb_points.push_back(points[idx]);
            fb_scores.push_back(scores[idx]);
          }
          fb_pending.clear();
        }
        retrain(best_before_round);
      }
    }
    if (variant == CemVariant::Fbvae) {
      for (std::size_t idx : fb_pending) {
        fb_points.push_back(points[idx]);
        fb_scores.push_back(scores[idx]);
      }
    }
  }

  rec.complete = true;
  result.final_params = std::move(params);
  return result;
}

void TopKTracker::push(double score) {
  const auto at = std::upper_bound(sorted_desc_.begin(), sorted_desc_.end(),
                                   score, std::greater<double>());
  sorted_desc_.insert(at, score);
}

double TopKTracker::value(std::size_t k) const {
  if (k < 1) throw InvalidInputError("TopKTracker: k must be >= 1");
  if (k > sorted_desc_.size())
    return std::numeric_limits<double>::quiet_NaN();
  return sorted_desc_[k - 1];
}

std::vector<double> topk_curve(const LsoRunRecord& record, std::size_t k) {
  if (k < 1) throw InvalidInputError("topk_curve: k must be >= 1");
  TopKTracker tracker;
  std::vector<double> curve;
  curve.reserve(record.queries.size());
  for (const QueryRecord& q : record.queries) {
    tracker.push(q.score);
    curve.push_back(tracker.value(k));
  }
  return curve;
}

}  // namespace lsopt
