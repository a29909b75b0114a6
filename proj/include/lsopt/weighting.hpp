#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "lsopt/errors.hpp"
#include "lsopt/rng.hpp"

namespace lsopt {

enum class Normalization { SumToOne, MeanOne };

// A per-point weight vector together with the scale convention it obeys:
// SumToOne weights add up to 1, MeanOne weights add up to N (average 1).
struct WeightVector {
  std::vector<double> values;
  Normalization normalization = Normalization::SumToOne;

  std::size_t size() const { return values.size(); }
};

WeightVector to_sum_to_one(const WeightVector& w);
WeightVector to_mean_one(const WeightVector& w);

// Compensated (Kahan) sum; keeps normalization checks independent of N.
double kahan_sum(std::span<const double> values);

// Rank weighting: w(x) ∝ 1/(kN + rank(x)) with rank(x) = |{i : f(x_i) > f(x)}|,
// so tied scores share a rank.  k = +inf yields exact uniform weights; k = 0
// splits all mass equally among the points tied for rank 0.
WeightVector rank_weights(std::span<const double> scores, double k);

// ln(1 + 1/k): approximate total unnormalized rank-weight mass (valid kN >> 1).
double total_weight_closed_form(double k);

// ln((k+q2)/(k+q1)) / ln(1+1/k): predicted fraction of total weight carried by
// ranks in quantile [q1, q2]; independent of N.
double quantile_weight_fraction(double k, double q1, double q2);

// Reward-weighted regression: w_i ∝ exp(gamma · f(x_i)), max-shifted before
// exponentiation so the largest exponent is 0.
WeightVector rwr_weights(std::span<const double> scores, double gamma);

// Upper nearest-rank empirical quantile: ascending_sort[ceil(q·(N-1))].
// Shared by quantile_binary_weights and the CEM-style baselines.
double upper_quantile_threshold(std::span<const double> scores, double quantile);

// Binary cross-entropy-method weights: equal positive weight on points with
// score >= the empirical quantile threshold, exactly 0 elsewhere.
WeightVector quantile_binary_weights(std::span<const double> scores, double quantile);

// DbAS weights: w_i ∝ P(S >= threshold) with S ~ Normal(f(x_i), noise_variance).
// As noise_variance → 0 this converges to the binary improvement indicator.
WeightVector dbas_weights(std::span<const double> scores, double threshold,
                          double noise_variance);

// Variance reduction (weights in MeanOne scale): a point with weight w > w_max
// becomes ceil(w/w_max) copies whose weights sum to exactly w, each ≤ w_max.
// Returned as an index plan so callers can expand arbitrary point types.
struct VarianceReduction {
  std::vector<std::size_t> source_index;  // expanded slot -> original point
  WeightVector weights;                   // MeanOne scale of the *input* vector
};

VarianceReduction reduce_variance_plan(const WeightVector& weights,
                                       double w_max = 5.0);

template <class T>
std::pair<std::vector<T>, WeightVector> reduce_variance(
    const std::vector<T>& points, const WeightVector& weights,
    double w_max = 5.0) {
  if (points.size() != weights.size())
    throw InvalidInputError("reduce_variance: points/weights length mismatch");
  VarianceReduction plan = reduce_variance_plan(weights, w_max);
  std::vector<T> expanded;
  expanded.reserve(plan.source_index.size());
  for (std::size_t src : plan.source_index) expanded.push_back(points[src]);
  return {std::move(expanded), std::move(plan.weights)};
}

// Walker/Vose alias table: O(n) build, O(1) unbiased categorical draws.
class AliasTable {
 public:
  explicit AliasTable(std::span<const double> probabilities);

  std::size_t sample(Rng& rng) const;
  std::size_t size() const { return prob_.size(); }

 private:
  std::vector<double> prob_;
  std::vector<std::uint32_t> alias_;
};

// Draws index batches i.i.d. with replacement, P(i) = w_i; deterministic
// given the seed.
class WeightedBatchSampler {
 public:
  WeightedBatchSampler(const WeightVector& weights, std::size_t batch_size,
                       std::uint64_t rng_seed);

  std::vector<std::size_t> next_batch();
  std::size_t batch_size() const { return batch_size_; }

 private:
  AliasTable table_;
  std::size_t batch_size_;
  Rng rng_;
};

}  // namespace lsopt
