#include "lsopt/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace lsopt {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_finite_scores(std::span<const double> scores, const char* who) {
  if (scores.empty())
    throw InvalidInputError(std::string(who) + ": empty score vector");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i]))
      throw InvalidInputError(std::string(who) + ": non-finite score at index " +
                              std::to_string(i));
  }
}

WeightVector normalize_sum_to_one(std::vector<double> values, const char* who) {
  const double total = kahan_sum(values);
  if (!(total > 0.0) || !std::isfinite(total))
    throw NumericError(std::string(who) + ": weight mass is not positive-finite");
  for (double& v : values) v /= total;
  return {std::move(values), Normalization::SumToOne};
}

// Indices of `scores` sorted by descending score (ties by ascending index).
std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  return order;
}

}  // namespace

double kahan_sum(std::span<const double> values) {
  double sum = 0.0, carry = 0.0;
  for (double v : values) {
    const double y = v - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
  return sum;
}

WeightVector to_sum_to_one(const WeightVector& w) {
  if (w.normalization == Normalization::SumToOne) return w;
  const double n = static_cast<double>(w.size());
  WeightVector out{w.values, Normalization::SumToOne};
  for (double& v : out.values) v /= n;
  return out;
}

WeightVector to_mean_one(const WeightVector& w) {
  if (w.normalization == Normalization::MeanOne) return w;
  const double n = static_cast<double>(w.size());
  WeightVector out{w.values, Normalization::MeanOne};
  for (double& v : out.values) v *= n;
  return out;
}

WeightVector rank_weights(std::span<const double> scores, double k) {
  require_finite_scores(scores, "rank_weights");
  if (std::isnan(k) || k < 0.0)
    throw InvalidInputError("rank_weights: k must satisfy k >= 0");

  const std::size_t n = scores.size();
  if (k == kInf) {
    return {std::vector<double>(n, 1.0 / static_cast<double>(n)),
            Normalization::SumToOne};
  }

  // Zero-based rank = number of strictly greater scores; tied scores share
  // the rank of their group's first position in the descending sort.
  const std::vector<std::size_t> order = descending_order(scores);
  std::vector<std::size_t> rank(n);
  std::size_t group_start = 0;
  for (std::size_t pos = 0; pos < n; ++pos) {
    if (scores[order[pos]] != scores[order[group_start]]) group_start = pos;
    rank[order[pos]] = group_start;
  }

  std::vector<double> values(n);
  if (k == 0.0) {
    // Limit case: all mass on the rank-0 tie group.
    std::size_t top_ties = 0;
    for (std::size_t r : rank) top_ties += (r == 0);
    for (std::size_t i = 0; i < n; ++i)
      values[i] = rank[i] == 0 ? 1.0 / static_cast<double>(top_ties) : 0.0;
    return {std::move(values), Normalization::SumToOne};
  }

  const double kn = k * static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    values[i] = 1.0 / (kn + static_cast<double>(rank[i]));
  return normalize_sum_to_one(std::move(values), "rank_weights");
}

double total_weight_closed_form(double k) {
  if (!(k > 0.0) || k == kInf)
    throw InvalidInputError("total_weight_closed_form: k must be finite and > 0");
  return std::log1p(1.0 / k);
}

double quantile_weight_fraction(double k, double q1, double q2) {
  if (!(k > 0.0) || k == kInf)
    throw InvalidInputError("quantile_weight_fraction: k must be finite and > 0");
  if (!(q1 >= 0.0) || !(q1 < q2) || !(q2 <= 1.0))
    throw InvalidInputError(
        "quantile_weight_fraction: require 0 <= q1 < q2 <= 1");
  return std::log((k + q2) / (k + q1)) / std::log1p(1.0 / k);
}

WeightVector rwr_weights(std::span<const double> scores, double gamma) {
  require_finite_scores(scores, "rwr_weights");
  if (!(gamma > 0.0) || !std::isfinite(gamma))
    throw InvalidInputError("rwr_weights: gamma must be finite and > 0");
  const double top = *std::max_element(scores.begin(), scores.end());
  std::vector<double> values(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    values[i] = std::exp(gamma * (scores[i] - top));  // max exponent is 0
  return normalize_sum_to_one(std::move(values), "rwr_weights");
}

double upper_quantile_threshold(std::span<const double> scores, double quantile) {
  require_finite_scores(scores, "upper_quantile_threshold");
  if (!(quantile > 0.0) || !(quantile < 1.0))
    throw InvalidInputError("upper_quantile_threshold: quantile must be in (0,1)");
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  const double pos = quantile * static_cast<double>(sorted.size() - 1);
  // Snap to the nearest integer when the product is an integer up to rounding
  // noise, so e.g. 0.1*10 does not spill to index 2.
  const double snapped = std::round(pos);
  const double idx_real =
      std::abs(pos - snapped) < 1e-9 * std::max(1.0, std::abs(pos))
          ? snapped
          : std::ceil(pos);
  return sorted[static_cast<std::size_t>(idx_real)];
}

WeightVector quantile_binary_weights(std::span<const double> scores,
                                     double quantile) {
  const double threshold = upper_quantile_threshold(scores, quantile);
  std::vector<double> values(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    values[i] = scores[i] >= threshold ? 1.0 : 0.0;
  return normalize_sum_to_one(std::move(values), "quantile_binary_weights");
}

WeightVector dbas_weights(std::span<const double> scores, double threshold,
                          double noise_variance) {
  require_finite_scores(scores, "dbas_weights");
  if (!(noise_variance > 0.0) || !std::isfinite(noise_variance))
    throw InvalidInputError("dbas_weights: noise_variance must be > 0");
  if (!std::isfinite(threshold))
    throw InvalidInputError("dbas_weights: threshold must be finite");
  const double sigma = std::sqrt(noise_variance);
  std::vector<double> values(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    // P(S >= threshold), S ~ N(score, variance): Phi((score - threshold)/sigma).
    const double u = (scores[i] - threshold) / sigma;
    values[i] = 0.5 * std::erfc(-u / std::sqrt(2.0));
  }
  return normalize_sum_to_one(std::move(values), "dbas_weights");
}

VarianceReduction reduce_variance_plan(const WeightVector& weights,
                                       double w_max) {
  if (weights.normalization != Normalization::MeanOne)
    throw InvalidInputError("reduce_variance: weights must be MeanOne");
  if (!(w_max > 0.0))
    throw InvalidInputError("reduce_variance: w_max must be > 0");

  VarianceReduction out;
  out.weights.normalization = Normalization::MeanOne;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double w = weights.values[i];
    if (w < 0.0 || !std::isfinite(w))
      throw InvalidInputError("reduce_variance: weights must be finite and >= 0");
    if (w <= w_max) {
      out.source_index.push_back(i);
      out.weights.values.push_back(w);
      continue;
    }
    // ceil(w/w_max) copies summing to exactly w: the first n-1 copies get the
    // rounded share fl(w/n) (<= w_max since rounding is monotone and the real
    // share is), and the last copy takes the residual w - s, which Sterbenz's
    // lemma makes exact because s <= w <= 2s for n >= 2.  A left-to-right sum
    // of the copies therefore reproduces w bit-for-bit.
    auto emit = [&](std::size_t n_copies) {
      const double share = w / static_cast<double>(n_copies);
      double partial = 0.0;
      for (std::size_t c = 0; c + 1 < n_copies; ++c) {
        out.source_index.push_back(i);
        out.weights.values.push_back(share);
        partial += share;
      }
      const double last = w - partial;
      out.source_index.push_back(i);
      out.weights.values.push_back(last);
      return last;
    };
    std::size_t n_copies = static_cast<std::size_t>(std::ceil(w / w_max));
    if (n_copies < 2) n_copies = 2;
    const std::size_t begin = out.weights.values.size();
    if (emit(n_copies) > w_max) {
      // Residual crossed w_max by a rounding crumb; redo with one more copy.
      out.source_index.resize(begin);
      out.weights.values.resize(begin);
      emit(n_copies + 1);
    }
  }
  return out;
}

AliasTable::AliasTable(std::span<const double> probabilities) {
  const std::size_t n = probabilities.size();
  if (n == 0) throw InvalidInputError("AliasTable: empty probability vector");
  if (n > std::numeric_limits<std::uint32_t>::max())
    throw InvalidInputError("AliasTable: too many categories");
  double total = 0.0;
  for (double p : probabilities) {
    if (!(p >= 0.0) || !std::isfinite(p))
      throw InvalidInputError("AliasTable: probabilities must be finite and >= 0");
    total += p;
  }
  if (!(total > 0.0))
    throw InvalidInputError("AliasTable: probability mass must be positive");

  prob_.resize(n);
  alias_.resize(n);

  // Vose's construction: scale to mean 1, then pair each under-full bucket
  // with an over-full donor.
  std::vector<double> scaled(n);
  for (std::size_t i = 0; i < n; ++i)
    scaled[i] = probabilities[i] * static_cast<double>(n) / total;

  std::vector<std::uint32_t> small, large;
  small.reserve(n);
  large.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    (scaled[i] < 1.0 ? small : large).push_back(static_cast<std::uint32_t>(i));
  }
  while (!small.empty() && !large.empty()) {
    const std::uint32_t s = small.back();
    const std::uint32_t l = large.back();
    small.pop_back();
    prob_[s] = scaled[s];
    alias_[s] = l;
    scaled[l] = (scaled[l] + scaled[s]) - 1.0;
    if (scaled[l] < 1.0) {
      large.pop_back();
      small.push_back(l);
    }
  }
  for (std::uint32_t l : large) {
    prob_[l] = 1.0;
    alias_[l] = l;
  }
  for (std::uint32_t s : small) {  // numerically ~1 leftovers
    prob_[s] = 1.0;
    alias_[s] = s;
  }
}

std::size_t AliasTable::sample(Rng& rng) const {
  const std::size_t slot = rng.next_index(prob_.size());
  return rng.next_unit() < prob_[slot] ? slot
                                       : static_cast<std::size_t>(alias_[slot]);
}

namespace {
std::span<const double> require_sum_to_one_values(const WeightVector& w) {
  if (w.normalization != Normalization::SumToOne)
    throw InvalidInputError("weighted_batch_sampler: weights must be SumToOne");
  return w.values;
}
}  // namespace

WeightedBatchSampler::WeightedBatchSampler(const WeightVector& weights,
                                           std::size_t batch_size,
                                           std::uint64_t rng_seed)
    : table_(require_sum_to_one_values(weights)),
      batch_size_(batch_size),
      rng_(rng_seed) {
  if (batch_size == 0)
    throw InvalidInputError("weighted_batch_sampler: batch_size must be >= 1");
}

std::vector<std::size_t> WeightedBatchSampler::next_batch() {
  std::vector<std::size_t> batch(batch_size_);
  for (std::size_t& slot : batch) slot = table_.sample(rng_);
  return batch;
}

}  // namespace lsopt
