#include "lsopt/gp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lsopt/rng.hpp"

namespace lsopt {
namespace {

constexpr double kJitterMax = 1e-4;
constexpr double kLogTwoPi = 1.8378770664093453;

struct Bounds {
  double lo, hi;
};
constexpr Bounds kLengthscaleBounds{1e-3, 1e3};
constexpr Bounds kSignalBounds{1e-8, 1e6};
constexpr Bounds kNoiseBounds{1e-10, 1e3};

double clamp(double v, Bounds b) { return std::min(std::max(v, b.lo), b.hi); }

// Per-dimension squared-difference matrices, built once per fit.
struct PairwiseSq {
  Eigen::MatrixXd d0, d1;
};

PairwiseSq pairwise_squares(const Eigen::MatrixXd& latents) {
  const Eigen::Index n = latents.rows();
  PairwiseSq p{Eigen::MatrixXd(n, n), Eigen::MatrixXd(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double a = latents(i, 0) - latents(j, 0);
      const double b = latents(i, 1) - latents(j, 1);
      p.d0(i, j) = a * a;
      p.d1(i, j) = b * b;
    }
  }
  return p;
}

Eigen::MatrixXd kernel_from_squares(const PairwiseSq& sq,
                                    const GpHyperparams& hp) {
  const double inv0 = 0.5 / (hp.lengthscales[0] * hp.lengthscales[0]);
  const double inv1 = 0.5 / (hp.lengthscales[1] * hp.lengthscales[1]);
  return hp.signal_variance *
         (-(sq.d0 * inv0) - (sq.d1 * inv1)).array().exp().matrix();
}

// Cross-kernel between stored latents (rows of a) and query rows of b.
Eigen::MatrixXd cross_kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                             const GpHyperparams& hp) {
  const double inv0 = 0.5 / (hp.lengthscales[0] * hp.lengthscales[0]);
  const double inv1 = 0.5 / (hp.lengthscales[1] * hp.lengthscales[1]);
  Eigen::MatrixXd k(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    const double q0 = b(j, 0), q1 = b(j, 1);
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double d0 = a(i, 0) - q0;
      const double d1 = a(i, 1) - q1;
      k(i, j) = hp.signal_variance * std::exp(-d0 * d0 * inv0 - d1 * d1 * inv1);
    }
  }
  return k;
}

struct Factorization {
  Eigen::MatrixXd lower;
  double jitter = 0.0;
};

// LLT with diagonal jitter escalation 1e-10 -> 1e-4.
Factorization factorize(const Eigen::MatrixXd& kernel, double noise_variance) {
  Eigen::MatrixXd k = kernel;
  k.diagonal().array() += noise_variance;
  double jitter = 0.0;
  for (;;) {
    Eigen::MatrixXd attempt = k;
    if (jitter > 0.0) attempt.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(attempt);
    if (llt.info() == Eigen::Success)
      return {Eigen::MatrixXd(llt.matrixL()), jitter};
    if (jitter >= kJitterMax)
      throw SingularModelError(
          "fit_gp: kernel factorization failed at maximum jitter");
    jitter = jitter == 0.0 ? 1e-10 : jitter * 10.0;
  }
}

// Log marginal likelihood of standardized targets under hp; -inf if the
// kernel cannot be factorized (treated as an invalid search point).
double log_marginal(const PairwiseSq& sq, const Eigen::VectorXd& y,
                    const GpHyperparams& hp) {
  const Eigen::Index n = y.size();
  Eigen::MatrixXd k = kernel_from_squares(sq, hp);
  k.diagonal().array() += hp.noise_variance;
  const Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success)
    return -std::numeric_limits<double>::infinity();
  const Eigen::VectorXd alpha = llt.solve(y);
  const double log_det =
      llt.matrixLLT().diagonal().array().log().sum();  // = sum log L_ii
  const double lml =
      -0.5 * y.dot(alpha) - log_det - 0.5 * static_cast<double>(n) * kLogTwoPi;
  return std::isfinite(lml) ? lml
                            : -std::numeric_limits<double>::infinity();
}

GpHyperparams clamp_hp(GpHyperparams hp) {
  hp.signal_variance = clamp(hp.signal_variance, kSignalBounds);
  hp.lengthscales[0] = clamp(hp.lengthscales[0], kLengthscaleBounds);
  hp.lengthscales[1] = clamp(hp.lengthscales[1], kLengthscaleBounds);
  hp.noise_variance = clamp(hp.noise_variance, kNoiseBounds);
  return hp;
}

// Coordinate descent in log-space over (l0, l1, signal, noise).
GpHyperparams refine(const PairwiseSq& sq, const Eigen::VectorXd& y,
                     GpHyperparams hp, double& value, int sweeps) {
  auto get = [](const GpHyperparams& h, int axis) {
    switch (axis) {
      case 0: return h.lengthscales[0];
      case 1: return h.lengthscales[1];
      case 2: return h.signal_variance;
      default: return h.noise_variance;
    }
  };
  auto with = [](GpHyperparams h, int axis, double v) {
    switch (axis) {
      case 0: h.lengthscales[0] = v; break;
      case 1: h.lengthscales[1] = v; break;
      case 2: h.signal_variance = v; break;
      default: h.noise_variance = v; break;
    }
    return clamp_hp(h);
  };

  double step = 0.7;  // in ln units; halves every sweep
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (int axis = 0; axis < 4; ++axis) {
      for (double direction : {+1.0, -1.0}) {
        int moves = 0;
        while (moves < 4) {
          const GpHyperparams trial =
              with(hp, axis, get(hp, axis) * std::exp(direction * step));
          const double trial_value = log_marginal(sq, y, trial);
          if (trial_value > value) {
            hp = trial;
            value = trial_value;
            ++moves;
          } else {
            break;
          }
        }
      }
    }
    step *= 0.5;
  }
  return hp;
}

}  // namespace

std::vector<std::size_t> select_subset(std::span<const double> targets,
                                       const SubsetRule& rule) {
  if (targets.empty()) throw InvalidInputError("select_subset: empty dataset");
  if (rule.n_best + rule.n_rand < 1)
    throw InvalidInputError("select_subset: n_best + n_rand must be >= 1");

  const std::size_t n = targets.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return targets[a] > targets[b];
  });

  const std::size_t n_best = std::min(rule.n_best, n);
  std::vector<std::size_t> picked(order.begin(),
                                  order.begin() + static_cast<long>(n_best));

  std::vector<std::size_t> remainder(order.begin() + static_cast<long>(n_best),
                                     order.end());
  const std::size_t n_rand = std::min(rule.n_rand, remainder.size());
  Rng rng(rule.rng_seed);
  for (std::size_t i = 0; i < n_rand; ++i) {  // partial Fisher-Yates
    const std::size_t j = i + rng.next_index(remainder.size() - i);
    std::swap(remainder[i], remainder[j]);
    picked.push_back(remainder[i]);
  }
  return picked;
}

GpModel fit_gp(const Eigen::MatrixXd& latents, const Eigen::VectorXd& targets,
               const GpFitConfig& config) {
  if (latents.rows() < 1)
    throw InvalidInputError("fit_gp: need at least one training point");
  if (latents.cols() != 2)
    throw InvalidInputError("fit_gp: latents must be n x 2");
  if (targets.size() != latents.rows())
    throw InvalidInputError("fit_gp: one target per latent");
  if (!latents.allFinite() || !targets.allFinite())
    throw InvalidInputError("fit_gp: inputs must be finite");

  GpModel model;
  model.latents = latents;
  model.target_mean = targets.mean();
  const double variance =
      (targets.array() - model.target_mean).square().sum() /
      static_cast<double>(targets.size());
  model.target_scale = variance > 1e-24 ? std::sqrt(variance) : 1.0;
  const Eigen::VectorXd y =
      (targets.array() - model.target_mean) / model.target_scale;

  const PairwiseSq sq = pairwise_squares(latents);

  GpHyperparams best_hp;
  double best_value = -std::numeric_limits<double>::infinity();
  if (config.fixed) {
    best_hp = *config.fixed;
    best_value = log_marginal(sq, y, best_hp);
  } else {
    std::vector<GpHyperparams> starts;
    if (config.warm_start) starts.push_back(clamp_hp(*config.warm_start));
    if (!(config.warm_start && config.warm_only)) {
      // Log-spaced grid: lengthscales relative to the data spread per axis.
      Eigen::Vector2d spread;
      for (int d = 0; d < 2; ++d) {
        const double mean = latents.col(d).mean();
        const double var = (latents.col(d).array() - mean).square().sum() /
                           static_cast<double>(latents.rows());
        spread[d] = std::max(std::sqrt(var), 1e-3);
      }
      for (double scale : {0.2, 1.0, 5.0}) {
        for (double noise : {1e-4, 1e-2}) {
          GpHyperparams hp;
          hp.signal_variance = 1.0;
          hp.lengthscales = scale * spread;
          hp.noise_variance = noise;
          starts.push_back(clamp_hp(hp));
        }
      }
    }
    // Rank the starts once, then refine only the best one.
    for (const GpHyperparams& hp : starts) {
      const double value = log_marginal(sq, y, hp);
      if (value > best_value) {
        best_value = value;
        best_hp = hp;
      }
    }
    if (!std::isfinite(best_value))
      throw SingularModelError("fit_gp: no factorizable hyperparameter start");
    best_hp = refine(sq, y, best_hp, best_value, config.refine_sweeps);
  }

  model.hp = best_hp;
  model.log_marginal = best_value;

  const Eigen::MatrixXd kernel = kernel_from_squares(sq, best_hp);
  Factorization fact = factorize(kernel, best_hp.noise_variance);
  model.chol_lower = std::move(fact.lower);
  model.jitter = fact.jitter;
  model.alpha = model.chol_lower.transpose().triangularView<Eigen::Upper>().solve(
      model.chol_lower.triangularView<Eigen::Lower>().solve(y));
  return model;
}

void posterior_batch(const GpModel& model, const Eigen::MatrixXd& zs,
                     Eigen::VectorXd& means, Eigen::VectorXd& variances) {
  if (zs.cols() != 2)
    throw InvalidInputError("posterior_batch: queries must be m x 2");
  if (!zs.allFinite())
    throw InvalidInputError("posterior_batch: queries must be finite");
  const Eigen::MatrixXd k_star = cross_kernel(model.latents, zs, model.hp);
  means = model.target_mean +
          model.target_scale * (k_star.transpose() * model.alpha).array();
  const Eigen::MatrixXd v =
      model.chol_lower.triangularView<Eigen::Lower>().solve(k_star);
  const Eigen::ArrayXd var_std =
      (model.hp.signal_variance - v.colwise().squaredNorm().transpose().array())
          .max(0.0);
  variances = (model.target_scale * model.target_scale) * var_std;
}

std::pair<double, double> posterior(const GpModel& model,
                                    const Eigen::Vector2d& z) {
  Eigen::VectorXd means, variances;
  posterior_batch(model, z.transpose(), means, variances);
  return {means[0], variances[0]};
}

double expected_improvement(double mean, double stddev, double best) {
  if (std::isnan(mean) || std::isnan(stddev) || std::isnan(best))
    throw InvalidInputError("expected_improvement: NaN argument");
  if (stddev < 0.0)
    throw InvalidInputError("expected_improvement: stddev must be >= 0");
  const double gap = mean - best;
  if (stddev == 0.0) return std::max(gap, 0.0);
  const double u = gap / stddev;
  const double cdf = 0.5 * std::erfc(-u / std::sqrt(2.0));
  const double pdf = std::exp(-0.5 * u * u) / std::sqrt(2.0 * 3.14159265358979323846);
  return std::max(gap * cdf + stddev * pdf, 0.0);
}

std::vector<GridCandidate> ranked_grid_candidates(
    const GpModel& model, double best, const LatentGrid& grid,
    std::span<const Eigen::Vector2d> exclusions, double exclusion_tol) {
  if (grid.resolution < 2)
    throw InvalidInputError("ranked_grid_candidates: resolution must be >= 2");
  if (!(grid.hi > grid.lo))
    throw InvalidInputError("ranked_grid_candidates: empty grid bounds");

  const int g = grid.resolution;
  std::vector<GridCandidate> candidates;
  candidates.reserve(static_cast<std::size_t>(g) * g);
  Eigen::MatrixXd zs(static_cast<Eigen::Index>(g) * g, 2);
  std::vector<std::pair<int, int>> coords;
  coords.reserve(static_cast<std::size_t>(g) * g);
  Eigen::Index m = 0;
  for (int row = 0; row < g; ++row) {
    for (int col = 0; col < g; ++col) {
      const Eigen::Vector2d z = grid.point(row, col);
      bool excluded = false;
      for (const Eigen::Vector2d& e : exclusions) {
        if ((z - e).lpNorm<Eigen::Infinity>() <= exclusion_tol) {
          excluded = true;
          break;
        }
      }
      if (excluded) continue;
      zs.row(m++) = z.transpose();
      coords.emplace_back(row, col);
    }
  }
  if (m == 0) return {};

  Eigen::VectorXd means, variances;
  posterior_batch(model, zs.topRows(m), means, variances);
  for (Eigen::Index i = 0; i < m; ++i) {
    GridCandidate c;
    c.row = coords[static_cast<std::size_t>(i)].first;
    c.col = coords[static_cast<std::size_t>(i)].second;
    c.z = zs.row(i).transpose();
    c.ei = expected_improvement(means[i], std::sqrt(variances[i]), best);
    candidates.push_back(c);
  }
  // Stable sort keeps row-major (row, col) order among EI ties.
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const GridCandidate& a, const GridCandidate& b) {
                     return a.ei > b.ei;
                   });
  return candidates;
}

Eigen::Vector2d optimize_acquisition_grid(
    const GpModel& model, double best, const LatentGrid& grid,
    std::span<const Eigen::Vector2d> exclusions, double exclusion_tol) {
  const std::vector<GridCandidate> ranked =
      ranked_grid_candidates(model, best, grid, exclusions, exclusion_tol);
  if (ranked.empty())
    throw ExhaustedGridError(
        "optimize_acquisition_grid: every grid point is excluded");
  return ranked.front().z;
}

}  // namespace lsopt
