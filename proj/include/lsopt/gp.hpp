#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lsopt/errors.hpp"

namespace lsopt {

// Squared-exponential kernel with per-dimension lengthscales:
//   k(a, b) = signal_variance * exp(-0.5 * sum_d (a_d - b_d)^2 / l_d^2).
struct GpHyperparams {
  double signal_variance = 1.0;
  Eigen::Vector2d lengthscales = Eigen::Vector2d::Ones();
  double noise_variance = 1e-2;
};

// Exact GP posterior state over standardized targets.
struct GpModel {
  GpHyperparams hp;
  Eigen::MatrixXd latents;     // n x 2
  Eigen::VectorXd alpha;       // (K + noise*I)^-1 y_std
  Eigen::MatrixXd chol_lower;  // L with L L^T = K + noise*I (+ jitter)
  double target_mean = 0.0;
  double target_scale = 1.0;
  double jitter = 0.0;          // extra diagonal needed for factorization
  double log_marginal = 0.0;    // of the standardized targets

  std::size_t size() const { return static_cast<std::size_t>(latents.rows()); }
};

struct SubsetRule {
  std::size_t n_best = 200;
  std::size_t n_rand = 800;
  std::uint64_t rng_seed = 0;
};

// Indices of the n_best highest-target points (descending target, ties by
// index) followed by n_rand uniform draws without replacement from the rest.
std::vector<std::size_t> select_subset(std::span<const double> targets,
                                       const SubsetRule& rule);

struct GpFitConfig {
  // When set, hyperparameters are taken as-is and no search runs.
  std::optional<GpHyperparams> fixed;
  // Extra search start (e.g. the previous fit); with warm_only the log-spaced
  // grid starts are skipped entirely.
  std::optional<GpHyperparams> warm_start;
  bool warm_only = false;
  int refine_sweeps = 3;
};

// Standardizes targets, maximizes log marginal likelihood by multi-start
// coordinate search in log-space plus local refinement, and factorizes the
// kernel with jitter escalation (1e-10 -> 1e-4) on failure.
GpModel fit_gp(const Eigen::MatrixXd& latents, const Eigen::VectorXd& targets,
               const GpFitConfig& config = {});

// Predictive mean/variance of the latent function (noise-free f), on the raw
// target scale; variance clamped at 0 from below.
std::pair<double, double> posterior(const GpModel& model,
                                    const Eigen::Vector2d& z);

// Batched posterior over the rows of zs.
void posterior_batch(const GpModel& model, const Eigen::MatrixXd& zs,
                     Eigen::VectorXd& means, Eigen::VectorXd& variances);

// EI = (mean-best)*Phi(u) + std*phi(u), u = (mean-best)/std; max(mean-best, 0)
// in the std -> 0 limit.  Maximization convention; always >= 0.
double expected_improvement(double mean, double stddev, double best);

// Uniform G x G grid over [lo, hi]^2; row indexes the first latent dimension.
struct LatentGrid {
  double lo = -3.0;
  double hi = 3.0;
  int resolution = 65;

  Eigen::Vector2d point(int row, int col) const {
    const double h = (hi - lo) / static_cast<double>(resolution - 1);
    return {lo + h * row, lo + h * col};
  }
};

struct GridCandidate {
  int row = 0;
  int col = 0;
  Eigen::Vector2d z = Eigen::Vector2d::Zero();
  double ei = 0.0;
};

// All non-excluded grid points ordered by (EI desc, row, col); a grid point is
// excluded when it lies within L-inf distance `exclusion_tol` of any entry of
// `exclusions`.  Empty result means the whole grid is excluded.
std::vector<GridCandidate> ranked_grid_candidates(
    const GpModel& model, double best, const LatentGrid& grid,
    std::span<const Eigen::Vector2d> exclusions, double exclusion_tol);

// The EI argmax over the grid; throws ExhaustedGridError if every point is
// excluded.
Eigen::Vector2d optimize_acquisition_grid(
    const GpModel& model, double best, const LatentGrid& grid,
    std::span<const Eigen::Vector2d> exclusions, double exclusion_tol = 1e-6);

}  // namespace lsopt
