#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lsopt/shapes.hpp"

namespace lsopt {

// Dense VAE over 64x64 binary images with a fixed 2-D latent space.
// The decoder mirrors the encoder's hidden stack.
struct VaeArchitecture {
  static constexpr int kInputDim = static_cast<int>(BinaryImage::kPixelCount);
  static constexpr int kLatentDim = 2;

  std::vector<int> hidden{512, 128};
  std::string activation = "tanh";  // metadata; tanh is the supported choice

  friend bool operator==(const VaeArchitecture&, const VaeArchitecture&) = default;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // fan_in x fan_out
  Eigen::VectorXd bias;    // fan_out
};

struct VaeParams {
  VaeArchitecture arch;
  std::vector<DenseLayer> encoder_hidden;  // input -> hidden[0] -> hidden[1] ...
  DenseLayer encoder_mean;                 // hidden.back() -> 2
  DenseLayer encoder_logvar;               // hidden.back() -> 2
  std::vector<DenseLayer> decoder_hidden;  // 2 -> hidden[last] -> ... -> hidden[0]
  DenseLayer decoder_logits;               // hidden[0] -> input

  // Provenance carried into the checkpoint file.
  std::uint64_t train_seed = 0;
  std::string config_echo;

  std::size_t parameter_count() const;
};

// Symmetric uniform fan-in initialization, U(-1/sqrt(fan_in), +1/sqrt(fan_in)),
// biases zero; deterministic given the seed.
VaeParams init_vae_params(const VaeArchitecture& arch, std::uint64_t rng_seed);

// Zero tensors with the same shapes; the gradient container.
VaeParams zeros_like(const VaeParams& params);

enum class BatchStrategy { WeightedSampling, UniformWithLossWeights };

struct TrainConfig {
  double epochs = 1.0;  // fractional values allowed (fraction of one pass)
  int batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t rng_seed = 0;
  BatchStrategy strategy = BatchStrategy::WeightedSampling;
  double w_max = 5.0;  // variance-reduction cap under WeightedSampling
};

Eigen::VectorXd image_to_vector(const BinaryImage& image);

// Posterior parameters q(z|x) = N(mean, diag(exp(log_variance))).
std::pair<Eigen::Vector2d, Eigen::Vector2d> encode(const VaeParams& params,
                                                   const BinaryImage& image);

// Posterior means for a whole dataset (n x 2), evaluated in chunks.
Eigen::MatrixXd encode_means(const VaeParams& params,
                             std::span<const BinaryImage> images,
                             std::size_t chunk = 512);

// Elementwise logistic of the decoder logits; entries in (0,1).
Eigen::VectorXd decode_probs(const VaeParams& params, const Eigen::Vector2d& z);

// Thresholds decode_probs at 0.5, ties (p == 0.5) mapping to 1.
BinaryImage decode_deterministic(const VaeParams& params, const Eigen::Vector2d& z);

// Per-datapoint ELBO, single reparameterized sample:
//   E_q[log p(x|z)] - KL(q(z|x) || N(0, I)),
// reconstruction in stable logit form x*l - softplus(l), KL in closed form.
double elbo(const VaeParams& params, const BinaryImage& image,
            std::uint64_t rng_seed);

// Weighted ELBO over a fixed batch with externally supplied reparameterization
// noise: value = sum_j sample_weights[j] * elbo_j.  When `gradients` is
// non-null it receives d(value)/d(params) (overwritten, shapes from params).
// `per_sample` (optional) receives the unweighted per-sample ELBOs.
double weighted_elbo(const VaeParams& params, const Eigen::MatrixXd& inputs,
                     const Eigen::MatrixXd& eps,
                     const Eigen::VectorXd& sample_weights,
                     VaeParams* gradients = nullptr,
                     Eigen::VectorXd* per_sample = nullptr);

// Per-step objective values, for loss curves and convergence checks.
struct TrainTrace {
  std::vector<double> step_values;  // weighted-ELBO estimate per step
};

// Mini-batch gradient ascent on the weighted ELBO with the adaptive-moment
// optimizer; returns new parameters, never mutates the input.  Deterministic
// given config.rng_seed (single-threaded by contract).
//
// At every epoch boundary (and once at the end) the weighted aggregate
// posterior mean is translated to the origin, compensated exactly in the
// first decoder layer's bias.  Reconstructions are invariant under this
// gauge step and the KL mean^2 term strictly decreases, so it is coordinate
// ascent on the same ELBO; it exists because the centering gradient is far
// smaller than per-batch reconstruction noise and the adaptive optimizer
// normalizes it away, leaving the latent cloud wherever it first drifted —
// which would put much of N(0, I) outside the trained region.
VaeParams train(const VaeParams& params, const WeightedDataset& dataset,
                const TrainConfig& config, TrainTrace* trace = nullptr);

// Draw n latents from N(0, I_2), decode deterministically, score each.
std::vector<double> sample_prior_scores(
    const VaeParams& params, std::size_t n,
    const std::function<double(const BinaryImage&)>& objective,
    std::uint64_t rng_seed);

// Versioned binary checkpoint; save -> load -> save is byte-identical.
void save_vae_params(const std::filesystem::path& path, const VaeParams& params);
VaeParams load_vae_params(const std::filesystem::path& path);

}  // namespace lsopt
