#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "lsopt/rng.hpp"
#include "lsopt/shapes.hpp"
#include "lsopt/vae.hpp"
#include "lsopt/weighting.hpp"

using namespace lsopt;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "lsopt_vae_tests";
  fs::create_directories(dir);
  return dir;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Exact (bitwise) equality for Eigen dense objects.
template <class A, class B>
bool same(const A& a, const B& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         (a.array() == b.array()).all();
}

VaeParams small_params(std::uint64_t seed, std::vector<int> hidden = {16, 8}) {
  VaeArchitecture arch;
  arch.hidden = std::move(hidden);
  return init_vae_params(arch, seed);
}

void zero_layer(DenseLayer& layer) {
  layer.weight.setZero();
  layer.bias.setZero();
}

WeightedDataset squares(std::size_t count, std::uint64_t seed) {
  SquaresDatasetConfig config;
  config.count = count;
  config.rng_seed = seed;
  return generate_squares_dataset(config);
}

double dataset_mean_elbo(const VaeParams& params, const WeightedDataset& data,
                         std::uint64_t eval_seed) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    total += elbo(params, data.points[i], split_seed(eval_seed, i));
  return total / static_cast<double>(data.size());
}

// Flat list of pointers to every tensor entry, for coordinate surgery.
std::vector<double*> flat_coords(VaeParams& p) {
  std::vector<double*> out;
  const auto add = [&](DenseLayer& l) {
    for (Eigen::Index i = 0; i < l.weight.size(); ++i)
      out.push_back(l.weight.data() + i);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i)
      out.push_back(l.bias.data() + i);
  };
  for (auto& l : p.encoder_hidden) add(l);
  add(p.encoder_mean);
  add(p.encoder_logvar);
  for (auto& l : p.decoder_hidden) add(l);
  add(p.decoder_logits);
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("vae");

TEST_CASE("init: deterministic, fan-in bounded, zero biases") {
  const VaeParams a = small_params(7);
  const VaeParams b = small_params(7);
  const VaeParams c = small_params(8);
  CHECK(same(a.encoder_hidden[0].weight, b.encoder_hidden[0].weight));
  CHECK(same(a.decoder_logits.weight, b.decoder_logits.weight));
  CHECK(!same(a.encoder_hidden[0].weight, c.encoder_hidden[0].weight));

  CHECK(a.encoder_hidden[0].bias.isZero(0.0));
  CHECK(a.decoder_logits.bias.isZero(0.0));
  const double bound = 1.0 / std::sqrt(4096.0);
  CHECK(a.encoder_hidden[0].weight.cwiseAbs().maxCoeff() <= bound);

  // parameter_count agrees with the tensor shapes.
  std::size_t total = 0;
  VaeParams mutable_a = a;
  total = flat_coords(mutable_a).size();
  CHECK(a.parameter_count() == total);
}

TEST_CASE("encode: zeroed output layers give exactly zero mean and logvar") {
  VaeParams p = small_params(3);
  zero_layer(p.encoder_mean);
  zero_layer(p.encoder_logvar);
  const auto [mean, logvar] = encode(p, squares(1, 0).points[0]);
  CHECK(same(mean, Eigen::Vector2d::Zero().eval()));
  CHECK(same(logvar, Eigen::Vector2d::Zero().eval()));
}

TEST_CASE("encode: repeated calls are identical") {
  const VaeParams p = small_params(4);
  const BinaryImage img = squares(1, 5).points[0];
  const auto [m0, v0] = encode(p, img);
  for (int i = 0; i < 100; ++i) {
    const auto [m, v] = encode(p, img);
    REQUIRE(same(m, m0));
    REQUIRE(same(v, v0));
  }
}

TEST_CASE("encode: finite-difference derivative of the mean head") {
  // d mean_j / d encoder_mean.weight(i, j) equals the i-th last-hidden
  // activation, which we recompute manually here.
  VaeParams p = small_params(11);
  const BinaryImage img = squares(1, 2).points[0];

  Eigen::MatrixXd h = image_to_vector(img).transpose();
  for (const auto& layer : p.encoder_hidden)
    h = ((h * layer.weight).rowwise() + layer.bias.transpose())
            .array()
            .tanh()
            .matrix();

  Rng pick(21);
  for (int rep = 0; rep < 10; ++rep) {
    const Eigen::Index i =
        static_cast<Eigen::Index>(pick.next_index(static_cast<std::size_t>(
            p.encoder_mean.weight.rows())));
    const Eigen::Index j = static_cast<Eigen::Index>(pick.next_index(2));
    const double analytic = h(0, i);

    const double eps = 1e-4;
    VaeParams plus = p, minus = p;
    plus.encoder_mean.weight(i, j) += eps;
    minus.encoder_mean.weight(i, j) -= eps;
    const double fd =
        (encode(plus, img).first[j] - encode(minus, img).first[j]) / (2 * eps);
    REQUIRE(std::abs(fd - analytic) <=
            1e-4 * std::max({1.0, std::abs(fd), std::abs(analytic)}));
  }
}

TEST_CASE("decode_probs: zero logits layer gives exactly 0.5 everywhere") {
  VaeParams p = small_params(9);
  zero_layer(p.decoder_logits);
  const Eigen::VectorXd probs = decode_probs(p, Eigen::Vector2d(0.3, -1.2));
  REQUIRE(probs.size() == 4096);
  for (Eigen::Index i = 0; i < probs.size(); ++i) REQUIRE(probs[i] == 0.5);
}

TEST_CASE("decode_probs: strictly inside (0,1) over 1e4 latents with |z|<=10") {
  const VaeParams p = small_params(13);
  Rng rng(14);
  for (int i = 0; i < 10000; ++i) {
    const Eigen::Vector2d z(20.0 * rng.next_unit() - 10.0,
                            20.0 * rng.next_unit() - 10.0);
    const Eigen::VectorXd probs = decode_probs(p, z);
    REQUIRE(probs.minCoeff() > 0.0);
    REQUIRE(probs.maxCoeff() < 1.0);
  }
  CHECK_THROWS_AS(
      decode_probs(p, Eigen::Vector2d(std::nan(""), 0.0)), InvalidInputError);
}

TEST_CASE("decode_deterministic: tie at p=0.5 maps to 1; calls are stable") {
  VaeParams p = small_params(10);
  zero_layer(p.decoder_logits);
  const BinaryImage img = decode_deterministic(p, Eigen::Vector2d(1.0, 1.0));
  CHECK(area(img) == 4096);  // all probabilities are exactly 0.5 -> all ones

  const VaeParams q = small_params(15);
  const Eigen::Vector2d z(0.7, -0.3);
  CHECK(decode_deterministic(q, z) == decode_deterministic(q, z));
}

TEST_CASE("encode_means: matches per-image encode for any chunk size") {
  const VaeParams p = small_params(16);
  const WeightedDataset data = squares(100, 6);
  const Eigen::MatrixXd chunked = encode_means(p, data.points, 7);
  const Eigen::MatrixXd whole = encode_means(p, data.points, 1024);
  REQUIRE(chunked.rows() == 100);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto [mean, logvar] = encode(p, data.points[i]);
    REQUIRE(std::abs(chunked(static_cast<Eigen::Index>(i), 0) - mean[0]) <
            1e-12);
    REQUIRE(std::abs(chunked(static_cast<Eigen::Index>(i), 1) - mean[1]) <
            1e-12);
  }
  // Different chunk sizes drive differently shaped matrix products, whose
  // rounding may differ in the last ulp; agreement is numerical, not bitwise.
  CHECK((chunked - whole).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("elbo: closed-form oracles with a zeroed decoder") {
  // Zero decoder logits make every pixel probability 1/2, so the
  // reconstruction term is exactly 4096 * ln(1/2) for every image and the
  // ELBO reduces to -4096*ln2 - KL.
  const double recon = 4096.0 * std::log(0.5);
  const BinaryImage img = squares(1, 1).points[0];

  VaeParams p = small_params(20);
  zero_layer(p.decoder_logits);
  zero_layer(p.encoder_mean);    // mean = (0,0)
  zero_layer(p.encoder_logvar);  // logvar = (0,0) -> KL = 0
  CHECK(elbo(p, img, 123) == doctest::Approx(recon).epsilon(1e-12));

  // mean = (1,1), unit variance: KL = 2 * 0.5 * mu^2 = 1.
  p.encoder_mean.bias.setConstant(1.0);
  CHECK(elbo(p, img, 5) == doctest::Approx(recon - 1.0).epsilon(1e-12));

  // mean 0, variance 4: KL per dim = 0.5*(4 - 1 - ln 4).
  p.encoder_mean.bias.setZero();
  p.encoder_logvar.bias.setConstant(std::log(4.0));
  const double kl = 2.0 * 0.5 * (4.0 - 1.0 - std::log(4.0));
  CHECK(elbo(p, img, 5) == doctest::Approx(recon - kl).epsilon(1e-12));
}

TEST_CASE("elbo: deterministic in the seed") {
  const VaeParams p = small_params(22);
  const BinaryImage img = squares(1, 3).points[0];
  CHECK(elbo(p, img, 42) == elbo(p, img, 42));
  CHECK(elbo(p, img, 42) != elbo(p, img, 43));
}

TEST_CASE("closed-form KL is nonnegative over 1e4 random posteriors") {
  Rng rng(31);
  for (int i = 0; i < 10000; ++i) {
    const double mu = 6.0 * rng.next_gaussian();
    const double lv = 4.0 * rng.next_gaussian();
    const double kl = 0.5 * (mu * mu + std::exp(lv) - 1.0 - lv);
    REQUIRE(kl >= 0.0);
  }
}

TEST_CASE("weighted_elbo: gradient matches central finite differences") {
  VaeParams p = small_params(33, {8, 4});
  const WeightedDataset data = squares(5, 8);

  Eigen::MatrixXd x(5, VaeArchitecture::kInputDim);
  for (int j = 0; j < 5; ++j)
    x.row(j) = image_to_vector(data.points[static_cast<std::size_t>(j)])
                   .transpose();
  Eigen::MatrixXd eps(5, 2);
  Rng noise(77);
  for (Eigen::Index r = 0; r < 5; ++r)
    for (Eigen::Index c = 0; c < 2; ++c) eps(r, c) = noise.next_gaussian();
  Eigen::VectorXd sw(5);
  sw << 0.4, 0.25, 0.15, 0.12, 0.08;

  VaeParams grads = zeros_like(p);
  weighted_elbo(p, x, eps, sw, &grads);
  std::vector<double*> coords = flat_coords(p);
  VaeParams grads_view = grads;  // same traversal order as flat_coords
  std::vector<double*> gcoords = flat_coords(grads_view);
  REQUIRE(coords.size() == gcoords.size());

  Rng pick(55);
  const double eps_fd = 1e-4;
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t idx = pick.next_index(coords.size());
    const double saved = *coords[idx];
    *coords[idx] = saved + eps_fd;
    const double up = weighted_elbo(p, x, eps, sw);
    *coords[idx] = saved - eps_fd;
    const double down = weighted_elbo(p, x, eps, sw);
    *coords[idx] = saved;
    const double fd = (up - down) / (2.0 * eps_fd);
    const double an = *gcoords[idx];
    const double denom = std::max({1e-6, std::abs(fd), std::abs(an)});
    REQUIRE(std::abs(fd - an) / denom < 1e-4);
  }
}

TEST_CASE("mini-batch strategies are unbiased for the weighted objective") {
  // Freeze one reparameterization draw per dataset index; then the exact
  // weighted objective sum_i w_i * elbo_i(eps_i) is computable in one full
  // pass and both strategies must match it in expectation over index draws.
  const WeightedDataset raw = squares(100, 12);
  WeightedDataset data = raw;
  data.weights = rank_weights(data.scores, 1e-2);  // deliberately skewed

  VaeParams p = small_params(44, {8, 4});
  const std::size_t n = data.size();

  Eigen::MatrixXd all_x(static_cast<Eigen::Index>(n),
                        VaeArchitecture::kInputDim);
  for (std::size_t i = 0; i < n; ++i)
    all_x.row(static_cast<Eigen::Index>(i)) =
        image_to_vector(data.points[i]).transpose();
  Eigen::MatrixXd frozen_eps(static_cast<Eigen::Index>(n), 2);
  Rng noise(91);
  for (Eigen::Index r = 0; r < frozen_eps.rows(); ++r)
    for (Eigen::Index c = 0; c < 2; ++c)
      frozen_eps(r, c) = noise.next_gaussian();

  // Exact oracle: value and gradient of sum_i w_i elbo_i.
  VaeParams oracle_grads = zeros_like(p);
  Eigen::VectorXd w_vec(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    w_vec[static_cast<Eigen::Index>(i)] = data.weights.values[i];
  const double oracle_value =
      weighted_elbo(p, all_x, frozen_eps, w_vec, &oracle_grads);
  std::vector<double*> oracle_coords = flat_coords(oracle_grads);

  // A handful of gradient coordinates to track.
  Rng pick(123);
  std::vector<std::size_t> tracked;
  for (int i = 0; i < 8; ++i) tracked.push_back(pick.next_index(oracle_coords.size()));

  const std::size_t batch = 20;
  const int rounds = 1000;

  const auto run_strategy = [&](BatchStrategy strategy, std::uint64_t seed) {
    std::vector<double> values;
    std::vector<std::vector<double>> grad_samples(tracked.size());
    Eigen::MatrixXd x(batch, VaeArchitecture::kInputDim);
    Eigen::MatrixXd eps(batch, 2);
    Eigen::VectorXd sw(batch);
    VaeParams grads = zeros_like(p);

    VarianceReduction plan;
    std::unique_ptr<WeightedBatchSampler> sampler;
    Rng index_rng(split_seed(seed, 0x1D0));
    if (strategy == BatchStrategy::WeightedSampling) {
      plan = reduce_variance_plan(to_mean_one(data.weights), 5.0);
      WeightVector probs{plan.weights.values, Normalization::SumToOne};
      const double total = kahan_sum(probs.values);
      for (double& v : probs.values) v /= total;
      sampler = std::make_unique<WeightedBatchSampler>(probs, batch,
                                                       split_seed(seed, 0xA1));
    }

    for (int round = 0; round < rounds; ++round) {
      std::vector<std::size_t> idx(batch);
      if (strategy == BatchStrategy::WeightedSampling) {
        const std::vector<std::size_t> slots = sampler->next_batch();
        for (std::size_t j = 0; j < batch; ++j) {
          idx[j] = plan.source_index[slots[j]];
          sw[static_cast<Eigen::Index>(j)] = 1.0 / static_cast<double>(batch);
        }
      } else {
        for (std::size_t j = 0; j < batch; ++j) {
          idx[j] = index_rng.next_index(n);
          sw[static_cast<Eigen::Index>(j)] =
              static_cast<double>(n) / static_cast<double>(batch) *
              data.weights.values[idx[j]];
        }
      }
      for (std::size_t j = 0; j < batch; ++j) {
        x.row(static_cast<Eigen::Index>(j)) =
            all_x.row(static_cast<Eigen::Index>(idx[j]));
        eps.row(static_cast<Eigen::Index>(j)) =
            frozen_eps.row(static_cast<Eigen::Index>(idx[j]));
      }
      values.push_back(weighted_elbo(p, x, eps, sw, &grads));
      std::vector<double*> gc = flat_coords(grads);
      for (std::size_t t = 0; t < tracked.size(); ++t)
        grad_samples[t].push_back(*gc[tracked[t]]);
    }

    // Mean within 3 SE of the oracle, for the value and each tracked coord.
    const auto check_mean = [&](const std::vector<double>& samples,
                                double target) {
      double mean = 0.0;
      for (double v : samples) mean += v;
      mean /= static_cast<double>(samples.size());
      double var = 0.0;
      for (double v : samples) var += (v - mean) * (v - mean);
      var /= static_cast<double>(samples.size() - 1);
      const double se = std::sqrt(var / static_cast<double>(samples.size()));
      CHECK(std::abs(mean - target) <= 3.0 * se + 1e-9);
    };
    check_mean(values, oracle_value);
    for (std::size_t t = 0; t < tracked.size(); ++t)
      check_mean(grad_samples[t], *oracle_coords[tracked[t]]);
  };

  run_strategy(BatchStrategy::WeightedSampling, 1001);
  run_strategy(BatchStrategy::UniformWithLossWeights, 2002);
}

TEST_CASE("uniform weights: both strategies train statistically alike") {
  const WeightedDataset data = squares(100, 19);  // uniform weights by default
  TrainConfig config;
  config.epochs = 1.0;
  config.batch_size = 10;

  std::vector<double> mean_a, mean_b;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TrainTrace trace_a, trace_b;
    config.rng_seed = seed;
    config.strategy = BatchStrategy::WeightedSampling;
    train(small_params(60, {16, 8}), data, config, &trace_a);
    config.strategy = BatchStrategy::UniformWithLossWeights;
    train(small_params(60, {16, 8}), data, config, &trace_b);
    const auto avg = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    mean_a.push_back(avg(trace_a.step_values));
    mean_b.push_back(avg(trace_b.step_values));
  }
  double ma = 0.0, mb = 0.0;
  for (double v : mean_a) ma += v;
  for (double v : mean_b) mb += v;
  ma /= 5.0;
  mb /= 5.0;
  double va = 0.0, vb = 0.0;
  for (double v : mean_a) va += (v - ma) * (v - ma);
  for (double v : mean_b) vb += (v - mb) * (v - mb);
  va /= 4.0;
  vb /= 4.0;
  const double se = std::sqrt(va / 5.0 + vb / 5.0);
  CHECK(std::abs(ma - mb) <= 2.0 * se + 1e-9);
}

TEST_CASE("one epoch of training raises the dataset-mean ELBO on 5 seeds") {
  const WeightedDataset data = squares(160, 23);
  TrainConfig config;
  config.epochs = 1.0;
  config.batch_size = 8;  // 20 optimizer steps per epoch
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    config.rng_seed = seed;
    const VaeParams before = small_params(70 + seed, {32, 16});
    const VaeParams after = train(before, data, config);
    const double e0 = dataset_mean_elbo(before, data, 555);
    const double e1 = dataset_mean_elbo(after, data, 555);
    REQUIRE(e1 > e0);
  }
}

TEST_CASE("train: deterministic given the seed, input params untouched") {
  const WeightedDataset data = squares(64, 29);
  TrainConfig config;
  config.epochs = 0.5;
  config.batch_size = 16;
  config.rng_seed = 99;
  const VaeParams init = small_params(80);
  const Eigen::MatrixXd init_w0 = init.encoder_hidden[0].weight;

  const VaeParams a = train(init, data, config);
  const VaeParams b = train(init, data, config);
  CHECK(same(init.encoder_hidden[0].weight, init_w0));

  const fs::path pa = temp_dir() / "train_a.vaep";
  const fs::path pb = temp_dir() / "train_b.vaep";
  save_vae_params(pa, a);
  save_vae_params(pb, b);
  CHECK(read_bytes(pa) == read_bytes(pb));

  config.rng_seed = 100;
  const VaeParams c = train(init, data, config);
  const fs::path pc = temp_dir() / "train_c.vaep";
  save_vae_params(pc, c);
  CHECK(read_bytes(pa) != read_bytes(pc));
}

TEST_CASE("train: diverging loss aborts with step and dataset index") {
  const WeightedDataset data = squares(32, 37);
  TrainConfig config;
  config.epochs = 4.0;
  config.batch_size = 8;
  config.learning_rate = 1e18;  // guaranteed overflow within a few steps
  try {
    train(small_params(90), data, config);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string what = e.what();
    CHECK(what.find("non-finite loss at step") != std::string::npos);
    CHECK(what.find("dataset index") != std::string::npos);
  }
}

TEST_CASE("train: input validation") {
  const WeightedDataset data = squares(8, 41);
  TrainConfig config;
  CHECK_THROWS_AS(train(small_params(1), WeightedDataset{}, config),
                  InvalidInputError);
  config.batch_size = 0;
  CHECK_THROWS_AS(train(small_params(1), data, config), InvalidInputError);
  config.batch_size = 4;
  config.epochs = 0.0;
  CHECK_THROWS_AS(train(small_params(1), data, config), InvalidInputError);
}

TEST_CASE("sample_prior_scores: deterministic; rejects n=0") {
  VaeParams p = small_params(17);
  const auto objective = [](const BinaryImage& img) {
    return static_cast<double>(area(img));
  };
  const std::vector<double> a = sample_prior_scores(p, 50, objective, 7);
  const std::vector<double> b = sample_prior_scores(p, 50, objective, 7);
  CHECK(a == b);
  CHECK_THROWS_AS(sample_prior_scores(p, 0, objective, 7), InvalidInputError);

  zero_layer(p.decoder_logits);  // constant decoder -> every draw scores 4096
  for (double s : sample_prior_scores(p, 10, objective, 3)) CHECK(s == 4096.0);
}

TEST_CASE("checkpoint: save -> load -> save is byte-identical") {
  VaeParams p = small_params(101);
  p.train_seed = 424242;
  p.config_echo = "{\"epochs\":20}";
  const fs::path first = temp_dir() / "round_a.vaep";
  const fs::path second = temp_dir() / "round_b.vaep";
  save_vae_params(first, p);
  const VaeParams loaded = load_vae_params(first);
  save_vae_params(second, loaded);
  CHECK(read_bytes(first) == read_bytes(second));

  CHECK(loaded.train_seed == 424242);
  CHECK(loaded.config_echo == p.config_echo);
  CHECK(loaded.arch == p.arch);
  CHECK(same(loaded.encoder_hidden[0].weight, p.encoder_hidden[0].weight));
  CHECK(same(loaded.decoder_logits.bias, p.decoder_logits.bias));
}

TEST_CASE("checkpoint: corruption is rejected") {
  const fs::path good = temp_dir() / "good.vaep";
  save_vae_params(good, small_params(7, {4}));
  std::vector<std::uint8_t> bytes = read_bytes(good);

  SUBCASE("bad magic") {
    bytes[0] = 'X';
    const fs::path bad = temp_dir() / "bad_magic.vaep";
    std::ofstream(bad, std::ios::binary)
        .write(reinterpret_cast<const char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_vae_params(bad), FormatError);
  }
  SUBCASE("truncated") {
    bytes.resize(bytes.size() / 2);
    const fs::path bad = temp_dir() / "trunc.vaep";
    std::ofstream(bad, std::ios::binary)
        .write(reinterpret_cast<const char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_vae_params(bad), FormatError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_vae_params(temp_dir() / "nope.vaep"), Error);
  }
}

TEST_SUITE_END();
