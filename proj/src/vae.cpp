#include "lsopt/vae.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>

#include "lsopt/rng.hpp"

namespace lsopt {
namespace {

// Canonical tensor order: encoder hidden (weight, bias)..., mean, logvar,
// decoder hidden..., logits.  Serialization, flattening, and the optimizer
// all iterate in this order.
template <class Params, class Fn>
void visit_tensors(Params& p, Fn&& fn) {
  for (auto& l : p.encoder_hidden) {
    fn(l.weight);
    fn(l.bias);
  }
  fn(p.encoder_mean.weight);
  fn(p.encoder_mean.bias);
  fn(p.encoder_logvar.weight);
  fn(p.encoder_logvar.bias);
  for (auto& l : p.decoder_hidden) {
    fn(l.weight);
    fn(l.bias);
  }
  fn(p.decoder_logits.weight);
  fn(p.decoder_logits.bias);
}

bool same_shapes(const VaeParams& a, const VaeParams& b) {
  if (a.encoder_hidden.size() != b.encoder_hidden.size() ||
      a.decoder_hidden.size() != b.decoder_hidden.size())
    return false;
  bool ok = true;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> dims_a, dims_b;
  visit_tensors(const_cast<VaeParams&>(a), [&](auto& t) {
    dims_a.emplace_back(t.rows(), t.cols());
  });
  visit_tensors(const_cast<VaeParams&>(b), [&](auto& t) {
    dims_b.emplace_back(t.rows(), t.cols());
  });
  ok = dims_a == dims_b;
  return ok;
}

void validate_architecture(const VaeArchitecture& arch) {
  if (arch.hidden.empty())
    throw InvalidInputError("VaeArchitecture: at least one hidden layer");
  for (int h : arch.hidden)
    if (h < 1) throw InvalidInputError("VaeArchitecture: hidden sizes must be >= 1");
  if (arch.activation != "tanh")
    throw InvalidInputError("VaeArchitecture: unsupported activation '" +
                            arch.activation + "'");
}

// Elementwise stable logistic; clamped to the open interval (0,1).
Eigen::ArrayXXd logistic(const Eigen::ArrayXXd& logits) {
  Eigen::ArrayXXd p = 0.5 + 0.5 * (0.5 * logits).tanh();
  const double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  return p.max(lo).min(hi);
}

Eigen::ArrayXXd softplus(const Eigen::ArrayXXd& logits) {
  return logits.max(0.0) + (-logits.abs()).exp().log1p();
}

Eigen::MatrixXd affine(const Eigen::MatrixXd& input, const DenseLayer& layer) {
  return (input * layer.weight).rowwise() + layer.bias.transpose();
}

void check_finite_layer(const Eigen::MatrixXd& m, const char* who,
                        const std::string& layer_name) {
  if (!m.allFinite())
    throw NumericError(std::string(who) + ": non-finite output at layer " +
                       layer_name);
}

}  // namespace

std::size_t VaeParams::parameter_count() const {
  std::size_t n = 0;
  visit_tensors(const_cast<VaeParams&>(*this),
                [&](auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

VaeParams init_vae_params(const VaeArchitecture& arch, std::uint64_t rng_seed) {
  validate_architecture(arch);
  Rng rng(rng_seed);
  auto make_layer = [&](int fan_in, int fan_out) {
    DenseLayer layer;
    layer.weight.resize(fan_in, fan_out);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
        layer.weight(r, c) = bound * (2.0 * rng.next_unit() - 1.0);
    layer.bias = Eigen::VectorXd::Zero(fan_out);
    return layer;
  };

  VaeParams p;
  p.arch = arch;
  int prev = VaeArchitecture::kInputDim;
  for (int h : arch.hidden) {
    p.encoder_hidden.push_back(make_layer(prev, h));
    prev = h;
  }
  p.encoder_mean = make_layer(prev, VaeArchitecture::kLatentDim);
  p.encoder_logvar = make_layer(prev, VaeArchitecture::kLatentDim);

  prev = VaeArchitecture::kLatentDim;
  for (auto it = arch.hidden.rbegin(); it != arch.hidden.rend(); ++it) {
    p.decoder_hidden.push_back(make_layer(prev, *it));
    prev = *it;
  }
  p.decoder_logits = make_layer(prev, VaeArchitecture::kInputDim);
  return p;
}

VaeParams zeros_like(const VaeParams& params) {
  VaeParams z = params;
  z.train_seed = 0;
  z.config_echo.clear();
  visit_tensors(z, [](auto& t) { t.setZero(); });
  return z;
}

Eigen::VectorXd image_to_vector(const BinaryImage& image) {
  Eigen::VectorXd x(VaeArchitecture::kInputDim);
  for (int r = 0; r < BinaryImage::kHeight; ++r)
    for (int c = 0; c < BinaryImage::kWidth; ++c)
      x[static_cast<Eigen::Index>(r) * BinaryImage::kWidth + c] =
          image.pixel(r, c) ? 1.0 : 0.0;
  return x;
}

std::pair<Eigen::Vector2d, Eigen::Vector2d> encode(const VaeParams& params,
                                                   const BinaryImage& image) {
  Eigen::MatrixXd h = image_to_vector(image).transpose();  // 1 x 4096
  for (std::size_t i = 0; i < params.encoder_hidden.size(); ++i) {
    h = affine(h, params.encoder_hidden[i]).array().tanh().matrix();
    check_finite_layer(h, "encode", "encoder_hidden_" + std::to_string(i));
  }
  const Eigen::MatrixXd mean = affine(h, params.encoder_mean);
  check_finite_layer(mean, "encode", "encoder_mean");
  const Eigen::MatrixXd logvar = affine(h, params.encoder_logvar);
  check_finite_layer(logvar, "encode", "encoder_logvar");
  return {mean.row(0).transpose(), logvar.row(0).transpose()};
}

Eigen::VectorXd decode_probs(const VaeParams& params, const Eigen::Vector2d& z) {
  if (!z.allFinite())
    throw InvalidInputError("decode_probs: latent must be finite");
  Eigen::MatrixXd h = z.transpose();  // 1 x 2
  for (std::size_t i = 0; i < params.decoder_hidden.size(); ++i) {
    h = affine(h, params.decoder_hidden[i]).array().tanh().matrix();
    check_finite_layer(h, "decode_probs", "decoder_hidden_" + std::to_string(i));
  }
  const Eigen::MatrixXd logits = affine(h, params.decoder_logits);
  check_finite_layer(logits, "decode_probs", "decoder_logits");
  return logistic(logits.array()).row(0).transpose();
}

BinaryImage decode_deterministic(const VaeParams& params,
                                 const Eigen::Vector2d& z) {
  const Eigen::VectorXd probs = decode_probs(params, z);
  BinaryImage image;
  for (int r = 0; r < BinaryImage::kHeight; ++r)
    for (int c = 0; c < BinaryImage::kWidth; ++c)
      image.set_pixel(
          r, c,
          probs[static_cast<Eigen::Index>(r) * BinaryImage::kWidth + c] >= 0.5);
  return image;
}

Eigen::MatrixXd encode_means(const VaeParams& params,
                             std::span<const BinaryImage> images,
                             std::size_t chunk) {
  Eigen::MatrixXd means(static_cast<Eigen::Index>(images.size()),
                        VaeArchitecture::kLatentDim);
  for (std::size_t begin = 0; begin < images.size(); begin += chunk) {
    const std::size_t n = std::min(chunk, images.size() - begin);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), VaeArchitecture::kInputDim);
    for (std::size_t j = 0; j < n; ++j)
      x.row(static_cast<Eigen::Index>(j)) =
          image_to_vector(images[begin + j]).transpose();
    for (const auto& layer : params.encoder_hidden)
      x = affine(x, layer).array().tanh().matrix();
    means.middleRows(static_cast<Eigen::Index>(begin),
                     static_cast<Eigen::Index>(n)) =
        affine(x, params.encoder_mean);
  }
  if (!means.allFinite())
    throw NumericError("encode_means: non-finite encoder output");
  return means;
}

double weighted_elbo(const VaeParams& params, const Eigen::MatrixXd& inputs,
                     const Eigen::MatrixXd& eps,
                     const Eigen::VectorXd& sample_weights,
                     VaeParams* gradients, Eigen::VectorXd* per_sample) {
  const Eigen::Index b = inputs.rows();
  if (inputs.cols() != VaeArchitecture::kInputDim)
    throw InvalidInputError("weighted_elbo: inputs must have 4096 columns");
  if (eps.rows() != b || eps.cols() != VaeArchitecture::kLatentDim)
    throw InvalidInputError("weighted_elbo: eps must be batch x 2");
  if (sample_weights.size() != b)
    throw InvalidInputError("weighted_elbo: one sample weight per row");

  // Forward pass, keeping activations for the backward sweep.
  std::vector<Eigen::MatrixXd> enc_act;
  enc_act.reserve(params.encoder_hidden.size());
  {
    Eigen::MatrixXd h = inputs;
    for (const auto& layer : params.encoder_hidden) {
      h = affine(h, layer).array().tanh().matrix();
      enc_act.push_back(h);
    }
  }
  const Eigen::MatrixXd& h_top = enc_act.back();
  const Eigen::MatrixXd mu = affine(h_top, params.encoder_mean);
  const Eigen::MatrixXd lv = affine(h_top, params.encoder_logvar);
  const Eigen::ArrayXXd sd = (0.5 * lv.array()).exp();
  const Eigen::MatrixXd z = (mu.array() + sd * eps.array()).matrix();

  std::vector<Eigen::MatrixXd> dec_act;
  dec_act.reserve(params.decoder_hidden.size());
  {
    Eigen::MatrixXd h = z;
    for (const auto& layer : params.decoder_hidden) {
      h = affine(h, layer).array().tanh().matrix();
      dec_act.push_back(h);
    }
  }
  const Eigen::MatrixXd logits = affine(dec_act.back(), params.decoder_logits);

  // Per-sample ELBO: sum_px [x*l - softplus(l)] - 0.5*sum_dim(mu^2+e^lv-1-lv).
  const Eigen::VectorXd recon =
      (inputs.array() * logits.array() - softplus(logits.array()))
          .rowwise()
          .sum()
          .matrix();
  const Eigen::VectorXd kl =
      (0.5 *
       (mu.array().square() + lv.array().exp() - 1.0 - lv.array()).rowwise().sum())
          .matrix();
  const Eigen::VectorXd elbos = recon - kl;
  if (per_sample) *per_sample = elbos;
  const double value = sample_weights.dot(elbos);
  if (!gradients) return value;

  if (!same_shapes(params, *gradients)) *gradients = zeros_like(params);
  VaeParams& g = *gradients;

  // d value / d logits = sw * (x - sigmoid(l)), row-scaled by sample weight.
  Eigen::MatrixXd dcur =
      ((inputs.array() - logistic(logits.array())).colwise() *
       sample_weights.array())
          .matrix();
  g.decoder_logits.weight.noalias() = dec_act.back().transpose() * dcur;
  g.decoder_logits.bias = dcur.colwise().sum().transpose();
  dcur = dcur * params.decoder_logits.weight.transpose();

  for (std::size_t i = params.decoder_hidden.size(); i-- > 0;) {
    const Eigen::MatrixXd pre =
        (dcur.array() * (1.0 - dec_act[i].array().square())).matrix();
    const Eigen::MatrixXd& input_act = i == 0 ? z : dec_act[i - 1];
    g.decoder_hidden[i].weight.noalias() = input_act.transpose() * pre;
    g.decoder_hidden[i].bias = pre.colwise().sum().transpose();
    dcur = pre * params.decoder_hidden[i].weight.transpose();
  }

  // dcur is now d value / d z.  Add the KL path into (mu, logvar) and the
  // reparameterization path z = mu + sd * eps.
  const Eigen::MatrixXd dmu =
      (dcur.array() - mu.array().colwise() * sample_weights.array()).matrix();
  const Eigen::MatrixXd dlv =
      (dcur.array() * eps.array() * 0.5 * sd -
       ((0.5 * (lv.array().exp() - 1.0)).colwise() * sample_weights.array()))
          .matrix();
  g.encoder_mean.weight.noalias() = h_top.transpose() * dmu;
  g.encoder_mean.bias = dmu.colwise().sum().transpose();
  g.encoder_logvar.weight.noalias() = h_top.transpose() * dlv;
  g.encoder_logvar.bias = dlv.colwise().sum().transpose();
  dcur = dmu * params.encoder_mean.weight.transpose() +
         dlv * params.encoder_logvar.weight.transpose();

  for (std::size_t i = params.encoder_hidden.size(); i-- > 0;) {
    const Eigen::MatrixXd pre =
        (dcur.array() * (1.0 - enc_act[i].array().square())).matrix();
    const Eigen::MatrixXd& input_act = i == 0 ? inputs : enc_act[i - 1];
    g.encoder_hidden[i].weight.noalias() = input_act.transpose() * pre;
    g.encoder_hidden[i].bias = pre.colwise().sum().transpose();
    if (i > 0) dcur = pre * params.encoder_hidden[i].weight.transpose();
  }
  return value;
}

double elbo(const VaeParams& params, const BinaryImage& image,
            std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  Eigen::MatrixXd eps(1, VaeArchitecture::kLatentDim);
  for (Eigen::Index d = 0; d < eps.cols(); ++d) eps(0, d) = rng.next_gaussian();
  const Eigen::MatrixXd x = image_to_vector(image).transpose();
  const double value =
      weighted_elbo(params, x, eps, Eigen::VectorXd::Ones(1), nullptr, nullptr);
  if (!std::isfinite(value)) throw NumericError("elbo: non-finite result");
  return value;
}

VaeParams train(const VaeParams& params, const WeightedDataset& dataset,
                const TrainConfig& config, TrainTrace* trace) {
  if (dataset.size() == 0) throw InvalidInputError("train: empty dataset");
  if (dataset.scores.size() != dataset.size() ||
      dataset.weights.size() != dataset.size())
    throw InvalidInputError("train: dataset fields must have equal length");
  if (dataset.weights.normalization != Normalization::SumToOne)
    throw InvalidInputError("train: dataset weights must be SumToOne");
  if (!(config.epochs > 0.0) || !std::isfinite(config.epochs))
    throw InvalidInputError("train: epochs must be positive and finite");
  if (config.batch_size < 1)
    throw InvalidInputError("train: batch_size must be >= 1");
  if (!(config.learning_rate > 0.0))
    throw InvalidInputError("train: learning_rate must be > 0");
  if (!(config.beta1 >= 0.0 && config.beta1 < 1.0 && config.beta2 >= 0.0 &&
        config.beta2 < 1.0))
    throw InvalidInputError("train: moment decays must lie in [0, 1)");

  const std::size_t n = dataset.size();
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);

  // Sampling machinery per strategy.  WeightedSampling draws from the
  // variance-reduced expansion with plain batch-mean loss; the uniform
  // strategy reweights the loss by (N/n_batch) * w_j instead.
  VarianceReduction plan;
  std::unique_ptr<WeightedBatchSampler> sampler;
  std::size_t effective_n = n;
  if (config.strategy == BatchStrategy::WeightedSampling) {
    plan = reduce_variance_plan(to_mean_one(dataset.weights), config.w_max);
    const double total = kahan_sum(plan.weights.values);
    if (!(total > 0.0))
      throw NumericError("train: variance-reduced weights have no mass");
    WeightVector probs{plan.weights.values, Normalization::SumToOne};
    for (double& v : probs.values) v /= total;
    sampler = std::make_unique<WeightedBatchSampler>(
        probs, batch, split_seed(config.rng_seed, 0xA11A5));
    effective_n = plan.source_index.size();
  }
  Rng index_rng(split_seed(config.rng_seed, 0x1D0));
  Rng eps_rng(split_seed(config.rng_seed, 0xE95));

  const long long steps = std::max<long long>(
      1, std::llround(config.epochs * static_cast<double>(effective_n) /
                      static_cast<double>(batch)));

  VaeParams out = params;
  out.train_seed = config.rng_seed;
  VaeParams grads = zeros_like(params);
  VaeParams moment1 = zeros_like(params);
  VaeParams moment2 = zeros_like(params);

  // Parallel tensor views for the optimizer update.
  std::vector<std::span<double>> out_v, g_v, m_v, v_v;
  auto collect = [](VaeParams& p, std::vector<std::span<double>>& into) {
    visit_tensors(p, [&](auto& t) {
      into.emplace_back(t.data(), static_cast<std::size_t>(t.size()));
    });
  };
  collect(out, out_v);
  collect(grads, g_v);
  collect(moment1, m_v);
  collect(moment2, v_v);

  Eigen::MatrixXd x(batch, VaeArchitecture::kInputDim);
  Eigen::MatrixXd eps(batch, VaeArchitecture::kLatentDim);
  Eigen::VectorXd sw(batch);
  Eigen::VectorXd per_sample;
  std::vector<std::size_t> data_index(batch);

  // Gauge step: translating every posterior mean by -c while adding c*W to the
  // first decoder layer's bias leaves every reconstruction term bit-for-bit
  // unchanged and, with c equal to the weighted aggregate posterior mean,
  // strictly decreases the KL mean^2 term -- exact coordinate ascent on the
  // ELBO along a direction whose gradient signal is otherwise drowned out by
  // reconstruction noise.  Recentering at epoch boundaries keeps the aggregate
  // posterior over the prior's bulk, so N(0, I) samples and the acquisition
  // grid stay inside the region the decoder was actually trained on.
  const auto recenter = [&](VaeParams& p) {
    const Eigen::MatrixXd means = encode_means(p, dataset.points);
    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    for (std::size_t i = 0; i < n; ++i)
      c += dataset.weights.values[i] * means.row(static_cast<Eigen::Index>(i))
                                           .transpose();
    DenseLayer& first_dec =
        p.decoder_hidden.empty() ? p.decoder_logits : p.decoder_hidden[0];
    p.encoder_mean.bias -= c;
    first_dec.bias += first_dec.weight.transpose() * c;
  };
  const long long steps_per_epoch = std::max<long long>(
      1, std::llround(static_cast<double>(effective_n) /
                      static_cast<double>(batch)));

  double b1_pow = 1.0, b2_pow = 1.0;
  if (trace) trace->step_values.clear();

  for (long long step = 0; step < steps; ++step) {
    if (config.strategy == BatchStrategy::WeightedSampling) {
      const std::vector<std::size_t> slots = sampler->next_batch();
      for (std::size_t j = 0; j < batch; ++j) {
        data_index[j] = plan.source_index[slots[j]];
        sw[static_cast<Eigen::Index>(j)] = 1.0 / static_cast<double>(batch);
      }
    } else {
      const double scale =
          static_cast<double>(n) / static_cast<double>(batch);
      for (std::size_t j = 0; j < batch; ++j) {
        data_index[j] = index_rng.next_index(n);
        sw[static_cast<Eigen::Index>(j)] =
            scale * dataset.weights.values[data_index[j]];
      }
    }
    for (std::size_t j = 0; j < batch; ++j)
      x.row(static_cast<Eigen::Index>(j)) =
          image_to_vector(dataset.points[data_index[j]]).transpose();
    for (Eigen::Index r = 0; r < eps.rows(); ++r)
      for (Eigen::Index c = 0; c < eps.cols(); ++c)
        eps(r, c) = eps_rng.next_gaussian();

    const double value = weighted_elbo(out, x, eps, sw, &grads, &per_sample);
    if (!std::isfinite(value)) {
      std::size_t offender = 0;
      for (Eigen::Index j = 0; j < per_sample.size(); ++j)
        if (!std::isfinite(per_sample[j])) {
          offender = data_index[static_cast<std::size_t>(j)];
          break;
        }
      throw NumericError("train: non-finite loss at step " +
                         std::to_string(step) + ", dataset index " +
                         std::to_string(offender));
    }
    if (trace) trace->step_values.push_back(value);

    // Adaptive-moment ascent step with bias correction.
    b1_pow *= config.beta1;
    b2_pow *= config.beta2;
    const double m_corr = 1.0 / (1.0 - b1_pow);
    const double v_corr = 1.0 / (1.0 - b2_pow);
    for (std::size_t t = 0; t < out_v.size(); ++t) {
      double* p = out_v[t].data();
      double* gm = m_v[t].data();
      double* gv = v_v[t].data();
      const double* gr = g_v[t].data();
      const std::size_t len = out_v[t].size();
      for (std::size_t i = 0; i < len; ++i) {
        gm[i] = config.beta1 * gm[i] + (1.0 - config.beta1) * gr[i];
        gv[i] = config.beta2 * gv[i] + (1.0 - config.beta2) * gr[i] * gr[i];
        p[i] += config.learning_rate * (gm[i] * m_corr) /
                (std::sqrt(gv[i] * v_corr) + config.adam_epsilon);
      }
    }
    if ((step + 1) % steps_per_epoch == 0 && step + 1 < steps) recenter(out);
  }
  recenter(out);
  return out;
}

std::vector<double> sample_prior_scores(
    const VaeParams& params, std::size_t n,
    const std::function<double(const BinaryImage&)>& objective,
    std::uint64_t rng_seed) {
  if (n < 1) throw InvalidInputError("sample_prior_scores: n must be >= 1");
  if (!objective)
    throw InvalidInputError("sample_prior_scores: objective must be callable");
  Rng rng(rng_seed);
  std::vector<double> scores;
  scores.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Vector2d z;
    z[0] = rng.next_gaussian();
    z[1] = rng.next_gaussian();
    scores.push_back(objective(decode_deterministic(params, z)));
  }
  return scores;
}

// ---------------------------------------------------------------------------
// Checkpoint container: "VAEP" magic, version, layer-size list, activation,
// training seed, config echo, then tensors (shape-prefixed, row-major f64 LE).

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");

constexpr std::uint32_t kVaepVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), 8);
}

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& in, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4))
    throw FormatError("load_vae_params: truncated file " + path.string(),
                      static_cast<std::size_t>(in.gcount()));
  return v;
}

std::uint64_t get_u64(std::istream& in, const std::filesystem::path& path) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 8))
    throw FormatError("load_vae_params: truncated file " + path.string(),
                      static_cast<std::size_t>(in.gcount()));
  return v;
}

std::string get_string(std::istream& in, const std::filesystem::path& path) {
  const std::uint32_t len = get_u32(in, path);
  std::string s(len, '\0');
  if (len > 0 && !in.read(s.data(), len))
    throw FormatError("load_vae_params: truncated string in " + path.string(),
                      static_cast<std::size_t>(in.gcount()));
  return s;
}

void put_tensor(std::ostream& out, const Eigen::MatrixXd& m) {
  put_u32(out, 2);
  put_u64(out, static_cast<std::uint64_t>(m.rows()));
  put_u64(out, static_cast<std::uint64_t>(m.cols()));
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
      row_major = m;
  out.write(reinterpret_cast<const char*>(row_major.data()),
            static_cast<std::streamsize>(sizeof(double) * row_major.size()));
}

void put_tensor(std::ostream& out, const Eigen::VectorXd& v) {
  put_u32(out, 1);
  put_u64(out, static_cast<std::uint64_t>(v.size()));
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(sizeof(double) * v.size()));
}

void get_tensor(std::istream& in, const std::filesystem::path& path,
                Eigen::MatrixXd& m) {
  if (get_u32(in, path) != 2)
    throw FormatError("load_vae_params: expected rank-2 tensor in " +
                          path.string(),
                      static_cast<std::size_t>(in.tellg()));
  const auto rows = static_cast<Eigen::Index>(get_u64(in, path));
  const auto cols = static_cast<Eigen::Index>(get_u64(in, path));
  if (rows != m.rows() || cols != m.cols())
    throw FormatError("load_vae_params: tensor shape mismatch in " +
                          path.string(),
                      static_cast<std::size_t>(in.tellg()));
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
      row_major(rows, cols);
  if (!in.read(reinterpret_cast<char*>(row_major.data()),
               static_cast<std::streamsize>(sizeof(double) * row_major.size())))
    throw FormatError("load_vae_params: truncated tensor in " + path.string(),
                      static_cast<std::size_t>(in.gcount()));
  m = row_major;
}

void get_tensor(std::istream& in, const std::filesystem::path& path,
                Eigen::VectorXd& v) {
  if (get_u32(in, path) != 1)
    throw FormatError("load_vae_params: expected rank-1 tensor in " +
                          path.string(),
                      static_cast<std::size_t>(in.tellg()));
  const auto len = static_cast<Eigen::Index>(get_u64(in, path));
  if (len != v.size())
    throw FormatError("load_vae_params: tensor shape mismatch in " +
                          path.string(),
                      static_cast<std::size_t>(in.tellg()));
  if (!in.read(reinterpret_cast<char*>(v.data()),
               static_cast<std::streamsize>(sizeof(double) * v.size())))
    throw FormatError("load_vae_params: truncated tensor in " + path.string(),
                      static_cast<std::size_t>(in.gcount()));
}

}  // namespace

void save_vae_params(const std::filesystem::path& path, const VaeParams& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw Error("save_vae_params: cannot open " + path.string() +
                " for writing");
  out.write("VAEP", 4);
  put_u32(out, kVaepVersion);
  put_u32(out, static_cast<std::uint32_t>(params.arch.hidden.size()));
  for (int h : params.arch.hidden) put_u32(out, static_cast<std::uint32_t>(h));
  put_string(out, params.arch.activation);
  put_u64(out, params.train_seed);
  put_string(out, params.config_echo);

  std::uint32_t tensor_count = 0;
  visit_tensors(const_cast<VaeParams&>(params), [&](auto&) { ++tensor_count; });
  put_u32(out, tensor_count);
  visit_tensors(const_cast<VaeParams&>(params),
                [&](auto& t) { put_tensor(out, t); });
  if (!out) throw Error("save_vae_params: short write to " + path.string());
}

VaeParams load_vae_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_vae_params: cannot open " + path.string());
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, "VAEP", 4) != 0)
    throw FormatError("load_vae_params: bad magic in " + path.string(), 0);
  const std::uint32_t version = get_u32(in, path);
  if (version != kVaepVersion)
    throw FormatError("load_vae_params: unsupported version " +
                          std::to_string(version) + " in " + path.string(),
                      4);

  VaeArchitecture arch;
  arch.hidden.clear();
  const std::uint32_t n_hidden = get_u32(in, path);
  if (n_hidden == 0 || n_hidden > 64)
    throw FormatError("load_vae_params: implausible hidden-layer count in " +
                          path.string(),
                      static_cast<std::size_t>(in.tellg()));
  for (std::uint32_t i = 0; i < n_hidden; ++i)
    arch.hidden.push_back(static_cast<int>(get_u32(in, path)));
  arch.activation = get_string(in, path);

  VaeParams params = init_vae_params(arch, 0);
  params.train_seed = get_u64(in, path);
  params.config_echo = get_string(in, path);

  std::uint32_t expected_tensors = 0;
  visit_tensors(params, [&](auto&) { ++expected_tensors; });
  const std::uint32_t tensor_count = get_u32(in, path);
  if (tensor_count != expected_tensors)
    throw FormatError("load_vae_params: tensor count mismatch in " +
                          path.string(),
                      static_cast<std::size_t>(in.tellg()));
  visit_tensors(params, [&](auto& t) { get_tensor(in, path, t); });

  // Trailing garbage means the file is not what the header promised.
  in.peek();
  if (!in.eof())
    throw FormatError("load_vae_params: trailing bytes in " + path.string(),
                      static_cast<std::size_t>(in.tellg()));
  return params;
}

}  // namespace lsopt
