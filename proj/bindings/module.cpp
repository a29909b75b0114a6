#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <utility>

#include "lsopt/cli.hpp"
#include "lsopt/gp.hpp"
#include "lsopt/lso.hpp"
#include "lsopt/run_io.hpp"

namespace py = pybind11;
using namespace lsopt;

namespace {

BinaryImage image_from_bytes(const py::bytes& packed) {
  std::string_view view(packed);
  if (view.size() != BinaryImage::kPackedBytes)
    throw InvalidInputError("image must be exactly 512 packed bytes");
  return BinaryImage::from_packed(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(view.data()), view.size()));
}

py::bytes image_to_bytes(const BinaryImage& image) {
  return py::bytes(reinterpret_cast<const char*>(image.packed().data()),
                   BinaryImage::kPackedBytes);
}

std::vector<BinaryImage> images_from_bytes(const std::vector<py::bytes>& packed) {
  std::vector<BinaryImage> images;
  images.reserve(packed.size());
  for (const py::bytes& b : packed) images.push_back(image_from_bytes(b));
  return images;
}

std::vector<py::bytes> images_to_bytes(const std::vector<BinaryImage>& images) {
  std::vector<py::bytes> out;
  out.reserve(images.size());
  for (const BinaryImage& im : images) out.push_back(image_to_bytes(im));
  return out;
}

Eigen::Vector2d to_vec2(const std::pair<double, double>& z) {
  return Eigen::Vector2d(z.first, z.second);
}

py::dict record_to_dict(const LsoRunRecord& record) {
  py::list queries;
  for (const QueryRecord& q : record.queries) {
    py::dict d;
    d["index"] = q.index;
    d["latent"] = std::make_pair(q.latent[0], q.latent[1]);
    d["score"] = q.score;
    d["novel"] = q.novel;
    d["attempts"] = q.attempts;
    queries.append(d);
  }
  py::list retrains;
  for (const RetrainEvent& e : record.retrain_events) {
    py::dict d;
    d["query_index"] = e.query_index;
    d["epochs"] = e.epochs;
    retrains.append(d);
  }
  py::dict out;
  out["queries"] = queries;
  out["retrain_events"] = retrains;
  out["complete"] = record.complete;
  out["abort_reason"] = record.abort_reason;
  out["seed"] = record.seed;
  return out;
}

TrainConfig train_config_from_kwargs(double epochs, int batch_size,
                                     double learning_rate, std::uint64_t seed,
                                     const std::string& strategy) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.learning_rate = learning_rate;
  t.rng_seed = seed;
  if (strategy == "weighted_sampling")
    t.strategy = BatchStrategy::WeightedSampling;
  else if (strategy == "uniform_loss_weights")
    t.strategy = BatchStrategy::UniformWithLossWeights;
  else
    throw InvalidInputError(
        "strategy must be 'weighted_sampling' or 'uniform_loss_weights'");
  return t;
}

}  // namespace

PYBIND11_MODULE(_lsopt, m) {
  m.doc() =
      "Latent-space black-box optimization with weighted retraining: "
      "rank weighting, dense VAE, exact GP surrogate, and the 2-D "
      "shape-area benchmark.  Images are 512-byte packed 64x64 bitmaps.";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<InvalidInputError>(m, "InvalidInputError",
                                            PyExc_ValueError);

  // --- weighting -----------------------------------------------------------
  m.def(
      "rank_weights",
      [](const std::vector<double>& scores, double k) {
        return rank_weights(scores, k).values;
      },
      py::arg("scores"), py::arg("k"),
      "Rank weights w_i proportional to 1/(k*N + rank_i), normalized to sum 1.");
  m.def("total_weight_closed_form", &total_weight_closed_form, py::arg("k"));
  m.def("quantile_weight_fraction", &quantile_weight_fraction, py::arg("k"),
        py::arg("q1"), py::arg("q2"));
  m.def(
      "rwr_weights",
      [](const std::vector<double>& scores, double gamma) {
        return rwr_weights(scores, gamma).values;
      },
      py::arg("scores"), py::arg("gamma"));
  m.def(
      "dbas_weights",
      [](const std::vector<double>& scores, double threshold, double variance) {
        return dbas_weights(scores, threshold, variance).values;
      },
      py::arg("scores"), py::arg("threshold"), py::arg("noise_variance"));
  m.def(
      "quantile_binary_weights",
      [](const std::vector<double>& scores, double quantile) {
        return quantile_binary_weights(scores, quantile).values;
      },
      py::arg("scores"), py::arg("quantile"));
  m.def("upper_quantile_threshold", &upper_quantile_threshold, py::arg("scores"),
        py::arg("quantile"));

  // --- shapes task ---------------------------------------------------------
  m.def(
      "area", [](const py::bytes& image) { return area(image_from_bytes(image)); },
      py::arg("image"), "Number of set pixels in a packed 64x64 bitmap.");
  m.def(
      "generate_dataset",
      [](std::size_t count, int min_side, int max_side, std::uint64_t seed) {
        SquaresDatasetConfig cfg;
        cfg.count = count;
        cfg.min_side = min_side;
        cfg.max_side = max_side;
        cfg.rng_seed = seed;
        WeightedDataset ds = generate_squares_dataset(cfg);
        return std::make_pair(images_to_bytes(ds.points), ds.scores);
      },
      py::arg("count") = 10000, py::arg("min_side") = 1, py::arg("max_side") = 20,
      py::arg("seed") = 0,
      "Random axis-aligned squares; returns (images, areas).");
  m.def(
      "write_shp1",
      [](const std::string& path, const std::vector<py::bytes>& images,
         const std::vector<double>& scores) {
        write_shp1(path, images_from_bytes(images), scores);
      },
      py::arg("path"), py::arg("images"), py::arg("scores"));
  m.def(
      "read_shp1",
      [](const std::string& path) {
        auto [images, scores] = read_shp1(path);
        return std::make_pair(images_to_bytes(images), std::move(scores));
      },
      py::arg("path"));

  // --- VAE -----------------------------------------------------------------
  py::class_<VaeParams>(m, "VaeParams", "Opaque dense-VAE parameter bundle.")
      .def_property_readonly("parameter_count", &VaeParams::parameter_count)
      .def_property_readonly(
          "hidden", [](const VaeParams& p) { return p.arch.hidden; })
      .def("save", [](const VaeParams& p, const std::string& path) {
        save_vae_params(path, p);
      });
  m.def(
      "init_vae",
      [](const std::vector<int>& hidden, std::uint64_t seed) {
        VaeArchitecture arch;
        arch.hidden = hidden;
        return init_vae_params(arch, seed);
      },
      py::arg("hidden") = std::vector<int>{512, 128}, py::arg("seed") = 0);
  m.def("load_vae", [](const std::string& path) { return load_vae_params(path); },
        py::arg("path"));
  m.def(
      "train_vae",
      [](const VaeParams& params, const std::vector<py::bytes>& images,
         const std::vector<double>& scores, double rank_k, double epochs,
         int batch_size, double learning_rate, std::uint64_t seed,
         const std::string& strategy) {
        WeightedDataset ds;
        ds.points = images_from_bytes(images);
        ds.scores = scores;
        ds.weights = rank_weights(scores, rank_k);
        return train(params, ds,
                     train_config_from_kwargs(epochs, batch_size, learning_rate,
                                              seed, strategy));
      },
      py::arg("params"), py::arg("images"), py::arg("scores"),
      py::arg("rank_k") = std::numeric_limits<double>::infinity(),
      py::arg("epochs") = 1.0, py::arg("batch_size") = 64,
      py::arg("learning_rate") = 1e-3, py::arg("seed") = 0,
      py::arg("strategy") = "weighted_sampling",
      "Weighted-ELBO gradient ascent; rank_k=inf gives uniform weights.");
  m.def(
      "encode",
      [](const VaeParams& params, const py::bytes& image) {
        const auto [mean, logvar] = encode(params, image_from_bytes(image));
        return std::make_pair(std::make_pair(mean[0], mean[1]),
                              std::make_pair(logvar[0], logvar[1]));
      },
      py::arg("params"), py::arg("image"),
      "Posterior (mean, logvar) for one image.");
  m.def(
      "decode",
      [](const VaeParams& params, const std::pair<double, double>& z) {
        return image_to_bytes(decode_deterministic(params, to_vec2(z)));
      },
      py::arg("params"), py::arg("z"),
      "Deterministic decoding: pixel on where p >= 0.5.");
  m.def(
      "elbo",
      [](const VaeParams& params, const py::bytes& image, std::uint64_t seed) {
        return elbo(params, image_from_bytes(image), seed);
      },
      py::arg("params"), py::arg("image"), py::arg("seed") = 0);
  m.def(
      "sample_prior_areas",
      [](const VaeParams& params, std::size_t n, std::uint64_t seed) {
        return sample_prior_scores(
            params, n,
            [](const BinaryImage& im) { return static_cast<double>(area(im)); },
            seed);
      },
      py::arg("params"), py::arg("n"), py::arg("seed") = 0,
      "Areas of n images decoded from N(0, I) latent draws.");

  // --- GP surrogate --------------------------------------------------------
  py::class_<GpModel>(m, "GpModel", "Fitted exact-GP surrogate.")
      .def_property_readonly("signal_variance",
                             [](const GpModel& g) { return g.hp.signal_variance; })
      .def_property_readonly("lengthscales",
                             [](const GpModel& g) {
                               return std::make_pair(g.hp.lengthscales[0],
                                                     g.hp.lengthscales[1]);
                             })
      .def_property_readonly("noise_variance",
                             [](const GpModel& g) { return g.hp.noise_variance; })
      .def_property_readonly("log_marginal",
                             [](const GpModel& g) { return g.log_marginal; })
      .def_property_readonly("size", &GpModel::size);
  m.def(
      "fit_gp",
      [](const std::vector<std::pair<double, double>>& latents,
         const std::vector<double>& targets) {
        Eigen::MatrixXd z(static_cast<Eigen::Index>(latents.size()), 2);
        for (std::size_t i = 0; i < latents.size(); ++i)
          z.row(static_cast<Eigen::Index>(i)) = to_vec2(latents[i]);
        Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(
            targets.data(), static_cast<Eigen::Index>(targets.size()));
        return fit_gp(z, y, {});
      },
      py::arg("latents"), py::arg("targets"),
      "Maximum-marginal-likelihood fit of the SE-ARD GP.");
  m.def(
      "gp_posterior",
      [](const GpModel& model, const std::pair<double, double>& z) {
        return posterior(model, to_vec2(z));
      },
      py::arg("model"), py::arg("z"), "Noise-free posterior (mean, variance).");
  m.def("expected_improvement", &expected_improvement, py::arg("mean"),
        py::arg("stddev"), py::arg("best"));

  // --- optimization loops --------------------------------------------------
  m.def(
      "run_lso",
      [](const std::vector<py::bytes>& images, const std::vector<double>& scores,
         const VaeParams& params, std::size_t budget,
         std::optional<std::size_t> retrain_every, double rank_k,
         double finetune_epochs, std::uint64_t seed) {
        WeightedDataset initial;
        initial.points = images_from_bytes(images);
        initial.scores = scores;
        initial.weights = {
            std::vector<double>(scores.size(), 1.0 / scores.size()),
            Normalization::SumToOne};
        LsoConfig cfg;
        cfg.budget = budget;
        cfg.retrain_every = retrain_every;
        cfg.rank_k = rank_k;
        cfg.finetune.epochs = finetune_epochs;
        cfg.rng_seed = seed;
        const LsoResult result = run_lso(
            initial, params,
            [](const BinaryImage& im) { return static_cast<double>(area(im)); },
            cfg);
        py::dict out = record_to_dict(result.record);
        out["final_params"] = py::cast(result.final_params);
        return out;
      },
      py::arg("images"), py::arg("scores"), py::arg("params"),
      py::arg("budget") = 500,
      py::arg("retrain_every") = std::optional<std::size_t>(5),
      py::arg("rank_k") = 1e-3, py::arg("finetune_epochs") = 1.0,
      py::arg("seed") = 0,
      "Weighted-retraining latent-space optimization of the area objective; "
      "retrain_every=None disables retraining.");
  m.def(
      "run_cem_baseline",
      [](const std::string& method, const std::vector<py::bytes>& images,
         const std::vector<double>& scores, const VaeParams& params,
         std::size_t budget, std::size_t batch_size, std::size_t retrain_every,
         double finetune_epochs, std::uint64_t seed) {
        CemVariant variant;
        if (method == "dbas") variant = CemVariant::DbAS;
        else if (method == "cem-pi") variant = CemVariant::CemPi;
        else if (method == "fbvae") variant = CemVariant::Fbvae;
        else if (method == "rwr") variant = CemVariant::Rwr;
        else
          throw InvalidInputError(
              "method must be one of dbas, cem-pi, fbvae, rwr");
        WeightedDataset initial;
        initial.points = images_from_bytes(images);
        initial.scores = scores;
        initial.weights = {
            std::vector<double>(scores.size(), 1.0 / scores.size()),
            Normalization::SumToOne};
        CemConfig cfg;
        cfg.budget = budget;
        cfg.batch_size = batch_size;
        cfg.retrain_every = retrain_every;
        cfg.finetune.epochs = finetune_epochs;
        cfg.rng_seed = seed;
        const LsoResult result = run_cem_baseline(
            variant, initial, params,
            [](const BinaryImage& im) { return static_cast<double>(area(im)); },
            cfg);
        py::dict out = record_to_dict(result.record);
        out["final_params"] = py::cast(result.final_params);
        return out;
      },
      py::arg("method"), py::arg("images"), py::arg("scores"), py::arg("params"),
      py::arg("budget") = 5000, py::arg("batch_size") = 50,
      py::arg("retrain_every") = 200, py::arg("finetune_epochs") = 1.0,
      py::arg("seed") = 0);

  // --- CLI-equivalent pipeline entry points --------------------------------
  m.def(
      "cmd_generate_data",
      [](const std::string& config_path) {
        return cmd_generate_data(config_path, {});
      },
      py::arg("config_path"), "Returns the process exit code.");
  m.def(
      "cmd_train_vae",
      [](const std::string& config_path) { return cmd_train_vae(config_path, {}); },
      py::arg("config_path"));
  m.def(
      "cmd_run",
      [](const std::string& config_path) { return cmd_run(config_path, {}); },
      py::arg("config_path"));
  m.def(
      "cmd_report",
      [](const std::vector<std::string>& dirs, const std::string& out) {
        return cmd_report(dirs, out);
      },
      py::arg("run_dirs"), py::arg("out_path"));
}
