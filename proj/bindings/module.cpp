#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "trifuse/commands.hpp"
#include "trifuse/data.hpp"
#include "trifuse/losses.hpp"
#include "trifuse/metrics.hpp"
#include "trifuse/model.hpp"

namespace py = pybind11;
using namespace trifuse;

namespace {

Matrix to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>& array) {
    if (array.ndim() != 2) throw DimensionError("expected a 2-d array");
    Matrix m(static_cast<std::size_t>(array.shape(0)), static_cast<std::size_t>(array.shape(1)));
    std::memcpy(m.data(), array.data(), m.size() * sizeof(double));
    return m;
}

py::array_t<double> to_array(const Matrix& m) {
    py::array_t<double> array({m.rows(), m.cols()});
    std::memcpy(array.mutable_data(), m.data(), m.size() * sizeof(double));
    return array;
}

std::array<double, 7> to_label7(const std::vector<double>& v) {
    if (v.size() != 7) throw DimensionError("expected 7 values");
    std::array<double, 7> out{};
    std::copy(v.begin(), v.end(), out.begin());
    return out;
}

py::dict report_dict(const EvalReport& report, const std::string& split) {
    py::dict d;
    d["mode"] = report.mode;
    d["split"] = split;
    d["n"] = report.n;
    d["per_class"] = report.per_class;
    d["mean"] = report.mean;
    d["zero_variance_columns"] = report.zero_variance_columns;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Audio-visual fusion toolkit core: tensor ops, losses, metrics, data "
              "generation, training, and evaluation";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<DataError>(m, "DataError");
    py::register_exception<NumericError>(m, "NumericError");

    // tensor ops (forward)
    m.def("matmul", [](const py::array_t<double>& a, const py::array_t<double>& b) {
        return to_array(matmul(to_matrix(a), to_matrix(b)));
    });
    m.def("softmax_rows", [](const py::array_t<double>& x) {
        return to_array(softmax_rows(to_matrix(x)));
    });
    m.def(
        "layer_norm",
        [](const py::array_t<double>& x, const py::array_t<double>& gain,
           const py::array_t<double>& bias, double eps) {
            return to_array(layer_norm(to_matrix(x), to_matrix(gain), to_matrix(bias), eps));
        },
        py::arg("x"), py::arg("gain"), py::arg("bias"), py::arg("eps") = 3e-4);
    m.def(
        "conv1d",
        [](const py::array_t<double>& seq, const py::array_t<double>& kernel,
           const py::array_t<double>& bias, std::size_t width) {
            return to_array(conv1d_same(to_matrix(seq), to_matrix(kernel), to_matrix(bias),
                                        width));
        },
        py::arg("seq"), py::arg("kernel"), py::arg("bias"), py::arg("width") = 1);

    // losses and metrics
    m.def("mse_loss", [](const py::array_t<double>& pred, const py::array_t<double>& target) {
        return mse_loss(to_matrix(pred), to_matrix(target));
    });
    m.def("cross_entropy_loss",
          [](const py::array_t<double>& logits, const std::vector<std::size_t>& targets) {
              return cross_entropy_loss(to_matrix(logits), targets);
          });
    m.def(
        "eri_loss",
        [](double l_reg, double l_class, double alpha, double beta) {
            return eri_loss(l_reg, l_class, {alpha, beta});
        },
        py::arg("l_reg"), py::arg("l_class"), py::arg("alpha") = 1.0, py::arg("beta") = 0.01);
    m.def(
        "focal_loss",
        [](const std::vector<double>& p_true, double alpha_t, double gamma) {
            return focal_loss(p_true, {alpha_t, gamma});
        },
        py::arg("p_true"), py::arg("alpha_t") = 1.0, py::arg("gamma") = 2.0);
    m.def("pearson_per_class",
          [](const py::array_t<double>& pred, const py::array_t<double>& target) {
              const PearsonReport r = pearson_per_class(to_matrix(pred), to_matrix(target));
              py::dict d;
              d["per_class"] = r.per_class;
              d["mean"] = r.mean;
              d["zero_variance_columns"] = r.zero_variance_columns;
              return d;
          });
    m.def("mean_pearson", &mean_pearson);
    m.def("macro_f1", [](const std::vector<std::size_t>& pred,
                         const std::vector<std::size_t>& target, std::size_t num_classes) {
        const F1Report r = macro_f1(pred, target, num_classes);
        py::dict d;
        d["per_class"] = r.per_class;
        d["macro"] = r.macro;
        return d;
    });

    // data utilities
    m.def("align_to_length", [](const py::array_t<double>& seq, std::size_t length) {
        return to_array(align_to_length(to_matrix(seq), length));
    });
    m.def("normalize_label", &normalize_label, py::arg("raw"), py::arg("lo") = 1.0,
          py::arg("hi") = 100.0);
    m.def("derive_class_target", [](const std::vector<double>& intensities) {
        return derive_class_target(to_label7(intensities));
    });
    m.def("write_feature_file", [](const std::filesystem::path& path,
                                   const py::array_t<double>& values) {
        write_feature_file(path, to_matrix(values));
    });
    m.def("read_feature_file", [](const std::filesystem::path& path) {
        return to_array(read_feature_file(path));
    });
    m.def(
        "synth_generate",
        [](const std::filesystem::path& out_dir, std::size_t n, std::uint64_t seed, double noise,
           const std::string& mode, std::size_t audio_dim, std::size_t visual_dim) {
            SynthOptions options;
            options.n = n;
            options.seed = seed;
            options.noise = noise;
            options.mode = mode;
            options.audio_dim = audio_dim;
            options.visual_dim = visual_dim;
            const Manifest manifest = synth_generate(options, out_dir);
            return manifest.entries.size();
        },
        py::arg("out_dir"), py::arg("n") = 2000, py::arg("seed") = 1, py::arg("noise") = 0.1,
        py::arg("mode") = "eri", py::arg("audio_dim") = 64, py::arg("visual_dim") = 96);

    // pipelines
    m.def(
        "train",
        [](const std::filesystem::path& config_path, const std::filesystem::path& out_dir,
           std::optional<std::uint64_t> seed) {
            cmd::TrainArgs args{config_path, out_dir, seed};
            RunConfig config = load_run_config(config_path);
            if (seed) config.train.seed = *seed;
            const cmd::TrainOutcome outcome =
                cmd::train_to_dir(config, config_path.parent_path(), out_dir);
            py::dict d;
            d["best_metric"] = outcome.best_metric;
            d["best_epoch"] = outcome.best_epoch;
            d["epochs_run"] = outcome.epochs_run;
            d["clip_events_total"] = outcome.clip_events_total;
            d["checkpoint"] = outcome.checkpoint_path;
            return d;
        },
        py::arg("config_path"), py::arg("out_dir"), py::arg("seed") = std::nullopt);
    m.def(
        "evaluate",
        [](const std::filesystem::path& checkpoint_path,
           const std::filesystem::path& manifest_path, const std::string& split) {
            const Checkpoint checkpoint = load_checkpoint(checkpoint_path);
            const Manifest manifest = load_manifest(manifest_path);
            if (manifest.mode != to_string(checkpoint.config.head_mode)) {
                throw DataError("mode mismatch between checkpoint and manifest");
            }
            LoadOptions options;
            options.seq_len = checkpoint.config.seq_len;
            options.audio_in = checkpoint.config.audio_in;
            options.visual_in = checkpoint.config.visual_in;
            const Dataset dataset =
                load_dataset(manifest, manifest_path.parent_path(), options);
            const model::ModelParams params = eval_params_from_checkpoint(checkpoint);
            const EvalReport report =
                evaluate(dataset.split(split), params, checkpoint.config);
            return report_dict(report, split);
        },
        py::arg("checkpoint"), py::arg("manifest"), py::arg("split") = "val");
    m.def(
        "gradcheck",
        [](std::size_t dim, std::size_t seq_len, std::size_t heads, double eps) {
            cmd::GradcheckArgs args;
            args.dim = dim;
            args.seq_len = seq_len;
            args.heads = heads;
            args.eps = eps;
            const auto results = cmd::gradcheck_all(args);
            py::list out;
            for (const auto& r : results) {
                py::dict d;
                d["op"] = r.op;
                d["max_rel_err"] = r.max_rel_err;
                d["finite"] = r.finite;
                d["checked"] = r.checked;
                out.append(std::move(d));
            }
            return out;
        },
        py::arg("dim") = 8, py::arg("seq_len") = 4, py::arg("heads") = 2, py::arg("eps") = 3e-4);
}
