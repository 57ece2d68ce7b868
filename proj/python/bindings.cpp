#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gid/assignment.hpp"
#include "gid/benchmark.hpp"
#include "gid/cli.hpp"
#include "gid/clustering.hpp"
#include "gid/common.hpp"
#include "gid/dataset.hpp"
#include "gid/evaluation.hpp"
#include "gid/sinkhorn.hpp"
#include "gid/trainers.hpp"

namespace py = pybind11;
using namespace gid;

namespace {

py::object to_python(const nlohmann::ordered_json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

py::dict dataset_dict(const EmbeddingDataset& d) {
    std::vector<std::string> ids;
    std::vector<std::int64_t> labels;
    std::vector<std::int64_t> domains;
    for (const auto& s : d.samples) {
        ids.push_back(s.id);
        labels.push_back(s.label.value_or(-1));
        domains.push_back(s.domain ? static_cast<std::int64_t>(*s.domain) : -1);
    }
    py::dict out;
    out["ids"] = ids;
    out["vectors"] = d.matrix();
    out["labels"] = labels;
    out["domains"] = domains;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Generalized intent discovery: benchmarks, clustering, transport and trainers";

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    m.def(
        "synthesize",
        [](std::size_t classes, std::size_t per_class, std::size_t dim, double sep, double std_dev,
           std::uint64_t seed, const std::string& output) {
            SyntheticSpec spec;
            spec.num_classes = classes;
            spec.samples_per_class = per_class;
            spec.dim = dim;
            spec.class_separation = sep;
            spec.within_class_std = std_dev;
            spec.seed = seed;
            const auto d = generate_synthetic(spec);
            if (!output.empty()) save_dataset(d, output);
            return dataset_dict(d);
        },
        py::arg("classes"), py::arg("per_class"), py::arg("dim"), py::arg("sep") = 1.0, py::arg("std") = 1.0,
        py::arg("seed") = 0, py::arg("output") = "",
        "Gaussian classes; writes the dataset when `output` is given. Returns ids, vectors, labels, domains.");

    m.def(
        "load_dataset", [](const std::filesystem::path& path) { return dataset_dict(load_dataset(path)); },
        py::arg("path"));

    m.def(
        "hungarian",
        [](const Eigen::MatrixXd& cost) {
            const Mapping mp = hungarian(cost);
            return py::make_tuple(mp.perm, mp.total_cost);
        },
        py::arg("cost"), "Minimum-cost assignment: (perm, total_cost) with row i -> column perm[i].");

    m.def(
        "kmeans",
        [](const Eigen::MatrixXd& data, int k, std::uint64_t seed, int restarts) {
            const auto r = kmeans(data, k, seed, {300, 1e-4, restarts});
            py::dict out;
            out["labels"] = r.labels;
            out["centroids"] = r.centroids;
            out["inertia"] = r.inertia;
            return out;
        },
        py::arg("data"), py::arg("k"), py::arg("seed") = 0, py::arg("restarts") = 1);

    m.def("silhouette", &silhouette, py::arg("data"), py::arg("labels"));

    m.def(
        "estimate_k",
        [](const Eigen::MatrixXd& data, int k_prime, double threshold, std::uint64_t seed, int restarts) {
            KEstimateConfig cfg;
            cfg.k_prime = k_prime;
            cfg.threshold = threshold;
            return estimate_k(data, cfg, seed, {300, 1e-4, restarts});
        },
        py::arg("data"), py::arg("k_prime"), py::arg("threshold") = 0.0, py::arg("seed") = 0,
        py::arg("restarts") = 10);

    m.def(
        "sinkhorn",
        [](const Eigen::MatrixXd& logits, double epsilon, int n_iter) {
            const auto r = sinkhorn_pseudo_labels({logits, epsilon, n_iter});
            return py::make_tuple(r.y_hat, r.targets);
        },
        py::arg("logits"), py::arg("epsilon") = 0.05, py::arg("n_iter") = 3,
        "Transport plan and column-normalised targets for M x B logits.");

    m.def(
        "evaluate",
        [](const std::vector<std::int64_t>& pred, const std::vector<std::int64_t>& gold, std::size_t n_ind,
           std::size_t n_ood, bool map_all) {
            EvalOptions opts;
            opts.map_all_classes = map_all;
            return to_python(metrics_to_json(evaluate_gid(pred, gold, n_ind, n_ood, opts)));
        },
        py::arg("predictions"), py::arg("gold"), py::arg("n_ind"), py::arg("n_ood"), py::arg("map_all") = false);

    m.def(
        "build_split",
        [](const std::filesystem::path& dataset, const std::filesystem::path& output, const std::string& mode,
           double ood_ratio, std::uint64_t seed) {
            SplitConfig cfg;
            cfg.mode = parse_split_mode(mode);
            cfg.ood_ratio = ood_ratio;
            cfg.seed = seed;
            GidSplit split = build_split(load_dataset(dataset), cfg);
            split.dataset = {dataset.string(), file_sha256(dataset)};
            save_manifest(split, output);
            return py::make_tuple(split.n_ind_classes, split.n_ood_classes);
        },
        py::arg("dataset"), py::arg("output"), py::arg("mode") = "md", py::arg("ood_ratio") = 0.4,
        py::arg("seed") = 0, "Writes a split manifest; returns (N, M).");

    m.def(
        "train",
        [](const std::filesystem::path& manifest, const std::string& method, int epochs, std::uint64_t seed,
           double lr_base, std::size_t batch_size) {
            TrainConfig cfg;
            cfg.method = parse_method(method);
            cfg.epochs = epochs;
            cfg.seed = seed;
            cfg.schedule.lr_base = lr_base;
            cfg.batch_size = batch_size;
            RunReport report;
            {
                py::gil_scoped_release release;
                report = run_method(load_manifest(manifest), cfg);
            }
            py::dict out = to_python(run_report_to_json(report, false));
            out["predictions"] = report.test_predictions;
            out["gold"] = report.test_gold;
            out["ids"] = report.test_ids;
            return out;
        },
        py::arg("manifest"), py::arg("method") = "e2e", py::arg("epochs") = 100, py::arg("seed") = 0,
        py::arg("lr_base") = 0.4, py::arg("batch_size") = 512,
        "Trains one method on a manifest and evaluates on its test partition.");

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = cli::run(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs a gid command line in-process: (exit code, stdout, stderr).");
}
