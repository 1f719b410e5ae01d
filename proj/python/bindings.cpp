#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "taskgraph/analysis.hpp"
#include "taskgraph/common.hpp"
#include "taskgraph/deficiency.hpp"
#include "taskgraph/density.hpp"
#include "taskgraph/embstore.hpp"
#include "taskgraph/error.hpp"
#include "taskgraph/taskvec.hpp"

namespace py = pybind11;
using namespace taskgraph;

namespace {

py::dict deficiency_result(const deficiency::DeficiencyResult& r) {
    py::dict d;
    d["delta"] = r.delta;
    d["witness"] = r.witness.matrix();
    d["status"] = r.status;
    d["iterations"] = r.iterations;
    return d;
}

py::dict embedding_dict(const EmbeddingSet& s) {
    py::dict d;
    d["model_id"] = s.model_id;
    d["task_id"] = s.task_id;
    d["layer"] = s.layer;
    d["values"] = s.values;
    d["labels"] = s.labels;
    return d;
}

}  // namespace

PYBIND11_MODULE(_taskgraph, m) {
    m.doc() = "Native core of the taskgraph toolkit";
    m.attr("__version__") = std::string(kVersion);

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<SolverError>(m, "SolverError", PyExc_RuntimeError);
    py::register_exception<FitError>(m, "FitError", PyExc_RuntimeError);
    py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

    m.def(
        "deficiency",
        [](const Matrix& source, const Matrix& target) {
            return deficiency_result(
                deficiency::deficiency(deficiency::FiniteKernel(source), deficiency::FiniteKernel(target)));
        },
        py::arg("source"), py::arg("target"),
        "Deficiency of row-stochastic `source` with respect to `target`, with the optimal garbling.");
    m.def(
        "bayes_risk_01",
        [](const Vector& prior, const Matrix& kernel) {
            return deficiency::bayes_risk_01(prior, deficiency::FiniteKernel(kernel));
        },
        py::arg("prior"), py::arg("kernel"));
    m.def("discrete_mi", &deficiency::discrete_mi, py::arg("joint"), "Mutual information in nats of a joint table.");

    m.def("grassmann_distance", &taskvec::grassmann_distance, py::arg("w1"), py::arg("w2"));
    m.def(
        "read_block",
        [](const std::filesystem::path& path) {
            const auto b = taskvec::read_block(path);
            return py::make_tuple(b.b, b.a);
        },
        py::arg("path"), "Reads an LRA1 block file as (b, a).");
    m.def(
        "write_block",
        [](const std::filesystem::path& path, const Matrix& b, const Matrix& a) {
            taskvec::Block block;
            block.projection = path.stem().string();
            block.b = b;
            block.a = a;
            block.validate();
            taskvec::write_block(path, block);
        },
        py::arg("path"), py::arg("b"), py::arg("a"));

    m.def(
        "predictive_power",
        [](const std::vector<std::string>& tasks, const Matrix& values) {
            if (values.rows() != static_cast<Eigen::Index>(tasks.size()) || values.cols() != values.rows()) {
                throw ValidationError("matrix must be square with one row per task");
            }
            analysis::IsMatrix im;
            im.tasks = tasks;
            im.values = values;
            im.marginal_entropy = Vector::Zero(values.rows());
            const auto r = analysis::predictive_power(im);
            py::dict d;
            d["tasks"] = r.tasks;
            d["pp"] = r.pp;
            d["rank"] = r.rank;
            return d;
        },
        py::arg("tasks"), py::arg("values"));
    m.def("kendall_tau", &analysis::kendall_tau, py::arg("xs"), py::arg("ys"));

    m.def(
        "information_sufficiency",
        [](const Matrix& source, const Matrix& target, const std::string& knife_json, std::uint64_t seed) {
            const auto cfg = density::knife_from_json(nlohmann::json::parse(knife_json));
            const EmbeddingSet s{source, {}, "", "source", 0}, t{target, {}, "", "target", 0};
            return density::to_json(density::information_sufficiency(s, t, cfg, seed)).dump();
        },
        py::arg("source"), py::arg("target"), py::arg("knife_json"), py::arg("seed"));

    m.def(
        "write_store",
        [](const std::filesystem::path& dir, const std::string& model_id, const std::string& task_id,
           const std::vector<std::pair<int, Matrix>>& layers, const std::vector<int>& labels) {
            std::vector<EmbeddingSet> sets;
            for (const auto& [layer, values] : layers) sets.push_back({values, labels, model_id, task_id, layer});
            return embstore::to_json(embstore::write_store(dir, sets)).dump();
        },
        py::arg("dir"), py::arg("model_id"), py::arg("task_id"), py::arg("layers"), py::arg("labels"));
    m.def(
        "read_store",
        [](const std::filesystem::path& dir) {
            py::list out;
            for (const auto& s : embstore::read_store(dir)) out.append(embedding_dict(s));
            return out;
        },
        py::arg("dir"));
    m.def(
        "validate_store", [](const std::filesystem::path& dir) {
            return embstore::to_json(embstore::validate_manifest(dir)).dump();
        },
        py::arg("dir"));
}
