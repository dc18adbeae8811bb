// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "brokenbind/config.hpp"
#include "brokenbind/errors.hpp"
#include "brokenbind/eval.hpp"
#include "brokenbind/linalg.hpp"
#include "brokenbind/losses.hpp"
#include "brokenbind/trainer.hpp"
#include "brokenbind/xtrap.hpp"

namespace py = pybind11;
using bb::EmbeddingMatrix;
using bb::Matrix;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
    if (a.ndim() != 2) throw bb::ShapeError("expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
    const auto r = static_cast<std::size_t>(a.shape(0));
    const auto c = static_cast<std::size_t>(a.shape(1));
    return Matrix::from_data(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

Array to_array(const Matrix& m) {
    Array out({m.rows(), m.cols()});
    std::copy(m.storage().begin(), m.storage().end(), out.mutable_data());
    return out;
}

EmbeddingMatrix embed(const Array& a) { return EmbeddingMatrix(to_matrix(a)); }

} // namespace

PYBIND11_MODULE(_brokenbind, m) {
    m.doc() = "Binding modalities across mismatched datasets: core numerics and experiment runners.";

    py::register_exception<bb::ConfigError>(m, "ConfigError");
    py::register_exception<bb::DataError>(m, "DataError");
    py::register_exception<bb::NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    m.def(
        "pinv", [](const Array& a, double rel_tol) { return to_array(bb::linalg::pinv(to_matrix(a), rel_tol)); },
        py::arg("a"), py::arg("rel_tol") = bb::linalg::kDefaultPinvRelTol);

    m.def("svd", [](const Array& a) {
        const auto f = bb::linalg::svd(to_matrix(a));
        return py::make_tuple(to_array(f.u), f.singular_values, to_array(f.vt));
    });

    m.def(
        "clip_loss_one_side",
        [](const Array& anchor, const Array& positive, const std::vector<Array>& others, double tau) {
            std::vector<EmbeddingMatrix> o;
            for (const auto& x : others) o.push_back(embed(x));
            return bb::losses::clip_loss_one_side(embed(anchor), embed(positive), o, tau);
        },
        py::arg("anchor"), py::arg("positive"), py::arg("others"), py::arg("tau"));

    m.def("sym_cross_modal", [](const Array& a, const Array& b) {
        return bb::losses::sym_cross_modal(embed(a), embed(b));
    });
    m.def("sym_cross_data", [](const Array& a, const Array& b) {
        return bb::losses::sym_cross_data(embed(a), embed(b));
    });

    m.def(
        "pseudo_embeddings",
        [](const Array& pivot_dst, const Array& pivot_src, const Array& target_src) {
            const Matrix b1 = to_matrix(pivot_dst);
            const Matrix b2 = to_matrix(pivot_src);
            const Matrix c2 = to_matrix(target_src);
            const auto xm = bb::xtrap::pseudo_embed_x_mod(bb::xtrap::cross_modal_transition(c2, b2), b1);
            const auto xd = bb::xtrap::pseudo_embed_x_data(bb::xtrap::cross_data_transition(b1, b2), c2);
            py::dict d;
            d["x_mod"] = to_array(xm.values);
            d["x_data"] = to_array(xd.values);
            return d;
        },
        py::arg("pivot_dst"), py::arg("pivot_src"), py::arg("target_src"));

    m.def(
        "retrieval_map",
        [](const Array& q, const Array& g, const std::vector<std::int64_t>& ql, const std::vector<std::int64_t>& gl) {
            const auto r = bb::eval::retrieval_map(embed(q), embed(g), ql, gl);
            py::dict d;
            d["map"] = r.map_score;
            d["ap"] = r.ap;
            d["n_queries"] = r.num_queries;
            d["excluded"] = r.excluded;
            return d;
        },
        py::arg("queries"), py::arg("gallery"), py::arg("query_labels"), py::arg("gallery_labels"));

    m.def(
        "project_2d",
        [](const Array& points, const std::vector<std::int64_t>& labels) {
            const auto p = bb::eval::project_2d({to_matrix(points)}, {labels});
            return py::make_tuple(to_array(p.coords), p.variance_ratio);
        },
        py::arg("points"), py::arg("labels"));

    m.def("parse_flow", [](const std::string& text) {
        const auto f = bb::eval::parse_flow(text);
        py::dict d;
        d["begin"] = f.begin;
        d["pivots"] = f.pivots;
        d["target"] = f.target;
        return d;
    });

    m.def("config_hash", [](const std::string& path) { return bb::config::config_hash(bb::config::load_config(path)); });

    m.def(
        "train_and_evaluate",
        [](const std::string& path, std::uint64_t seed, const std::string& arm, std::optional<std::size_t> epochs,
           std::optional<std::size_t> pretrain_epochs, std::optional<std::size_t> num_samples) {
            auto c = bb::eval::apply_arm(bb::config::load_config(path), arm);
            if (epochs) {
                c.epochs = *epochs;
                c.pretrain_epochs = std::min(c.pretrain_epochs, c.epochs);
                c.stage1_epochs = std::min(c.stage1_epochs, c.epochs);
            }
            if (pretrain_epochs) c.pretrain_epochs = *pretrain_epochs;
            if (num_samples) {
                for (auto& d : c.datasets) d.num_samples = *num_samples;
            }
            c.validate();
            py::gil_scoped_release release;
            const auto data = bb::config::generate_all(c, seed);
            const auto res = bb::trainer::train_any(c, seed, data);
            const std::string flow = c.flows.empty() ? bb::eval::default_flow(c) : c.flows.front();
            const auto r = bb::eval::evaluate_flow(res.encoders, bb::eval::parse_flow(flow), data);
            const auto fid = bb::eval::pseudo_fidelity(res.encoders, c, data);
            std::vector<double> losses;
            for (const auto& rec : res.log) losses.push_back(rec.mean.total);
            py::gil_scoped_acquire acquire;
            py::dict d;
            d["flow"] = r.flow;
            d["map"] = r.map_score;
            d["fidelity"] = fid.mean;
            d["epoch_loss"] = losses;
            d["theta"] = res.encoders.store().theta;
            return d;
        },
        py::arg("config"), py::arg("seed") = 0, py::arg("arm") = "full", py::arg("epochs") = py::none(),
        py::arg("pretrain_epochs") = py::none(), py::arg("num_samples") = py::none());
}
