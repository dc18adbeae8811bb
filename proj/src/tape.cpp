// SPDX-License-Identifier: Apache-2.0
#include "brokenbind/tape.hpp"

#include <algorithm>
#include <cmath>

#include "brokenbind/encoder.hpp"
#include "brokenbind/errors.hpp"
#include "brokenbind/linalg.hpp"

namespace bb::diffnet {

const Matrix& Var::value() const { return tape->value(id); }

double Var::scalar() const {
    const Matrix& v = value();
    if (v.rows() != 1 || v.cols() != 1) throw ShapeError("Var::scalar on " + v.shape_string());
    return v(0, 0);
}

Var Tape::constant(Matrix value, std::string label) {
    Node n;
    n.op = std::move(label);
    n.value = std::move(value);
    n.constant = true;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::parameter(const ParameterStore& store, std::size_t slice) {
    if (store_ != nullptr && store_ != &store) {
        throw ContractError("Tape::parameter: a tape may only reference one parameter store");
    }
    store_ = &store;
    if (auto it = param_leaf_.find(slice); it != param_leaf_.end()) return {this, it->second};
    Node n;
    n.op = "param:" + store.slice(slice).name;
    n.value = store.slice_matrix(slice);
    n.is_param = true;
    n.param_offset = store.slice(slice).offset;
    nodes_.push_back(std::move(n));
    const NodeId id = nodes_.size() - 1;
    param_leaf_.emplace(slice, id);
    return {this, id};
}

Var Tape::record(std::string op, std::vector<NodeId> inputs, Forward forward, Backward backward) {
    if (!scope_.empty()) op = scope_ + ":" + op;
    Matrix value = forward(*this);
    if (!value.all_finite()) {
        throw NumericalError("forward: non-finite output of '" + op + "' (" + value.shape_string() +
                             ")");
    }
    Node n;
    n.op = std::move(op);
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.forward = std::move(forward);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

std::vector<double> Tape::backward(Var loss, std::size_t num_params) const {
    if (loss.tape != this) throw ContractError("Tape::backward: foreign Var");
    const Matrix& lv = nodes_[loss.id].value;
    if (lv.rows() != 1 || lv.cols() != 1) {
        throw ShapeError("Tape::backward: loss must be 1x1, got " + lv.shape_string());
    }
    if (!std::isfinite(lv(0, 0))) throw NumericalError("Tape::backward: non-finite loss");

    std::vector<Matrix> grads(loss.id + 1);
    grads[loss.id] = Matrix(1, 1, 1.0);
    std::vector<double> out(num_params, 0.0);

    for (NodeId id = loss.id + 1; id-- > 0;) {
        const Node& n = nodes_[id];
        if (grads[id].empty()) continue;
        if (n.is_param) {
            const auto g = grads[id].data();
            if (n.param_offset + g.size() > num_params) {
                throw ShapeError("Tape::backward: parameter slice outside gradient vector");
            }
            for (std::size_t k = 0; k < g.size(); ++k) out[n.param_offset + k] += g[k];
            continue;
        }
        if (n.constant || !n.backward) continue;
        std::vector<Matrix> contrib = n.backward(*this, id, grads[id]);
        for (std::size_t k = 0; k < n.inputs.size() && k < contrib.size(); ++k) {
            if (contrib[k].empty()) continue;
            if (!contrib[k].all_finite()) {
                throw NumericalError("backward: non-finite gradient through '" + n.op + "'");
            }
            Matrix& dst = grads[n.inputs[k]];
            if (dst.empty()) {
                dst = std::move(contrib[k]);
            } else {
                auto d = dst.data();
                auto c = contrib[k].data();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += c[i];
            }
        }
    }
    return out;
}

double Tape::replay(Var loss) {
    for (Node& n : nodes_) {
        if (n.forward) n.value = n.forward(*this);
    }
    return nodes_[loss.id].value(0, 0);
}

bool Tape::depends_on(Var loss, NodeId node) const {
    std::vector<bool> reach(loss.id + 1, false);
    reach[loss.id] = true;
    for (NodeId id = loss.id + 1; id-- > 0;) {
        if (!reach[id]) continue;
        if (id == node) return !nodes_[id].constant || id == loss.id;
        for (NodeId in : nodes_[id].inputs) reach[in] = true;
    }
    return false;
}

namespace {

Tape& tape_of(Var a, Var b) {
    if (a.tape != b.tape) throw ContractError("diffnet: operands recorded on different tapes");
    return *a.tape;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    Matrix out = a;
    auto o = out.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
    return out;
}

} // namespace

Var matmul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    return t.record(
        "matmul", {a.id, b.id},
        [a = a.id, b = b.id](const Tape& t) { return bb::matmul(t.value(a), t.value(b)); },
        [a = a.id, b = b.id](const Tape& t, NodeId, const Matrix& g) {
            return std::vector<Matrix>{bb::matmul_nt(g, t.value(b)), bb::matmul_tn(t.value(a), g)};
        });
}

Var matmul_nt(Var a, Var b) {
    Tape& t = tape_of(a, b);
    return t.record(
        "similarity", {a.id, b.id},
        [a = a.id, b = b.id](const Tape& t) { return bb::matmul_nt(t.value(a), t.value(b)); },
        [a = a.id, b = b.id](const Tape& t, NodeId, const Matrix& g) {
            return std::vector<Matrix>{bb::matmul(g, t.value(b)), bb::matmul_tn(g, t.value(a))};
        });
}

Var transpose(Var a) {
    return a.tape->record(
        "transpose", {a.id}, [a = a.id](const Tape& t) { return t.value(a).transpose(); },
        [](const Tape&, NodeId, const Matrix& g) { return std::vector<Matrix>{g.transpose()}; });
}

Var add(Var a, Var b) {
    Tape& t = tape_of(a, b);
    return t.record(
        "add", {a.id, b.id}, [a = a.id, b = b.id](const Tape& t) { return t.value(a) + t.value(b); },
        [](const Tape&, NodeId, const Matrix& g) { return std::vector<Matrix>{g, g}; });
}

Var sub(Var a, Var b) {
    Tape& t = tape_of(a, b);
    return t.record(
        "sub", {a.id, b.id}, [a = a.id, b = b.id](const Tape& t) { return t.value(a) - t.value(b); },
        [](const Tape&, NodeId, const Matrix& g) { return std::vector<Matrix>{g, -1.0 * g}; });
}

Var scale(Var a, double s) {
    return a.tape->record(
        "scale", {a.id}, [a = a.id, s](const Tape& t) { return s * t.value(a); },
        [s](const Tape&, NodeId, const Matrix& g) { return std::vector<Matrix>{s * g}; });
}

Var add_row_bias(Var x, Var bias) {
    Tape& t = tape_of(x, bias);
    if (bias.value().rows() != 1 || bias.value().cols() != x.value().cols()) {
        throw ShapeError("add_row_bias: bias " + bias.value().shape_string() + " for input " +
                         x.value().shape_string());
    }
    return t.record(
        "affine_bias", {x.id, bias.id},
        [x = x.id, b = bias.id](const Tape& t) {
            Matrix out = t.value(x);
            const auto bv = t.value(b).row(0);
            for (std::size_t i = 0; i < out.rows(); ++i) {
                auto r = out.row(i);
                for (std::size_t j = 0; j < r.size(); ++j) r[j] += bv[j];
            }
            return out;
        },
        [](const Tape&, NodeId, const Matrix& g) {
            Matrix db(1, g.cols());
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) db(0, j) += g(i, j);
            return std::vector<Matrix>{g, std::move(db)};
        });
}

Var tanh(Var x) {
    return x.tape->record(
        "tanh", {x.id},
        [x = x.id](const Tape& t) {
            Matrix out = t.value(x);
            for (double& v : out.data()) v = std::tanh(v);
            return out;
        },
        [](const Tape& t, NodeId self, const Matrix& g) {
            Matrix d = t.value(self);
            for (double& v : d.data()) v = 1.0 - v * v;
            return std::vector<Matrix>{hadamard(g, d)};
        });
}

Var relu(Var x) {
    return x.tape->record(
        "relu", {x.id},
        [x = x.id](const Tape& t) {
            Matrix out = t.value(x);
            for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
            return out;
        },
        [x = x.id](const Tape& t, NodeId, const Matrix& g) {
            Matrix d = g;
            const auto in = t.value(x).data();
            auto dd = d.data();
            for (std::size_t i = 0; i < dd.size(); ++i)
                if (!(in[i] > 0.0)) dd[i] = 0.0;
            return std::vector<Matrix>{std::move(d)};
        });
}

Var normalize_rows(Var x) {
    return x.tape->record(
        "normalize_rows", {x.id},
        [x = x.id](const Tape& t) {
            Matrix out = t.value(x);
            for (std::size_t i = 0; i < out.rows(); ++i) {
                auto r = out.row(i);
                double n2 = 0.0;
                for (double v : r) n2 += v * v;
                if (!(n2 > 0.0)) {
                    throw DegenerateEmbeddingError("normalize_rows: row " + std::to_string(i) +
                                                   " is the zero vector before normalization");
                }
                const double inv = 1.0 / std::sqrt(n2);
                for (double& v : r) v *= inv;
            }
            return out;
        },
        [x = x.id](const Tape& t, NodeId self, const Matrix& g) {
            const Matrix& in = t.value(x);
            const Matrix& y = t.value(self);
            Matrix d(g.rows(), g.cols());
            for (std::size_t i = 0; i < g.rows(); ++i) {
                double n2 = 0.0, yg = 0.0;
                for (std::size_t j = 0; j < g.cols(); ++j) {
                    n2 += in(i, j) * in(i, j);
                    yg += y(i, j) * g(i, j);
                }
                const double inv = 1.0 / std::sqrt(n2);
                for (std::size_t j = 0; j < g.cols(); ++j) d(i, j) = (g(i, j) - y(i, j) * yg) * inv;
            }
            return std::vector<Matrix>{std::move(d)};
        });
}

Var row_logsumexp(Var x) {
    return x.tape->record(
        "logsumexp", {x.id},
        [x = x.id](const Tape& t) {
            const Matrix& in = t.value(x);
            Matrix out(in.rows(), 1);
            for (std::size_t i = 0; i < in.rows(); ++i) out(i, 0) = linalg::log_sum_exp(in.row(i));
            return out;
        },
        [x = x.id](const Tape& t, NodeId self, const Matrix& g) {
            const Matrix& in = t.value(x);
            const Matrix& lse = t.value(self);
            Matrix d(in.rows(), in.cols());
            for (std::size_t i = 0; i < in.rows(); ++i)
                for (std::size_t j = 0; j < in.cols(); ++j)
                    d(i, j) = g(i, 0) * std::exp(in(i, j) - lse(i, 0));
            return std::vector<Matrix>{std::move(d)};
        });
}

Var diag(Var x) {
    if (x.value().rows() != x.value().cols()) {
        throw ShapeError("diag: non-square input " + x.value().shape_string());
    }
    return x.tape->record(
        "diag", {x.id},
        [x = x.id](const Tape& t) {
            const Matrix& in = t.value(x);
            Matrix out(in.rows(), 1);
            for (std::size_t i = 0; i < in.rows(); ++i) out(i, 0) = in(i, i);
            return out;
        },
        [](const Tape&, NodeId, const Matrix& g) {
            Matrix d(g.rows(), g.rows());
            for (std::size_t i = 0; i < g.rows(); ++i) d(i, i) = g(i, 0);
            return std::vector<Matrix>{std::move(d)};
        });
}

Var sum(Var x) {
    return x.tape->record(
        "sum", {x.id},
        [x = x.id](const Tape& t) {
            double s = 0.0;
            for (double v : t.value(x).data()) s += v;
            return Matrix(1, 1, s);
        },
        [x = x.id](const Tape& t, NodeId, const Matrix& g) {
            const Matrix& in = t.value(x);
            return std::vector<Matrix>{Matrix(in.rows(), in.cols(), g(0, 0))};
        });
}

Var frobenius_sq(Var x) {
    return x.tape->record(
        "frobenius_sq", {x.id},
        [x = x.id](const Tape& t) { return Matrix(1, 1, linalg::frobenius_sq(t.value(x))); },
        [x = x.id](const Tape& t, NodeId, const Matrix& g) {
            return std::vector<Matrix>{(2.0 * g(0, 0)) * t.value(x)};
        });
}

Var pinv_frozen(Var x, double rel_tol) {
    return x.tape->constant(linalg::pinv(x.value(), rel_tol), "pinv(frozen)");
}

Var pinv_differentiable(Var x, double rel_tol) {
    return x.tape->record(
        "pinv", {x.id}, [x = x.id, rel_tol](const Tape& t) { return linalg::pinv(t.value(x), rel_tol); },
        [x = x.id](const Tape& t, NodeId self, const Matrix& g) {
            const Matrix& a = t.value(x);
            const Matrix& ap = t.value(self);
            const Matrix apt = ap.transpose();
            const Matrix gt = g.transpose();
            // −A⁺ᵀ G A⁺ᵀ + (I − AA⁺) Gᵀ A⁺A⁺ᵀ + A⁺ᵀA⁺ Gᵀ (I − A⁺A)
            Matrix term1 = -1.0 * bb::matmul(bb::matmul(apt, g), apt);
            Matrix p = Matrix::identity(a.rows()) - bb::matmul(a, ap);
            Matrix term2 = bb::matmul(bb::matmul(p, gt), bb::matmul(ap, apt));
            Matrix q = Matrix::identity(a.cols()) - bb::matmul(ap, a);
            Matrix term3 = bb::matmul(bb::matmul(bb::matmul(apt, ap), gt), q);
            return std::vector<Matrix>{term1 + term2 + term3};
        });
}

} // namespace bb::diffnet
