// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse-accumulation over the small set of matrix primitives the binding
// objective needs. Every recorded node keeps its forward value; backward
// walks the record in reverse and accumulates into a flat gradient vector
// aligned with a ParameterStore.

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "brokenbind/matrix.hpp"

namespace bb::diffnet {

class Tape;
class ParameterStore;

using NodeId = std::size_t;

/// Handle to a recorded value.
struct Var {
    Tape* tape = nullptr;
    NodeId id = 0;

    const Matrix& value() const;
    double scalar() const;
};

class Tape {
  public:
    using Forward = std::function<Matrix(const Tape&)>;
    /// Returns one gradient contribution per input (empty Matrix = none).
    using Backward = std::function<std::vector<Matrix>(const Tape&, NodeId self, const Matrix& g)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Constant leaf. No gradient is ever attributed to it.
    Var constant(Matrix value, std::string label = "constant");
    /// Leaf bound to a parameter slice; one leaf per slice per tape.
    Var parameter(const ParameterStore& store, std::size_t slice);

    Var record(std::string op, std::vector<NodeId> inputs, Forward forward, Backward backward);

    /// Prefix for the op names of subsequently recorded nodes, so numerical
    /// errors name the loss term they arose in. Empty clears it.
    void set_scope(std::string scope) { scope_ = std::move(scope); }
    const std::string& scope() const noexcept { return scope_; }

    const Matrix& value(NodeId id) const { return nodes_[id].value; }
    const std::string& op(NodeId id) const { return nodes_[id].op; }
    std::size_t size() const noexcept { return nodes_.size(); }
    bool is_constant(NodeId id) const { return nodes_[id].constant; }

    /// Gradient of the scalar `loss` with respect to every parameter slice
    /// that appears on the tape, laid out like the store's flat vector.
    std::vector<double> backward(Var loss, std::size_t num_params) const;

    /// Recomputes every non-leaf node from its inputs and returns the new
    /// value of `loss`.
    double replay(Var loss);

    /// True if gradient can flow from `loss` back to `node`.
    bool depends_on(Var loss, NodeId node) const;

  private:
    struct Node {
        std::string op;
        std::vector<NodeId> inputs;
        Matrix value;
        Forward forward;
        Backward backward;
        bool constant = false;
        std::size_t param_offset = 0;
        bool is_param = false;
    };
    std::vector<Node> nodes_;
    std::unordered_map<std::size_t, NodeId> param_leaf_;
    const ParameterStore* store_ = nullptr;
    std::string scope_;
};

// Primitives. Shapes follow the Matrix kernels of the same name.
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
/// x (B×n) + bias (1×n) broadcast over rows.
Var add_row_bias(Var x, Var bias);
Var tanh(Var x);
Var relu(Var x);
/// Unit-normalizes each row; a zero row raises DegenerateEmbeddingError.
Var normalize_rows(Var x);
/// B×n → B×1, max-shifted.
Var row_logsumexp(Var x);
/// Square n×n → n×1 diagonal.
Var diag(Var x);
/// Any shape → 1×1.
Var sum(Var x);
Var frobenius_sq(Var x);
/// Pseudo-inverse recorded as a constant: gradient stops here.
Var pinv_frozen(Var x, double rel_tol = 1e-12);
/// Pseudo-inverse with the full Moore–Penrose derivative (constant rank assumed).
Var pinv_differentiable(Var x, double rel_tol = 1e-12);

} // namespace bb::diffnet
