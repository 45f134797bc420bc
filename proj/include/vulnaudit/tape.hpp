#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "vulnaudit/numcore.hpp"

namespace vulnaudit {

/// Gradient accumulators keyed by parameter slot. Successive backward passes
/// add into the same slots.
class Gradients {
public:
    Gradients() = default;
    explicit Gradients(std::size_t slots) : slots_(slots) {}

    std::size_t size() const { return slots_.size(); }
    DenseMatrix& operator[](std::size_t slot) { return slots_.at(slot); }
    const DenseMatrix& operator[](std::size_t slot) const { return slots_.at(slot); }

    /// Adds `g` into `slot`, allocating on first use.
    void accumulate(std::size_t slot, const DenseMatrix& g);
    void clear();

private:
    std::vector<DenseMatrix> slots_;
};

/// Reverse-mode recording of dense-matrix operations.
///
/// Each recorded op stores its output and a closure mapping the upstream
/// gradient to gradients of its inputs. backward() replays the closures in
/// exact reverse recording order. Every op output is checked for NaN/Inf on
/// record, so the first non-finite tensor is reported by its label.
///
/// Sparse operands and captured targets are referenced, not copied; they must
/// outlive the tape's backward pass.
class Tape {
public:
    struct Var {
        std::size_t id = std::numeric_limits<std::size_t>::max();
    };

    /// Maps the upstream gradient of an op's output to one gradient per input,
    /// in input order. Returned entries for inputs that need no gradient may
    /// be left empty.
    using BackwardFn = std::function<std::vector<DenseMatrix>(const DenseMatrix& upstream)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(DenseMatrix value, std::string label = "constant");
    Var parameter(const DenseMatrix& value, std::size_t slot, std::string label);

    /// Records a custom op. `inputs` are the operands `backward` differentiates
    /// against.
    Var record(std::vector<Var> inputs, DenseMatrix value, BackwardFn backward, std::string label);

    Var spmm(const SparseMatrix& a, Var x, std::string label = "spmm");
    Var matmul(Var x, Var w, std::string label = "matmul");
    Var add_bias(Var x, Var b, std::string label = "add_bias");
    Var add(Var a, Var b, std::string label = "add");
    Var scale(Var x, double factor, std::string label = "scale");
    Var relu(Var x, std::string label = "relu");
    Var softmax_rows(Var x, std::string label = "softmax");
    Var sum(Var x, std::string label = "sum");

    const DenseMatrix& value(Var v) const { return nodes_.at(v.id).value; }
    double scalar(Var v) const;
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Seeds d(loss)/d(loss) = 1 and accumulates parameter gradients into
    /// `grads`. Throws std::logic_error when nothing was recorded, when
    /// `loss` is not a 1x1 node, or on a second call for the same recording.
    void backward(Var loss, Gradients& grads);

private:
    struct Node {
        DenseMatrix value;
        DenseMatrix grad;
        std::vector<Var> inputs;
        BackwardFn backward;
        std::string label;
        std::ptrdiff_t param_slot = -1;
        bool requires_grad = false;
    };

    Var push(Node node);

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

}  // namespace vulnaudit
