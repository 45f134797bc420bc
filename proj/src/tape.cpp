#include "vulnaudit/tape.hpp"

#include <stdexcept>

namespace vulnaudit {

void Gradients::accumulate(std::size_t slot, const DenseMatrix& g) {
    auto& dst = slots_.at(slot);
    if (dst.size() == 0 && dst.rows() == 0) dst = DenseMatrix(g.rows(), g.cols());
    dst += g;
}

void Gradients::clear() {
    for (auto& s : slots_) s = DenseMatrix();
}

Tape::Var Tape::push(Node node) {
    if (consumed_) throw std::logic_error("tape already consumed by backward; record a new tape");
    require_finite(node.value, node.label);
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

Tape::Var Tape::constant(DenseMatrix value, std::string label) {
    Node n;
    n.value = std::move(value);
    n.label = std::move(label);
    return push(std::move(n));
}

Tape::Var Tape::parameter(const DenseMatrix& value, std::size_t slot, std::string label) {
    Node n;
    n.value = value;
    n.label = std::move(label);
    n.param_slot = static_cast<std::ptrdiff_t>(slot);
    n.requires_grad = true;
    return push(std::move(n));
}

Tape::Var Tape::record(std::vector<Var> inputs, DenseMatrix value, BackwardFn backward, std::string label) {
    Node n;
    n.value = std::move(value);
    n.label = std::move(label);
    for (const Var& in : inputs) {
        if (in.id >= nodes_.size()) throw std::logic_error("tape input '" + n.label + "' refers to an unknown node");
        n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
    }
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
    return push(std::move(n));
}

Tape::Var Tape::spmm(const SparseMatrix& a, Var x, std::string label) {
    return record({x}, vulnaudit::spmm(a, value(x)),
                  [&a](const DenseMatrix& g) { return std::vector<DenseMatrix>{spmm_backward(a, g)}; },
                  std::move(label));
}

Tape::Var Tape::matmul(Var x, Var w, std::string label) {
    return record({x, w}, vulnaudit::matmul(value(x), value(w)),
                  [this, x, w](const DenseMatrix& g) {
                      auto grads = matmul_backward(value(x), value(w), g);
                      return std::vector<DenseMatrix>{std::move(grads.dx), std::move(grads.dw)};
                  },
                  std::move(label));
}

Tape::Var Tape::add_bias(Var x, Var b, std::string label) {
    return record({x, b}, vulnaudit::add_bias(value(x), value(b)),
                  [](const DenseMatrix& g) { return std::vector<DenseMatrix>{g, column_sums(g)}; },
                  std::move(label));
}

Tape::Var Tape::add(Var a, Var b, std::string label) {
    DenseMatrix out = value(a);
    out += value(b);
    return record({a, b}, std::move(out),
                  [](const DenseMatrix& g) { return std::vector<DenseMatrix>{g, g}; },
                  std::move(label));
}

Tape::Var Tape::scale(Var x, double factor, std::string label) {
    DenseMatrix out = value(x);
    for (double& v : out.data()) v *= factor;
    return record({x}, std::move(out),
                  [factor](const DenseMatrix& g) {
                      DenseMatrix d = g;
                      for (double& v : d.data()) v *= factor;
                      return std::vector<DenseMatrix>{std::move(d)};
                  },
                  std::move(label));
}

Tape::Var Tape::relu(Var x, std::string label) {
    return record({x}, vulnaudit::relu(value(x)),
                  [this, x](const DenseMatrix& g) { return std::vector<DenseMatrix>{relu_backward(value(x), g)}; },
                  std::move(label));
}

Tape::Var Tape::softmax_rows(Var x, std::string label) {
    // The closure reads the output through its own id, which is the next slot.
    const Var self{nodes_.size()};
    return record({x}, vulnaudit::softmax_rows(value(x)),
                  [this, self](const DenseMatrix& g) {
                      return std::vector<DenseMatrix>{softmax_rows_backward(value(self), g)};
                  },
                  std::move(label));
}

Tape::Var Tape::sum(Var x, std::string label) {
    const std::size_t rows = value(x).rows();
    const std::size_t cols = value(x).cols();
    return record({x}, DenseMatrix(1, 1, vulnaudit::sum(value(x))),
                  [rows, cols](const DenseMatrix& g) {
                      return std::vector<DenseMatrix>{DenseMatrix(rows, cols, g(0, 0))};
                  },
                  std::move(label));
}

double Tape::scalar(Var v) const {
    const auto& m = value(v);
    if (m.rows() != 1 || m.cols() != 1) throw std::logic_error("tape node '" + nodes_.at(v.id).label + "' is not scalar");
    return m(0, 0);
}

void Tape::backward(Var loss, Gradients& grads) {
    if (nodes_.empty()) throw std::logic_error("backward called before any forward op was recorded");
    if (consumed_) throw std::logic_error("backward called twice on the same recording");
    if (loss.id >= nodes_.size()) throw std::logic_error("backward: unknown loss node");
    const auto& lv = nodes_[loss.id].value;
    if (lv.rows() != 1 || lv.cols() != 1) throw std::logic_error("backward: loss must be a 1x1 node");
    consumed_ = true;

    nodes_[loss.id].grad = DenseMatrix(1, 1, 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.size() == 0) continue;
        if (n.param_slot >= 0) {
            grads.accumulate(static_cast<std::size_t>(n.param_slot), n.grad);
            continue;
        }
        if (!n.backward) continue;
        auto input_grads = n.backward(n.grad);
        for (std::size_t k = 0; k < n.inputs.size() && k < input_grads.size(); ++k) {
            Node& in = nodes_[n.inputs[k].id];
            if (!in.requires_grad || input_grads[k].size() == 0) continue;
            if (in.grad.size() == 0) in.grad = std::move(input_grads[k]);
            else in.grad += input_grads[k];
        }
        n.grad = DenseMatrix();  // release memory as we go
    }
}

}  // namespace vulnaudit
