#include "ecfnet/tensor.hpp"

#include <sstream>

namespace ecfnet {

std::string Shape::str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
}

Tensor Tensor::zeros(Shape s) {
    Tensor t;
    t.shape = s;
    t.data = std::make_shared<std::vector<scalar>>(static_cast<std::size_t>(s.numel()), scalar(0));
    return t;
}

Tensor Tensor::full(Shape s, scalar v) {
    Tensor t = zeros(s);
    for (auto& x : *t.data) x = v;
    return t;
}

Tensor Tensor::from(Shape s, std::vector<scalar> v) {
    if (static_cast<std::int64_t>(v.size()) != s.numel())
        throw Error("Tensor::from: buffer size " + std::to_string(v.size()) +
                    " does not match shape " + s.str());
    Tensor t;
    t.shape = s;
    t.data = std::make_shared<std::vector<scalar>>(std::move(v));
    return t;
}

Tensor Tensor::clone() const {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<scalar>>(*data);
    return t;
}

std::uint64_t Tape::next_id() {
    static std::uint64_t counter = 0;
    return ++counter;
}

int Tape::add_node(Shape shape, BackFn back) {
    nodes_.push_back(Node{shape, std::move(back)});
    grads_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::watch(const Tensor& value) {
    Tensor t = value;
    t.tape = shared_from_this();
    t.node = add_node(value.shape, BackFn{});
    return t;
}

std::vector<scalar>& Tape::grad(int node) {
    auto& g = grads_[static_cast<std::size_t>(node)];
    if (g.empty()) g.assign(static_cast<std::size_t>(nodes_[static_cast<std::size_t>(node)].shape.numel()), scalar(0));
    return g;
}

const std::vector<scalar>& Tape::grad(int node) const {
    return grads_[static_cast<std::size_t>(node)];
}

void Tape::backward(const Tensor& loss) {
    if (consumed_) throw Error("Tape::backward called twice on the same tape");
    if (!loss.tracked() || loss.tape.get() != this)
        throw Error("Tape::backward: loss is not registered on this tape");
    if (loss.shape.numel() != 1)
        throw Error("Tape::backward: loss must be scalar (1,1,1,1), got " + loss.shape.str());
    consumed_ = true;
    grad(loss.node)[0] = scalar(1);
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
        auto& node = nodes_[static_cast<std::size_t>(i)];
        if (!node.back) continue;  // leaf: keep its gradient readable after backward
        if (!grads_[static_cast<std::size_t>(i)].empty()) node.back(*this, i);
        // Nothing upstream reads this node again: drop its gradient buffer and
        // the closure (which pins the forward activations it captured) so peak
        // memory tracks the frontier of the walk, not the whole graph.
        node.back = BackFn{};
        std::vector<scalar>().swap(grads_[static_cast<std::size_t>(i)]);
    }
}

TapePtr joint_tape(std::initializer_list<const Tensor*> inputs) {
    TapePtr tape;
    for (const Tensor* t : inputs) {
        if (!t->tracked()) continue;
        if (!tape) {
            tape = t->tape;
        } else if (tape != t->tape) {
            throw Error("op inputs belong to two different tapes");
        }
    }
    return tape;
}

}  // namespace ecfnet
