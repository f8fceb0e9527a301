#ifndef ECFNET_TENSOR_HPP
#define ECFNET_TENSOR_HPP

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecfnet {

// All in-memory math is double precision; checkpoints store float32.
using scalar = double;

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// NCHW shape. Every value in the system is rank 4.
struct Shape {
    int n = 0, c = 0, h = 0, w = 0;

    std::int64_t numel() const {
        return static_cast<std::int64_t>(n) * c * h * w;
    }
    bool operator==(const Shape& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }
    std::string str() const;
};

class Tape;
using TapePtr = std::shared_ptr<Tape>;

// Dense NCHW tensor. Copies are shallow (shared buffer); tensors are
// treated as immutable once they participate in an op. A tensor is either
// a constant (node < 0) or registered on exactly one tape.
struct Tensor {
    Shape shape{};
    std::shared_ptr<std::vector<scalar>> data;
    TapePtr tape;
    int node = -1;

    Tensor() = default;

    bool defined() const { return static_cast<bool>(data); }
    bool tracked() const { return tape != nullptr && node >= 0; }
    std::int64_t numel() const { return shape.numel(); }

    scalar* ptr() { return data->data(); }
    const scalar* ptr() const { return data->data(); }

    scalar& at(int in, int ic, int iy, int ix) {
        return (*data)[((static_cast<std::int64_t>(in) * shape.c + ic) * shape.h + iy) * shape.w + ix];
    }
    scalar at(int in, int ic, int iy, int ix) const {
        return (*data)[((static_cast<std::int64_t>(in) * shape.c + ic) * shape.h + iy) * shape.w + ix];
    }

    static Tensor zeros(Shape s);
    static Tensor full(Shape s, scalar v);
    static Tensor from(Shape s, std::vector<scalar> v);

    // Deep copy of the buffer; result is a constant.
    Tensor clone() const;
};

// Reverse-mode tape. Nodes are appended in execution order; backward
// walks them strictly in reverse. Single-threaded by contract.
class Tape : public std::enable_shared_from_this<Tape> {
public:
    using BackFn = std::function<void(Tape&, int self)>;

    static TapePtr create() { return std::make_shared<Tape>(); }

    int add_node(Shape shape, BackFn back);

    // Registers a constant tensor as a leaf; returns a tracked view
    // sharing the same buffer.
    Tensor watch(const Tensor& value);

    // Seeds d(loss)/d(loss) = 1 and propagates. loss must be (1,1,1,1).
    // A tape can only be consumed once.
    void backward(const Tensor& loss);

    std::vector<scalar>& grad(int node);
    const std::vector<scalar>& grad(int node) const;
    bool consumed() const { return consumed_; }
    std::size_t size() const { return nodes_.size(); }
    // Process-unique id; lets callers tell two tapes apart even if one is
    // allocated at a freed tape's address.
    std::uint64_t id() const { return id_; }

private:
    struct Node {
        Shape shape;
        BackFn back;
    };
    static std::uint64_t next_id();
    std::vector<Node> nodes_;
    std::vector<std::vector<scalar>> grads_;
    bool consumed_ = false;
    std::uint64_t id_ = next_id();
};

// The shared tape of a set of op inputs; null when all are constants.
// Mixing two different tapes in one op is an error.
TapePtr joint_tape(std::initializer_list<const Tensor*> inputs);

}  // namespace ecfnet

#endif
