#ifndef ECFNET_PARAM_HPP
#define ECFNET_PARAM_HPP

#include <string>
#include <vector>

#include "ecfnet/ops.hpp"
#include "ecfnet/random.hpp"
#include "ecfnet/tensor.hpp"

namespace ecfnet {

// A named learnable tensor. `use` registers it on the current tape and
// remembers the node id so gradients can be pulled after backward.
// Repeated `use` on the same tape reuses the node, so gradients of a
// parameter shared across several sites accumulate in one place.
struct Param {
    std::string name;
    Tensor value;
    int last_node = -1;
    std::uint64_t last_tape = 0;

    Tensor use(const TapePtr& tape) {
        if (!tape) {
            last_node = -1;
            last_tape = 0;
            return value;
        }
        if (tape->id() == last_tape && last_node >= 0) {
            Tensor t = value;
            t.tape = tape;
            t.node = last_node;
            return t;
        }
        Tensor t = tape->watch(value);
        last_node = t.node;
        last_tape = tape->id();
        return t;
    }

    const std::vector<scalar>* grad(const TapePtr& tape) const {
        if (!tape || last_node < 0 || tape->id() != last_tape) return nullptr;
        return &tape->grad(last_node);
    }
};

using ParamRegistry = std::vector<Param*>;

// Fan-in uniform init: U(-1/sqrt(fan_in), +1/sqrt(fan_in)). The gated
// blocks multiply features pairwise, so a mildly attenuating init keeps
// deep stacks stable where a variance-doubling He bound diverges.
inline Tensor init_conv_weight(Shape s, Rng& rng) {
    Tensor w = Tensor::zeros(s);
    const double bound = 0.5 / std::sqrt(static_cast<double>(s.c) * s.h * s.w);
    for (auto& v : *w.data) v = rng.uniform(-bound, bound);
    return w;
}

}  // namespace ecfnet

#endif
