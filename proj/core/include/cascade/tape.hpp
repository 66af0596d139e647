#pragma once

#include <functional>
#include <vector>

#include "cascade/tensor.hpp"

namespace cascade {

/// Linear record of executed differentiable operations.
///
/// Ops append one node per call, so the record order is a topological order
/// of the computation; backward() visits nodes exactly once in reverse.
/// Output gradients (intermediates) are reset at the start of every backward
/// pass, while leaf gradients accumulate across passes.
template <typename T>
class Tape {
public:
    void record(Tensor<T> output, std::function<void()> backward_fn) {
        nodes_.push_back(Node{std::move(output), std::move(backward_fn)});
    }

    /// Seeds d(loss)/d(loss) = 1 and propagates to every leaf that needs a
    /// gradient. `loss` must be a 1-element tensor produced on this tape.
    void backward(Tensor<T>& loss) {
        if (loss.size() != 1) throw ShapeError("backward: loss must be a scalar tensor");
        if (!loss.needs_grad())
            throw ValueError("backward: loss does not depend on any tensor that needs gradients");
        for (auto& node : nodes_) {
            node.output.ensure_grad();
            node.output.zero_grad();
        }
        loss.g()[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward_fn();
    }

    void clear() { nodes_.clear(); }
    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> output;
        std::function<void()> backward_fn;
    };
    std::vector<Node> nodes_;
};

}  // namespace cascade
