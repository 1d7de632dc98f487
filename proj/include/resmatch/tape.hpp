#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "resmatch/tensor.hpp"

namespace resmatch {

class Tape;

// Handle to a node on a tape.
struct Value {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Ops append nodes in topological order; backward()
// replays them in reverse, accumulating full32 gradients, then adds each
// tracked leaf's gradient into the grad slot of the tensor it was created
// from. A tape is single-use ("consumed" after backward) and confined to
// one worker; working node values are always full32 (half16 leaves are
// widened exactly on entry).
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Value leaf(const Tensor& t, bool requires_grad);
    Value constant(const Tensor& t) { return leaf(t, false); }

    const Tensor& value(Value v) const;
    // Node-local gradient after backward, as a full32 tensor shaped like
    // the node value. Zero tensor if the node was off the loss path.
    Tensor grad(Value v) const;

    void backward(Value scalar_loss);
    bool consumed() const { return consumed_; }

    // half16 quantization events where a finite input became infinite.
    int64_t overflow_count() const { return overflow_; }
    void note_overflow(int64_t n) { overflow_ += n; }

    // --- op implementation surface ---
    using BackwardFn = std::function<void(Tape&, int self)>;
    Value emit(const char* kind, Tensor value, std::vector<int> parents, BackwardFn fn);
    bool node_requires_grad(int id) const;
    const Tensor& node_value(int id) const;
    const std::vector<float>& node_grad_ref(int id) const;
    std::vector<float>& node_grad(int id);  // allocates zeros on first touch
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        const char* kind;
        Tensor value;
        std::vector<float> grad;
        std::vector<int> parents;
        BackwardFn backward_fn;
        bool requires_grad = false;
        bool is_leaf = false;
        Tensor bound;  // leaf only: tensor whose grad slot receives the result
    };
    std::vector<Node> nodes_;
    bool consumed_ = false;
    int64_t overflow_ = 0;
};

}  // namespace resmatch
