#include "resmatch/tape.hpp"

#include "resmatch/errors.hpp"

namespace resmatch {

Value Tape::leaf(const Tensor& t, bool requires_grad) {
    if (consumed_) throw ContractError("tape already consumed by backward");
    Node node;
    node.kind = "leaf";
    node.value = t.precision() == Precision::full32 ? t : t.cast(Precision::full32);
    node.requires_grad = requires_grad;
    node.is_leaf = true;
    if (requires_grad) node.bound = t;
    nodes_.push_back(std::move(node));
    return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Tape::emit(const char* kind, Tensor value, std::vector<int> parents, BackwardFn fn) {
    if (consumed_) throw ContractError("tape already consumed by backward");
    Node node;
    node.kind = kind;
    node.value = std::move(value);
    node.parents = std::move(parents);
    for (int p : node.parents)
        if (nodes_[static_cast<std::size_t>(p)].requires_grad) node.requires_grad = true;
    if (node.requires_grad) node.backward_fn = std::move(fn);
    nodes_.push_back(std::move(node));
    return Value{static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::value(Value v) const { return node_value(v.id); }

const Tensor& Tape::node_value(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size()))
        throw ContractError("value handle does not belong to this tape");
    return nodes_[static_cast<std::size_t>(id)].value;
}

bool Tape::node_requires_grad(int id) const {
    return nodes_[static_cast<std::size_t>(id)].requires_grad;
}

const std::vector<float>& Tape::node_grad_ref(int id) const {
    return nodes_[static_cast<std::size_t>(id)].grad;
}

std::vector<float>& Tape::node_grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad.assign(static_cast<std::size_t>(n.value.numel()), 0.0f);
    return n.grad;
}

Tensor Tape::grad(Value v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.empty()) return Tensor::zeros(n.value.dims());
    return Tensor::from(n.value.dims(), n.grad);
}

void Tape::backward(Value loss) {
    if (consumed_) throw ContractError("tape already consumed by backward");
    const Tensor& lv = node_value(loss.id);
    if (lv.numel() != 1)
        throw ContractError("backward requires a scalar loss, got " + lv.shape_string());
    if (!nodes_[static_cast<std::size_t>(loss.id)].requires_grad)
        throw ContractError("loss does not depend on any tracked leaf");

    node_grad(loss.id)[0] = 1.0f;

    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.is_leaf) {
            auto& slot = n.bound.grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) slot[i] += n.grad[i];
        } else if (n.backward_fn) {
            n.backward_fn(*this, id);
        }
    }
    consumed_ = true;
}

}  // namespace resmatch
