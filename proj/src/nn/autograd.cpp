#include "beatflow/nn/autograd.hpp"

#include <unordered_set>

namespace beatflow::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled()
{
    return g_grad_enabled;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled)
{
    g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard()
{
    g_grad_enabled = previous_;
}

template <typename Scalar>
void backward(const Var<Scalar>& output)
{
    using NodeT = Node<Scalar>;
    NodeT* root = output.node();
    if (root == nullptr || !root->requires_grad) {
        return;
    }
    if (root->value.size() != 1) {
        throw ShapeError("backward() needs a single-element output, got " + shape_string(root->value.shape()));
    }

    // Iterative post-order DFS gives a topological order without recursion depth limits.
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> visited;
    std::vector<std::pair<NodeT*, std::size_t>> stack{{root, 0}};
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            NodeT* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad_buffer().vec().setOnes();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT* node = *it;
        if (node->backward) {
            node->backward(*node);
            node->backward = nullptr;
            node->grad = Tensor<Scalar>();
        }
    }
    // Children precede parents in `order`, so a node is released only after its turn.
    for (NodeT* node : order) {
        node->inputs.clear();
    }
}

template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);

}  // namespace beatflow::nn
