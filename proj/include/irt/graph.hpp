#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "irt/kernels.hpp"
#include "irt/tensor.hpp"

namespace irt {

class Graph;

// Handle to a node on a tape. Valid as long as the owning Graph lives.
struct Var {
    Graph* g = nullptr;
    int id = -1;
};

// Reverse-mode tape. Nodes are appended in execution order, so creation
// order is already topological; backward walks it in reverse.
class Graph {
  public:
    struct Node {
        std::string op;
        Tensor value;
        Tensor grad;              // allocated lazily during backward
        bool requires_grad = false;
        bool has_grad = false;
        std::vector<int> inputs;
        std::function<void(Graph&, Node&)> backprop;  // null for leaves
        // op-specific saved state
        std::vector<std::int32_t> iaux;   // pool argmax, labels
        Tensor taux;                      // softmax probs etc.
        std::size_t saux[2] = {0, 0};     // stride/pad, window/stride
    };

    Var leaf(Tensor value, bool requires_grad = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // --- forward ops ---
    Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t pad);
    Var relu(Var x);
    Var maxpool(Var x, std::size_t window, std::size_t stride);
    Var global_avg_pool(Var x);                   // [N,C,H,W] -> [N,C]
    Var dense(Var x, Var w, Var b);               // [N,K],[C,K],[C] -> [N,C]
    Var softmax(Var x);                           // rowwise over last axis of [N,C]
    Var cross_entropy_mean(Var logits, const std::vector<int>& labels);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, float s);
    Var abs(Var a);                               // d|0| = 0
    Var sqrt(Var a);                              // d sqrt at 0 = 0
    Var sum_last(Var a);                          // drop last axis
    Var sum_all(Var a);                           // -> scalar
    Var mean_all(Var a);                          // -> scalar
    Var reshape(Var a, std::vector<std::size_t> shape);
    // out[n,c,i] = sum_k w[c,k] * x[n,k,i];  x: [N,K,u], w: [C,K] -> [N,C,u]
    Var channel_combine(Var x, Var w);

    // l1/l2 norm of (a - b), one scalar per leading row: [N,...] -> [N]
    Var l1_diff(Var a, Var b);
    Var l2_diff(Var a, Var b);

    void backward(Var out);

    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    // Gradient of the last backward() output w.r.t. this node; zero
    // tensor if the node was not reached.
    Tensor grad(Var v) const;
    std::size_t size() const { return nodes_.size(); }

  private:
    int push(Node n);
    Node& at(int id) { return nodes_[id]; }
    void accumulate(int id, const Tensor& g);

    std::vector<Node> nodes_;

    friend struct GraphOps;
};

}  // namespace irt
