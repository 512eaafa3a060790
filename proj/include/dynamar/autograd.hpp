#pragma once

#include "dynamar/rng.hpp"
#include "dynamar/tensor.hpp"

#include <functional>
#include <memory>
#include <utility>
#include <vector>

namespace dynamar::ag {

/// One tape entry: a value, its (lazily allocated) gradient, and a closure
/// that pushes the gradient to the parents.
struct Node {
    Tensor val;
    Tensor grad;
    bool needs_grad = false;
    bool grad_alloc = false;
    std::function<void(Node&)> back;

    Tensor& ensure_grad() {
        if (!grad_alloc) {
            grad = Tensor(val.rows, val.cols);
            grad_alloc = true;
        }
        return grad;
    }
};

/// Reverse-mode tape. Ops append nodes in topological order; backward walks
/// the tape in reverse. The graph owns every node; handles are raw pointers
/// valid for the graph's lifetime.
class Graph {
public:
    Node* leaf(const Tensor& value, bool needs_grad);

    Node* matmul(Node* a, Node* b);    // A @ B
    Node* matmul_nt(Node* a, Node* b); // A @ B^T
    Node* add(Node* a, Node* b);
    Node* add_row_broadcast(Node* a, Node* bias); // bias: 1 x C
    Node* scale(Node* a, double c);
    Node* gelu(Node* a);
    Node* layer_norm(Node* a, Node* gain, Node* bias, double eps = 1e-5);
    Node* dropout(Node* a, double rate, Rng& rng);
    /// Row-wise softmax over columns [0, valid_cols); the rest are exact
    /// zeros.
    Node* masked_softmax_rows(Node* a, int valid_cols);
    Node* block(Node* a, int r0, int rs, int c0, int cs);
    /// Paste disjoint pieces into a rows x cols tensor at (r0, c0) offsets.
    Node* assemble(int rows, int cols, const std::vector<std::tuple<Node*, int, int>>& pieces);
    Node* gather_rows(Node* a, const std::vector<int>& row_indices);
    /// out[i,:] = mean of a[start_i .. start_i+len_i-1, :]
    Node* mean_rows_ranges(Node* a, const std::vector<std::pair<int, int>>& ranges);
    /// out[i,:] = E[ids[i],:] with scatter-add backward.
    Node* embedding_rows(Node* table, const std::vector<int>& ids);

    /// Mean cross-entropy of row-wise softmax(logits) against target class
    /// indices. Returns a 1x1 node.
    Node* softmax_cross_entropy(Node* logits, const std::vector<int>& targets);
    /// Mean squared error between pred[:,0] and targets. Returns a 1x1 node.
    Node* mse_loss(Node* pred, const std::vector<double>& targets);

    /// Seed root.grad = 1 and run the tape backwards.
    void backward(Node* root);

    std::size_t size() const { return nodes_.size(); }

private:
    Node* make(Tensor val, bool needs_grad, std::function<void(Node&)> back = nullptr);
    std::vector<std::unique_ptr<Node>> nodes_;
};

} // namespace dynamar::ag
