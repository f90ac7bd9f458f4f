#pragma once

#include <functional>
#include <string>
#include <vector>

#include "usat/mat.hpp"

namespace usat {

/// A named trainable tensor with its gradient and optimizer moments.
struct Param {
    std::string name;
    Mat value;
    Mat grad;
    Mat m; // first moment
    Mat v; // second moment
    bool decay = true; // weight decay applies (off for biases/norm scales)

    Param() = default;
    Param(std::string n, int rows, int cols, bool dec)
        : name(std::move(n)), value(rows, cols), grad(rows, cols), m(rows, cols),
          v(rows, cols), decay(dec) {}

    void zero_grad() { grad.zero(); }
    size_t size() const { return value.size(); }
};

namespace ag {

using NodeId = int;

/// Reverse-mode tape over Mat values. Nodes only reference earlier nodes,
/// so backward() is a reverse sweep. Parameters live outside the tape;
/// their gradients accumulate across tapes until zeroed.
class Tape {
public:
    NodeId leaf(Mat m);
    NodeId param(Param& p);

    const Mat& val(NodeId id) const { return nodes_[id].v; }
    const Mat& grad_of(NodeId id) const { return nodes_[id].g; }

    NodeId add(NodeId a, NodeId b);
    NodeId add_rowvec(NodeId a, NodeId row); // row broadcast over a's rows
    NodeId add_n(const std::vector<NodeId>& xs, double scale); // scale * sum(xs)
    NodeId scale(NodeId a, double c);
    NodeId matmul(NodeId a, NodeId b);
    NodeId transpose(NodeId a);
    NodeId slice_cols(NodeId a, int c0, int c1);
    NodeId concat_cols(const std::vector<NodeId>& xs);
    NodeId concat_rows(const std::vector<NodeId>& xs);
    NodeId gather_rows(NodeId a, std::vector<int> idx);
    /// Output row t = src[map[t]] when map[t] >= 0, else the fill row
    /// (a 1 x d node, e.g. a learned mask token).
    NodeId assemble_rows(NodeId src, NodeId fill, std::vector<int> map);
    NodeId gelu(NodeId a);
    NodeId layer_norm(NodeId a, NodeId gamma, NodeId beta, double eps);
    NodeId softmax_rows(NodeId a);
    /// Fused softmax(q k^T * scale) v for one attention head; avoids
    /// materializing the score/probability matrices as tape nodes.
    NodeId attention(NodeId q, NodeId k, NodeId v, double scale);
    NodeId mean_rows(NodeId a); // 1 x cols

    /// Mean squared error over the listed rows only (all columns); 1x1.
    NodeId masked_mse(NodeId pred, Mat target, std::vector<int> rows);
    /// Mean over all entries of the stable BCE-with-logits loss; 1x1.
    NodeId bce_with_logits(NodeId logits, Mat targets);
    /// Mean over rows of (logsumexp(row) - row[label]); 1x1.
    NodeId softmax_xent(NodeId logits, std::vector<int> labels);
    NodeId weighted_sum(const std::vector<NodeId>& xs, const std::vector<double>& w); // 1x1

    /// Seeds d(root)=1 and sweeps the tape in reverse. Root must be 1x1.
    void backward(NodeId root);

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Mat v;
        Mat g;
        std::function<void(Tape&)> back;
    };

    NodeId push(Mat v, std::function<void(Tape&)> back = nullptr);
    Mat& grad(NodeId id) { return nodes_[id].g; }

    std::vector<Node> nodes_;
};

} // namespace ag
} // namespace usat
