#pragma once

#include <functional>
#include <vector>

#include "tabret/matrix.hpp"

namespace tabret {

struct Parameter;
class Tape;

// Handle to a node on the tape.
using Var = int;

// Append-only reverse-mode tape over matrix-valued nodes. Appending order is
// a topological order, so the backward sweep just walks the tape in reverse.
class Tape {
public:
    Var constant(Matrix value);
    Var leaf(Parameter& p);  // grads flow back into p.grad on flush

    const Matrix& value(Var v) const { return nodes_[v].value; }
    Matrix& grad(Var v) { return nodes_[v].grad; }

    // Seeds d(root)=1 (root must be 1x1) and runs the backward sweep, then
    // accumulates leaf gradients into their parameters.
    void backward(Var root);

    size_t node_count() const { return nodes_.size(); }

private:
    friend Var raw_op(Tape&, Matrix, std::function<void(Tape&)>);
    struct Node {
        Matrix value;
        Matrix grad;
        std::function<void(Tape&)> back;
        Parameter* param = nullptr;
    };
    std::vector<Node> nodes_;
};

// --- elementwise / linear algebra ---
Var op_matmul(Tape& t, Var a, Var b);
Var op_add(Tape& t, Var a, Var b);                  // same shape
Var op_add_rowvec(Tape& t, Var x, Var b);           // b is 1 x cols, broadcast
Var op_mul(Tape& t, Var a, Var b);                  // elementwise
Var op_relu(Tape& t, Var a);
Var op_scale(Tape& t, Var a, double s);

// --- normalization / attention / regularization ---
Var op_layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps);

// Scaled dot-product self-attention over per-sample token groups. q, k, v are
// (n_samples*n_tokens) x d with sample-major rows; dropout hits the attention
// weights only.
Var op_attention(Tape& t, Var q, Var k, Var v, int n_samples, int n_tokens,
                 int n_heads, double dropout_rate, RngState& rng, bool training);

Var op_dropout(Tape& t, Var x, double rate, RngState& rng, bool training);

// --- structural ---
// k inputs of n x d each -> (n*k) x d, row i*k+j taken from input j's row i.
Var op_interleave(Tape& t, const std::vector<Var>& cols, int n);
// out row r = x row idx[r]; backward scatter-adds.
Var op_gather_rows(Tape& t, Var x, std::vector<int> idx);
// Vertical concat of 1 x d inputs -> k x d.
Var op_concat_rows(Tape& t, const std::vector<Var>& rows);
// x is (n*k) x d, tile is k x d; out row i*k+j = x row + tile row j.
Var op_add_tile_rows(Tape& t, Var x, Var tile, int n);
// Fills an (n*k) x d output with `fill` (1 x d) in every row, then overwrites
// row dest[r] with survivors row r. Every dest index is distinct.
Var op_scatter_fill(Tape& t, Var survivors, Var fill, std::vector<int> dest,
                    int n_rows_out);

// --- losses (per-row, n x 1) ---
Var op_squared_error(Tape& t, Var pred, const std::vector<double>& target);
Var op_cross_entropy(Tape& t, Var logits, const std::vector<int>& labels);

// --- reductions ---
Var op_weighted_sum(Tape& t, Var x, std::vector<double> weights);  // x n x 1 -> 1 x 1

// Row-wise softmax, forward only (no tape node); used for inference scores.
Matrix softmax_rows(const Matrix& logits);

}  // namespace tabret
