#pragma once

// Reverse-mode autodiff over dense Tensors. A Tape owns every intermediate
// value; Var is an index into it. Graphs are built per forward pass and torn
// down with the tape (define-by-run). Single-owner: one logical thread builds
// and differentiates a tape.
//
// Invariants kept by every operation:
//   - output values are finite (NumericError otherwise, naming the op),
//   - backward() visits each node at most once, in reverse creation order,
//   - nodes that cannot reach a trainable leaf are never differentiated.

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "vecformer/rng.hpp"
#include "vecformer/sparse.hpp"
#include "vecformer/tensor.hpp"

namespace vecformer {

struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // ---- leaves ----
    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // ---- access ----
    const Tensor& value(Var v) const { return node(v).value; }
    // Gradient of the last backward() w.r.t. v; zeros when v was untouched.
    const Tensor& grad(Var v);
    // Op-specific side tensor (e.g. post-softmax attention weights).
    const Tensor& aux(Var v) const;
    // Smallest |pre-activation| seen by a kinked op (leaky_relu, abs, elu)
    // on this tape. Finite-difference oracles are only meaningful when the
    // probed eps-neighborhood stays clear of these kinks.
    double kink_margin() const { return kink_margin_; }

    // ---- arithmetic ----
    Var add(Var a, Var b);
    Var add_rowvec(Var a, Var b);  // [n x d] + [1 x d]
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);

    // ---- elementwise ----
    Var sigmoid(Var a);
    Var tanh(Var a);
    Var elu(Var a, double alpha = 1.0);
    Var leaky_relu(Var a, double negative_slope);
    Var abs(Var a);

    // ---- reductions ----
    Var sum(Var a);
    Var mean(Var a);
    Var sqnorm(Var a);  // sum of squares

    // ---- softmax / losses ----
    Var row_softmax(Var a, double temperature);
    // Mean over masked rows of -log p[label]; labels.size() == rows.
    Var cross_entropy(Var logits, const std::vector<std::int64_t>& labels,
                      const std::vector<std::int64_t>& mask);
    // Mean over masked rows of summed per-column binary cross entropy.
    Var bce_with_logits(Var logits, Tensor targets, const std::vector<std::int64_t>& mask);
    // Mean over rows of (1 - cos(target_i, recon_i))^gamma, norms clamped at 1e-8.
    Var scaled_cosine_error(Var target, Var recon, double gamma);

    // ---- structure ----
    Var stopgrad(Var a);
    // Straight-through: forward takes `value`, backward copies grad to grad_path.
    Var st_copy(Var grad_path, Tensor value);
    Var dropout(Var a, double p, Rng& rng);  // inverted dropout, p in [0,1)
    Var hconcat(const std::vector<Var>& parts);
    Var col_slice(Var a, std::int64_t c0, std::int64_t c1);
    Var gather_rows(Var a, std::vector<std::int64_t> idx);
    // Rows of `a` grouped by contiguous segments; offsets has S+1 entries.
    Var segment_sum(Var a, std::vector<std::int64_t> offsets);
    Var segment_softmax(Var a, std::vector<std::int64_t> offsets);  // a is [E x 1]
    Var col_broadcast_mul(Var a, Var w);                            // w is [R x 1]
    Var repeat_rows_each(Var a, std::int64_t k);  // row r -> rows r*k .. r*k+k-1
    Var tile_rows(Var a, std::int64_t k);         // whole block repeated k times
    // Fixed-topology sparse x dense; `mt` is the transpose used in backward.
    Var spmm(CsrPtr m, CsrPtr mt, Var a);
    // Scaled-dot-product attention, scale 1/sqrt(q.cols). aux = weights [N x M].
    Var attention(Var q, Var k, Var v);
    // sum_{ij} (A_ij - sigmoid(y_i . y_j))^2 over all n^2 ordered pairs.
    Var structure_recon_dense(CsrPtr adj, Var y);
    // Positives exact; non-edges estimated from `n_samples` draws (exhaustive
    // when n_samples covers every non-edge, making the value exact).
    Var structure_recon_sampled(CsrPtr adj, Var y, std::int64_t n_samples, Rng& rng);

    void backward(Var loss);

    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        Tensor grad;  // empty until touched
        Tensor aux;
        bool requires_grad = false;
        std::function<void(Tape&)> backward_fn;  // null for leaves
    };

    Node& node(Var v);
    const Node& node(Var v) const;
    Var push(Tensor value, bool requires_grad, std::function<void(Tape&)> fn, const char* opname);
    bool needs(Var v) const { return node(v).requires_grad; }
    // Accumulation target for v's gradient; allocates zeros on first touch.
    Tensor& gbuf(Var v);
    void accum(Var v, const Tensor& g);

    std::vector<Node> nodes_;
    double kink_margin_ = std::numeric_limits<double>::infinity();
    friend class TapeTestPeer;
};

}  // namespace vecformer
