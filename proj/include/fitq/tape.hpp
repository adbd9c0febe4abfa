#pragma once

#include <array>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "fitq/tensor.hpp"

namespace fitq {

// Primitive operations. Every backward rule below is itself expressed with
// these primitives, so gradients are ordinary tape nodes and a second
// backward pass through them yields exact Hessian-vector products.
enum class Op : uint8_t {
    Leaf,
    Add, Sub, Mul, Neg, Scale, AddConst,
    Recip, Sqrt, Exp, Log,
    Relu, StepPos,
    MatMul, Transpose,
    RowSum, TileCols, ColSum, TileRows,
    SumAll, FillLike,
    ChannelSum, ChannelBcast,
    Conv2d, Conv2dDx, Conv2dDw,
    MaxPool, MaxPoolScatter, MaxPoolGather,
    Reshape,
    SelectCols, ScatterCols, RowMaxConst,
    FakeQuant, RangeMask,
};

const char* op_name(Op op);

struct Var {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
};

struct Node {
    Op op = Op::Leaf;
    std::array<int32_t, 2> in{-1, -1};
    Tensor val;
    std::vector<int64_t> iaux;  // strides, pads, pool indices, labels
    std::vector<double> daux;   // scale factors, quantizer parameters
    bool requires_grad = false;
};

// Append-only computation record. Node inputs always reference earlier nodes,
// so reverse iteration over ids is a reverse topological order. Values are
// computed eagerly on construction; forward() re-executes the whole record
// (used after rebinding leaves and for bit-exact replay checks).
class Tape {
  public:
    Var leaf(Tensor value, bool requires_grad = false);

    // elementwise
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var neg(Var a);
    Var scale(Var a, double c);
    Var add_const(Var a, double c);
    Var recip(Var a);
    Var sqrt(Var a);
    Var exp(Var a);
    Var log(Var a);
    Var relu(Var a);
    Var step_pos(Var a);  // 1 where x > 0 else 0; derivative-free mask

    // linear algebra (rank-2)
    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var row_sum(Var a);                 // [m,n] -> [m]
    Var tile_cols(Var v, int64_t n);    // [m] -> [m,n]
    Var col_sum(Var a);                 // [m,n] -> [n]
    Var tile_rows(Var v, int64_t m);    // [n] -> [m,n]

    // reductions / broadcasts
    Var sum_all(Var a);                          // -> scalar
    Var fill_like(Var scalar, const Shape& s);   // scalar -> s, constant fill
    Var channel_sum(Var a);                      // [N,C,H,W] -> [C]
    Var channel_bcast(Var v, const Shape& s);    // [C] -> [N,C,H,W]

    // convolution family (NCHW inputs, OIHW kernels)
    Var conv2d(Var x, Var w, int64_t stride, int64_t pad);
    Var conv2d_dx(Var w, Var gy, const Shape& x_shape, int64_t stride, int64_t pad);
    Var conv2d_dw(Var x, Var gy, const Shape& w_shape, int64_t stride, int64_t pad);

    // max pooling; ties broken toward the first maximum in scan order
    Var maxpool(Var x, int64_t k, int64_t stride);
    Var maxpool_scatter(Var g, const std::vector<int64_t>& idx, const Shape& x_shape);
    Var maxpool_gather(Var x, const std::vector<int64_t>& idx, const Shape& out_shape);

    Var reshape(Var a, const Shape& s);

    // class-logit pick: out[i] = z[i, labels[i]]
    Var select_cols(Var z, const std::vector<int64_t>& labels);
    Var scatter_cols(Var v, const std::vector<int64_t>& labels, int64_t ncols);
    Var row_max_const(Var z);  // per-row max treated as a constant (zero grad)

    // uniform fake-quantizer with clipped straight-through backward
    Var fake_quant(Var x, double lo, double hi, double delta);
    Var range_mask(Var x, double lo, double hi);

    const Tensor& value(Var v) const;
    const Node& node(Var v) const;
    int64_t size() const { return static_cast<int64_t>(nodes_.size()); }

    // Reverse-mode gradients of `out` w.r.t. each var in `wrt`, as new tape
    // nodes. Differentiating them again gives exact second-order products.
    // Default seed is ones_like(out). Vars never reached get zero tensors.
    std::vector<Var> grad(Var out, std::span<const Var> wrt,
                          std::optional<Tensor> seed = std::nullopt);

    // Replay support. rebind_leaf marks the record stale until forward() runs.
    void rebind_leaf(Var v, Tensor value);
    void forward();
    bool stale() const { return stale_; }
    std::vector<Tensor> values(std::span<const Var> vars) const;

  private:
    Var push(Node n);
    void eval(int32_t id);

    std::deque<Node> nodes_;
    bool stale_ = false;
};

// Mean softmax cross-entropy of logits [m,k] against integer labels.
Var softmax_cross_entropy(Tape& t, Var logits, const std::vector<int64_t>& labels);

}  // namespace fitq
