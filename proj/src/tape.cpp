#include "fitq/tape.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace fitq {

namespace {

std::string node_tag(Op op, int64_t id) {
    return std::string(op_name(op)) + " (node " + std::to_string(id) + ")";
}

[[noreturn]] void shape_error(Op op, int64_t id, const std::string& detail) {
    throw ValidationError("shape mismatch in " + node_tag(op, id) + ": " + detail);
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Neg: return "neg";
        case Op::Scale: return "scale";
        case Op::AddConst: return "add_const";
        case Op::Recip: return "recip";
        case Op::Sqrt: return "sqrt";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Relu: return "relu";
        case Op::StepPos: return "step_pos";
        case Op::MatMul: return "matmul";
        case Op::Transpose: return "transpose";
        case Op::RowSum: return "row_sum";
        case Op::TileCols: return "tile_cols";
        case Op::ColSum: return "col_sum";
        case Op::TileRows: return "tile_rows";
        case Op::SumAll: return "sum_all";
        case Op::FillLike: return "fill_like";
        case Op::ChannelSum: return "channel_sum";
        case Op::ChannelBcast: return "channel_bcast";
        case Op::Conv2d: return "conv2d";
        case Op::Conv2dDx: return "conv2d_dx";
        case Op::Conv2dDw: return "conv2d_dw";
        case Op::MaxPool: return "maxpool";
        case Op::MaxPoolScatter: return "maxpool_scatter";
        case Op::MaxPoolGather: return "maxpool_gather";
        case Op::Reshape: return "reshape";
        case Op::SelectCols: return "select_cols";
        case Op::ScatterCols: return "scatter_cols";
        case Op::RowMaxConst: return "row_max_const";
        case Op::FakeQuant: return "fake_quant";
        case Op::RangeMask: return "range_mask";
    }
    return "?";
}

Var Tape::push(Node n) {
    bool rg = false;
    for (int32_t i : n.in)
        if (i >= 0 && nodes_[static_cast<size_t>(i)].requires_grad) rg = true;
    // masks and saved constants never carry gradient
    if (n.op == Op::StepPos || n.op == Op::RangeMask || n.op == Op::RowMaxConst) rg = false;
    if (n.op != Op::Leaf) n.requires_grad = rg;
    nodes_.push_back(std::move(n));
    int32_t id = static_cast<int32_t>(nodes_.size()) - 1;
    eval(id);
    return Var{id};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.val = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int32_t>(nodes_.size()) - 1};
}

const Tensor& Tape::value(Var v) const {
    if (!v.valid() || v.id >= size()) throw ValidationError("invalid var id " + std::to_string(v.id));
    return nodes_[static_cast<size_t>(v.id)].val;
}

const Node& Tape::node(Var v) const {
    if (!v.valid() || v.id >= size()) throw ValidationError("invalid var id " + std::to_string(v.id));
    return nodes_[static_cast<size_t>(v.id)];
}

std::vector<Tensor> Tape::values(std::span<const Var> vars) const {
    std::vector<Tensor> out;
    out.reserve(vars.size());
    for (Var v : vars) out.push_back(value(v));
    return out;
}

// ---- builders -------------------------------------------------------------

#define FITQ_IN(v) nodes_[static_cast<size_t>((v).id)]

Var Tape::add(Var a, Var b) {
    if (!FITQ_IN(a).val.same_shape(FITQ_IN(b).val))
        shape_error(Op::Add, size(), shape_str(FITQ_IN(a).val.shape()) + " vs " + shape_str(FITQ_IN(b).val.shape()));
    Node n;
    n.op = Op::Add;
    n.in = {a.id, b.id};
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    if (!FITQ_IN(a).val.same_shape(FITQ_IN(b).val))
        shape_error(Op::Sub, size(), shape_str(FITQ_IN(a).val.shape()) + " vs " + shape_str(FITQ_IN(b).val.shape()));
    Node n;
    n.op = Op::Sub;
    n.in = {a.id, b.id};
    return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
    if (!FITQ_IN(a).val.same_shape(FITQ_IN(b).val))
        shape_error(Op::Mul, size(), shape_str(FITQ_IN(a).val.shape()) + " vs " + shape_str(FITQ_IN(b).val.shape()));
    Node n;
    n.op = Op::Mul;
    n.in = {a.id, b.id};
    return push(std::move(n));
}

Var Tape::neg(Var a) {
    Node n;
    n.op = Op::Neg;
    n.in = {a.id, -1};
    return push(std::move(n));
}

Var Tape::scale(Var a, double c) {
    Node n;
    n.op = Op::Scale;
    n.in = {a.id, -1};
    n.daux = {c};
    return push(std::move(n));
}

Var Tape::add_const(Var a, double c) {
    Node n;
    n.op = Op::AddConst;
    n.in = {a.id, -1};
    n.daux = {c};
    return push(std::move(n));
}

#define FITQ_UNARY(fn, kind)      \
    Var Tape::fn(Var a) {         \
        Node n;                   \
        n.op = kind;              \
        n.in = {a.id, -1};        \
        return push(std::move(n)); \
    }

FITQ_UNARY(recip, Op::Recip)
FITQ_UNARY(sqrt, Op::Sqrt)
FITQ_UNARY(exp, Op::Exp)
FITQ_UNARY(log, Op::Log)
FITQ_UNARY(relu, Op::Relu)
FITQ_UNARY(step_pos, Op::StepPos)
#undef FITQ_UNARY

Var Tape::matmul(Var a, Var b) {
    const Tensor& A = FITQ_IN(a).val;
    const Tensor& B = FITQ_IN(b).val;
    if (A.rank() != 2 || B.rank() != 2)
        shape_error(Op::MatMul, size(), "expects rank-2 operands, got " + shape_str(A.shape()) + ", " + shape_str(B.shape()));
    if (A.dim(1) != B.dim(0))
        shape_error(Op::MatMul, size(), "inner dims " + std::to_string(A.dim(1)) + " vs " + std::to_string(B.dim(0)));
    Node n;
    n.op = Op::MatMul;
    n.in = {a.id, b.id};
    return push(std::move(n));
}

Var Tape::transpose(Var a) {
    if (FITQ_IN(a).val.rank() != 2) shape_error(Op::Transpose, size(), "expects rank-2");
    Node n;
    n.op = Op::Transpose;
    n.in = {a.id, -1};
    return push(std::move(n));
}

Var Tape::row_sum(Var a) {
    if (FITQ_IN(a).val.rank() != 2) shape_error(Op::RowSum, size(), "expects rank-2");
    Node n;
    n.op = Op::RowSum;
    n.in = {a.id, -1};
    return push(std::move(n));
}

Var Tape::tile_cols(Var v, int64_t ncols) {
    if (FITQ_IN(v).val.rank() != 1) shape_error(Op::TileCols, size(), "expects rank-1");
    if (ncols <= 0) shape_error(Op::TileCols, size(), "ncols must be positive");
    Node n;
    n.op = Op::TileCols;
    n.in = {v.id, -1};
    n.iaux = {ncols};
    return push(std::move(n));
}

Var Tape::col_sum(Var a) {
    if (FITQ_IN(a).val.rank() != 2) shape_error(Op::ColSum, size(), "expects rank-2");
    Node n;
    n.op = Op::ColSum;
    n.in = {a.id, -1};
    return push(std::move(n));
}

Var Tape::tile_rows(Var v, int64_t mrows) {
    if (FITQ_IN(v).val.rank() != 1) shape_error(Op::TileRows, size(), "expects rank-1");
    if (mrows <= 0) shape_error(Op::TileRows, size(), "mrows must be positive");
    Node n;
    n.op = Op::TileRows;
    n.in = {v.id, -1};
    n.iaux = {mrows};
    return push(std::move(n));
}

Var Tape::sum_all(Var a) {
    Node n;
    n.op = Op::SumAll;
    n.in = {a.id, -1};
    return push(std::move(n));
}

Var Tape::fill_like(Var scalar, const Shape& s) {
    if (FITQ_IN(scalar).val.size() != 1) shape_error(Op::FillLike, size(), "expects scalar input");
    Node n;
    n.op = Op::FillLike;
    n.in = {scalar.id, -1};
    n.iaux.assign(s.begin(), s.end());
    return push(std::move(n));
}

Var Tape::channel_sum(Var a) {
    if (FITQ_IN(a).val.rank() != 4) shape_error(Op::ChannelSum, size(), "expects NCHW");
    Node n;
    n.op = Op::ChannelSum;
    n.in = {a.id, -1};
    return push(std::move(n));
}

Var Tape::channel_bcast(Var v, const Shape& s) {
    if (FITQ_IN(v).val.rank() != 1) shape_error(Op::ChannelBcast, size(), "expects rank-1 channel vector");
    if (s.size() != 4 || s[1] != FITQ_IN(v).val.dim(0))
        shape_error(Op::ChannelBcast, size(),
                    "target " + shape_str(s) + " does not match channels " + std::to_string(FITQ_IN(v).val.dim(0)));
    Node n;
    n.op = Op::ChannelBcast;
    n.in = {v.id, -1};
    n.iaux.assign(s.begin(), s.end());
    return push(std::move(n));
}

namespace {
int64_t conv_out_extent(int64_t in, int64_t k, int64_t stride, int64_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}
}  // namespace

Var Tape::conv2d(Var x, Var w, int64_t stride, int64_t pad) {
    const Tensor& X = FITQ_IN(x).val;
    const Tensor& W = FITQ_IN(w).val;
    if (X.rank() != 4 || W.rank() != 4) shape_error(Op::Conv2d, size(), "expects NCHW input and OIHW kernel");
    if (X.dim(1) != W.dim(1))
        shape_error(Op::Conv2d, size(), "input channels " + std::to_string(X.dim(1)) + " vs kernel " + std::to_string(W.dim(1)));
    if (stride <= 0 || pad < 0) shape_error(Op::Conv2d, size(), "bad stride/pad");
    if (conv_out_extent(X.dim(2), W.dim(2), stride, pad) <= 0 || conv_out_extent(X.dim(3), W.dim(3), stride, pad) <= 0)
        shape_error(Op::Conv2d, size(), "kernel larger than padded input");
    Node n;
    n.op = Op::Conv2d;
    n.in = {x.id, w.id};
    n.iaux = {stride, pad};
    return push(std::move(n));
}

Var Tape::conv2d_dx(Var w, Var gy, const Shape& x_shape, int64_t stride, int64_t pad) {
    if (x_shape.size() != 4) shape_error(Op::Conv2dDx, size(), "x_shape must be NCHW");
    Node n;
    n.op = Op::Conv2dDx;
    n.in = {w.id, gy.id};
    n.iaux = {stride, pad, x_shape[0], x_shape[1], x_shape[2], x_shape[3]};
    return push(std::move(n));
}

Var Tape::conv2d_dw(Var x, Var gy, const Shape& w_shape, int64_t stride, int64_t pad) {
    if (w_shape.size() != 4) shape_error(Op::Conv2dDw, size(), "w_shape must be OIHW");
    Node n;
    n.op = Op::Conv2dDw;
    n.in = {x.id, gy.id};
    n.iaux = {stride, pad, w_shape[0], w_shape[1], w_shape[2], w_shape[3]};
    return push(std::move(n));
}

Var Tape::maxpool(Var x, int64_t k, int64_t stride) {
    const Tensor& X = FITQ_IN(x).val;
    if (X.rank() != 4) shape_error(Op::MaxPool, size(), "expects NCHW");
    if (k <= 0 || stride <= 0) shape_error(Op::MaxPool, size(), "bad kernel/stride");
    if (X.dim(2) < k || X.dim(3) < k) shape_error(Op::MaxPool, size(), "window larger than input");
    Node n;
    n.op = Op::MaxPool;
    n.in = {x.id, -1};
    n.iaux = {k, stride};  // eval appends argmax indices
    return push(std::move(n));
}

Var Tape::maxpool_scatter(Var g, const std::vector<int64_t>& idx, const Shape& x_shape) {
    if (FITQ_IN(g).val.size() != static_cast<int64_t>(idx.size()))
        shape_error(Op::MaxPoolScatter, size(), "index count mismatch");
    Node n;
    n.op = Op::MaxPoolScatter;
    n.in = {g.id, -1};
    n.iaux.reserve(4 + idx.size());
    n.iaux.assign(x_shape.begin(), x_shape.end());
    n.iaux.insert(n.iaux.end(), idx.begin(), idx.end());
    return push(std::move(n));
}

Var Tape::maxpool_gather(Var x, const std::vector<int64_t>& idx, const Shape& out_shape) {
    if (numel(out_shape) != static_cast<int64_t>(idx.size()))
        shape_error(Op::MaxPoolGather, size(), "index count mismatch");
    Node n;
    n.op = Op::MaxPoolGather;
    n.in = {x.id, -1};
    n.iaux.reserve(4 + idx.size());
    n.iaux.assign(out_shape.begin(), out_shape.end());
    n.iaux.insert(n.iaux.end(), idx.begin(), idx.end());
    return push(std::move(n));
}

Var Tape::reshape(Var a, const Shape& s) {
    if (numel(s) != FITQ_IN(a).val.size())
        shape_error(Op::Reshape, size(),
                    "cannot view " + shape_str(FITQ_IN(a).val.shape()) + " as " + shape_str(s));
    Node n;
    n.op = Op::Reshape;
    n.in = {a.id, -1};
    n.iaux.assign(s.begin(), s.end());
    return push(std::move(n));
}

Var Tape::select_cols(Var z, const std::vector<int64_t>& labels) {
    const Tensor& Z = FITQ_IN(z).val;
    if (Z.rank() != 2) shape_error(Op::SelectCols, size(), "expects rank-2");
    if (Z.dim(0) != static_cast<int64_t>(labels.size())) shape_error(Op::SelectCols, size(), "label count mismatch");
    for (int64_t y : labels)
        if (y < 0 || y >= Z.dim(1))
            throw ValidationError("label " + std::to_string(y) + " out of range in " + node_tag(Op::SelectCols, size()));
    Node n;
    n.op = Op::SelectCols;
    n.in = {z.id, -1};
    n.iaux = labels;
    return push(std::move(n));
}

Var Tape::scatter_cols(Var v, const std::vector<int64_t>& labels, int64_t ncols) {
    const Tensor& V = FITQ_IN(v).val;
    if (V.rank() != 1 || V.dim(0) != static_cast<int64_t>(labels.size()))
        shape_error(Op::ScatterCols, size(), "expects rank-1 matching labels");
    Node n;
    n.op = Op::ScatterCols;
    n.in = {v.id, -1};
    n.iaux.reserve(1 + labels.size());
    n.iaux.push_back(ncols);
    n.iaux.insert(n.iaux.end(), labels.begin(), labels.end());
    return push(std::move(n));
}

Var Tape::row_max_const(Var z) {
    if (FITQ_IN(z).val.rank() != 2) shape_error(Op::RowMaxConst, size(), "expects rank-2");
    Node n;
    n.op = Op::RowMaxConst;
    n.in = {z.id, -1};
    return push(std::move(n));
}

Var Tape::fake_quant(Var x, double lo, double hi, double delta) {
    if (!(hi > lo) || !(delta > 0)) throw ValidationError("fake_quant: degenerate range in " + node_tag(Op::FakeQuant, size()));
    Node n;
    n.op = Op::FakeQuant;
    n.in = {x.id, -1};
    n.daux = {lo, hi, delta};
    return push(std::move(n));
}

Var Tape::range_mask(Var x, double lo, double hi) {
    Node n;
    n.op = Op::RangeMask;
    n.in = {x.id, -1};
    n.daux = {lo, hi};
    return push(std::move(n));
}

// ---- evaluation -----------------------------------------------------------

void Tape::eval(int32_t id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    auto in0 = [&]() -> const Tensor& { return nodes_[static_cast<size_t>(n.in[0])].val; };
    auto in1 = [&]() -> const Tensor& { return nodes_[static_cast<size_t>(n.in[1])].val; };

    switch (n.op) {
        case Op::Leaf:
            return;
        case Op::Add: {
            const Tensor &a = in0(), &b = in1();
            Tensor out(a.shape());
            for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
            n.val = std::move(out);
            return;
        }
        case Op::Sub: {
            const Tensor &a = in0(), &b = in1();
            Tensor out(a.shape());
            for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
            n.val = std::move(out);
            return;
        }
        case Op::Mul: {
            const Tensor &a = in0(), &b = in1();
            Tensor out(a.shape());
            for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
            n.val = std::move(out);
            return;
        }
        case Op::Neg: {
            const Tensor& a = in0();
            Tensor out(a.shape());
            for (int64_t i = 0; i < a.size(); ++i) out[i] = -a[i];
            n.val = std::move(out);
            return;
        }
        case Op::Scale: {
            const Tensor& a = in0();
            const double c = n.daux[0];
            Tensor out(a.shape());
            for (int64_t i = 0; i < a.size(); ++i) out[i] = c * a[i];
            n.val = std::move(out);
            return;
        }
        case Op::AddConst: {
            const Tensor& a = in0();
            const double c = n.daux[0];
            Tensor out(a.shape());
            for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + c;
            n.val = std::move(out);
            return;
        }
        case Op::Recip: {
            const Tensor& a = in0();
            Tensor out(a.shape());
            for (int64_t i = 0; i < a.size(); ++i) out[i] = 1.0 / a[i];
            n.val = std::move(out);
            return;
        }
        case Op::Sqrt: {
            const Tensor& a = in0();
            Tensor out(a.shape());
            for (int64_t i = 0; i < a.size(); ++i) out[i] = std::sqrt(a[i]);
            n.val = std::move(out);
            return;
        }
        case Op::Exp: {
            const Tensor& a = in0();
            Tensor out(a.shape());
            for (int64_t i = 0; i < a.size(); ++i) out[i] = std::exp(a[i]);
            n.val = std::move(out);
            return;
        }
        case Op::Log: {
            const Tensor& a = in0();
            Tensor out(a.shape());
            for (int64_t i = 0; i < a.size(); ++i) out[i] = std::log(a[i]);
            n.val = std::move(out);
            return;
        }
        case Op::Relu: {
            const Tensor& a = in0();
            Tensor out(a.shape());
            for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
            n.val = std::move(out);
            return;
        }
        case Op::StepPos: {
            const Tensor& a = in0();
            Tensor out(a.shape());
            for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] > 0.0 ? 1.0 : 0.0;
            n.val = std::move(out);
            return;
        }
        case Op::MatMul: {
            const Tensor &A = in0(), &B = in1();
            const int64_t m = A.dim(0), k = A.dim(1), p = B.dim(1);
            Tensor out(Shape{m, p});
            const double* a = A.data();
            const double* b = B.data();
            double* c = out.data();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t t = 0; t < k; ++t) {
                    const double av = a[i * k + t];
                    if (av == 0.0) continue;
                    const double* brow = b + t * p;
                    double* crow = c + i * p;
                    for (int64_t j = 0; j < p; ++j) crow[j] += av * brow[j];
                }
            n.val = std::move(out);
            return;
        }
        case Op::Transpose: {
            const Tensor& A = in0();
            const int64_t m = A.dim(0), k = A.dim(1);
            Tensor out(Shape{k, m});
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < k; ++j) out[j * m + i] = A[i * k + j];
            n.val = std::move(out);
            return;
        }
        case Op::RowSum: {
            const Tensor& A = in0();
            const int64_t m = A.dim(0), k = A.dim(1);
            Tensor out(Shape{m});
            for (int64_t i = 0; i < m; ++i) {
                double s = 0.0;
                for (int64_t j = 0; j < k; ++j) s += A[i * k + j];
                out[i] = s;
            }
            n.val = std::move(out);
            return;
        }
        case Op::TileCols: {
            const Tensor& v = in0();
            const int64_t m = v.dim(0), k = n.iaux[0];
            Tensor out(Shape{m, k});
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < k; ++j) out[i * k + j] = v[i];
            n.val = std::move(out);
            return;
        }
        case Op::ColSum: {
            const Tensor& A = in0();
            const int64_t m = A.dim(0), k = A.dim(1);
            Tensor out(Shape{k});
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < k; ++j) out[j] += A[i * k + j];
            n.val = std::move(out);
            return;
        }
        case Op::TileRows: {
            const Tensor& v = in0();
            const int64_t k = v.dim(0), m = n.iaux[0];
            Tensor out(Shape{m, k});
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < k; ++j) out[i * k + j] = v[j];
            n.val = std::move(out);
            return;
        }
        case Op::SumAll: {
            const Tensor& a = in0();
            double s = 0.0;
            for (int64_t i = 0; i < a.size(); ++i) s += a[i];
            n.val = Tensor::scalar(s);
            return;
        }
        case Op::FillLike: {
            Shape s(n.iaux.begin(), n.iaux.end());
            n.val = Tensor::full(std::move(s), in0().item());
            return;
        }
        case Op::ChannelSum: {
            const Tensor& x = in0();
            const int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
            Tensor out(Shape{C});
            for (int64_t b = 0; b < N; ++b)
                for (int64_t c = 0; c < C; ++c) {
                    const double* p = x.data() + (b * C + c) * HW;
                    double s = 0.0;
                    for (int64_t i = 0; i < HW; ++i) s += p[i];
                    out[c] += s;
                }
            n.val = std::move(out);
            return;
        }
        case Op::ChannelBcast: {
            const Tensor& v = in0();
            Shape s(n.iaux.begin(), n.iaux.end());
            const int64_t N = s[0], C = s[1], HW = s[2] * s[3];
            Tensor out(std::move(s));
            for (int64_t b = 0; b < N; ++b)
                for (int64_t c = 0; c < C; ++c) {
                    double* p = out.data() + (b * C + c) * HW;
                    for (int64_t i = 0; i < HW; ++i) p[i] = v[c];
                }
            n.val = std::move(out);
            return;
        }
        case Op::Conv2d: {
            const Tensor &X = in0(), &W = in1();
            const int64_t stride = n.iaux[0], pad = n.iaux[1];
            const int64_t N = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
            const int64_t O = W.dim(0), kh = W.dim(2), kw = W.dim(3);
            const int64_t Ho = conv_out_extent(H, kh, stride, pad), Wo = conv_out_extent(Wd, kw, stride, pad);
            Tensor out(Shape{N, O, Ho, Wo});
            for (int64_t b = 0; b < N; ++b)
                for (int64_t o = 0; o < O; ++o)
                    for (int64_t c = 0; c < C; ++c) {
                        const double* xp = X.data() + (b * C + c) * H * Wd;
                        const double* wp = W.data() + (o * C + c) * kh * kw;
                        double* yp = out.data() + (b * O + o) * Ho * Wo;
                        for (int64_t i = 0; i < Ho; ++i)
                            for (int64_t j = 0; j < Wo; ++j) {
                                double s = 0.0;
                                for (int64_t u = 0; u < kh; ++u) {
                                    const int64_t h = i * stride - pad + u;
                                    if (h < 0 || h >= H) continue;
                                    for (int64_t v2 = 0; v2 < kw; ++v2) {
                                        const int64_t w2 = j * stride - pad + v2;
                                        if (w2 < 0 || w2 >= Wd) continue;
                                        s += xp[h * Wd + w2] * wp[u * kw + v2];
                                    }
                                }
                                yp[i * Wo + j] += s;
                            }
                    }
            n.val = std::move(out);
            return;
        }
        case Op::Conv2dDx: {
            const Tensor &W = in0(), &G = in1();
            const int64_t stride = n.iaux[0], pad = n.iaux[1];
            Shape xs{n.iaux[2], n.iaux[3], n.iaux[4], n.iaux[5]};
            const int64_t N = xs[0], C = xs[1], H = xs[2], Wd = xs[3];
            const int64_t O = W.dim(0), kh = W.dim(2), kw = W.dim(3);
            const int64_t Ho = G.dim(2), Wo = G.dim(3);
            if (G.dim(0) != N || G.dim(1) != O || W.dim(1) != C ||
                Ho != conv_out_extent(H, kh, stride, pad) || Wo != conv_out_extent(Wd, kw, stride, pad))
                shape_error(Op::Conv2dDx, static_cast<int64_t>(nodes_.size()) - 1, "inconsistent operands");
            Tensor out(std::move(xs));
            for (int64_t b = 0; b < N; ++b)
                for (int64_t o = 0; o < O; ++o)
                    for (int64_t c = 0; c < C; ++c) {
                        double* xp = out.data() + (b * C + c) * H * Wd;
                        const double* wp = W.data() + (o * C + c) * kh * kw;
                        const double* gp = G.data() + (b * O + o) * Ho * Wo;
                        for (int64_t i = 0; i < Ho; ++i)
                            for (int64_t j = 0; j < Wo; ++j) {
                                const double g = gp[i * Wo + j];
                                if (g == 0.0) continue;
                                for (int64_t u = 0; u < kh; ++u) {
                                    const int64_t h = i * stride - pad + u;
                                    if (h < 0 || h >= H) continue;
                                    for (int64_t v2 = 0; v2 < kw; ++v2) {
                                        const int64_t w2 = j * stride - pad + v2;
                                        if (w2 < 0 || w2 >= Wd) continue;
                                        xp[h * Wd + w2] += g * wp[u * kw + v2];
                                    }
                                }
                            }
                    }
            n.val = std::move(out);
            return;
        }
        case Op::Conv2dDw: {
            const Tensor &X = in0(), &G = in1();
            const int64_t stride = n.iaux[0], pad = n.iaux[1];
            Shape ws{n.iaux[2], n.iaux[3], n.iaux[4], n.iaux[5]};
            const int64_t O = ws[0], C = ws[1], kh = ws[2], kw = ws[3];
            const int64_t N = X.dim(0), H = X.dim(2), Wd = X.dim(3);
            const int64_t Ho = G.dim(2), Wo = G.dim(3);
            if (G.dim(0) != N || G.dim(1) != O || X.dim(1) != C ||
                Ho != conv_out_extent(H, kh, stride, pad) || Wo != conv_out_extent(Wd, kw, stride, pad))
                shape_error(Op::Conv2dDw, static_cast<int64_t>(nodes_.size()) - 1, "inconsistent operands");
            Tensor out(std::move(ws));
            for (int64_t b = 0; b < N; ++b)
                for (int64_t o = 0; o < O; ++o)
                    for (int64_t c = 0; c < C; ++c) {
                        const double* xp = X.data() + (b * C + c) * H * Wd;
                        double* wp = out.data() + (o * C + c) * kh * kw;
                        const double* gp = G.data() + (b * O + o) * Ho * Wo;
                        for (int64_t i = 0; i < Ho; ++i)
                            for (int64_t j = 0; j < Wo; ++j) {
                                const double g = gp[i * Wo + j];
                                if (g == 0.0) continue;
                                for (int64_t u = 0; u < kh; ++u) {
                                    const int64_t h = i * stride - pad + u;
                                    if (h < 0 || h >= H) continue;
                                    for (int64_t v2 = 0; v2 < kw; ++v2) {
                                        const int64_t w2 = j * stride - pad + v2;
                                        if (w2 < 0 || w2 >= Wd) continue;
                                        wp[u * kw + v2] += g * xp[h * Wd + w2];
                                    }
                                }
                            }
                    }
            n.val = std::move(out);
            return;
        }
        case Op::MaxPool: {
            const Tensor& X = in0();
            const int64_t k = n.iaux[0], stride = n.iaux[1];
            const int64_t N = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
            const int64_t Ho = (H - k) / stride + 1, Wo = (Wd - k) / stride + 1;
            Tensor out(Shape{N, C, Ho, Wo});
            n.iaux.resize(2);
            n.iaux.reserve(2 + static_cast<size_t>(out.size()));
            for (int64_t b = 0; b < N; ++b)
                for (int64_t c = 0; c < C; ++c) {
                    const double* xp = X.data() + (b * C + c) * H * Wd;
                    double* yp = out.data() + (b * C + c) * Ho * Wo;
                    for (int64_t i = 0; i < Ho; ++i)
                        for (int64_t j = 0; j < Wo; ++j) {
                            double best = -std::numeric_limits<double>::infinity();
                            int64_t best_idx = -1;
                            for (int64_t u = 0; u < k; ++u)
                                for (int64_t v2 = 0; v2 < k; ++v2) {
                                    const int64_t h = i * stride + u, w2 = j * stride + v2;
                                    const double x = xp[h * Wd + w2];
                                    if (x > best) {
                                        best = x;
                                        best_idx = (b * C + c) * H * Wd + h * Wd + w2;
                                    }
                                }
                            yp[i * Wo + j] = best;
                            n.iaux.push_back(best_idx);
                        }
                }
            n.val = std::move(out);
            return;
        }
        case Op::MaxPoolScatter: {
            const Tensor& g = in0();
            Shape xs{n.iaux[0], n.iaux[1], n.iaux[2], n.iaux[3]};
            Tensor out(std::move(xs));
            for (int64_t t = 0; t < g.size(); ++t) out[n.iaux[static_cast<size_t>(4 + t)]] += g[t];
            n.val = std::move(out);
            return;
        }
        case Op::MaxPoolGather: {
            const Tensor& x = in0();
            Shape os{n.iaux[0], n.iaux[1], n.iaux[2], n.iaux[3]};
            Tensor out(std::move(os));
            for (int64_t t = 0; t < out.size(); ++t) out[t] = x[n.iaux[static_cast<size_t>(4 + t)]];
            n.val = std::move(out);
            return;
        }
        case Op::Reshape: {
            Shape s(n.iaux.begin(), n.iaux.end());
            n.val = Tensor(std::move(s), in0().vec());
            return;
        }
        case Op::SelectCols: {
            const Tensor& Z = in0();
            const int64_t m = Z.dim(0), k = Z.dim(1);
            Tensor out(Shape{m});
            for (int64_t i = 0; i < m; ++i) out[i] = Z[i * k + n.iaux[static_cast<size_t>(i)]];
            n.val = std::move(out);
            return;
        }
        case Op::ScatterCols: {
            const Tensor& v = in0();
            const int64_t k = n.iaux[0], m = v.dim(0);
            Tensor out(Shape{m, k});
            for (int64_t i = 0; i < m; ++i) out[i * k + n.iaux[static_cast<size_t>(1 + i)]] = v[i];
            n.val = std::move(out);
            return;
        }
        case Op::RowMaxConst: {
            const Tensor& Z = in0();
            const int64_t m = Z.dim(0), k = Z.dim(1);
            Tensor out(Shape{m});
            for (int64_t i = 0; i < m; ++i) {
                double best = Z[i * k];
                for (int64_t j = 1; j < k; ++j) best = std::max(best, Z[i * k + j]);
                out[i] = best;
            }
            n.val = std::move(out);
            return;
        }
        case Op::FakeQuant: {
            const Tensor& x = in0();
            const double lo = n.daux[0], hi = n.daux[1], delta = n.daux[2];
            Tensor out(x.shape());
            for (int64_t i = 0; i < x.size(); ++i) {
                double v = std::min(std::max(x[i], lo), hi);
                out[i] = lo + delta * std::round((v - lo) / delta);
            }
            n.val = std::move(out);
            return;
        }
        case Op::RangeMask: {
            const Tensor& x = in0();
            const double lo = n.daux[0], hi = n.daux[1];
            Tensor out(x.shape());
            for (int64_t i = 0; i < x.size(); ++i) out[i] = (x[i] >= lo && x[i] <= hi) ? 1.0 : 0.0;
            n.val = std::move(out);
            return;
        }
    }
}

// ---- reverse mode ---------------------------------------------------------

std::vector<Var> Tape::grad(Var out, std::span<const Var> wrt, std::optional<Tensor> seed) {
    if (stale_) throw ValidationError("backward before forward: tape has rebound leaves awaiting forward()");
    if (!out.valid() || out.id >= size()) throw ValidationError("grad: invalid output var");

    const int32_t limit = out.id;
    Tensor seed_val = seed ? std::move(*seed) : Tensor::ones(nodes_[static_cast<size_t>(out.id)].val.shape());
    if (!seed_val.same_shape(nodes_[static_cast<size_t>(out.id)].val))
        throw ValidationError("grad: seed shape " + shape_str(seed_val.shape()) + " != output shape " +
                              shape_str(nodes_[static_cast<size_t>(out.id)].val.shape()));

    // adjoint node id per original node; -1 = no gradient flows there
    std::vector<int32_t> adj(static_cast<size_t>(limit) + 1, -1);
    adj[static_cast<size_t>(out.id)] = leaf(std::move(seed_val), false).id;

    auto acc = [&](int32_t target, Var contribution) {
        if (target < 0) return;
        const Node& tn = nodes_[static_cast<size_t>(target)];
        if (!tn.requires_grad) return;
        int32_t& slot = adj[static_cast<size_t>(target)];
        slot = (slot < 0) ? contribution.id : add(Var{slot}, contribution).id;
    };

    for (int32_t id = limit; id >= 0; --id) {
        const int32_t gid = adj[static_cast<size_t>(id)];
        if (gid < 0) continue;
        if (!nodes_[static_cast<size_t>(id)].requires_grad && id != out.id) continue;
        const Op op = nodes_[static_cast<size_t>(id)].op;
        const int32_t a = nodes_[static_cast<size_t>(id)].in[0];
        const int32_t b = nodes_[static_cast<size_t>(id)].in[1];
        const Var G{gid};
        switch (op) {
            case Op::Leaf:
            case Op::StepPos:
            case Op::RangeMask:
            case Op::RowMaxConst:
                break;
            case Op::Add:
                acc(a, G);
                acc(b, G);
                break;
            case Op::Sub:
                acc(a, G);
                acc(b, neg(G));
                break;
            case Op::Mul:
                acc(a, mul(G, Var{b}));
                acc(b, mul(G, Var{a}));
                break;
            case Op::Neg:
                acc(a, neg(G));
                break;
            case Op::Scale:
                acc(a, scale(G, nodes_[static_cast<size_t>(id)].daux[0]));
                break;
            case Op::AddConst:
                acc(a, G);
                break;
            case Op::Recip: {
                Var o{id};
                acc(a, neg(mul(G, mul(o, o))));
                break;
            }
            case Op::Sqrt: {
                Var o{id};
                acc(a, scale(mul(G, recip(o)), 0.5));
                break;
            }
            case Op::Exp:
                acc(a, mul(G, Var{id}));
                break;
            case Op::Log:
                acc(a, mul(G, recip(Var{a})));
                break;
            case Op::Relu:
                acc(a, mul(G, step_pos(Var{a})));
                break;
            case Op::MatMul:
                acc(a, matmul(G, transpose(Var{b})));
                acc(b, matmul(transpose(Var{a}), G));
                break;
            case Op::Transpose:
                acc(a, transpose(G));
                break;
            case Op::RowSum:
                acc(a, tile_cols(G, nodes_[static_cast<size_t>(a)].val.dim(1)));
                break;
            case Op::TileCols:
                acc(a, row_sum(G));
                break;
            case Op::ColSum:
                acc(a, tile_rows(G, nodes_[static_cast<size_t>(a)].val.dim(0)));
                break;
            case Op::TileRows:
                acc(a, col_sum(G));
                break;
            case Op::SumAll:
                acc(a, fill_like(G, nodes_[static_cast<size_t>(a)].val.shape()));
                break;
            case Op::FillLike:
                acc(a, sum_all(G));
                break;
            case Op::ChannelSum:
                acc(a, channel_bcast(G, nodes_[static_cast<size_t>(a)].val.shape()));
                break;
            case Op::ChannelBcast:
                acc(a, channel_sum(G));
                break;
            case Op::Conv2d: {
                const auto& ia = nodes_[static_cast<size_t>(id)].iaux;
                const int64_t stride = ia[0], pad = ia[1];
                acc(a, conv2d_dx(Var{b}, G, nodes_[static_cast<size_t>(a)].val.shape(), stride, pad));
                acc(b, conv2d_dw(Var{a}, G, nodes_[static_cast<size_t>(b)].val.shape(), stride, pad));
                break;
            }
            case Op::Conv2dDx: {
                // node = conv2d_dx(w=a, gy=b); G is x-shaped
                const auto& ia = nodes_[static_cast<size_t>(id)].iaux;
                const int64_t stride = ia[0], pad = ia[1];
                acc(a, conv2d_dw(G, Var{b}, nodes_[static_cast<size_t>(a)].val.shape(), stride, pad));
                acc(b, conv2d(G, Var{a}, stride, pad));
                break;
            }
            case Op::Conv2dDw: {
                // node = conv2d_dw(x=a, gy=b); G is w-shaped
                const auto& ia = nodes_[static_cast<size_t>(id)].iaux;
                const int64_t stride = ia[0], pad = ia[1];
                acc(a, conv2d_dx(G, Var{b}, nodes_[static_cast<size_t>(a)].val.shape(), stride, pad));
                acc(b, conv2d(Var{a}, G, stride, pad));
                break;
            }
            case Op::MaxPool: {
                std::vector<int64_t> idx(nodes_[static_cast<size_t>(id)].iaux.begin() + 2,
                                         nodes_[static_cast<size_t>(id)].iaux.end());
                acc(a, maxpool_scatter(G, idx, nodes_[static_cast<size_t>(a)].val.shape()));
                break;
            }
            case Op::MaxPoolScatter: {
                std::vector<int64_t> idx(nodes_[static_cast<size_t>(id)].iaux.begin() + 4,
                                         nodes_[static_cast<size_t>(id)].iaux.end());
                acc(a, maxpool_gather(G, idx, nodes_[static_cast<size_t>(a)].val.shape()));
                break;
            }
            case Op::MaxPoolGather: {
                std::vector<int64_t> idx(nodes_[static_cast<size_t>(id)].iaux.begin() + 4,
                                         nodes_[static_cast<size_t>(id)].iaux.end());
                acc(a, maxpool_scatter(G, idx, nodes_[static_cast<size_t>(a)].val.shape()));
                break;
            }
            case Op::Reshape:
                acc(a, reshape(G, nodes_[static_cast<size_t>(a)].val.shape()));
                break;
            case Op::SelectCols: {
                const auto& ia = nodes_[static_cast<size_t>(id)].iaux;
                std::vector<int64_t> labels(ia.begin(), ia.end());
                acc(a, scatter_cols(G, labels, nodes_[static_cast<size_t>(a)].val.dim(1)));
                break;
            }
            case Op::ScatterCols: {
                const auto& ia = nodes_[static_cast<size_t>(id)].iaux;
                std::vector<int64_t> labels(ia.begin() + 1, ia.end());
                acc(a, select_cols(G, labels));
                break;
            }
            case Op::FakeQuant: {
                const double mlo = nodes_[static_cast<size_t>(id)].daux[0];
                const double mhi = nodes_[static_cast<size_t>(id)].daux[1];
                acc(a, mul(G, range_mask(Var{a}, mlo, mhi)));
                break;
            }
        }
    }

    std::vector<Var> result;
    result.reserve(wrt.size());
    for (Var v : wrt) {
        if (!v.valid() || v.id >= size()) throw ValidationError("grad: invalid wrt var");
        const int32_t g = (v.id <= limit) ? adj[static_cast<size_t>(v.id)] : -1;
        if (g >= 0)
            result.push_back(Var{g});
        else
            result.push_back(leaf(Tensor::zeros(nodes_[static_cast<size_t>(v.id)].val.shape()), false));
    }
    return result;
}

// ---- replay ---------------------------------------------------------------

void Tape::rebind_leaf(Var v, Tensor value) {
    Node& n = nodes_[static_cast<size_t>(v.id)];
    if (n.op != Op::Leaf) throw ValidationError("rebind_leaf: node " + std::to_string(v.id) + " is not a leaf");
    if (!value.same_shape(n.val))
        throw ValidationError("rebind_leaf: node " + std::to_string(v.id) + " expects shape " +
                              shape_str(n.val.shape()) + ", got " + shape_str(value.shape()));
    n.val = std::move(value);
    stale_ = true;
}

void Tape::forward() {
    for (int32_t id = 0; id < size(); ++id)
        if (nodes_[static_cast<size_t>(id)].op != Op::Leaf) eval(id);
    stale_ = false;
}

// ---- composite loss -------------------------------------------------------

Var softmax_cross_entropy(Tape& t, Var logits, const std::vector<int64_t>& labels) {
    const Tensor& Z = t.value(logits);
    if (Z.rank() != 2) throw ValidationError("softmax_cross_entropy: logits must be rank-2");
    const int64_t m = Z.dim(0), k = Z.dim(1);
    if (m != static_cast<int64_t>(labels.size()))
        throw ValidationError("softmax_cross_entropy: batch " + std::to_string(m) + " vs " +
                              std::to_string(labels.size()) + " labels");
    // max-shifted logsumexp; the shift is an exact invariance, so treating it
    // as a constant keeps all derivative orders exact
    Var shift = t.row_max_const(logits);
    Var centered = t.sub(logits, t.tile_cols(shift, k));
    Var lse = t.add(t.log(t.row_sum(t.exp(centered))), shift);
    Var picked = t.select_cols(logits, labels);
    Var per_example = t.sub(lse, picked);
    return t.scale(t.sum_all(per_example), 1.0 / static_cast<double>(m));
}

}  // namespace fitq
