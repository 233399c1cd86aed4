#include "nac/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace nac {

namespace {

thread_local bool t_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

CMapMat cmat(const double* p, std::size_t r, std::size_t c) {
    return CMapMat(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
MapMat mmat(double* p, std::size_t r, std::size_t c) {
    return MapMat(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

bool any_requires_grad(const std::vector<Tensor>& inputs) {
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor& t) { return t.defined() && t.requires_grad(); });
}

void require_rank(const Tensor& t, std::size_t r, const char* what) {
    if (t.rank() != r) {
        throw DimensionError(std::string(what) + ": expected rank " + std::to_string(r) + ", got " +
                             shape_str(t.shape()));
    }
}

// Broadcast bookkeeping for binary elementwise ops.
struct Broadcast {
    Shape out;
    std::vector<std::size_t> a_strides;  // in output index space, 0 on broadcast axes
    std::vector<std::size_t> b_strides;
};

std::vector<std::size_t> contiguous_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

Broadcast make_broadcast(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Broadcast bc;
    bc.out.assign(r, 1);
    bc.a_strides.assign(r, 0);
    bc.b_strides.assign(r, 0);
    const auto sa = contiguous_strides(a);
    const auto sb = contiguous_strides(b);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t ia = i + a.size();
        const std::size_t ib = i + b.size();
        const std::size_t da = ia >= r ? a[ia - r] : 1;
        const std::size_t db = ib >= r ? b[ib - r] : 1;
        if (da != db && da != 1 && db != 1) {
            throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        }
        bc.out[i] = std::max(da, db);
        if (ia >= r && da != 1) bc.a_strides[i] = sa[ia - r];
        if (ib >= r && db != 1) bc.b_strides[i] = sb[ib - r];
    }
    return bc;
}

// Calls fn(out_index, a_index, b_index) for every output element.
template <typename Fn>
void for_each_broadcast(const Broadcast& bc, Fn&& fn) {
    const std::size_t r = bc.out.size();
    if (r == 0) {
        fn(0, 0, 0);
        return;
    }
    const std::size_t inner = bc.out[r - 1];
    const std::size_t sa = bc.a_strides[r - 1];
    const std::size_t sb = bc.b_strides[r - 1];
    const std::size_t total = shape_numel(bc.out);
    if (total == 0) return;
    std::vector<std::size_t> idx(r, 0);
    std::size_t a_off = 0, b_off = 0, o = 0;
    while (o < total) {
        for (std::size_t k = 0; k < inner; ++k) fn(o + k, a_off + k * sa, b_off + k * sb);
        o += inner;
        // advance the odometer over all but the last axis
        for (std::size_t ax = r - 1; ax-- > 0;) {
            ++idx[ax];
            a_off += bc.a_strides[ax];
            b_off += bc.b_strides[ax];
            if (idx[ax] < bc.out[ax]) break;
            a_off -= bc.a_strides[ax] * idx[ax];
            b_off -= bc.b_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

template <typename Fwd, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, OpKind op, Fwd fwd, DA da, DB db) {
    auto bc = std::make_shared<Broadcast>(make_broadcast(a.shape(), b.shape()));
    Buffer out(shape_numel(bc->out));
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(pa[i], pb[i]);
    } else {
        for_each_broadcast(*bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
            out[o] = fwd(pa[ia], pb[ib]);
        });
    }
    return make_op_result(bc->out, std::move(out), op, {a, b}, [a, b, bc, da, db](const TensorImpl& res) {
        const double* g = res.grad.data();
        const double* pa = a.data().data();
        const double* pb = b.data().data();
        const double* py = res.data.data();
        double* ga = a.requires_grad() ? a.impl()->ensure_grad().data() : nullptr;
        double* gb = b.requires_grad() ? b.impl()->ensure_grad().data() : nullptr;
        for_each_broadcast(*bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
            if (ga) ga[ia] += g[o] * da(pa[ia], pb[ib], py[o]);
            if (gb) gb[ib] += g[o] * db(pa[ia], pb[ib], py[o]);
        });
    });
}

template <typename Fwd, typename D>
Tensor unary(const Tensor& x, OpKind op, Fwd fwd, D deriv) {
    Buffer out(x.numel());
    const double* px = x.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(px[i]);
    return make_op_result(x.shape(), std::move(out), op, {x}, [x, deriv](const TensorImpl& res) {
        auto& gx = x.impl()->ensure_grad();
        const double* px = x.data().data();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += res.grad[i] * deriv(px[i], res.data[i]);
    });
}

std::size_t last_dim(const Tensor& x, const char* what) {
    if (x.rank() == 0) throw DimensionError(std::string(what) + ": scalar input");
    return x.shape().back();
}

}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Div: return "div";
        case OpKind::Neg: return "neg";
        case OpKind::Scale: return "scale";
        case OpKind::AddScalar: return "add_scalar";
        case OpKind::Exp: return "exp";
        case OpKind::Log: return "log";
        case OpKind::Sqrt: return "sqrt";
        case OpKind::Square: return "square";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Gelu: return "gelu";
        case OpKind::SumAll: return "sum";
        case OpKind::SumLast: return "sum_last";
        case OpKind::MeanAll: return "mean";
        case OpKind::MatMul: return "matmul";
        case OpKind::Linear: return "linear";
        case OpKind::BatchMatMul: return "bmm";
        case OpKind::BatchMatMulNT: return "bmm_nt";
        case OpKind::Reshape: return "reshape";
        case OpKind::Permute: return "permute";
        case OpKind::SliceLast: return "slice_last";
        case OpKind::ConcatLast: return "concat_last";
        case OpKind::IndexSelect: return "index_select";
        case OpKind::Embedding: return "embedding";
        case OpKind::LayerNorm: return "layer_norm";
        case OpKind::SoftmaxLast: return "softmax_last";
        case OpKind::Geglu: return "geglu";
        case OpKind::CrossEntropy: return "cross_entropy";
        case OpKind::LinkProbabilities: return "link_probabilities";
        case OpKind::ConcreteSample: return "concrete_sample";
    }
    return "?";
}

Buffer& TensorImpl::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return adopt(std::move(shape), Buffer(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    return adopt(std::move(shape), Buffer(data.begin(), data.end()), requires_grad);
}

Tensor Tensor::adopt(Shape shape, Buffer data, bool requires_grad) {
    for (auto d : shape) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("shape " + shape_str(shape) + " does not hold " + std::to_string(data.size()) +
                             " values");
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::normal(Shape shape, double stddev, std::mt19937_64& rng, bool requires_grad) {
    std::normal_distribution<double> dist(0.0, stddev);
    Buffer v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return adopt(std::move(shape), std::move(v), requires_grad);
}

std::span<const double> Tensor::grad() const {
    return impl_->ensure_grad();
}

double Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw DimensionError("index rank mismatch for " + shape_str(shape()));
    std::size_t off = 0;
    std::size_t ax = 0;
    for (auto i : index) {
        if (i >= impl_->shape[ax]) throw DimensionError("index out of range for " + shape_str(shape()));
        off = off * impl_->shape[ax] + i;
        ++ax;
    }
    return impl_->data[off];
}

Tensor Tensor::detach() const { return adopt(shape(), impl_->data, false); }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

Tensor make_op_result(Shape shape, Buffer data, OpKind op, std::vector<Tensor> inputs,
                      std::function<void(const TensorImpl& out)> backward) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    if (t_grad_enabled && any_requires_grad(inputs)) {
        impl->requires_grad = true;
        impl->node = std::make_shared<TapeNode>(TapeNode{op, std::move(inputs), std::move(backward)});
    }
    return Tensor(std::move(impl));
}

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, OpKind::Add, [](double x, double y) { return x + y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, OpKind::Sub, [](double x, double y) { return x - y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, OpKind::Mul, [](double x, double y) { return x * y; },
        [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, OpKind::Div, [](double x, double y) { return x / y; },
        [](double, double y, double) { return 1.0 / y; }, [](double, double y, double z) { return -z / y; });
}

Tensor neg(const Tensor& x) {
    return unary(x, OpKind::Neg, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& x, double factor) {
    return unary(
        x, OpKind::Scale, [factor](double v) { return v * factor; },
        [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
    return unary(
        x, OpKind::AddScalar, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
    return unary(x, OpKind::Exp, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary(x, OpKind::Log, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
    return unary(
        x, OpKind::Sqrt, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& x) {
    return unary(x, OpKind::Square, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x, OpKind::Sigmoid, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return unary(
        x, OpKind::Gelu, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [](double v, double) {
            return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
        });
}

// ----------------------------------------------------------------- reductions

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return make_op_result({}, {s}, OpKind::SumAll, {x}, [x](const TensorImpl& res) {
        auto& gx = x.impl()->ensure_grad();
        for (auto& g : gx) g += res.grad[0];
    });
}

Tensor mean(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    const double n = static_cast<double>(x.numel());
    return make_op_result({}, {s / n}, OpKind::MeanAll, {x}, [x, n](const TensorImpl& res) {
        auto& gx = x.impl()->ensure_grad();
        for (auto& g : gx) g += res.grad[0] / n;
    });
}

Tensor sum_last(const Tensor& x) {
    const std::size_t d = last_dim(x, "sum_last");
    const std::size_t rows = x.numel() / d;
    Shape out_shape = x.shape();
    out_shape.back() = 1;
    Buffer out(rows, 0.0);
    const double* px = x.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += px[r * d + k];
        out[r] = s;
    }
    return make_op_result(out_shape, std::move(out), OpKind::SumLast, {x}, [x, d, rows](const TensorImpl& res) {
        auto& gx = x.impl()->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t k = 0; k < d; ++k) gx[r * d + k] += res.grad[r];
    });
}

// ------------------------------------------------------------------- products

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Buffer out(m * n);
    mmat(out.data(), m, n).noalias() = cmat(a.data().data(), m, k) * cmat(b.data().data(), k, n);
    return make_op_result({m, n}, std::move(out), OpKind::MatMul, {a, b}, [a, b, m, k, n](const TensorImpl& res) {
        auto g = cmat(res.grad.data(), m, n);
        if (a.requires_grad()) {
            mmat(a.impl()->ensure_grad().data(), m, k).noalias() += g * cmat(b.data().data(), k, n).transpose();
        }
        if (b.requires_grad()) {
            mmat(b.impl()->ensure_grad().data(), k, n).noalias() += cmat(a.data().data(), m, k).transpose() * g;
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank(weight, 2, "linear weight");
    const std::size_t in = last_dim(x, "linear");
    if (weight.dim(1) != in) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                             shape_str(weight.shape()));
    }
    const std::size_t out_dim = weight.dim(0);
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
        throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                             shape_str(weight.shape()));
    }
    const std::size_t rows = x.numel() / in;
    Shape out_shape = x.shape();
    out_shape.back() = out_dim;
    Buffer out(rows * out_dim);
    auto y = mmat(out.data(), rows, out_dim);
    y.noalias() = cmat(x.data().data(), rows, in) * cmat(weight.data().data(), out_dim, in).transpose();
    if (bias.defined()) {
        y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), static_cast<Eigen::Index>(out_dim));
    }
    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_op_result(out_shape, std::move(out), OpKind::Linear, std::move(inputs),
                          [x, weight, bias, rows, in, out_dim](const TensorImpl& res) {
                              auto g = cmat(res.grad.data(), rows, out_dim);
                              if (x.requires_grad()) {
                                  mmat(x.impl()->ensure_grad().data(), rows, in).noalias() +=
                                      g * cmat(weight.data().data(), out_dim, in);
                              }
                              if (weight.requires_grad()) {
                                  mmat(weight.impl()->ensure_grad().data(), out_dim, in).noalias() +=
                                      g.transpose() * cmat(x.data().data(), rows, in);
                              }
                              if (bias.defined() && bias.requires_grad()) {
                                  Eigen::Map<Eigen::RowVectorXd>(bias.impl()->ensure_grad().data(),
                                                                 static_cast<Eigen::Index>(out_dim)) +=
                                      g.colwise().sum();
                              }
                          });
}

namespace {

Tensor batched(const Tensor& a, const Tensor& b, bool transpose_b) {
    require_rank(a, 3, "bmm");
    require_rank(b, 3, "bmm");
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
    const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
    const std::size_t kb = transpose_b ? b.dim(2) : b.dim(1);
    if (b.dim(0) != batch || kb != k) {
        throw DimensionError("bmm: incompatible operands " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const std::size_t bsz = b.dim(1) * b.dim(2);
    Buffer out(batch * m * n);
    for (std::size_t i = 0; i < batch; ++i) {
        auto am = cmat(a.data().data() + i * m * k, m, k);
        auto y = mmat(out.data() + i * m * n, m, n);
        if (transpose_b) {
            y.noalias() = am * cmat(b.data().data() + i * bsz, n, k).transpose();
        } else {
            y.noalias() = am * cmat(b.data().data() + i * bsz, k, n);
        }
    }
    const OpKind op = transpose_b ? OpKind::BatchMatMulNT : OpKind::BatchMatMul;
    return make_op_result({batch, m, n}, std::move(out), op, {a, b},
                          [a, b, batch, m, k, n, bsz, transpose_b](const TensorImpl& res) {
                              double* ga = a.requires_grad() ? a.impl()->ensure_grad().data() : nullptr;
                              double* gb = b.requires_grad() ? b.impl()->ensure_grad().data() : nullptr;
                              for (std::size_t i = 0; i < batch; ++i) {
                                  auto g = cmat(res.grad.data() + i * m * n, m, n);
                                  const double* pb = b.data().data() + i * bsz;
                                  auto am = cmat(a.data().data() + i * m * k, m, k);
                                  if (transpose_b) {
                                      auto bm = cmat(pb, n, k);
                                      if (ga) mmat(ga + i * m * k, m, k).noalias() += g * bm;
                                      if (gb) mmat(gb + i * bsz, n, k).noalias() += g.transpose() * am;
                                  } else {
                                      auto bm = cmat(pb, k, n);
                                      if (ga) mmat(ga + i * m * k, m, k).noalias() += g * bm.transpose();
                                      if (gb) mmat(gb + i * bsz, k, n).noalias() += am.transpose() * g;
                                  }
                              }
                          });
}

}  // namespace

Tensor bmm(const Tensor& a, const Tensor& b) { return batched(a, b, false); }
Tensor bmm_nt(const Tensor& a, const Tensor& b) { return batched(a, b, true); }

// -------------------------------------------------------------------- layout

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    return make_op_result(std::move(shape), x.impl()->data, OpKind::Reshape, {x}, [x](const TensorImpl& res) {
        auto& gx = x.impl()->ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += res.grad[i];
    });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
    const std::size_t r = x.rank();
    if (axes.size() != r) throw DimensionError("permute: axis count does not match " + shape_str(x.shape()));
    std::vector<bool> seen(r, false);
    for (auto ax : axes) {
        if (ax >= r || seen[ax]) throw DimensionError("permute: invalid axis order");
        seen[ax] = true;
    }
    const auto in_strides = contiguous_strides(x.shape());
    Shape out_shape(r);
    std::vector<std::size_t> src_strides(r);
    for (std::size_t i = 0; i < r; ++i) {
        out_shape[i] = x.dim(axes[i]);
        src_strides[i] = in_strides[axes[i]];
    }
    // gather map: output flat index -> input flat index
    auto map = std::make_shared<std::vector<std::size_t>>(x.numel());
    {
        std::vector<std::size_t> idx(r, 0);
        std::size_t src = 0;
        for (std::size_t o = 0; o < map->size(); ++o) {
            (*map)[o] = src;
            for (std::size_t ax = r; ax-- > 0;) {
                ++idx[ax];
                src += src_strides[ax];
                if (idx[ax] < out_shape[ax]) break;
                src -= src_strides[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
    }
    Buffer out(x.numel());
    const double* px = x.data().data();
    for (std::size_t o = 0; o < out.size(); ++o) out[o] = px[(*map)[o]];
    return make_op_result(out_shape, std::move(out), OpKind::Permute, {x}, [x, map](const TensorImpl& res) {
        auto& gx = x.impl()->ensure_grad();
        for (std::size_t o = 0; o < map->size(); ++o) gx[(*map)[o]] += res.grad[o];
    });
}

Tensor slice_last(const Tensor& x, std::size_t start, std::size_t length) {
    const std::size_t d = last_dim(x, "slice_last");
    if (length == 0 || start + length > d) {
        throw DimensionError("slice_last: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                             ") outside " + shape_str(x.shape()));
    }
    const std::size_t rows = x.numel() / d;
    Shape out_shape = x.shape();
    out_shape.back() = length;
    Buffer out(rows * length);
    const double* px = x.data().data();
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(px + r * d + start, length, out.data() + r * length);
    return make_op_result(out_shape, std::move(out), OpKind::SliceLast, {x},
                          [x, d, rows, start, length](const TensorImpl& res) {
                              auto& gx = x.impl()->ensure_grad();
                              for (std::size_t r = 0; r < rows; ++r)
                                  for (std::size_t k = 0; k < length; ++k)
                                      gx[r * d + start + k] += res.grad[r * length + k];
                          });
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
    const std::size_t da = last_dim(a, "concat_last");
    const std::size_t db = last_dim(b, "concat_last");
    Shape lead_a(a.shape().begin(), a.shape().end() - 1);
    Shape lead_b(b.shape().begin(), b.shape().end() - 1);
    if (lead_a != lead_b) {
        throw DimensionError("concat_last: leading shapes differ, " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const std::size_t rows = a.numel() / da;
    const std::size_t d = da + db;
    Shape out_shape = a.shape();
    out_shape.back() = d;
    Buffer out(rows * d);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(a.data().data() + r * da, da, out.data() + r * d);
        std::copy_n(b.data().data() + r * db, db, out.data() + r * d + da);
    }
    return make_op_result(out_shape, std::move(out), OpKind::ConcatLast, {a, b},
                          [a, b, rows, da, db, d](const TensorImpl& res) {
                              if (a.requires_grad()) {
                                  auto& ga = a.impl()->ensure_grad();
                                  for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t k = 0; k < da; ++k) ga[r * da + k] += res.grad[r * d + k];
                              }
                              if (b.requires_grad()) {
                                  auto& gb = b.impl()->ensure_grad();
                                  for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t k = 0; k < db; ++k)
                                          gb[r * db + k] += res.grad[r * d + da + k];
                              }
                          });
}

Tensor index_select(const Tensor& x, const std::vector<std::size_t>& rows) {
    if (x.rank() == 0) throw DimensionError("index_select: scalar input");
    if (rows.empty()) throw DimensionError("index_select: empty row list");
    const std::size_t n = x.dim(0);
    const std::size_t width = x.numel() / n;
    for (auto r : rows) {
        if (r >= n) throw DimensionError("index_select: row " + std::to_string(r) + " outside " + shape_str(x.shape()));
    }
    Shape out_shape = x.shape();
    out_shape[0] = rows.size();
    Buffer out(rows.size() * width);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(x.data().data() + rows[i] * width, width, out.data() + i * width);
    return make_op_result(out_shape, std::move(out), OpKind::IndexSelect, {x},
                          [x, rows, width](const TensorImpl& res) {
                              auto& gx = x.impl()->ensure_grad();
                              for (std::size_t i = 0; i < rows.size(); ++i)
                                  for (std::size_t k = 0; k < width; ++k)
                                      gx[rows[i] * width + k] += res.grad[i * width + k];
                          });
}

Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids, Shape outer) {
    require_rank(table, 2, "embedding table");
    if (shape_numel(outer) != ids.size()) {
        throw DimensionError("embedding: " + std::to_string(ids.size()) + " ids for outer shape " + shape_str(outer));
    }
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    for (auto id : ids) {
        if (id >= vocab) throw DimensionError("embedding: id " + std::to_string(id) + " outside vocabulary");
    }
    Shape out_shape = std::move(outer);
    out_shape.push_back(d);
    Buffer out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::copy_n(table.data().data() + ids[i] * d, d, out.data() + i * d);
    return make_op_result(out_shape, std::move(out), OpKind::Embedding, {table},
                          [table, ids, d](const TensorImpl& res) {
                              auto& gt = table.impl()->ensure_grad();
                              for (std::size_t i = 0; i < ids.size(); ++i)
                                  for (std::size_t k = 0; k < d; ++k) gt[ids[i] * d + k] += res.grad[i * d + k];
                          });
}

// -------------------------------------------------------------- fused kernels

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    const std::size_t d = last_dim(x, "layer_norm");
    if (gain.numel() != d || bias.numel() != d) {
        throw DimensionError("layer_norm: affine parameters must have " + std::to_string(d) + " entries");
    }
    const std::size_t rows = x.numel() / d;
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    Buffer out(x.numel());
    const double* px = x.data().data();
    const double* pg = gain.data().data();
    const double* pb = bias.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = px + r * d;
        double mu = 0.0;
        for (std::size_t k = 0; k < d; ++k) mu += row[k];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t k = 0; k < d; ++k) var += (row[k] - mu) * (row[k] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + kLayerNormEps);
        (*inv_std)[r] = is;
        for (std::size_t k = 0; k < d; ++k) {
            const double h = (row[k] - mu) * is;
            (*xhat)[r * d + k] = h;
            out[r * d + k] = h * pg[k] + pb[k];
        }
    }
    return make_op_result(x.shape(), std::move(out), OpKind::LayerNorm, {x, gain, bias},
                          [x, gain, bias, xhat, inv_std, rows, d](const TensorImpl& res) {
                              const double* g = res.grad.data();
                              const double* pg = gain.data().data();
                              double* gx = x.requires_grad() ? x.impl()->ensure_grad().data() : nullptr;
                              double* gg = gain.requires_grad() ? gain.impl()->ensure_grad().data() : nullptr;
                              double* gb = bias.requires_grad() ? bias.impl()->ensure_grad().data() : nullptr;
                              const double inv_d = 1.0 / static_cast<double>(d);
                              std::vector<double> dh(d);
                              for (std::size_t r = 0; r < rows; ++r) {
                                  const double* h = xhat->data() + r * d;
                                  const double* gr = g + r * d;
                                  double mean_dh = 0.0, mean_dh_h = 0.0;
                                  for (std::size_t k = 0; k < d; ++k) {
                                      if (gg) gg[k] += gr[k] * h[k];
                                      if (gb) gb[k] += gr[k];
                                      dh[k] = gr[k] * pg[k];
                                      mean_dh += dh[k];
                                      mean_dh_h += dh[k] * h[k];
                                  }
                                  if (!gx) continue;
                                  mean_dh *= inv_d;
                                  mean_dh_h *= inv_d;
                                  const double is = (*inv_std)[r];
                                  for (std::size_t k = 0; k < d; ++k)
                                      gx[r * d + k] += is * (dh[k] - mean_dh - h[k] * mean_dh_h);
                              }
                          });
}

Tensor softmax_last(const Tensor& x) {
    const std::size_t d = last_dim(x, "softmax_last");
    const std::size_t rows = x.numel() / d;
    Buffer out(x.numel());
    const double* px = x.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = px + r * d;
        double* y = out.data() + r * d;
        const double mx = *std::max_element(row, row + d);
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            y[k] = std::exp(row[k] - mx);
            s += y[k];
        }
        const double inv = 1.0 / s;
        for (std::size_t k = 0; k < d; ++k) y[k] *= inv;
    }
    return make_op_result(x.shape(), std::move(out), OpKind::SoftmaxLast, {x}, [x, rows, d](const TensorImpl& res) {
        auto& gx = x.impl()->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = res.data.data() + r * d;
            const double* g = res.grad.data() + r * d;
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) dot += g[k] * y[k];
            for (std::size_t k = 0; k < d; ++k) gx[r * d + k] += y[k] * (g[k] - dot);
        }
    });
}

Tensor geglu(const Tensor& x) {
    const std::size_t d2 = last_dim(x, "geglu");
    if (d2 % 2 != 0) throw DimensionError("geglu: last dimension must be even, got " + shape_str(x.shape()));
    const std::size_t h = d2 / 2;
    const std::size_t rows = x.numel() / d2;
    Shape out_shape = x.shape();
    out_shape.back() = h;
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    Buffer out(rows * h);
    const double* px = x.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < h; ++k) {
            const double a = px[r * d2 + k];
            const double g = px[r * d2 + h + k];
            out[r * h + k] = a * 0.5 * g * (1.0 + std::erf(g * inv_sqrt2));
        }
    }
    return make_op_result(out_shape, std::move(out), OpKind::Geglu, {x}, [x, rows, h, d2](const TensorImpl& res) {
        auto& gx = x.impl()->ensure_grad();
        const double* px = x.data().data();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t k = 0; k < h; ++k) {
                const double a = px[r * d2 + k];
                const double g = px[r * d2 + h + k];
                const double cdf = 0.5 * (1.0 + std::erf(g * inv_sqrt2));
                const double up = res.grad[r * h + k];
                gx[r * d2 + k] += up * g * cdf;
                gx[r * d2 + h + k] += up * a * (cdf + g * inv_sqrt2pi * std::exp(-0.5 * g * g));
            }
        }
    });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
    require_rank(logits, 2, "cross_entropy");
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    if (labels.size() != batch) {
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             shape_str(logits.shape()));
    }
    for (auto y : labels) {
        if (y >= classes) throw ContractError("cross_entropy: label " + std::to_string(y) + " out of range");
    }
    auto probs = std::make_shared<std::vector<double>>(logits.numel());
    double loss = 0.0;
    const double* px = logits.data().data();
    for (std::size_t b = 0; b < batch; ++b) {
        const double* row = px + b * classes;
        const double mx = *std::max_element(row, row + classes);
        double s = 0.0;
        for (std::size_t c = 0; c < classes; ++c) s += std::exp(row[c] - mx);
        const double lse = mx + std::log(s);
        loss += lse - row[labels[b]];
        for (std::size_t c = 0; c < classes; ++c) (*probs)[b * classes + c] = std::exp(row[c] - lse);
    }
    loss /= static_cast<double>(batch);
    return make_op_result({}, {loss}, OpKind::CrossEntropy, {logits},
                          [logits, labels, probs, batch, classes](const TensorImpl& res) {
                              auto& gx = logits.impl()->ensure_grad();
                              const double scale = res.grad[0] / static_cast<double>(batch);
                              for (std::size_t b = 0; b < batch; ++b) {
                                  for (std::size_t c = 0; c < classes; ++c) {
                                      const double onehot = (c == labels[b]) ? 1.0 : 0.0;
                                      gx[b * classes + c] += scale * ((*probs)[b * classes + c] - onehot);
                                  }
                              }
                          });
}

// ------------------------------------------------------------------ backward

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward: loss must be a scalar tensor, got " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    }
    if (!loss.requires_grad()) throw ContractError("backward: loss does not depend on any parameter");

    // Iterative post-order DFS gives a topological order of interior nodes.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack{{loss.impl(), 0}};
    visited.insert(loss.impl());
    while (!stack.empty()) {
        auto& [t, next] = stack.back();
        if (t->node && next < t->node->inputs.size()) {
            TensorImpl* child = t->node->inputs[next++].impl();
            if (child && child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
            continue;
        }
        if (t->node) order.push_back(t);
        stack.pop_back();
    }
    // Interior gradients are transient; reset them so a repeated backward
    // only accumulates into leaves.
    for (auto* t : order) t->grad.assign(t->data.size(), 0.0);
    loss.impl()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        (*it)->node->backward(**it);
    }
}

double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params, double step) {
    for (auto p : params) p.zero_grad();
    backward(f());
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

    NoGradGuard no_grad;
    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        auto values = p.data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + step;
            const double up = f().item();
            values[i] = saved - step;
            const double down = f().item();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[pi][i];
            const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-8);
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace nac
