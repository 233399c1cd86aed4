#pragma once

// Dense row-major tensors of doubles with a dynamically built reverse-mode
// differentiation graph. Every op that sees an input with requires_grad
// records a node holding its inputs and a backward closure; backward() walks
// the graph from a scalar loss in reverse topological order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nac {

using Shape = std::vector<std::size_t>;

/// 64-byte aligned storage. Eigen picks its vectorized code path from the
/// buffer address, so a fixed alignment keeps results bit-identical between
/// runs.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

enum class OpKind : std::uint8_t {
    Add, Sub, Mul, Div, Neg, Scale, AddScalar,
    Exp, Log, Sqrt, Square, Sigmoid, Gelu,
    SumAll, SumLast, MeanAll,
    MatMul, Linear, BatchMatMul, BatchMatMulNT,
    Reshape, Permute, SliceLast, ConcatLast, IndexSelect, Embedding,
    LayerNorm, SoftmaxLast, Geglu, CrossEntropy,
    LinkProbabilities, ConcreteSample,
};

const char* op_name(OpKind op);

class Tensor;
struct TensorImpl;

/// One recorded operation. `backward` reads the output gradient and adds
/// into the gradients of `inputs`.
struct TapeNode {
    OpKind op;
    std::vector<Tensor> inputs;
    std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
    Shape shape;
    Buffer data;
    Buffer grad;  // empty until first accumulation
    bool requires_grad = false;
    std::shared_ptr<TapeNode> node;  // null for leaves

    Buffer& ensure_grad();
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor adopt(Shape shape, Buffer data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor normal(Shape shape, double stddev, std::mt19937_64& rng, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<double> data() { return impl_->data; }
    std::span<const double> data() const { return impl_->data; }
    /// Copy of the values.
    std::vector<double> values() const { return {impl_->data.begin(), impl_->data.end()}; }

    bool has_grad() const { return !impl_->grad.empty(); }
    /// Gradient view; zeros if nothing has been accumulated yet.
    std::span<const double> grad() const;
    std::span<double> mutable_grad() { return impl_->ensure_grad(); }
    void zero_grad() { impl_->grad.clear(); }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }
    bool is_leaf() const { return impl_->node == nullptr; }
    const TapeNode* node() const { return impl_->node.get(); }

    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    /// Copy of the values with no history.
    Tensor detach() const;

    TensorImpl* impl() const { return impl_.get(); }
    bool same(const Tensor& other) const { return impl_ == other.impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

/// Wraps freshly computed values as an op output. A tape node is attached
/// only when recording is enabled and some input requires grad.
Tensor make_op_result(Shape shape, Buffer data, OpKind op, std::vector<Tensor> inputs,
                      std::function<void(const TensorImpl& out)> backward);

// Elementwise with numpy-style trailing-axis broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
Tensor gelu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor sum_last(const Tensor& x);  // keeps the trailing axis with size 1
Tensor mean(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
/// x[..., in] * W^T + b, W is [out, in], bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor bmm(const Tensor& a, const Tensor& b);     // [B,m,k] x [B,k,n]
Tensor bmm_nt(const Tensor& a, const Tensor& b);  // [B,m,k] x [B,n,k]^T

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor slice_last(const Tensor& x, std::size_t start, std::size_t length);
Tensor concat_last(const Tensor& a, const Tensor& b);
/// Rows of x along axis 0.
Tensor index_select(const Tensor& x, const std::vector<std::size_t>& rows);
/// Rows of `table` [V, d] for each id; result shape is `outer` + {d}.
Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids, Shape outer);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
Tensor softmax_last(const Tensor& x);
Tensor geglu(const Tensor& x);
/// Mean negative log-likelihood of `labels` under row-softmax of logits [B, C].
Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels);

inline constexpr double kLayerNormEps = 1e-5;

/// Accumulates d(loss)/d(t) into every reachable tensor with requires_grad.
/// Leaf gradients add across calls; zero_grad() resets them.
void backward(const Tensor& loss);

/// Max over all entries of |analytic - central difference| /
/// (|analytic| + |cd| + 1e-8), step 1e-5. `f` must be deterministic.
double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                  double step = 1e-5);

}  // namespace nac
