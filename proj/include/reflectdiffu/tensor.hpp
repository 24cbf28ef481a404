#pragma once

// Reverse-mode automatic differentiation over small dense tensors.
//
// A Tensor is a shared handle to a graph node. Operations on tensors that
// require gradients record their parents and a backward closure; calling
// backward() on a scalar result walks the graph once in reverse topological
// order. Tensors are rank 1 ([n]) or rank 2 ([rows, cols]); row-wise
// operations treat a rank-1 tensor as a single row.

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rd {

using Shape = std::vector<std::size_t>;

enum class Precision { float64, float32 };

class TensorError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// NaN or infinity reaching an op that cannot accept it (overflowed activations).
class NonFiniteValue : public TensorError {
public:
    using TensorError::TensorError;
};

namespace detail {
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};
}  // namespace detail

/// Disables graph construction on the current thread while alive.
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

/// Storage precision for op results on the current thread. In float32 mode
/// every op output is rounded to single precision; gradients stay 64-bit.
void set_precision(Precision p);
Precision precision();

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor vector(std::vector<double> data, bool requires_grad = false);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                         bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node().shape; }
    std::size_t rank() const { return node().shape.size(); }
    std::size_t size() const { return node().data.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const { return node().data; }
    /// Direct write access. Only valid on leaves (parameters, inputs).
    std::span<double> mutable_data();
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    bool has_grad() const { return !node().grad.empty(); }

    double item() const;
    double at(std::size_t i) const { return node().data.at(i); }
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const { return node().requires_grad; }
    void set_requires_grad(bool value);
    bool is_leaf() const { return node().parents.empty(); }

    void zero_grad();
    /// Accumulates d(this)/d(leaf) into every reachable leaf that requires
    /// gradients. `this` must hold exactly one element.
    void backward() const;

    /// Same values, no graph history.
    Tensor detach() const;
    /// Deep copy of values (and requires_grad flag) into a new leaf.
    Tensor clone_leaf() const;

    const detail::Node* id() const { return node_.get(); }

    // Used by op implementations.
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

private:
    detail::Node& node() const {
        if (!node_) throw TensorError("use of undefined tensor");
        return *node_;
    }
    std::shared_ptr<detail::Node> node_;
};

std::string shape_string(const Shape& shape);

// ---------------------------------------------------------------------------
// Elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor neg(const Tensor& a);
/// Multiplies every element of `a` by the single element of `s`.
Tensor scale_by(const Tensor& a, const Tensor& s);
/// Adds the single element of `s` to every element of `a`.
Tensor add_scalar_tensor(const Tensor& a, const Tensor& s);
/// m[r, c] + v[c] for every row r.
Tensor add_rowwise(const Tensor& m, const Tensor& v);
/// m[r, c] * v[r] for every column c.
Tensor mul_colwise(const Tensor& m, const Tensor& v);

Tensor exp(const Tensor& a);
/// Natural log. Inputs must be positive.
Tensor log(const Tensor& a);
/// log(max(a, floor)); gradient is zero where the floor is active.
Tensor log_clamped(const Tensor& a, double floor);
Tensor sqrt(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor silu(const Tensor& a);

/// User-defined elementwise op: forward f, derivative df evaluated at the input.
Tensor custom_unary(const Tensor& a, std::function<double(double)> f,
                    std::function<double(double)> df);

/// Op with a caller-supplied vector-Jacobian product. `vjp` receives the
/// output gradient and, per input, a span to accumulate into (empty when that
/// input needs no gradient).
using VjpFn = std::function<void(std::span<const double> grad_out, std::vector<std::span<double>>& grads)>;
Tensor custom_op(const std::vector<Tensor>& inputs, Shape shape, std::vector<double> data, VjpFn vjp);

// ---------------------------------------------------------------------------
// Reductions
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);
/// Mean over rows -> [cols]. When `row_mask` is given only rows flagged true
/// contribute; at least one must be.
Tensor mean_rows(const Tensor& m, const std::vector<bool>* row_mask = nullptr);

// ---------------------------------------------------------------------------
// Linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// x W^T + b with W stored as [out, in]. `bias` may be undefined. A rank-1 x
/// yields a rank-1 result.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// ---------------------------------------------------------------------------
// Normalization / probability
/// Numerically stable softmax along `axis` (0 or 1 for matrices, 0 for vectors).
Tensor softmax(const Tensor& x, int axis = -1);
/// Row softmax where mask[r * cols + c] == false forces zero weight.
/// A row with no unmasked entry is an error.
Tensor masked_softmax(const Tensor& x, const std::vector<bool>& mask);
Tensor log_softmax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// ---------------------------------------------------------------------------
// Shape and indexing
Tensor reshape(const Tensor& a, Shape shape);
Tensor row(const Tensor& m, std::size_t r);
Tensor slice_rows(const Tensor& m, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& m, std::size_t begin, std::size_t end);
/// Stacks rank-1 vectors and matrices (all with equal column count) vertically.
Tensor concat_rows(const std::vector<Tensor>& parts);
/// Concatenates along the last axis. All parts share the same row count.
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Rows of `table` selected by `ids` -> [ids.size(), cols].
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);
/// Single element of `a` as a 1-element tensor.
Tensor pick(const Tensor& a, std::size_t index);
/// out[r] = m[r, idx[r]].
Tensor pick_rows(const Tensor& m, std::span<const std::size_t> idx);
/// out[r, ids[c]] += m[r, c]; output has `width` columns.
Tensor scatter_cols(const Tensor& m, std::span<const std::size_t> ids, std::size_t width);
/// Zero-pads the last axis up to `width`.
Tensor pad_cols(const Tensor& m, std::size_t width);

class Rng;
/// Inverted dropout. Identity when p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng);

// ---------------------------------------------------------------------------
struct AttentionResult {
    Tensor output;   // [q, dv]
    Tensor weights;  // [q, k], row-stochastic
};

/// softmax(Q K^T / sqrt(d)) V. `mask`, when present, is row-major [q, k] with
/// true meaning "may attend".
AttentionResult scaled_dot_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                                     const std::optional<std::vector<bool>>& mask = std::nullopt);

}  // namespace rd
