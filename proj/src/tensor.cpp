#include "reflectdiffu/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "reflectdiffu/rng.hpp"

namespace rd {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

thread_local bool g_grad_enabled = true;
thread_local Precision g_precision = Precision::float64;

std::size_t rows_of(const Shape& s) { return s.size() == 1 ? 1 : s[0]; }
std::size_t cols_of(const Shape& s) { return s.size() == 1 ? s[0] : s[1]; }

std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

void check_rank(const Shape& s, const char* op) {
    if (s.empty() || s.size() > 2)
        throw TensorError(std::string(op) + ": only rank 1 and rank 2 tensors are supported, got " +
                          shape_string(s));
}

Tensor make_result(Shape shape, std::vector<double> data, std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    if (g_precision == Precision::float32) {
        for (double& v : node->data) v = static_cast<double>(static_cast<float>(v));
    }
    bool needs_grad = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) needs_grad = needs_grad || p->requires_grad;
    }
    if (needs_grad) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward);
    }
    return Tensor(std::move(node));
}

// Parent gradient buffer if it participates, else nullptr.
double* grad_of(const NodePtr& p) {
    if (!p->requires_grad) return nullptr;
    p->ensure_grad();
    return p->grad.data();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw TensorError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                          shape_string(b.shape()));
}

void require_finite(std::span<const double> data, const char* op) {
    for (double v : data) {
        if (!std::isfinite(v)) throw NonFiniteValue(std::string(op) + ": non-finite input value");
    }
}

template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df_from_xy) {
    std::vector<double> out(a.size());
    auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
    return make_result(a.shape(), std::move(out), {a.node_ptr()}, [df_from_xy](Node& self) {
        const auto& p = self.parents[0];
        double* g = grad_of(p);
        if (!g) return;
        for (std::size_t i = 0; i < self.data.size(); ++i)
            g[i] += self.grad[i] * df_from_xy(p->data[i], self.data[i]);
    });
}

}  // namespace

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
    os << ']';
    return os.str();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void set_precision(Precision p) { g_precision = p; }
Precision precision() { return g_precision; }

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    check_rank(shape, "Tensor::full");
    std::vector<double> data(shape_size(shape), value);
    return from(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    check_rank(shape, "Tensor::from");
    if (shape_size(shape) != data.size())
        throw TensorError("Tensor::from: shape " + shape_string(shape) + " does not match " +
                          std::to_string(data.size()) + " values");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::vector(std::vector<double> data, bool requires_grad) {
    const std::size_t n = data.size();
    return from({n}, std::move(data), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data, bool requires_grad) {
    return from({rows, cols}, std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

std::size_t Tensor::rows() const { return rows_of(shape()); }
std::size_t Tensor::cols() const { return cols_of(shape()); }

std::span<double> Tensor::mutable_data() {
    if (!is_leaf()) throw TensorError("mutable_data: tensor is not a leaf");
    return node().data;
}

std::span<const double> Tensor::grad() const {
    auto& n = node();
    if (n.grad.empty()) n.ensure_grad();
    return n.grad;
}

std::span<double> Tensor::mutable_grad() {
    auto& n = node();
    n.ensure_grad();
    return n.grad;
}

double Tensor::item() const {
    if (size() != 1) throw TensorError("item: tensor has " + std::to_string(size()) + " elements");
    return node().data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    if (r >= rows() || c >= cols()) throw TensorError("at: index out of range");
    return node().data[r * cols() + c];
}

void Tensor::set_requires_grad(bool value) {
    if (!is_leaf()) throw TensorError("set_requires_grad: tensor is not a leaf");
    node().requires_grad = value;
}

void Tensor::zero_grad() {
    auto& n = node();
    if (!n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

void Tensor::backward() const {
    const auto& root = node_ptr();
    if (size() != 1)
        throw TensorError("backward: loss must be a scalar, got shape " + shape_string(shape()));
    if (!root->requires_grad) return;

    // Iterative post-order DFS; each node enters `order` exactly once.
    std::vector<Node*> order;
    std::unordered_set<const Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (Node* n : order) {
        if (!n->parents.empty()) n->grad.assign(n->data.size(), 0.0);
    }
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

Tensor Tensor::detach() const {
    auto out = std::make_shared<Node>();
    out->shape = shape();
    out->data = node().data;
    return Tensor(std::move(out));
}

Tensor Tensor::clone_leaf() const {
    auto out = std::make_shared<Node>();
    out->shape = shape();
    out->data = node().data;
    out->requires_grad = requires_grad();
    return Tensor(std::move(out));
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return make_result(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [](Node& self) {
        for (int k = 0; k < 2; ++k) {
            if (double* g = grad_of(self.parents[k]))
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return make_result(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [](Node& self) {
        if (double* g = grad_of(self.parents[0]))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        if (double* g = grad_of(self.parents[1]))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return make_result(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [](Node& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        if (double* g = grad_of(pa))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pb->data[i];
        if (double* g = grad_of(pb))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pa->data[i];
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "div");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
    return make_result(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [](Node& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        if (double* g = grad_of(pa))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / pb->data[i];
        if (double* g = grad_of(pb))
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                g[i] -= self.grad[i] * self.data[i] / pb->data[i];
    });
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
    return make_result(a.shape(), std::move(out), {a.node_ptr()}, [factor](Node& self) {
        if (double* g = grad_of(self.parents[0]))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
    });
}

Tensor add_scalar(const Tensor& a, double value) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + value;
    return make_result(a.shape(), std::move(out), {a.node_ptr()}, [](Node& self) {
        if (double* g = grad_of(self.parents[0]))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale_by(const Tensor& a, const Tensor& s) {
    if (s.size() != 1) throw TensorError("scale_by: factor must have one element");
    const double f = s.data()[0];
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * f;
    return make_result(a.shape(), std::move(out), {a.node_ptr(), s.node_ptr()}, [](Node& self) {
        const auto& pa = self.parents[0];
        const auto& ps = self.parents[1];
        if (double* g = grad_of(pa))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * ps->data[0];
        if (double* g = grad_of(ps)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * pa->data[i];
            g[0] += acc;
        }
    });
}

Tensor add_scalar_tensor(const Tensor& a, const Tensor& s) {
    if (s.size() != 1) throw TensorError("add_scalar_tensor: addend must have one element");
    const double v = s.data()[0];
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + v;
    return make_result(a.shape(), std::move(out), {a.node_ptr(), s.node_ptr()}, [](Node& self) {
        if (double* g = grad_of(self.parents[0]))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        if (double* g = grad_of(self.parents[1])) {
            double acc = 0.0;
            for (double d : self.grad) acc += d;
            g[0] += acc;
        }
    });
}

Tensor add_rowwise(const Tensor& m, const Tensor& v) {
    const std::size_t r = m.rows(), c = m.cols();
    if (v.size() != c)
        throw TensorError("add_rowwise: vector of " + std::to_string(v.size()) + " vs " +
                          std::to_string(c) + " columns");
    std::vector<double> out(m.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.data()[i * c + j] + v.data()[j];
    return make_result(m.shape(), std::move(out), {m.node_ptr(), v.node_ptr()}, [r, c](Node& self) {
        if (double* g = grad_of(self.parents[0]))
            for (std::size_t i = 0; i < r * c; ++i) g[i] += self.grad[i];
        if (double* g = grad_of(self.parents[1]))
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    });
}

Tensor mul_colwise(const Tensor& m, const Tensor& v) {
    const std::size_t r = m.rows(), c = m.cols();
    if (v.size() != r)
        throw TensorError("mul_colwise: vector of " + std::to_string(v.size()) + " vs " +
                          std::to_string(r) + " rows");
    std::vector<double> out(m.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.data()[i * c + j] * v.data()[i];
    return make_result(m.shape(), std::move(out), {m.node_ptr(), v.node_ptr()}, [r, c](Node& self) {
        const auto& pm = self.parents[0];
        const auto& pv = self.parents[1];
        if (double* g = grad_of(pm))
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] * pv->data[i];
        if (double* g = grad_of(pv))
            for (std::size_t i = 0; i < r; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < c; ++j) acc += self.grad[i * c + j] * pm->data[i * c + j];
                g[i] += acc;
            }
    });
}

Tensor exp(const Tensor& a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    for (double v : a.data())
        if (!(v > 0.0)) throw TensorError("log: non-positive input");
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor log_clamped(const Tensor& a, double floor) {
    return unary(
        a, [floor](double x) { return std::log(std::max(x, floor)); },
        [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

Tensor sqrt(const Tensor& a) {
    for (double v : a.data())
        if (v < 0.0) throw TensorError("sqrt: negative input");
    return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor tanh(const Tensor& a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

namespace {
double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& a) {
    return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
    return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
    constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
    return unary(
        a,
        [](double x) { return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x))); },
        [](double x, double) {
            const double u = k * (x + 0.044715 * x * x * x);
            const double t = std::tanh(u);
            const double du = k * (1.0 + 3.0 * 0.044715 * x * x);
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        });
}

Tensor silu(const Tensor& a) {
    return unary(
        a, [](double x) { return x * stable_sigmoid(x); },
        [](double x, double) {
            const double s = stable_sigmoid(x);
            return s * (1.0 + x * (1.0 - s));
        });
}

Tensor custom_unary(const Tensor& a, std::function<double(double)> f, std::function<double(double)> df) {
    return unary(a, f, [df](double x, double) { return df(x); });
}

Tensor custom_op(const std::vector<Tensor>& inputs, Shape shape, std::vector<double> data, VjpFn vjp) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    if (n != data.size()) throw TensorError("custom_op: data size does not match shape");
    std::vector<NodePtr> parents;
    for (const auto& t : inputs) parents.push_back(t.node_ptr());
    return make_result(std::move(shape), std::move(data), std::move(parents), [vjp](Node& self) {
        std::vector<std::span<double>> grads;
        for (const auto& p : self.parents) {
            double* g = grad_of(p);
            grads.push_back(g ? std::span<double>(g, p->data.size()) : std::span<double>());
        }
        vjp(self.grad, grads);
    });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    return make_result({1}, {acc}, {a.node_ptr()}, [](Node& self) {
        if (double* g = grad_of(self.parents[0]))
            for (std::size_t i = 0; i < self.parents[0]->data.size(); ++i) g[i] += self.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw TensorError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor dot(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw TensorError("dot: size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i] * b.data()[i];
    return make_result({1}, {acc}, {a.node_ptr(), b.node_ptr()}, [](Node& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        const double d = self.grad[0];
        if (double* g = grad_of(pa))
            for (std::size_t i = 0; i < pa->data.size(); ++i) g[i] += d * pb->data[i];
        if (double* g = grad_of(pb))
            for (std::size_t i = 0; i < pb->data.size(); ++i) g[i] += d * pa->data[i];
    });
}

Tensor mean_rows(const Tensor& m, const std::vector<bool>* row_mask) {
    const std::size_t r = m.rows(), c = m.cols();
    std::vector<double> weight(r, 1.0);
    std::size_t count = r;
    if (row_mask) {
        if (row_mask->size() != r) throw TensorError("mean_rows: mask size mismatch");
        count = 0;
        for (std::size_t i = 0; i < r; ++i) {
            weight[i] = (*row_mask)[i] ? 1.0 : 0.0;
            count += (*row_mask)[i] ? 1 : 0;
        }
    }
    if (count == 0) throw TensorError("mean_rows: no rows to average");
    for (double& w : weight) w /= static_cast<double>(count);
    std::vector<double> out(c, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
        if (weight[i] == 0.0) continue;
        for (std::size_t j = 0; j < c; ++j) out[j] += weight[i] * m.data()[i * c + j];
    }
    return make_result({c}, std::move(out), {m.node_ptr()}, [r, c, weight](Node& self) {
        if (double* g = grad_of(self.parents[0]))
            for (std::size_t i = 0; i < r; ++i) {
                if (weight[i] == 0.0) continue;
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += weight[i] * self.grad[j];
            }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_rank(a.shape(), "matmul");
    if (b.rank() != 2) throw TensorError("matmul: right operand must be a matrix");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw TensorError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                          shape_string(b.shape()));
    std::vector<double> out(m * n, 0.0);
    const double* A = a.data().data();
    const double* B = b.data().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            if (av == 0.0) continue;
            const double* brow = B + p * n;
            double* orow = out.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    Shape shape = a.rank() == 1 ? Shape{n} : Shape{m, n};
    return make_result(std::move(shape), std::move(out), {a.node_ptr(), b.node_ptr()}, [m, k, n](Node& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        const double* G = self.grad.data();
        if (double* ga = grad_of(pa)) {
            const double* B = pb->data.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
                    ga[i * k + p] += acc;
                }
        }
        if (double* gb = grad_of(pb)) {
            const double* A = pa->data.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = A[i * k + p];
                    if (av == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * G[i * n + j];
                }
        }
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    check_rank(a.shape(), "matmul_nt");
    check_rank(b.shape(), "matmul_nt");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k)
        throw TensorError("matmul_nt: inner dimensions differ " + shape_string(a.shape()) + " x " +
                          shape_string(b.shape()) + "^T");
    std::vector<double> out(m * n);
    const double* A = a.data().data();
    const double* B = b.data().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
            out[i * n + j] = acc;
        }
    return make_result({m, n}, std::move(out), {a.node_ptr(), b.node_ptr()}, [m, k, n](Node& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        const double* G = self.grad.data();
        if (double* ga = grad_of(pa)) {
            const double* B = pb->data.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double gv = G[i * n + j];
                    if (gv == 0.0) continue;
                    for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gv * B[j * k + p];
                }
        }
        if (double* gb = grad_of(pb)) {
            const double* A = pa->data.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double gv = G[i * n + j];
                    if (gv == 0.0) continue;
                    for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gv * A[i * k + p];
                }
        }
    });
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw TensorError("transpose: matrix required");
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.data()[i * c + j];
    return make_result({c, r}, std::move(out), {a.node_ptr()}, [r, c](Node& self) {
        if (double* g = grad_of(self.parents[0]))
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    check_rank(x.shape(), "linear");
    if (weight.rank() != 2) throw TensorError("linear: weight must be a matrix");
    const std::size_t m = x.rows(), in = x.cols(), out_dim = weight.rows();
    if (weight.cols() != in)
        throw TensorError("linear: input width " + std::to_string(in) + " vs weight " +
                          shape_string(weight.shape()));
    const bool has_bias = bias.defined();
    if (has_bias && bias.size() != out_dim) throw TensorError("linear: bias size mismatch");
    std::vector<double> out(m * out_dim);
    const double* X = x.data().data();
    const double* W = weight.data().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t o = 0; o < out_dim; ++o) {
            double acc = has_bias ? bias.data()[o] : 0.0;
            for (std::size_t p = 0; p < in; ++p) acc += X[i * in + p] * W[o * in + p];
            out[i * out_dim + o] = acc;
        }
    std::vector<NodePtr> parents{x.node_ptr(), weight.node_ptr()};
    if (has_bias) parents.push_back(bias.node_ptr());
    Shape shape = x.rank() == 1 ? Shape{out_dim} : Shape{m, out_dim};
    return make_result(std::move(shape), std::move(out), std::move(parents), [m, in, out_dim](Node& self) {
        const auto& px = self.parents[0];
        const auto& pw = self.parents[1];
        const double* G = self.grad.data();
        if (double* gx = grad_of(px)) {
            const double* W = pw->data.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t o = 0; o < out_dim; ++o) {
                    const double gv = G[i * out_dim + o];
                    if (gv == 0.0) continue;
                    for (std::size_t p = 0; p < in; ++p) gx[i * in + p] += gv * W[o * in + p];
                }
        }
        if (double* gw = grad_of(pw)) {
            const double* X = px->data.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t o = 0; o < out_dim; ++o) {
                    const double gv = G[i * out_dim + o];
                    if (gv == 0.0) continue;
                    for (std::size_t p = 0; p < in; ++p) gw[o * in + p] += gv * X[i * in + p];
                }
        }
        if (self.parents.size() > 2) {
            if (double* gb = grad_of(self.parents[2]))
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t o = 0; o < out_dim; ++o) gb[o] += G[i * out_dim + o];
        }
    });
}

// ---------------------------------------------------------------------------
// Normalization / probability

namespace {

// Softmax over groups of `len` elements spaced `stride` apart, starting at
// each offset in `starts`.
void softmax_groups(const double* x, double* y, std::size_t groups, std::size_t len,
                    std::size_t group_step, std::size_t stride) {
    for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t base = g * group_step;
        double mx = -INFINITY;
        for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, x[base + i * stride]);
        double total = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const double e = std::exp(x[base + i * stride] - mx);
            y[base + i * stride] = e;
            total += e;
        }
        for (std::size_t i = 0; i < len; ++i) y[base + i * stride] /= total;
    }
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
    check_rank(x.shape(), "softmax");
    require_finite(x.data(), "softmax");
    const std::size_t r = x.rows(), c = x.cols();
    if (axis < 0) axis = static_cast<int>(x.rank()) - 1;
    if (axis >= static_cast<int>(x.rank())) throw TensorError("softmax: axis out of range");
    const bool over_rows = x.rank() == 2 && axis == 0;
    std::vector<double> out(x.size());
    std::size_t groups, len, group_step, stride;
    if (over_rows) {
        groups = c, len = r, group_step = 1, stride = c;
    } else {
        groups = r, len = c, group_step = c, stride = 1;
    }
    softmax_groups(x.data().data(), out.data(), groups, len, group_step, stride);
    return make_result(x.shape(), std::move(out), {x.node_ptr()},
                       [groups, len, group_step, stride](Node& self) {
                           double* g = grad_of(self.parents[0]);
                           if (!g) return;
                           const double* y = self.data.data();
                           const double* dy = self.grad.data();
                           for (std::size_t k = 0; k < groups; ++k) {
                               const std::size_t base = k * group_step;
                               double s = 0.0;
                               for (std::size_t i = 0; i < len; ++i) {
                                   const std::size_t idx = base + i * stride;
                                   s += dy[idx] * y[idx];
                               }
                               for (std::size_t i = 0; i < len; ++i) {
                                   const std::size_t idx = base + i * stride;
                                   g[idx] += y[idx] * (dy[idx] - s);
                               }
                           }
                       });
}

Tensor masked_softmax(const Tensor& x, const std::vector<bool>& mask) {
    check_rank(x.shape(), "masked_softmax");
    require_finite(x.data(), "masked_softmax");
    const std::size_t r = x.rows(), c = x.cols();
    if (mask.size() != r * c)
        throw TensorError("masked_softmax: mask has " + std::to_string(mask.size()) + " entries for " +
                          shape_string(x.shape()));
    std::vector<double> out(x.size(), 0.0);
    const double* X = x.data().data();
    for (std::size_t i = 0; i < r; ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < c; ++j)
            if (mask[i * c + j]) mx = std::max(mx, X[i * c + j]);
        if (mx == -INFINITY) throw TensorError("masked_softmax: row " + std::to_string(i) + " is fully masked");
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            if (!mask[i * c + j]) continue;
            out[i * c + j] = std::exp(X[i * c + j] - mx);
            total += out[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= total;
    }
    return make_result(x.shape(), std::move(out), {x.node_ptr()}, [r, c](Node& self) {
        double* g = grad_of(self.parents[0]);
        if (!g) return;
        const double* y = self.data.data();
        const double* dy = self.grad.data();
        for (std::size_t i = 0; i < r; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) s += dy[i * c + j] * y[i * c + j];
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[i * c + j] * (dy[i * c + j] - s);
        }
    });
}

Tensor log_softmax(const Tensor& x) {
    check_rank(x.shape(), "log_softmax");
    require_finite(x.data(), "log_softmax");
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> out(x.size());
    const double* X = x.data().data();
    for (std::size_t i = 0; i < r; ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, X[i * c + j]);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) total += std::exp(X[i * c + j] - mx);
        const double lse = mx + std::log(total);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = X[i * c + j] - lse;
    }
    return make_result(x.shape(), std::move(out), {x.node_ptr()}, [r, c](Node& self) {
        double* g = grad_of(self.parents[0]);
        if (!g) return;
        const double* y = self.data.data();
        const double* dy = self.grad.data();
        for (std::size_t i = 0; i < r; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) s += dy[i * c + j];
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += dy[i * c + j] - std::exp(y[i * c + j]) * s;
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    check_rank(x.shape(), "layer_norm");
    if (!(eps > 0.0)) throw TensorError("layer_norm: eps must be positive");
    const std::size_t r = x.rows(), c = x.cols();
    if (gain.size() != c || bias.size() != c)
        throw TensorError("layer_norm: gain/bias length must equal " + std::to_string(c));
    std::vector<double> out(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(r);
    const double* X = x.data().data();
    for (std::size_t i = 0; i < r; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += X[i * c + j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = X[i * c + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            xhat[i * c + j] = (X[i * c + j] - mu) * inv_std[i];
            out[i * c + j] = gain.data()[j] * xhat[i * c + j] + bias.data()[j];
        }
    }
    return make_result(x.shape(), std::move(out), {x.node_ptr(), gain.node_ptr(), bias.node_ptr()},
                       [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                           const auto& pg = self.parents[1];
                           const double* dy = self.grad.data();
                           if (double* gx = grad_of(self.parents[0])) {
                               std::vector<double> dxh(c);
                               for (std::size_t i = 0; i < r; ++i) {
                                   double m1 = 0.0, m2 = 0.0;
                                   for (std::size_t j = 0; j < c; ++j) {
                                       dxh[j] = dy[i * c + j] * pg->data[j];
                                       m1 += dxh[j];
                                       m2 += dxh[j] * xhat[i * c + j];
                                   }
                                   m1 /= static_cast<double>(c);
                                   m2 /= static_cast<double>(c);
                                   for (std::size_t j = 0; j < c; ++j)
                                       gx[i * c + j] += inv_std[i] * (dxh[j] - m1 - xhat[i * c + j] * m2);
                               }
                           }
                           if (double* gg = grad_of(pg))
                               for (std::size_t i = 0; i < r; ++i)
                                   for (std::size_t j = 0; j < c; ++j) gg[j] += dy[i * c + j] * xhat[i * c + j];
                           if (double* gb = grad_of(self.parents[2]))
                               for (std::size_t i = 0; i < r; ++i)
                                   for (std::size_t j = 0; j < c; ++j) gb[j] += dy[i * c + j];
                       });
}

// ---------------------------------------------------------------------------
// Shape and indexing

Tensor reshape(const Tensor& a, Shape shape) {
    check_rank(shape, "reshape");
    if (shape_size(shape) != a.size())
        throw TensorError("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
    std::vector<double> out(a.data().begin(), a.data().end());
    return make_result(std::move(shape), std::move(out), {a.node_ptr()}, [](Node& self) {
        if (double* g = grad_of(self.parents[0]))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor row(const Tensor& m, std::size_t r) {
    if (r >= m.rows()) throw TensorError("row: index out of range");
    return reshape(slice_rows(m, r, r + 1), {m.cols()});
}

Tensor slice_rows(const Tensor& m, std::size_t begin, std::size_t end) {
    const std::size_t r = m.rows(), c = m.cols();
    if (begin >= end || end > r) throw TensorError("slice_rows: bad range");
    std::vector<double> out(m.data().begin() + begin * c, m.data().begin() + end * c);
    return make_result({end - begin, c}, std::move(out), {m.node_ptr()}, [begin, c](Node& self) {
        if (double* g = grad_of(self.parents[0]))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * c + i] += self.grad[i];
    });
}

Tensor slice_cols(const Tensor& m, std::size_t begin, std::size_t end) {
    const std::size_t r = m.rows(), c = m.cols();
    if (begin >= end || end > c) throw TensorError("slice_cols: bad range");
    const std::size_t w = end - begin;
    std::vector<double> out(r * w);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = m.data()[i * c + begin + j];
    Shape shape = m.rank() == 1 ? Shape{w} : Shape{r, w};
    return make_result(std::move(shape), std::move(out), {m.node_ptr()}, [r, c, w, begin](Node& self) {
        if (double* g = grad_of(self.parents[0]))
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += self.grad[i * w + j];
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw TensorError("concat_rows: no inputs");
    const std::size_t c = parts[0].cols();
    std::size_t total = 0;
    std::vector<NodePtr> parents;
    for (const auto& p : parts) {
        check_rank(p.shape(), "concat_rows");
        if (p.cols() != c) throw TensorError("concat_rows: column count mismatch");
        total += p.rows();
        parents.push_back(p.node_ptr());
    }
    std::vector<double> out;
    out.reserve(total * c);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return make_result({total, c}, std::move(out), std::move(parents), [](Node& self) {
        std::size_t offset = 0;
        for (const auto& p : self.parents) {
            const std::size_t n = p->data.size();
            if (double* g = grad_of(p))
                for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
            offset += n;
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw TensorError("concat_cols: no inputs");
    const std::size_t r = parts[0].rows();
    const bool rank1 = parts[0].rank() == 1;
    std::size_t width = 0;
    std::vector<NodePtr> parents;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        check_rank(p.shape(), "concat_cols");
        if (p.rows() != r || (p.rank() == 1) != rank1) throw TensorError("concat_cols: row mismatch");
        widths.push_back(p.cols());
        width += p.cols();
        parents.push_back(p.node_ptr());
    }
    std::vector<double> out(r * width);
    std::size_t col = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const std::size_t w = widths[k];
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * width + col + j] = parts[k].data()[i * w + j];
        col += w;
    }
    Shape shape = rank1 ? Shape{width} : Shape{r, width};
    return make_result(std::move(shape), std::move(out), std::move(parents), [r, width, widths](Node& self) {
        std::size_t col = 0;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            const std::size_t w = widths[k];
            if (double* g = grad_of(self.parents[k]))
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * width + col + j];
            col += w;
        }
    });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
    if (table.rank() != 2) throw TensorError("embedding: table must be a matrix");
    if (ids.empty()) throw TensorError("embedding: empty id list");
    const std::size_t c = table.cols();
    std::vector<std::size_t> idx(ids.begin(), ids.end());
    std::vector<double> out(idx.size() * c);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= table.rows())
            throw TensorError("embedding: id " + std::to_string(idx[i]) + " out of range");
        std::copy_n(table.data().begin() + idx[i] * c, c, out.begin() + i * c);
    }
    const std::size_t n = idx.size();
    return make_result({n, c}, std::move(out), {table.node_ptr()}, [c, idx = std::move(idx)](Node& self) {
        if (double* g = grad_of(self.parents[0]))
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
    });
}

Tensor pick(const Tensor& a, std::size_t index) {
    if (index >= a.size()) throw TensorError("pick: index out of range");
    return make_result({1}, {a.data()[index]}, {a.node_ptr()}, [index](Node& self) {
        if (double* g = grad_of(self.parents[0])) g[index] += self.grad[0];
    });
}

Tensor pick_rows(const Tensor& m, std::span<const std::size_t> idx) {
    const std::size_t r = m.rows(), c = m.cols();
    if (idx.size() != r) throw TensorError("pick_rows: need one index per row");
    std::vector<std::size_t> cols(idx.begin(), idx.end());
    std::vector<double> out(r);
    for (std::size_t i = 0; i < r; ++i) {
        if (cols[i] >= c) throw TensorError("pick_rows: column index out of range");
        out[i] = m.data()[i * c + cols[i]];
    }
    return make_result({r}, std::move(out), {m.node_ptr()}, [c, cols = std::move(cols)](Node& self) {
        if (double* g = grad_of(self.parents[0]))
            for (std::size_t i = 0; i < cols.size(); ++i) g[i * c + cols[i]] += self.grad[i];
    });
}

Tensor scatter_cols(const Tensor& m, std::span<const std::size_t> ids, std::size_t width) {
    const std::size_t r = m.rows(), c = m.cols();
    if (ids.size() != c) throw TensorError("scatter_cols: need one target per column");
    std::vector<std::size_t> target(ids.begin(), ids.end());
    for (auto t : target)
        if (t >= width) throw TensorError("scatter_cols: target column out of range");
    std::vector<double> out(r * width, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * width + target[j]] += m.data()[i * c + j];
    Shape shape = m.rank() == 1 ? Shape{width} : Shape{r, width};
    return make_result(std::move(shape), std::move(out), {m.node_ptr()},
                       [r, c, width, target = std::move(target)](Node& self) {
                           if (double* g = grad_of(self.parents[0]))
                               for (std::size_t i = 0; i < r; ++i)
                                   for (std::size_t j = 0; j < c; ++j)
                                       g[i * c + j] += self.grad[i * width + target[j]];
                       });
}

Tensor pad_cols(const Tensor& m, std::size_t width) {
    const std::size_t r = m.rows(), c = m.cols();
    if (width < c) throw TensorError("pad_cols: width smaller than input");
    if (width == c) return m;
    std::vector<double> out(r * width, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * width + j] = m.data()[i * c + j];
    Shape shape = m.rank() == 1 ? Shape{width} : Shape{r, width};
    return make_result(std::move(shape), std::move(out), {m.node_ptr()}, [r, c, width](Node& self) {
        if (double* g = grad_of(self.parents[0]))
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * width + j];
    });
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw TensorError("dropout: p must lie in [0, 1)");
    if (p == 0.0) return x;
    std::vector<double> keep(x.size());
    for (double& k : keep) k = rng.uniform() < p ? 0.0 : 1.0 / (1.0 - p);
    return mul(x, Tensor::from(x.shape(), std::move(keep)));
}

// ---------------------------------------------------------------------------

AttentionResult scaled_dot_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                                     const std::optional<std::vector<bool>>& mask) {
    const Tensor q = query.rank() == 1 ? reshape(query, {1, query.size()}) : query;
    const Tensor k = key.rank() == 1 ? reshape(key, {1, key.size()}) : key;
    const Tensor v = value.rank() == 1 ? reshape(value, {1, value.size()}) : value;
    if (q.cols() != k.cols())
        throw TensorError("scaled_dot_attention: query width " + std::to_string(q.cols()) + " vs key width " +
                          std::to_string(k.cols()));
    if (k.rows() != v.rows()) throw TensorError("scaled_dot_attention: key/value row count mismatch");
    if (mask && mask->size() != q.rows() * k.rows())
        throw TensorError("scaled_dot_attention: mask shape does not match scores");
    const Tensor scores = scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(q.cols())));
    Tensor weights = mask ? masked_softmax(scores, *mask) : softmax(scores, 1);
    Tensor output = matmul(weights, v);
    return {std::move(output), std::move(weights)};
}

}  // namespace rd
