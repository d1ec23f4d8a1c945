#include "tinydetr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tinydetr/errors.hpp"

namespace tinydetr {

namespace {

using Node = detail::TensorNode;
using NodePtr = std::shared_ptr<Node>;

thread_local Tape* g_active_tape = nullptr;

struct TrackGuard {
    bool on;
    Tape* tape;
};

TrackGuard tracking(std::initializer_list<const Tensor*> inputs) {
    Tape* tape = Tape::active();
    if (tape == nullptr) {
        return {false, nullptr};
    }
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) {
            return {true, tape};
        }
    }
    return {false, nullptr};
}

void accumulate(const NodePtr& node, const std::vector<double>& g) {
    if (!node->requires_grad) {
        return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
        node->grad[i] += g[i];
    }
}

std::vector<std::size_t> strides_of(const Shape& shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) {
        strides[i - 1] = strides[i] * shape[i];
    }
    return strides;
}

// True when b's shape is a trailing suffix of a's shape (a scalar is the
// empty suffix).
bool is_trailing_suffix(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) {
        return false;
    }
    return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

[[noreturn]] void throw_shape_mismatch(const char* op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op) + ": shape " + shape_to_string(a) +
                                " is not compatible with shape " + shape_to_string(b) +
                                " (shapes must be equal, or the second operand must be a "
                                "trailing suffix of the first)");
}

// ---- dense gemm kernels (row-major, accumulate into C) ----

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// C[m,k] += A[m,n] * B[k,n]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * n;
        double* crow = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                acc += arow[j] * brow[j];
            }
            crow[p] += acc;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

template <class Fwd, class DA, class DB>
Tensor broadcast_binary(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, DA dfa,
                        DB dfb) {
    if (!a.defined() || !b.defined()) {
        throw std::invalid_argument(std::string(name) + ": undefined tensor operand");
    }
    if (!is_trailing_suffix(a.shape(), b.shape())) {
        throw_shape_mismatch(name, a.shape(), b.shape());
    }
    const std::size_t bsz = b.size();
    const std::size_t total = a.size();
    std::vector<double> out(total);
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < total; ++i) {
        out[i] = fwd(ad[i], bd[i % bsz]);
    }
    auto track = tracking({&a, &b});
    Tensor result(a.shape(), std::move(out), track.on);
    if (track.on) {
        NodePtr an = a.node();
        NodePtr bn = b.node();
        NodePtr on = result.node();
        track.tape->record([an, bn, on, dfa, dfb, bsz, total]() {
            const std::vector<double>& g = on->grad;
            if (an->requires_grad) {
                for (std::size_t i = 0; i < total; ++i) {
                    an->grad[i] += g[i] * dfa(an->data[i], bn->data[i % bsz]);
                }
            }
            if (bn->requires_grad) {
                for (std::size_t i = 0; i < total; ++i) {
                    bn->grad[i % bsz] += g[i] * dfb(an->data[i], bn->data[i % bsz]);
                }
            }
        });
    }
    return result;
}

// df receives (input value, output value).
template <class Fwd, class Df>
Tensor unary_op(const Tensor& x, Fwd fwd, Df df) {
    if (!x.defined()) {
        throw std::invalid_argument("unary op: undefined tensor operand");
    }
    const std::size_t total = x.size();
    std::vector<double> out(total);
    const auto xd = x.data();
    for (std::size_t i = 0; i < total; ++i) {
        out[i] = fwd(xd[i]);
    }
    auto track = tracking({&x});
    Tensor result(x.shape(), std::move(out), track.on);
    if (track.on) {
        NodePtr xn = x.node();
        NodePtr on = result.node();
        track.tape->record([xn, on, df, total]() {
            if (!xn->requires_grad) {
                return;
            }
            for (std::size_t i = 0; i < total; ++i) {
                xn->grad[i] += on->grad[i] * df(xn->data[i], on->data[i]);
            }
        });
    }
    return result;
}

double stable_sigmoid(double v) {
    if (v >= 0.0) {
        return 1.0 / (1.0 + std::exp(-v));
    }
    const double e = std::exp(v);
    return e / (1.0 + e);
}

void check_axis(const char* op, const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) {
        throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                    " out of range for shape " + shape_to_string(shape));
    }
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) {
            os << ',';
        }
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<std::size_t>());
}

// ---- Tensor ----

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
    const std::size_t n = shape_size(shape);
    node_ = std::make_shared<Node>();
    node_->shape = std::move(shape);
    node_->data.assign(n, fill);
    node_->requires_grad = requires_grad;
    if (requires_grad) {
        node_->grad.assign(n, 0.0);
    }
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    const std::size_t n = shape_size(shape);
    if (values.size() != n) {
        throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                    " values do not fill shape " + shape_to_string(shape));
    }
    node_ = std::make_shared<Node>();
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
    if (requires_grad) {
        node_->grad.assign(n, 0.0);
    }
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return Tensor(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    const std::size_t n = shape_size(shape);
    std::vector<double> values(n);
    for (double& v : values) {
        v = rng.normal(0.0, stddev);
    }
    return Tensor(std::move(shape), std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
    static const Shape empty;
    return node_ ? node_->shape : empty;
}

std::size_t Tensor::size() const { return node_ ? node_->data.size() : 0; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
    if (!node_) {
        throw std::invalid_argument("set_requires_grad on undefined tensor");
    }
    node_->requires_grad = on;
    if (on) {
        node_->grad.assign(node_->data.size(), 0.0);
    } else {
        node_->grad.clear();
    }
}

std::span<double> Tensor::data() {
    return node_ ? std::span<double>(node_->data) : std::span<double>();
}

std::span<const double> Tensor::data() const {
    return node_ ? std::span<const double>(node_->data) : std::span<const double>();
}

std::span<double> Tensor::grad() {
    return node_ ? std::span<double>(node_->grad) : std::span<double>();
}

std::span<const double> Tensor::grad() const {
    return node_ ? std::span<const double>(node_->grad) : std::span<const double>();
}

double Tensor::item() const {
    if (size() != 1) {
        throw std::invalid_argument("item() requires a one-element tensor; got shape " +
                                    shape_to_string(shape()));
    }
    return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    if (!node_) {
        throw std::invalid_argument("at() on undefined tensor");
    }
    const Shape& s = node_->shape;
    if (index.size() != s.size()) {
        throw std::invalid_argument("at(): rank mismatch");
    }
    std::size_t flat = 0;
    std::size_t d = 0;
    const auto strides = strides_of(s);
    for (std::size_t i : index) {
        if (i >= s[d]) {
            throw std::out_of_range("at(): index out of range");
        }
        flat += i * strides[d];
        ++d;
    }
    return node_->data[flat];
}

void Tensor::zero_grad() {
    if (node_ && node_->requires_grad) {
        std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }
}

Tensor Tensor::clone() const {
    if (!node_) {
        return Tensor();
    }
    return Tensor(node_->shape, node_->data, node_->requires_grad);
}

Tensor Tensor::detached() const {
    if (!node_) {
        return Tensor();
    }
    return Tensor(node_->shape, node_->data, false);
}

bool Tensor::all_finite() const {
    if (!node_) {
        return true;
    }
    return std::all_of(node_->data.begin(), node_->data.end(),
                       [](double v) { return std::isfinite(v); });
}

double Tensor::grad_norm() const {
    if (!node_ || !node_->requires_grad) {
        return 0.0;
    }
    double acc = 0.0;
    for (double g : node_->grad) {
        acc += g * g;
    }
    return std::sqrt(acc);
}

// ---- Tape ----

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_step) {
    steps_.push_back(std::move(backward_step));
}

void Tape::clear() {
    steps_.clear();
    consumed_ = false;
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined()) {
        throw std::invalid_argument("backward: undefined loss tensor");
    }
    if (loss.size() != 1) {
        throw std::invalid_argument("backward requires a scalar loss; got shape " +
                                    shape_to_string(loss.shape()));
    }
    if (steps_.empty()) {
        throw std::runtime_error("backward: tape is empty (no operations recorded)");
    }
    if (consumed_) {
        throw std::runtime_error(
            "backward already ran on this tape; clear it before recording the next step");
    }
    if (!loss.requires_grad()) {
        throw std::runtime_error("backward: loss is not connected to any grad-tracked tensor");
    }
    consumed_ = true;
    loss.node()->grad[0] += 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
        (*it)();
    }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

void backward(const Tensor& loss) {
    Tape* tape = Tape::active();
    if (tape == nullptr) {
        throw std::runtime_error("backward: no active tape");
    }
    tape->backward(loss);
}

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    return broadcast_binary(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return broadcast_binary(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return broadcast_binary(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return broadcast_binary(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

Tensor add(const Tensor& a, double c) {
    return unary_op(a, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, double c) { return add(a, -c); }

Tensor sub(double c, const Tensor& a) {
    return unary_op(a, [c](double v) { return c - v; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, double c) {
    return unary_op(a, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor div(const Tensor& a, double c) { return mul(a, 1.0 / c); }

Tensor relu(const Tensor& x) {
    return unary_op(x, [](double v) { return v > 0.0 ? v : 0.0; },
                    [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(x, [](double v) { return stable_sigmoid(v); },
                    [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
    return unary_op(x, [](double v) { return std::exp(v); },
                    [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    for (double v : x.data()) {
        if (!(v > 0.0)) {
            throw NumericError("log: input value " + std::to_string(v) + " is not positive");
        }
    }
    return unary_op(x, [](double v) { return std::log(v); },
                    [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
    return unary_op(x, [](double v) { return std::abs(v); },
                    [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor neg(const Tensor& x) {
    return unary_op(x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
    return broadcast_binary(
        "maximum", a, b, [](double x, double y) { return x >= y ? x : y; },
        [](double x, double y) { return x >= y ? 1.0 : 0.0; },
        [](double x, double y) { return y > x ? 1.0 : 0.0; });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
    return broadcast_binary(
        "minimum", a, b, [](double x, double y) { return x <= y ? x : y; },
        [](double x, double y) { return x <= y ? 1.0 : 0.0; },
        [](double x, double y) { return y < x ? 1.0 : 0.0; });
}

Tensor elementwise(EwKind kind, const Tensor& a, const Tensor* b) {
    const bool binary = kind == EwKind::add || kind == EwKind::sub || kind == EwKind::mul;
    if (binary && b == nullptr) {
        throw std::invalid_argument("elementwise: binary op kind requires a second operand");
    }
    switch (kind) {
        case EwKind::add: return add(a, *b);
        case EwKind::sub: return sub(a, *b);
        case EwKind::mul: return mul(a, *b);
        case EwKind::relu: return relu(a);
        case EwKind::sigmoid: return sigmoid(a);
        case EwKind::exp: return exp(a);
        case EwKind::log: return log(a);
    }
    throw std::invalid_argument("elementwise: unknown op kind");
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() != sa.size()) {
        throw std::invalid_argument("matmul: expected equal-rank operands of rank >= 2; got " +
                                    shape_to_string(sa) + " and " + shape_to_string(sb));
    }
    const std::size_t rank = sa.size();
    for (std::size_t i = 0; i + 2 < rank; ++i) {
        if (sa[i] != sb[i]) {
            throw std::invalid_argument("matmul: batch axes differ: " + shape_to_string(sa) +
                                        " vs " + shape_to_string(sb));
        }
    }
    const std::size_t m = sa[rank - 2];
    const std::size_t k = sa[rank - 1];
    const std::size_t n = sb[rank - 1];
    if (sb[rank - 2] != k) {
        throw std::invalid_argument("matmul: inner dimensions differ: " + shape_to_string(sa) +
                                    " x " + shape_to_string(sb));
    }
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < rank; ++i) {
        batch *= sa[i];
    }

    Shape out_shape(sa.begin(), sa.end());
    out_shape[rank - 1] = n;
    std::vector<double> out(batch * m * n, 0.0);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    for (std::size_t l = 0; l < batch; ++l) {
        gemm_nn(ad + l * m * k, bd + l * k * n, out.data() + l * m * n, m, k, n);
    }

    auto track = tracking({&a, &b});
    Tensor result(std::move(out_shape), std::move(out), track.on);
    if (track.on) {
        NodePtr an = a.node();
        NodePtr bn = b.node();
        NodePtr on = result.node();
        track.tape->record([an, bn, on, batch, m, k, n]() {
            const double* g = on->grad.data();
            if (an->requires_grad) {
                for (std::size_t l = 0; l < batch; ++l) {
                    gemm_nt(g + l * m * n, bn->data.data() + l * k * n,
                            an->grad.data() + l * m * k, m, n, k);
                }
            }
            if (bn->requires_grad) {
                for (std::size_t l = 0; l < batch; ++l) {
                    gemm_tn(an->data.data() + l * m * k, g + l * m * n,
                            bn->grad.data() + l * k * n, m, k, n);
                }
            }
        });
    }
    return result;
}

namespace {

// dst[perm(idx)] = src[idx] for the axis swap (axis0 <-> axis1).
void swap_axes_copy(const double* src, double* dst, const Shape& in_shape, std::size_t axis0,
                    std::size_t axis1) {
    const auto in_strides = strides_of(in_shape);
    Shape out_shape = in_shape;
    std::swap(out_shape[axis0], out_shape[axis1]);
    const auto out_strides = strides_of(out_shape);
    const std::size_t total = shape_size(in_shape);
    const std::size_t rank = in_shape.size();
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t out_flat = 0;
        for (std::size_t d = 0; d < rank; ++d) {
            std::size_t od = d;
            if (d == axis0) {
                od = axis1;
            } else if (d == axis1) {
                od = axis0;
            }
            out_flat += idx[d] * out_strides[od];
        }
        dst[out_flat] = src[flat];
        for (std::size_t d = rank; d-- > 0;) {
            if (++idx[d] < in_shape[d]) {
                break;
            }
            idx[d] = 0;
        }
    }
}

}  // namespace

Tensor transpose(const Tensor& a, std::size_t axis0, std::size_t axis1) {
    check_axis("transpose", a.shape(), axis0);
    check_axis("transpose", a.shape(), axis1);
    Shape out_shape = a.shape();
    std::swap(out_shape[axis0], out_shape[axis1]);
    std::vector<double> out(a.size());
    swap_axes_copy(a.data().data(), out.data(), a.shape(), axis0, axis1);

    auto track = tracking({&a});
    Tensor result(std::move(out_shape), std::move(out), track.on);
    if (track.on) {
        NodePtr an = a.node();
        NodePtr on = result.node();
        track.tape->record([an, on, axis0, axis1]() {
            if (!an->requires_grad) {
                return;
            }
            std::vector<double> g(an->data.size());
            swap_axes_copy(on->grad.data(), g.data(), on->shape, axis0, axis1);
            accumulate(an, g);
        });
    }
    return result;
}

Tensor reshape(const Tensor& a, Shape new_shape) {
    if (shape_size(new_shape) != a.size()) {
        throw std::invalid_argument("reshape: shape " + shape_to_string(new_shape) +
                                    " does not hold " + std::to_string(a.size()) + " elements");
    }
    auto track = tracking({&a});
    Tensor result(std::move(new_shape), std::vector<double>(a.data().begin(), a.data().end()),
                  track.on);
    if (track.on) {
        NodePtr an = a.node();
        NodePtr on = result.node();
        track.tape->record([an, on]() { accumulate(an, on->grad); });
    }
    return result;
}

// ---- reductions and normalization ----

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data()) {
        acc += v;
    }
    auto track = tracking({&a});
    Tensor result(Shape{}, std::vector<double>{acc}, track.on);
    if (track.on) {
        NodePtr an = a.node();
        NodePtr on = result.node();
        track.tape->record([an, on]() {
            if (!an->requires_grad) {
                return;
            }
            const double g = on->grad[0];
            for (double& gv : an->grad) {
                gv += g;
            }
        });
    }
    return result;
}

Tensor sum_axis(const Tensor& a, std::size_t axis) {
    check_axis("sum_axis", a.shape(), axis);
    const Shape& s = a.shape();
    const std::size_t len = s[axis];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= s[i];
    }
    for (std::size_t i = axis + 1; i < s.size(); ++i) {
        inner *= s[i];
    }
    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != axis) {
            out_shape.push_back(s[i]);
        }
    }
    std::vector<double> out(outer * inner, 0.0);
    const auto ad = a.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t t = 0; t < len; ++t) {
            const double* src = ad.data() + (o * len + t) * inner;
            double* dst = out.data() + o * inner;
            for (std::size_t in = 0; in < inner; ++in) {
                dst[in] += src[in];
            }
        }
    }
    auto track = tracking({&a});
    Tensor result(std::move(out_shape), std::move(out), track.on);
    if (track.on) {
        NodePtr an = a.node();
        NodePtr on = result.node();
        track.tape->record([an, on, outer, len, inner]() {
            if (!an->requires_grad) {
                return;
            }
            for (std::size_t o = 0; o < outer; ++o) {
                const double* g = on->grad.data() + o * inner;
                for (std::size_t t = 0; t < len; ++t) {
                    double* dst = an->grad.data() + (o * len + t) * inner;
                    for (std::size_t in = 0; in < inner; ++in) {
                        dst[in] += g[in];
                    }
                }
            }
        });
    }
    return result;
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0) {
        throw std::invalid_argument("mean of empty tensor");
    }
    return div(sum(a), static_cast<double>(a.size()));
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    check_axis("softmax", x.shape(), axis);
    for (double v : x.data()) {
        if (std::isnan(v)) {
            throw NumericError("softmax: NaN input");
        }
    }
    const Shape& s = x.shape();
    const std::size_t len = s[axis];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= s[i];
    }
    for (std::size_t i = axis + 1; i < s.size(); ++i) {
        inner *= s[i];
    }
    std::vector<double> out(x.size());
    const auto xd = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double mx = xd[base];
            for (std::size_t t = 1; t < len; ++t) {
                mx = std::max(mx, xd[base + t * inner]);
            }
            double denom = 0.0;
            for (std::size_t t = 0; t < len; ++t) {
                const double e = std::exp(xd[base + t * inner] - mx);
                out[base + t * inner] = e;
                denom += e;
            }
            for (std::size_t t = 0; t < len; ++t) {
                out[base + t * inner] /= denom;
            }
        }
    }
    auto track = tracking({&x});
    Tensor result(s, std::move(out), track.on);
    if (track.on) {
        NodePtr xn = x.node();
        NodePtr on = result.node();
        track.tape->record([xn, on, outer, len, inner]() {
            if (!xn->requires_grad) {
                return;
            }
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * len * inner + in;
                    double dot = 0.0;
                    for (std::size_t t = 0; t < len; ++t) {
                        dot += on->grad[base + t * inner] * on->data[base + t * inner];
                    }
                    for (std::size_t t = 0; t < len; ++t) {
                        const std::size_t i = base + t * inner;
                        xn->grad[i] += on->data[i] * (on->grad[i] - dot);
                    }
                }
            }
        });
    }
    return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, std::size_t axis) {
    check_axis("layer_norm", x.shape(), axis);
    const Shape& s = x.shape();
    const std::size_t len = s[axis];
    if (gain.shape() != Shape{len} || bias.shape() != Shape{len}) {
        throw std::invalid_argument("layer_norm: gain/bias must have shape [" +
                                    std::to_string(len) + "]; got " +
                                    shape_to_string(gain.shape()) + " and " +
                                    shape_to_string(bias.shape()));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= s[i];
    }
    for (std::size_t i = axis + 1; i < s.size(); ++i) {
        inner *= s[i];
    }
    std::vector<double> out(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(outer * inner);
    const auto xd = x.data();
    const auto gd = gain.data();
    const auto bd = bias.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double mu = 0.0;
            for (std::size_t t = 0; t < len; ++t) {
                mu += xd[base + t * inner];
            }
            mu /= static_cast<double>(len);
            double var = 0.0;
            for (std::size_t t = 0; t < len; ++t) {
                const double d = xd[base + t * inner] - mu;
                var += d * d;
            }
            var /= static_cast<double>(len);
            const double inv = 1.0 / std::sqrt(var + kLayerNormEpsilon);
            inv_std[o * inner + in] = inv;
            for (std::size_t t = 0; t < len; ++t) {
                const std::size_t i = base + t * inner;
                const double xn = (xd[i] - mu) * inv;
                xhat[i] = xn;
                out[i] = xn * gd[t] + bd[t];
            }
        }
    }
    auto track = tracking({&x, &gain, &bias});
    Tensor result(s, std::move(out), track.on);
    if (track.on) {
        NodePtr xn = x.node();
        NodePtr gn = gain.node();
        NodePtr bn = bias.node();
        NodePtr on = result.node();
        track.tape->record([xn, gn, bn, on, outer, len, inner, xhat = std::move(xhat),
                            inv_std = std::move(inv_std)]() {
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * len * inner + in;
                    const double inv = inv_std[o * inner + in];
                    double mean_h = 0.0;
                    double mean_hx = 0.0;
                    for (std::size_t t = 0; t < len; ++t) {
                        const std::size_t i = base + t * inner;
                        const double h = on->grad[i] * gn->data[t];
                        mean_h += h;
                        mean_hx += h * xhat[i];
                    }
                    mean_h /= static_cast<double>(len);
                    mean_hx /= static_cast<double>(len);
                    for (std::size_t t = 0; t < len; ++t) {
                        const std::size_t i = base + t * inner;
                        if (xn->requires_grad) {
                            const double h = on->grad[i] * gn->data[t];
                            xn->grad[i] += inv * (h - mean_h - xhat[i] * mean_hx);
                        }
                        if (gn->requires_grad) {
                            gn->grad[t] += on->grad[i] * xhat[i];
                        }
                        if (bn->requires_grad) {
                            bn->grad[t] += on->grad[i];
                        }
                    }
                }
            }
        });
    }
    return result;
}

// ---- indexing ----

Tensor select_rows(const Tensor& a, std::span<const std::size_t> rows) {
    if (a.ndim() < 1) {
        throw std::invalid_argument("select_rows: rank-0 tensor");
    }
    const std::size_t row_count = a.shape()[0];
    const std::size_t row_elems = a.size() / std::max<std::size_t>(row_count, 1);
    for (std::size_t r : rows) {
        if (r >= row_count) {
            throw std::out_of_range("select_rows: row " + std::to_string(r) +
                                    " out of range for shape " + shape_to_string(a.shape()));
        }
    }
    Shape out_shape = a.shape();
    out_shape[0] = rows.size();
    std::vector<double> out(rows.size() * row_elems);
    const auto ad = a.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(ad.data() + rows[i] * row_elems, row_elems, out.data() + i * row_elems);
    }
    auto track = tracking({&a});
    Tensor result(std::move(out_shape), std::move(out), track.on);
    if (track.on) {
        NodePtr an = a.node();
        NodePtr on = result.node();
        std::vector<std::size_t> idx(rows.begin(), rows.end());
        track.tape->record([an, on, idx = std::move(idx), row_elems]() {
            if (!an->requires_grad) {
                return;
            }
            for (std::size_t i = 0; i < idx.size(); ++i) {
                const double* g = on->grad.data() + i * row_elems;
                double* dst = an->grad.data() + idx[i] * row_elems;
                for (std::size_t j = 0; j < row_elems; ++j) {
                    dst[j] += g[j];
                }
            }
        });
    }
    return result;
}

Tensor select_col(const Tensor& a, std::size_t col) {
    if (a.ndim() != 2) {
        throw std::invalid_argument("select_col: expected a matrix; got " +
                                    shape_to_string(a.shape()));
    }
    const std::size_t rows = a.shape()[0];
    const std::size_t cols = a.shape()[1];
    if (col >= cols) {
        throw std::out_of_range("select_col: column out of range");
    }
    std::vector<double> out(rows);
    const auto ad = a.data();
    for (std::size_t r = 0; r < rows; ++r) {
        out[r] = ad[r * cols + col];
    }
    auto track = tracking({&a});
    Tensor result(Shape{rows}, std::move(out), track.on);
    if (track.on) {
        NodePtr an = a.node();
        NodePtr on = result.node();
        track.tape->record([an, on, rows, cols, col]() {
            if (!an->requires_grad) {
                return;
            }
            for (std::size_t r = 0; r < rows; ++r) {
                an->grad[r * cols + col] += on->grad[r];
            }
        });
    }
    return result;
}

Tensor gather_per_row(const Tensor& a, std::span<const std::size_t> cols) {
    if (a.ndim() != 2) {
        throw std::invalid_argument("gather_per_row: expected a matrix; got " +
                                    shape_to_string(a.shape()));
    }
    const std::size_t rows = a.shape()[0];
    const std::size_t ncols = a.shape()[1];
    if (cols.size() != rows) {
        throw std::invalid_argument("gather_per_row: need one column index per row");
    }
    std::vector<double> out(rows);
    const auto ad = a.data();
    for (std::size_t r = 0; r < rows; ++r) {
        if (cols[r] >= ncols) {
            throw std::out_of_range("gather_per_row: column index out of range");
        }
        out[r] = ad[r * ncols + cols[r]];
    }
    auto track = tracking({&a});
    Tensor result(Shape{rows}, std::move(out), track.on);
    if (track.on) {
        NodePtr an = a.node();
        NodePtr on = result.node();
        std::vector<std::size_t> idx(cols.begin(), cols.end());
        track.tape->record([an, on, idx = std::move(idx), ncols]() {
            if (!an->requires_grad) {
                return;
            }
            for (std::size_t r = 0; r < idx.size(); ++r) {
                an->grad[r * ncols + idx[r]] += on->grad[r];
            }
        });
    }
    return result;
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> targets,
                          std::span<const double> row_weights) {
    if (logits.ndim() != 2) {
        throw std::invalid_argument("cross_entropy_rows: expected [rows, classes] logits; got " +
                                    shape_to_string(logits.shape()));
    }
    const std::size_t rows = logits.shape()[0];
    const std::size_t classes = logits.shape()[1];
    if (targets.size() != rows || row_weights.size() != rows) {
        throw std::invalid_argument("cross_entropy_rows: need one target and weight per row");
    }
    const auto zd = logits.data();
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] >= classes) {
            throw std::out_of_range("cross_entropy_rows: target class out of range");
        }
        const double* z = zd.data() + r * classes;
        double mx = z[0];
        for (std::size_t c = 1; c < classes; ++c) {
            mx = std::max(mx, z[c]);
        }
        double denom = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            denom += std::exp(z[c] - mx);
        }
        total += row_weights[r] * (mx + std::log(denom) - z[targets[r]]);
    }
    auto track = tracking({&logits});
    Tensor result(Shape{}, std::vector<double>{total}, track.on);
    if (track.on) {
        NodePtr zn = logits.node();
        NodePtr on = result.node();
        std::vector<std::size_t> tgt(targets.begin(), targets.end());
        std::vector<double> w(row_weights.begin(), row_weights.end());
        track.tape->record([zn, on, tgt = std::move(tgt), w = std::move(w), classes]() {
            if (!zn->requires_grad) {
                return;
            }
            const double g = on->grad[0];
            for (std::size_t r = 0; r < tgt.size(); ++r) {
                const double* z = zn->data.data() + r * classes;
                double mx = z[0];
                for (std::size_t c = 1; c < classes; ++c) {
                    mx = std::max(mx, z[c]);
                }
                double denom = 0.0;
                for (std::size_t c = 0; c < classes; ++c) {
                    denom += std::exp(z[c] - mx);
                }
                for (std::size_t c = 0; c < classes; ++c) {
                    const double sm = std::exp(z[c] - mx) / denom;
                    const double onehot = (c == tgt[r]) ? 1.0 : 0.0;
                    zn->grad[r * classes + c] += g * w[r] * (sm - onehot);
                }
            }
        });
    }
    return result;
}

Tensor image_to_patches(const Tensor& image, std::size_t patch) {
    const Shape& s = image.shape();
    if (s.size() != 3) {
        throw std::invalid_argument("image_to_patches: expected [channels, height, width]; got " +
                                    shape_to_string(s));
    }
    if (patch == 0) {
        throw std::invalid_argument("image_to_patches: patch size must be positive");
    }
    const std::size_t ch = s[0], h = s[1], w = s[2];
    if (h % patch != 0 || w % patch != 0) {
        const std::size_t ph = ((h + patch - 1) / patch) * patch;
        const std::size_t pw = ((w + patch - 1) / patch) * patch;
        throw std::invalid_argument(
            "image_to_patches: image " + shape_to_string(s) + " is not divisible by patch " +
            std::to_string(patch) + "; pad the image to " + std::to_string(ph) + "x" +
            std::to_string(pw));
    }
    const std::size_t gh = h / patch, gw = w / patch;
    const std::size_t tokens = gh * gw;
    const std::size_t feat = ch * patch * patch;
    std::vector<double> out(tokens * feat);
    const auto im = image.data();
    for (std::size_t gy = 0; gy < gh; ++gy) {
        for (std::size_t gx = 0; gx < gw; ++gx) {
            const std::size_t tok = gy * gw + gx;
            for (std::size_t c = 0; c < ch; ++c) {
                for (std::size_t py = 0; py < patch; ++py) {
                    const std::size_t src = c * h * w + (gy * patch + py) * w + gx * patch;
                    const std::size_t dst = tok * feat + (c * patch + py) * patch;
                    std::copy_n(im.data() + src, patch, out.data() + dst);
                }
            }
        }
    }
    auto track = tracking({&image});
    Tensor result(Shape{tokens, feat}, std::move(out), track.on);
    if (track.on) {
        NodePtr xn = image.node();
        NodePtr on = result.node();
        track.tape->record([xn, on, ch, h, w, patch, gh, gw, feat]() {
            if (!xn->requires_grad) {
                return;
            }
            for (std::size_t gy = 0; gy < gh; ++gy) {
                for (std::size_t gx = 0; gx < gw; ++gx) {
                    const std::size_t tok = gy * gw + gx;
                    for (std::size_t c = 0; c < ch; ++c) {
                        for (std::size_t py = 0; py < patch; ++py) {
                            const std::size_t dst = c * h * w + (gy * patch + py) * w + gx * patch;
                            const std::size_t src = tok * feat + (c * patch + py) * patch;
                            for (std::size_t px = 0; px < patch; ++px) {
                                xn->grad[dst + px] += on->grad[src + px];
                            }
                        }
                    }
                }
            }
        });
    }
    return result;
}

}  // namespace tinydetr
