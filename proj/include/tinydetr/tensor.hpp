#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tinydetr/rng.hpp"

namespace tinydetr {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

namespace detail {
struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // sized like data iff requires_grad
    bool requires_grad = false;
};
}  // namespace detail

// Dense row-major tensor of 64-bit floats. Copying a Tensor aliases the same
// storage (shared-node handle); deep copies go through clone().
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, double fill, bool requires_grad = false);
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t ndim() const { return shape().size(); }
    std::size_t size() const;
    bool requires_grad() const;
    void set_requires_grad(bool on);

    std::span<double> data();
    std::span<const double> data() const;
    std::span<double> grad();
    std::span<const double> grad() const;

    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    void zero_grad();
    Tensor clone() const;     // deep copy, grad not carried over
    Tensor detached() const;  // shares nothing with the graph; requires_grad off

    bool all_finite() const;
    double grad_norm() const;

    std::shared_ptr<detail::TensorNode> node() const { return node_; }

private:
    std::shared_ptr<detail::TensorNode> node_;
};

// Record of one training step's operations, in execution order (which is a
// topological order of the compute graph). backward() replays the recorded
// gradient rules in exact reverse order. A tape can run backward once; it must
// be cleared or replaced before the next use.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> backward_step);
    std::size_t size() const { return steps_.size(); }
    bool consumed() const { return consumed_; }
    void clear();

    // pre: loss is scalar and grad-tracked; tape nonempty and not consumed.
    void backward(const Tensor& loss);

    static Tape* active();

private:
    std::vector<std::function<void()>> steps_;
    bool consumed_ = false;
    friend class TapeScope;
};

// RAII activation of a tape for the current thread. Operations executed while
// a tape is active record their gradient rules onto it; without an active tape
// ops run forward-only and produce non-grad-tracked results.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

// Convenience: backward through the currently active tape.
void backward(const Tensor& loss);

// ---- elementwise ----
// Binary ops accept equal shapes, or a `b` whose shape is a trailing suffix of
// `a`'s shape (a scalar being the empty suffix). Broadcasting is asymmetric:
// only the second operand broadcasts.

enum class EwKind { add, sub, mul, relu, sigmoid, exp, log };

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double c);
Tensor sub(const Tensor& a, double c);
Tensor sub(double c, const Tensor& a);
Tensor mul(const Tensor& a, double c);
Tensor div(const Tensor& a, double c);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);  // rejects non-positive input
Tensor abs(const Tensor& x);
Tensor neg(const Tensor& x);

// Ties route the gradient to the first operand.
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);

// Dispatcher mirroring the op-kind enumeration; binary kinds require b.
Tensor elementwise(EwKind kind, const Tensor& a, const Tensor* b = nullptr);

// ---- linear algebra ----
// [L..., m, k] x [L..., k, n] -> [L..., m, n]; leading batch axes must match.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a, std::size_t axis0, std::size_t axis1);
Tensor reshape(const Tensor& a, Shape new_shape);

// ---- reductions and normalization ----
Tensor sum(const Tensor& a);                // -> scalar
Tensor sum_axis(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a);               // -> scalar
Tensor softmax(const Tensor& x, std::size_t axis);
// Normalizes slices along `axis` to zero mean / unit variance (epsilon 1e-5
// inside the square root), then applies gain and bias (shape [extent(axis)]).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, std::size_t axis);

// ---- indexing ----
Tensor select_rows(const Tensor& a, std::span<const std::size_t> rows);
Tensor select_col(const Tensor& a, std::size_t col);              // [R,C] -> [R]
Tensor gather_per_row(const Tensor& a, std::span<const std::size_t> cols);  // [R,C] -> [R]

// Sum over rows of weights[i] * cross_entropy(logits[i], targets[i]),
// computed with max-subtraction. Softmax-minus-onehot gradient.
Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> targets,
                          std::span<const double> row_weights);

// Splits [3,H,W] into non-overlapping patch rows [(H/p)*(W/p), 3*p*p],
// row-major over the patch grid.
Tensor image_to_patches(const Tensor& image, std::size_t patch);

constexpr double kLayerNormEpsilon = 1e-5;

}  // namespace tinydetr
