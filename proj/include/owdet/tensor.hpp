#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "owdet/errors.hpp"
#include "owdet/rng.hpp"

namespace owdet {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl {
    Shape shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until first accumulation
};
}  // namespace detail

// Dense row-major float64 tensor participating in a reverse-mode gradient
// tape. Value-semantics handle: copies share storage; forward ops never
// mutate an existing tensor.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);
    static Tensor identity(std::int64_t n);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::int64_t dim() const { return static_cast<std::int64_t>(impl_->shape.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(impl_->values.size()); }
    std::int64_t extent(std::int64_t axis) const { return impl_->shape[static_cast<std::size_t>(axis)]; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool flag) { impl_->requires_grad = flag; }

    const std::vector<double>& values() const { return impl_->values; }
    // Parameter mutation (optimizer / loaders). Never call on a tensor that
    // is an op output of a live tape. Const because handles share storage.
    std::vector<double>& mutable_values() const { return impl_->values; }

    double item() const;
    double at(std::int64_t row, std::int64_t col) const;

    // Gradient buffer, lazily allocated as zeros. Handles share storage, so
    // gradient mutation is allowed through const handles.
    const std::vector<double>& grad() const;
    bool grad_allocated() const { return !impl_->grad.empty(); }
    void zero_grad() const;
    void accumulate_grad(const std::vector<double>& g) const;
    std::vector<double>& grad_buffer() const;

    bool all_finite() const;
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
    Tensor clone() const;

private:
    std::shared_ptr<detail::TensorImpl> impl_;
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    friend Tensor make_tensor(Shape, std::vector<double>, bool);
};

Tensor make_tensor(Shape shape, std::vector<double> values, bool requires_grad);

// Single global (thread-local) gradient tape. Forward ops append a backward
// closure when recording is on and any input requires grad; backward() walks
// the closures in reverse and clears the tape.
class Tape {
public:
    static Tape& instance();
    void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }
    bool recording() const { return enabled_; }
    void set_enabled(bool on) { enabled_ = on; }
    void clear() { nodes_.clear(); }
    std::size_t size() const { return nodes_.size(); }
    void run_backward();

private:
    std::vector<std::function<void()>> nodes_;
    bool enabled_ = true;
};

// Disables tape recording for inference-only evaluation.
class NoGradGuard {
public:
    NoGradGuard() : prev_(Tape::instance().recording()) { Tape::instance().set_enabled(false); }
    ~NoGradGuard() { Tape::instance().set_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Seeds d(loss)/d(loss) = 1, runs the tape in reverse, clears it.
void backward(const Tensor& loss);

// ---- forward op set ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);   // same shape, or one side scalar
Tensor mul(const Tensor& a, const Tensor& b);   // same shape, or one side scalar
Tensor scale(const Tensor& a, double s);
Tensor sub(const Tensor& a, const Tensor& b);   // add(a, scale(b, -1))
Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis);
Tensor slice(const Tensor& a, std::int64_t axis, std::int64_t start, std::int64_t stop);
Tensor transpose(const Tensor& a);  // 2-d
Tensor softmax(const Tensor& a);    // last axis
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);        // domain error on non-positive input
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a, std::int64_t axis);
Tensor mean(const Tensor& a, std::int64_t axis);
Tensor l2_normalize(const Tensor& a);  // last axis

// Extension point for fused differentiable kernels (loss functions own their
// analytic backward). `backward_fn` receives d(loss)/d(out) and must
// accumulate into the inputs it captured.
Tensor custom_op(Shape out_shape, std::vector<double> out_values,
                 const std::vector<Tensor>& inputs,
                 std::function<void(const std::vector<double>& grad_out)> backward_fn);

}  // namespace owdet
