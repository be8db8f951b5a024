#include "owdet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace owdet {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (const std::int64_t e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

namespace {

void check_shape_positive(const Shape& shape) {
    for (const std::int64_t e : shape) {
        if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
}

// Row-major split of a shape around `axis`.
struct AxisSplit {
    std::int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::int64_t axis) {
    AxisSplit s;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(shape.size()); ++i) {
        const std::int64_t e = shape[static_cast<std::size_t>(i)];
        if (i < axis)
            s.outer *= e;
        else if (i == axis)
            s.len = e;
        else
            s.inner *= e;
    }
    return s;
}

bool is_scalar_like(const Tensor& t) { return t.numel() == 1 && t.dim() <= 1; }

void check_axis(const Tensor& t, std::int64_t axis, const char* op) {
    if (axis < 0 || axis >= t.dim())
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(t.shape()));
}

// c[n x m] += / = a[n x k] * b[k x m]
void mm_nn(const double* a, const double* b, double* c, std::int64_t n, std::int64_t k,
           std::int64_t m, bool accumulate) {
    if (!accumulate) std::fill(c, c + n * m, 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * m;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * m;
            for (std::int64_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[n x m] += a[n x k] * b[m x k]^T  (rows of b dotted with rows of a)
void mm_nt(const double* a, const double* b, double* c, std::int64_t n, std::int64_t k,
           std::int64_t m) {
    for (std::int64_t i = 0; i < n; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * m;
        for (std::int64_t j = 0; j < m; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// c[k x m] += a[n x k]^T * b[n x m]
void mm_tn(const double* a, const double* b, double* c, std::int64_t n, std::int64_t k,
           std::int64_t m) {
    for (std::int64_t i = 0; i < n; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * m;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + p * m;
            for (std::int64_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

Tensor make_tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->values = std::move(values);
    impl->requires_grad = requires_grad;
    if (static_cast<std::int64_t>(impl->values.size()) != shape_numel(impl->shape))
        throw ShapeError("value count " + std::to_string(impl->values.size()) +
                         " does not match shape " + shape_str(impl->shape));
    return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    check_shape_positive(shape);
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    return make_tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    check_shape_positive(shape);
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    return make_tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
    check_shape_positive(shape);
    return make_tensor(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return make_tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    check_shape_positive(shape);
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    std::vector<double> v(n);
    for (auto& x : v) x = rng.gaussian(0.0, stddev);
    return make_tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::identity(std::int64_t n) {
    std::vector<double> v(static_cast<std::size_t>(n * n), 0.0);
    for (std::int64_t i = 0; i < n; ++i) v[static_cast<std::size_t>(i * n + i)] = 1.0;
    return make_tensor(Shape{n, n}, std::move(v), false);
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return impl_->values[0];
}

double Tensor::at(std::int64_t row, std::int64_t col) const {
    if (dim() != 2) throw ContractError("at(row, col) on tensor of shape " + shape_str(shape()));
    return impl_->values[static_cast<std::size_t>(row * extent(1) + col)];
}

const std::vector<double>& Tensor::grad() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() const { impl_->grad.assign(impl_->values.size(), 0.0); }

void Tensor::accumulate_grad(const std::vector<double>& g) const {
    if (g.size() != impl_->values.size())
        throw ShapeError("gradient size " + std::to_string(g.size()) + " does not match tensor of shape " +
                         shape_str(shape()));
    auto& buf = grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

std::vector<double>& Tensor::grad_buffer() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
    return impl_->grad;
}

bool Tensor::all_finite() const {
    for (const double v : impl_->values)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor Tensor::clone() const {
    return make_tensor(impl_->shape, impl_->values, impl_->requires_grad);
}

Tape& Tape::instance() {
    thread_local Tape tape;
    return tape;
}

void Tape::run_backward() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    nodes_.clear();
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward() expects a scalar loss tensor");
    loss.grad_buffer()[0] += 1.0;
    Tape::instance().run_backward();
}

namespace {

// Shared plumbing for unary elementwise ops with dy/dx as a function of x.
template <typename Fwd, typename Dfn>
Tensor elementwise_unary(const Tensor& a, Fwd fwd, Dfn dfn) {
    std::vector<double> out(a.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.values()[i]);
    Tensor result = make_tensor(a.shape(), std::move(out),
                                Tape::instance().recording() && a.requires_grad());
    if (result.requires_grad()) {
        Tensor in = a;
        Tensor r = result;
        Tape::instance().record([in, r, dfn]() mutable {
            if (!r.grad_allocated()) return;
            const auto& g = r.grad();
            auto& ig = in.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ig[i] += g[i] * dfn(in.values()[i]);
        });
    }
    return result;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.dim() != 2 || b.dim() != 2)
        throw ShapeError("matmul expects 2-d operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    if (a.extent(1) != b.extent(0))
        throw ShapeError("matmul: inner dimensions do not match: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::int64_t n = a.extent(0), k = a.extent(1), m = b.extent(1);
    std::vector<double> out(static_cast<std::size_t>(n * m));
    mm_nn(a.values().data(), b.values().data(), out.data(), n, k, m, false);
    Tensor result = make_tensor(Shape{n, m}, std::move(out),
                                Tape::instance().recording() && (a.requires_grad() || b.requires_grad()));
    if (result.requires_grad()) {
        Tensor ta = a, tb = b, r = result;
        Tape::instance().record([ta, tb, r, n, k, m]() mutable {
            if (!r.grad_allocated()) return;
            const double* g = r.grad().data();
            if (ta.requires_grad()) mm_nt(g, tb.values().data(), ta.grad_buffer().data(), n, m, k);
            if (tb.requires_grad()) mm_tn(ta.values().data(), g, tb.grad_buffer().data(), n, k, m);
        });
    }
    return result;
}

namespace {

enum class BinKind { Add, Mul };

Tensor binary_broadcast(const Tensor& a, const Tensor& b, BinKind kind) {
    const char* name = kind == BinKind::Add ? "add" : "mul";
    const bool a_scalar = is_scalar_like(a), b_scalar = is_scalar_like(b);
    if (!a_scalar && !b_scalar && a.shape() != b.shape())
        throw ShapeError(std::string(name) + ": shapes do not conform: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    const Tensor& big = (b_scalar && !a_scalar) ? a : (a_scalar && !b_scalar ? b : a);
    const std::size_t n = big.values().size();
    std::vector<double> out(n);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < n; ++i) {
        const double x = a_scalar ? av[0] : av[i];
        const double y = b_scalar ? bv[0] : bv[i];
        out[i] = kind == BinKind::Add ? x + y : x * y;
    }
    Tensor result = make_tensor(big.shape(), std::move(out),
                                Tape::instance().recording() && (a.requires_grad() || b.requires_grad()));
    if (result.requires_grad()) {
        Tensor ta = a, tb = b, r = result;
        Tape::instance().record([ta, tb, r, kind, a_scalar, b_scalar]() mutable {
            if (!r.grad_allocated()) return;
            const auto& g = r.grad();
            if (ta.requires_grad()) {
                auto& ga = ta.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double w = kind == BinKind::Add ? 1.0 : (b_scalar ? tb.values()[0] : tb.values()[i]);
                    ga[a_scalar ? 0 : i] += g[i] * w;
                }
            }
            if (tb.requires_grad()) {
                auto& gb = tb.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double w = kind == BinKind::Add ? 1.0 : (a_scalar ? ta.values()[0] : ta.values()[i]);
                    gb[b_scalar ? 0 : i] += g[i] * w;
                }
            }
        });
    }
    return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_broadcast(a, b, BinKind::Add); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_broadcast(a, b, BinKind::Mul); }

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * s;
    Tensor result =
        make_tensor(a.shape(), std::move(out), Tape::instance().recording() && a.requires_grad());
    if (result.requires_grad()) {
        Tensor in = a;
        Tensor r = result;
        Tape::instance().record([in, r, s]() mutable {
            if (!r.grad_allocated()) return;
            const auto& g = r.grad();
            auto& ig = in.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ig[i] += g[i] * s;
        });
    }
    return result;
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const Tensor& first = parts.front();
    check_axis(first, axis, "concat");
    Shape out_shape = first.shape();
    std::int64_t axis_total = 0;
    for (const Tensor& p : parts) {
        if (p.dim() != first.dim())
            throw ShapeError("concat: rank mismatch: " + shape_str(first.shape()) + " vs " +
                             shape_str(p.shape()));
        for (std::int64_t d = 0; d < p.dim(); ++d) {
            if (d != axis && p.extent(d) != first.extent(d))
                throw ShapeError("concat: shapes do not conform off-axis: " + shape_str(first.shape()) +
                                 " vs " + shape_str(p.shape()));
        }
        axis_total += p.extent(axis);
    }
    out_shape[static_cast<std::size_t>(axis)] = axis_total;
    const AxisSplit os = split_at(out_shape, axis);
    std::vector<double> out(static_cast<std::size_t>(os.outer * os.len * os.inner));
    std::int64_t axis_offset = 0;
    for (const Tensor& p : parts) {
        const AxisSplit ps = split_at(p.shape(), axis);
        for (std::int64_t o = 0; o < ps.outer; ++o) {
            const double* src = p.values().data() + o * ps.len * ps.inner;
            double* dst = out.data() + (o * os.len + axis_offset) * os.inner;
            std::copy(src, src + ps.len * ps.inner, dst);
        }
        axis_offset += p.extent(axis);
    }
    bool any_grad = false;
    for (const Tensor& p : parts) any_grad = any_grad || p.requires_grad();
    Tensor result =
        make_tensor(std::move(out_shape), std::move(out), Tape::instance().recording() && any_grad);
    if (result.requires_grad()) {
        std::vector<Tensor> ins = parts;
        Tensor r = result;
        Tape::instance().record([ins, r, axis]() mutable {
            if (!r.grad_allocated()) return;
            const AxisSplit os = split_at(r.shape(), axis);
            const double* g = r.grad().data();
            std::int64_t axis_offset = 0;
            for (Tensor& p : ins) {
                const AxisSplit ps = split_at(p.shape(), axis);
                if (p.requires_grad()) {
                    double* dst = p.grad_buffer().data();
                    for (std::int64_t o = 0; o < ps.outer; ++o) {
                        const double* src = g + (o * os.len + axis_offset) * os.inner;
                        double* d = dst + o * ps.len * ps.inner;
                        for (std::int64_t i = 0; i < ps.len * ps.inner; ++i) d[i] += src[i];
                    }
                }
                axis_offset += p.extent(axis);
            }
        });
    }
    return result;
}

Tensor slice(const Tensor& a, std::int64_t axis, std::int64_t start, std::int64_t stop) {
    check_axis(a, axis, "slice");
    if (start < 0 || stop > a.extent(axis) || start >= stop)
        throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(stop) +
                         ") invalid for axis " + std::to_string(axis) + " of shape " +
                         shape_str(a.shape()));
    Shape out_shape = a.shape();
    out_shape[static_cast<std::size_t>(axis)] = stop - start;
    const AxisSplit as = split_at(a.shape(), axis);
    const std::int64_t out_len = stop - start;
    std::vector<double> out(static_cast<std::size_t>(as.outer * out_len * as.inner));
    for (std::int64_t o = 0; o < as.outer; ++o) {
        const double* src = a.values().data() + (o * as.len + start) * as.inner;
        std::copy(src, src + out_len * as.inner, out.data() + o * out_len * as.inner);
    }
    Tensor result = make_tensor(std::move(out_shape), std::move(out),
                                Tape::instance().recording() && a.requires_grad());
    if (result.requires_grad()) {
        Tensor in = a;
        Tensor r = result;
        Tape::instance().record([in, r, axis, start, out_len]() mutable {
            if (!r.grad_allocated()) return;
            const AxisSplit as = split_at(in.shape(), axis);
            const double* g = r.grad().data();
            double* dst = in.grad_buffer().data();
            for (std::int64_t o = 0; o < as.outer; ++o) {
                double* d = dst + (o * as.len + start) * as.inner;
                const double* s = g + o * out_len * as.inner;
                for (std::int64_t i = 0; i < out_len * as.inner; ++i) d[i] += s[i];
            }
        });
    }
    return result;
}

Tensor transpose(const Tensor& a) {
    if (a.dim() != 2) throw ShapeError("transpose expects a 2-d tensor, got " + shape_str(a.shape()));
    const std::int64_t n = a.extent(0), m = a.extent(1);
    std::vector<double> out(a.values().size());
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < m; ++j)
            out[static_cast<std::size_t>(j * n + i)] = a.values()[static_cast<std::size_t>(i * m + j)];
    Tensor result =
        make_tensor(Shape{m, n}, std::move(out), Tape::instance().recording() && a.requires_grad());
    if (result.requires_grad()) {
        Tensor in = a;
        Tensor r = result;
        Tape::instance().record([in, r, n, m]() mutable {
            if (!r.grad_allocated()) return;
            const auto& g = r.grad();
            auto& ig = in.grad_buffer();
            for (std::int64_t j = 0; j < m; ++j)
                for (std::int64_t i = 0; i < n; ++i)
                    ig[static_cast<std::size_t>(i * m + j)] += g[static_cast<std::size_t>(j * n + i)];
        });
    }
    return result;
}

Tensor softmax(const Tensor& a) {
    if (a.dim() < 1) throw ShapeError("softmax expects rank >= 1, got " + shape_str(a.shape()));
    const std::int64_t d = a.extent(a.dim() - 1);
    const std::int64_t rows = a.numel() / d;
    std::vector<double> out(a.values().size());
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* x = a.values().data() + r * d;
        double* y = out.data() + r * d;
        double mx = x[0];
        for (std::int64_t i = 1; i < d; ++i) mx = std::max(mx, x[i]);
        double total = 0.0;
        for (std::int64_t i = 0; i < d; ++i) {
            y[i] = std::exp(x[i] - mx);
            total += y[i];
        }
        for (std::int64_t i = 0; i < d; ++i) y[i] /= total;
    }
    Tensor result =
        make_tensor(a.shape(), std::move(out), Tape::instance().recording() && a.requires_grad());
    if (result.requires_grad()) {
        Tensor in = a;
        Tensor r = result;
        Tape::instance().record([in, r, rows, d]() mutable {
            if (!r.grad_allocated()) return;
            const auto& g = r.grad();
            auto& ig = in.grad_buffer();
            for (std::int64_t row = 0; row < rows; ++row) {
                const double* y = r.values().data() + row * d;
                const double* gr = g.data() + row * d;
                double dot = 0.0;
                for (std::int64_t i = 0; i < d; ++i) dot += gr[i] * y[i];
                double* gi = ig.data() + row * d;
                for (std::int64_t i = 0; i < d; ++i) gi[i] += y[i] * (gr[i] - dot);
            }
        });
    }
    return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.dim() < 1) throw ShapeError("layer_norm expects rank >= 1, got " + shape_str(x.shape()));
    const std::int64_t d = x.extent(x.dim() - 1);
    if (gamma.numel() != d || beta.numel() != d)
        throw ShapeError("layer_norm: affine parameters must match last axis " + std::to_string(d) +
                         ", got " + shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    const std::int64_t rows = x.numel() / d;
    std::vector<double> out(x.values().size());
    std::vector<double> xhat(x.values().size());
    std::vector<double> inv_sigma(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = x.values().data() + r * d;
        double mu = 0.0;
        for (std::int64_t i = 0; i < d; ++i) mu += xr[i];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_sigma[static_cast<std::size_t>(r)] = inv;
        for (std::int64_t i = 0; i < d; ++i) {
            const double h = (xr[i] - mu) * inv;
            xhat[static_cast<std::size_t>(r * d + i)] = h;
            out[static_cast<std::size_t>(r * d + i)] = h * gamma.values()[static_cast<std::size_t>(i)] +
                                                       beta.values()[static_cast<std::size_t>(i)];
        }
    }
    const bool rg = Tape::instance().recording() &&
                    (x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
    Tensor result = make_tensor(x.shape(), std::move(out), rg);
    if (rg) {
        Tensor tx = x, tg = gamma, tb = beta, r = result;
        auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
        auto inv = std::make_shared<std::vector<double>>(std::move(inv_sigma));
        Tape::instance().record([tx, tg, tb, r, xh, inv, rows, d]() mutable {
            if (!r.grad_allocated()) return;
            const auto& g = r.grad();
            for (std::int64_t row = 0; row < rows; ++row) {
                const double* gr = g.data() + row * d;
                const double* h = xh->data() + row * d;
                if (tg.requires_grad()) {
                    auto& gg = tg.grad_buffer();
                    for (std::int64_t i = 0; i < d; ++i) gg[static_cast<std::size_t>(i)] += gr[i] * h[i];
                }
                if (tb.requires_grad()) {
                    auto& gb = tb.grad_buffer();
                    for (std::int64_t i = 0; i < d; ++i) gb[static_cast<std::size_t>(i)] += gr[i];
                }
                if (tx.requires_grad()) {
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (std::int64_t i = 0; i < d; ++i) {
                        const double dh = gr[i] * tg.values()[static_cast<std::size_t>(i)];
                        mean_dh += dh;
                        mean_dh_h += dh * h[i];
                    }
                    mean_dh /= static_cast<double>(d);
                    mean_dh_h /= static_cast<double>(d);
                    auto& gx = tx.grad_buffer();
                    const double is = (*inv)[static_cast<std::size_t>(row)];
                    for (std::int64_t i = 0; i < d; ++i) {
                        const double dh = gr[i] * tg.values()[static_cast<std::size_t>(i)];
                        gx[static_cast<std::size_t>(row * d + i)] +=
                            is * (dh - mean_dh - h[i] * mean_dh_h);
                    }
                }
            }
        });
    }
    return result;
}

Tensor relu(const Tensor& a) {
    return elementwise_unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

Tensor gelu(const Tensor& a) {
    return elementwise_unary(
        a,
        [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
        [](double x) {
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            return cdf + x * pdf;
        });
}

Tensor sigmoid(const Tensor& a) {
    return elementwise_unary(
        a,
        [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
        [](double x) {
            const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
            return s * (1.0 - s);
        });
}

Tensor log(const Tensor& a) {
    for (const double v : a.values())
        if (!(v > 0.0))
            throw NumericError("log: domain error: non-positive input " + std::to_string(v));
    return elementwise_unary(
        a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

namespace {

Tensor reduce_all(const Tensor& a, bool take_mean) {
    double total = 0.0;
    for (const double v : a.values()) total += v;
    const double denom = take_mean ? static_cast<double>(a.numel()) : 1.0;
    Tensor result = Tensor::scalar(total / denom);
    if (Tape::instance().recording() && a.requires_grad()) {
        result.set_requires_grad(true);
        Tensor in = a;
        Tensor r = result;
        Tape::instance().record([in, r, denom]() mutable {
            if (!r.grad_allocated()) return;
            const double g = r.grad()[0] / denom;
            auto& ig = in.grad_buffer();
            for (auto& v : ig) v += g;
        });
    }
    return result;
}

Tensor reduce_axis(const Tensor& a, std::int64_t axis, bool take_mean) {
    check_axis(a, axis, take_mean ? "mean" : "sum");
    const AxisSplit as = split_at(a.shape(), axis);
    Shape out_shape = a.shape();
    out_shape[static_cast<std::size_t>(axis)] = 1;  // reductions keep a unit axis
    std::vector<double> out(static_cast<std::size_t>(as.outer * as.inner), 0.0);
    for (std::int64_t o = 0; o < as.outer; ++o)
        for (std::int64_t l = 0; l < as.len; ++l) {
            const double* src = a.values().data() + (o * as.len + l) * as.inner;
            double* dst = out.data() + o * as.inner;
            for (std::int64_t i = 0; i < as.inner; ++i) dst[i] += src[i];
        }
    const double denom = take_mean ? static_cast<double>(as.len) : 1.0;
    if (take_mean)
        for (auto& v : out) v /= denom;
    Tensor result = make_tensor(std::move(out_shape), std::move(out),
                                Tape::instance().recording() && a.requires_grad());
    if (result.requires_grad()) {
        Tensor in = a;
        Tensor r = result;
        Tape::instance().record([in, r, axis, denom]() mutable {
            if (!r.grad_allocated()) return;
            const AxisSplit as = split_at(in.shape(), axis);
            const double* g = r.grad().data();
            double* dst = in.grad_buffer().data();
            for (std::int64_t o = 0; o < as.outer; ++o)
                for (std::int64_t l = 0; l < as.len; ++l) {
                    double* d = dst + (o * as.len + l) * as.inner;
                    const double* s = g + o * as.inner;
                    for (std::int64_t i = 0; i < as.inner; ++i) d[i] += s[i] / denom;
                }
        });
    }
    return result;
}

}  // namespace

Tensor sum(const Tensor& a) { return reduce_all(a, false); }
Tensor mean(const Tensor& a) { return reduce_all(a, true); }
Tensor sum(const Tensor& a, std::int64_t axis) { return reduce_axis(a, axis, false); }
Tensor mean(const Tensor& a, std::int64_t axis) { return reduce_axis(a, axis, true); }

Tensor l2_normalize(const Tensor& a) {
    if (a.dim() < 1) throw ShapeError("l2_normalize expects rank >= 1, got " + shape_str(a.shape()));
    const std::int64_t d = a.extent(a.dim() - 1);
    const std::int64_t rows = a.numel() / d;
    std::vector<double> out(a.values().size());
    std::vector<double> norms(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* x = a.values().data() + r * d;
        double sq = 0.0;
        for (std::int64_t i = 0; i < d; ++i) sq += x[i] * x[i];
        const double norm = std::sqrt(sq);
        if (norm == 0.0) throw NumericError("l2_normalize: zero-norm row");
        norms[static_cast<std::size_t>(r)] = norm;
        for (std::int64_t i = 0; i < d; ++i) out[static_cast<std::size_t>(r * d + i)] = x[i] / norm;
    }
    Tensor result =
        make_tensor(a.shape(), std::move(out), Tape::instance().recording() && a.requires_grad());
    if (result.requires_grad()) {
        Tensor in = a;
        Tensor r = result;
        auto saved = std::make_shared<std::vector<double>>(std::move(norms));
        Tape::instance().record([in, r, saved, rows, d]() mutable {
            if (!r.grad_allocated()) return;
            const auto& g = r.grad();
            auto& ig = in.grad_buffer();
            for (std::int64_t row = 0; row < rows; ++row) {
                const double* y = r.values().data() + row * d;
                const double* gr = g.data() + row * d;
                double dot = 0.0;
                for (std::int64_t i = 0; i < d; ++i) dot += gr[i] * y[i];
                const double inv = 1.0 / (*saved)[static_cast<std::size_t>(row)];
                double* gi = ig.data() + row * d;
                for (std::int64_t i = 0; i < d; ++i) gi[i] += (gr[i] - y[i] * dot) * inv;
            }
        });
    }
    return result;
}

Tensor custom_op(Shape out_shape, std::vector<double> out_values, const std::vector<Tensor>& inputs,
                 std::function<void(const std::vector<double>& grad_out)> backward_fn) {
    bool any_grad = false;
    for (const Tensor& t : inputs) any_grad = any_grad || t.requires_grad();
    Tensor result = make_tensor(std::move(out_shape), std::move(out_values),
                                Tape::instance().recording() && any_grad);
    if (result.requires_grad()) {
        Tensor r = result;
        Tape::instance().record([r, fn = std::move(backward_fn)]() mutable {
            if (!r.grad_allocated()) return;
            fn(r.grad());
        });
    }
    return result;
}

}  // namespace owdet
