#pragma once

// Dense float64 tensors with a per-computation reverse-mode tape.
//
// A Tensor is a handle onto shared storage: copying a Tensor aliases the same
// buffer, which is how model parameters stay connected to the tape that
// records operations on them. Use clone() for an independent copy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "metasel/errors.hpp"

namespace metasel {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

class Tensor {
   public:
    Tensor() : Tensor(Shape{0}, {}) {}

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : storage_(std::make_shared<Storage>()) {
        if (shape_size(shape) != data.size()) {
            throw ShapeError("tensor shape " + shape_str(shape) + " does not hold " +
                             std::to_string(data.size()) + " values");
        }
        storage_->shape = std::move(shape);
        storage_->data = std::move(data);
        storage_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<double> data(shape_size(shape), 0.0);
        return Tensor(std::move(shape), std::move(data), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return Tensor(Shape{1}, {v}, requires_grad);
    }

    static Tensor vector(std::vector<double> v, bool requires_grad = false) {
        Shape s{v.size()};
        return Tensor(std::move(s), std::move(v), requires_grad);
    }

    const Shape& shape() const { return storage_->shape; }
    std::size_t rank() const { return storage_->shape.size(); }
    std::size_t size() const { return storage_->data.size(); }
    std::size_t dim(std::size_t i) const { return storage_->shape.at(i); }

    std::span<const double> data() const { return storage_->data; }
    /// Writes through to every handle sharing this storage.
    std::span<double> mutable_data() { return storage_->data; }
    double operator[](std::size_t i) const { return storage_->data[i]; }

    double item() const {
        if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return storage_->data[0];
    }

    bool requires_grad() const { return storage_->requires_grad; }
    void set_requires_grad(bool v) { storage_->requires_grad = v; }

    bool has_grad() const { return storage_->grad.size() == size(); }
    std::span<const double> grad() const { return storage_->grad; }
    // Gradient buffers are tape bookkeeping, writable through any handle.
    std::span<double> mutable_grad() const {
        ensure_grad();
        return storage_->grad;
    }
    void ensure_grad() const {
        if (storage_->grad.size() != size()) storage_->grad.assign(size(), 0.0);
    }
    void zero_grad() const { std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0); }
    void clear_grad() { storage_->grad.clear(); }

    /// Independent deep copy of data and flag; gradient is not copied.
    Tensor clone() const { return Tensor(shape(), storage_->data, requires_grad()); }

    bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

   private:
    struct Storage {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Storage> storage_;
};

/// Append-only record of differentiable operations executed in one computation.
class Tape {
   public:
    using BackwardFn = std::function<void()>;

    void record(Tensor output, BackwardFn fn) { nodes_.push_back({std::move(output), std::move(fn)}); }

    std::size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }
    void clear() { nodes_.clear(); }

    /// Propagates d(seed*loss) back through every recorded node, newest first,
    /// accumulating into the grad buffers of tensors that require gradients.
    void backward(Tensor loss, double seed = 1.0) {
        if (loss.size() != 1) {
            throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
        }
        if (nodes_.empty() || !loss.requires_grad()) {
            clear();
            throw StateError("backward() on a loss that was not produced under this tape");
        }
        loss.ensure_grad();
        loss.mutable_grad()[0] += seed;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (it->output.grad().empty()) continue;
            it->fn();
        }
        nodes_.clear();
    }

   private:
    struct Node {
        Tensor output;
        BackwardFn fn;
    };
    std::vector<Node> nodes_;
};

inline void backward(Tape& tape, Tensor loss, double seed = 1.0) { tape.backward(std::move(loss), seed); }

namespace detail {

inline bool taping(const Tape* tape, std::initializer_list<const Tensor*> inputs) {
    if (tape == nullptr) return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

inline void accumulate(Tensor target, std::span<const double> delta) {
    if (!target.requires_grad()) return;
    auto g = target.mutable_grad();
    for (std::size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

}  // namespace detail

/// Matrix product of a [m x k] by b [k x n]. A rank-1 `a` of length k is
/// treated as a single row and yields a rank-1 result of length n.
inline Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    const bool row = a.rank() == 1;
    if ((a.rank() != 2 && !row) || b.rank() != 2) {
        throw DimensionError("matmul expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const std::size_t m = row ? 1 : a.dim(0);
    const std::size_t k = row ? a.dim(0) : a.dim(1);
    const std::size_t n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul inner dimensions differ: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    auto A = a.data();
    auto B = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            if (av == 0.0) continue;
            const double* brow = &B[p * n];
            double* orow = &out[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    const bool track = detail::taping(tape, {&a, &b});
    Tensor result(row ? Shape{n} : Shape{m, n}, std::move(out), track);
    if (track) {
        tape->record(result, [a, b, result, m, k, n]() mutable {
            auto G = result.grad();
            auto A = a.data();
            auto B = b.data();
            if (a.requires_grad()) {
                auto ga = a.mutable_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[p * n + j];
                        ga[i * k + p] += s;
                    }
            }
            if (b.requires_grad()) {
                auto gb = b.mutable_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = A[i * k + p];
                        if (av == 0.0) continue;
                        for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * G[i * n + j];
                    }
            }
        });
    }
    return result;
}

inline Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    const bool track = detail::taping(tape, {&a, &b});
    Tensor result(a.shape(), std::move(out), track);
    if (track) {
        tape->record(result, [a, b, result]() mutable {
            detail::accumulate(a, result.grad());
            detail::accumulate(b, result.grad());
        });
    }
    return result;
}

/// Adds bias[j] to every row of x [m x n] (or to x [n] directly).
inline Tensor add_row_bias(const Tensor& x, const Tensor& bias, Tape* tape = nullptr) {
    const std::size_t n = x.shape().back();
    if (bias.size() != n) {
        throw DimensionError("add_row_bias: bias of " + std::to_string(bias.size()) + " for rows of " +
                             std::to_string(n));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i % n];
    const bool track = detail::taping(tape, {&x, &bias});
    Tensor result(x.shape(), std::move(out), track);
    if (track) {
        tape->record(result, [x, bias, result, n]() mutable {
            auto G = result.grad();
            detail::accumulate(x, G);
            if (bias.requires_grad()) {
                auto gb = bias.mutable_grad();
                for (std::size_t i = 0; i < G.size(); ++i) gb[i % n] += G[i];
            }
        });
    }
    return result;
}

/// Adds bias[c] to every element of channel c of x [C x ...].
inline Tensor add_channel_bias(const Tensor& x, const Tensor& bias, Tape* tape = nullptr) {
    if (x.rank() < 2 || bias.size() != x.dim(0)) {
        throw DimensionError("add_channel_bias: bias " + shape_str(bias.shape()) + " for input " +
                             shape_str(x.shape()));
    }
    const std::size_t per = x.size() / x.dim(0);
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i / per];
    const bool track = detail::taping(tape, {&x, &bias});
    Tensor result(x.shape(), std::move(out), track);
    if (track) {
        tape->record(result, [x, bias, result, per]() mutable {
            auto G = result.grad();
            detail::accumulate(x, G);
            if (bias.requires_grad()) {
                auto gb = bias.mutable_grad();
                for (std::size_t i = 0; i < G.size(); ++i) gb[i / per] += G[i];
            }
        });
    }
    return result;
}

inline Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    const bool track = detail::taping(tape, {&a, &b});
    Tensor result(a.shape(), std::move(out), track);
    if (track) {
        tape->record(result, [a, b, result]() mutable {
            auto G = result.grad();
            std::vector<double> d(G.size());
            if (a.requires_grad()) {
                for (std::size_t i = 0; i < d.size(); ++i) d[i] = G[i] * b[i];
                detail::accumulate(a, d);
            }
            if (b.requires_grad()) {
                for (std::size_t i = 0; i < d.size(); ++i) d[i] = G[i] * a[i];
                detail::accumulate(b, d);
            }
        });
    }
    return result;
}

inline Tensor scale(const Tensor& a, double s, Tape* tape = nullptr) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
    const bool track = detail::taping(tape, {&a});
    Tensor result(a.shape(), std::move(out), track);
    if (track) {
        tape->record(result, [a, result, s]() mutable {
            auto G = result.grad();
            std::vector<double> d(G.begin(), G.end());
            for (auto& v : d) v *= s;
            detail::accumulate(a, d);
        });
    }
    return result;
}

inline Tensor relu(const Tensor& a, Tape* tape = nullptr) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
    const bool track = detail::taping(tape, {&a});
    Tensor result(a.shape(), std::move(out), track);
    if (track) {
        tape->record(result, [a, result]() mutable {
            auto G = result.grad();
            std::vector<double> d(G.size());
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = a[i] > 0.0 ? G[i] : 0.0;
            detail::accumulate(a, d);
        });
    }
    return result;
}

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a, Tape* tape = nullptr) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid(a[i]);
    const bool track = detail::taping(tape, {&a});
    Tensor result(a.shape(), std::move(out), track);
    if (track) {
        tape->record(result, [a, result]() mutable {
            auto G = result.grad();
            std::vector<double> d(G.size());
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = G[i] * result[i] * (1.0 - result[i]);
            detail::accumulate(a, d);
        });
    }
    return result;
}

inline Tensor sum(const Tensor& a, Tape* tape = nullptr) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    const bool track = detail::taping(tape, {&a});
    Tensor result = Tensor::scalar(s, track);
    if (track) {
        tape->record(result, [a, result]() mutable {
            std::vector<double> d(a.size(), result.grad()[0]);
            detail::accumulate(a, d);
        });
    }
    return result;
}

/// Same values under a new shape of equal element count.
inline Tensor reshape(const Tensor& a, Shape shape, Tape* tape = nullptr) {
    if (shape_size(shape) != a.size()) {
        throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
    }
    const bool track = detail::taping(tape, {&a});
    Tensor result(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()), track);
    if (track) {
        tape->record(result, [a, result]() mutable { detail::accumulate(a, result.grad()); });
    }
    return result;
}

inline Tensor flatten(const Tensor& a, Tape* tape = nullptr) { return reshape(a, Shape{a.size()}, tape); }

/// Concatenates two tensors into one rank-1 tensor (a's values first).
inline Tensor concat(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    std::vector<double> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.data().begin(), a.data().end());
    out.insert(out.end(), b.data().begin(), b.data().end());
    const bool track = detail::taping(tape, {&a, &b});
    Tensor result = Tensor::vector(std::move(out), track);
    if (track) {
        const std::size_t na = a.size();
        tape->record(result, [a, b, result, na]() mutable {
            auto G = result.grad();
            detail::accumulate(a, G.subspan(0, na));
            detail::accumulate(b, G.subspan(na));
        });
    }
    return result;
}

/// Valid-padding, stride-1 cross-correlation.
///
/// dims == 1: input [L] with kernel [k], or input [Cin x L] with kernel [Cout x Cin x k].
/// dims == 2: input [H x W] with kernel [kh x kw], or input [Cin x H x W] with
///            kernel [Cout x Cin x kh x kw].
/// Plain (channel-less) operands produce a channel-less result.
inline Tensor conv(const Tensor& input, const Tensor& kernel, int dims, Tape* tape = nullptr) {
    if (dims != 1 && dims != 2) throw DimensionError("conv supports dims 1 or 2, got " + std::to_string(dims));
    const std::size_t ud = static_cast<std::size_t>(dims);
    const bool plain = input.rank() == ud && kernel.rank() == ud;
    const bool channels = input.rank() == ud + 1 && kernel.rank() == ud + 2;
    if (!plain && !channels) {
        throw DimensionError("conv" + std::to_string(dims) + "d: incompatible ranks " + shape_str(input.shape()) +
                             " and " + shape_str(kernel.shape()));
    }
    std::size_t cin = 1, cout = 1, h = 1, w, kh = 1, kw;
    if (plain) {
        if (dims == 2) {
            h = input.dim(0);
            kh = kernel.dim(0);
        }
        w = input.shape().back();
        kw = kernel.shape().back();
    } else {
        cin = input.dim(0);
        cout = kernel.dim(0);
        if (kernel.dim(1) != cin) {
            throw DimensionError("conv: kernel expects " + std::to_string(kernel.dim(1)) + " input channels, got " +
                                 std::to_string(cin));
        }
        if (dims == 2) {
            h = input.dim(1);
            kh = kernel.dim(2);
        }
        w = input.shape().back();
        kw = kernel.shape().back();
    }
    if (kh > h || kw > w || kh == 0 || kw == 0) {
        throw DimensionError("conv: kernel " + shape_str(kernel.shape()) + " does not fit input " +
                             shape_str(input.shape()));
    }
    const std::size_t oh = h - kh + 1, ow = w - kw + 1;
    std::vector<double> out(cout * oh * ow, 0.0);
    auto X = input.data();
    auto K = kernel.data();
    for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t ky = 0; ky < kh; ++ky)
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const double kv = K[((o * cin + c) * kh + ky) * kw + kx];
                    for (std::size_t y = 0; y < oh; ++y) {
                        const double* xrow = &X[(c * h + y + ky) * w + kx];
                        double* orow = &out[(o * oh + y) * ow];
                        for (std::size_t x = 0; x < ow; ++x) orow[x] += kv * xrow[x];
                    }
                }
    Shape oshape;
    if (channels) oshape.push_back(cout);
    if (dims == 2) oshape.push_back(oh);
    oshape.push_back(ow);

    const bool track = detail::taping(tape, {&input, &kernel});
    Tensor result(std::move(oshape), std::move(out), track);
    if (track) {
        tape->record(result, [input, kernel, result, cin, cout, h, w, kh, kw, oh, ow]() mutable {
            auto G = result.grad();
            auto X = input.data();
            auto K = kernel.data();
            const bool gi = input.requires_grad(), gk = kernel.requires_grad();
            std::span<double> GX, GK;
            if (gi) GX = input.mutable_grad();
            if (gk) GK = kernel.mutable_grad();
            for (std::size_t o = 0; o < cout; ++o)
                for (std::size_t c = 0; c < cin; ++c)
                    for (std::size_t ky = 0; ky < kh; ++ky)
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::size_t ki = ((o * cin + c) * kh + ky) * kw + kx;
                            double acc = 0.0;
                            for (std::size_t y = 0; y < oh; ++y) {
                                const std::size_t xi = (c * h + y + ky) * w + kx;
                                const double* grow = &G[(o * oh + y) * ow];
                                if (gk)
                                    for (std::size_t x = 0; x < ow; ++x) acc += grow[x] * X[xi + x];
                                if (gi) {
                                    const double kv = K[ki];
                                    for (std::size_t x = 0; x < ow; ++x) GX[xi + x] += grow[x] * kv;
                                }
                            }
                            if (gk) GK[ki] += acc;
                        }
        });
    }
    return result;
}

/// Numerically stable softmax of a rank-1 logit vector (not taped).
inline std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.begin(), logits.end());
    if (p.empty()) return p;
    const double mx = *std::max_element(p.begin(), p.end());
    double z = 0.0;
    for (auto& v : p) {
        v = std::exp(v - mx);
        z += v;
    }
    for (auto& v : p) v /= z;
    return p;
}

inline std::vector<double> softmax(const Tensor& logits) { return softmax(logits.data()); }

inline double log_sum_exp(std::span<const double> v) {
    const double mx = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

/// -log softmax(logits)[target]; gradient w.r.t. logits is softmax - onehot(target).
inline Tensor softmax_cross_entropy(const Tensor& logits, std::size_t target, Tape* tape = nullptr) {
    if (logits.rank() != 1 || logits.size() == 0) {
        throw ShapeError("softmax_cross_entropy expects rank-1 logits, got " + shape_str(logits.shape()));
    }
    if (target >= logits.size()) {
        throw IndexError("target class " + std::to_string(target) + " out of range for " +
                         std::to_string(logits.size()) + " classes");
    }
    const double loss = log_sum_exp(logits.data()) - logits[target];
    const bool track = detail::taping(tape, {&logits});
    Tensor result = Tensor::scalar(loss, track);
    if (track) {
        tape->record(result, [logits, result, target]() mutable {
            auto p = softmax(logits.data());
            p[target] -= 1.0;
            const double g = result.grad()[0];
            for (auto& v : p) v *= g;
            detail::accumulate(logits, p);
        });
    }
    return result;
}

/// weight * binary cross-entropy of sigmoid(logit) against target in {0,1},
/// computed from the logit directly for stability.
inline Tensor sigmoid_bce(const Tensor& logit, double target, double weight = 1.0, Tape* tape = nullptr) {
    if (logit.size() != 1) throw ShapeError("sigmoid_bce expects a single logit, got " + shape_str(logit.shape()));
    const double z = logit[0];
    // log(1 + e^-|z|) + max(z, 0) - z*y
    const double loss = weight * (std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - z * target);
    const bool track = detail::taping(tape, {&logit});
    Tensor result = Tensor::scalar(loss, track);
    if (track) {
        tape->record(result, [logit, result, target, weight]() mutable {
            const double d = result.grad()[0] * weight * (sigmoid(logit[0]) - target);
            detail::accumulate(logit, std::span<const double>(&d, 1));
        });
    }
    return result;
}

/// SGD with classical momentum: v <- momentum*v + g; p <- p - lr*v.
class Sgd {
   public:
    Sgd(std::vector<Tensor> params, double lr, double momentum = 0.0)
        : params_(std::move(params)), lr_(lr), momentum_(momentum) {
        velocity_.reserve(params_.size());
        for (const auto& p : params_) velocity_.emplace_back(p.size(), 0.0);
    }

    /// Applies one update using the accumulated gradients times grad_scale, then zeroes them.
    void step(double grad_scale = 1.0) {
        for (auto& p : params_) {
            if (!p.has_grad()) throw StateError("sgd step: parameter has no gradient");
        }
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto data = params_[i].mutable_data();
            auto grad = params_[i].mutable_grad();
            auto& v = velocity_[i];
            for (std::size_t j = 0; j < data.size(); ++j) {
                v[j] = momentum_ * v[j] + grad_scale * grad[j];
                data[j] -= lr_ * v[j];
            }
            params_[i].zero_grad();
        }
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

   private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> velocity_;
    double lr_;
    double momentum_;
};

/// Single momentum-free step on a parameter list.
inline void sgd_step(std::vector<Tensor> params, double lr, double momentum = 0.0) {
    Sgd(std::move(params), lr, momentum).step();
}

}  // namespace metasel
