#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "orthoscore/detail/gemm.hpp"
#include "orthoscore/errors.hpp"
#include "orthoscore/rng.hpp"

namespace orthoscore {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

template <class T>
struct TensorImpl {
    Shape shape;
    // Shared so that a view with its own gradient buffer can reuse the same
    // values (read-only while any view is live on another thread).
    std::shared_ptr<std::vector<T>> data;
    std::vector<T> grad; // empty until first accumulation
    bool requires_grad = false;
};

// Dense row-major tensor handle. Copies are shallow; ops create fresh
// tensors and record their backward rules on the active tape.
template <class T>
class TensorT {
public:
    TensorT() = default;

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        TensorT t;
        t.impl_ = std::make_shared<TensorImpl<T>>();
        t.impl_->shape = std::move(shape);
        t.impl_->data = std::make_shared<std::vector<T>>(
            static_cast<size_t>(shape_numel(t.impl_->shape)), T(0));
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    static TensorT from(Shape shape, std::vector<T> values, bool requires_grad = false) {
        if (static_cast<int64_t>(values.size()) != shape_numel(shape)) {
            fail(ErrorKind::Shape,
                 "tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
        }
        TensorT t;
        t.impl_ = std::make_shared<TensorImpl<T>>();
        t.impl_->shape = std::move(shape);
        t.impl_->data = std::make_shared<std::vector<T>>(std::move(values));
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    static TensorT scalar(T value, bool requires_grad = false) {
        return from({}, {value}, requires_grad);
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int64_t numel() const { return static_cast<int64_t>(impl_->data->size()); }
    int64_t rows() const { return impl_->shape.empty() ? 1 : impl_->shape[0]; }
    int64_t cols() const { return impl_->shape.size() < 2 ? numel() / rows() : impl_->shape[1]; }
    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    std::span<T> data() { return {impl_->data->data(), impl_->data->size()}; }
    std::span<const T> data() const { return {impl_->data->data(), impl_->data->size()}; }
    T item() const {
        if (numel() != 1) {
            fail(ErrorKind::Shape, "item() on non-scalar tensor " + shape_str(shape()));
        }
        return (*impl_->data)[0];
    }

    bool has_grad() const { return !impl_->grad.empty(); }

    // Gradient buffer, allocated (zeroed) on first use.
    std::span<T> grad() {
        if (impl_->grad.empty()) {
            impl_->grad.assign(impl_->data->size(), T(0));
        }
        return {impl_->grad.data(), impl_->grad.size()};
    }

    std::span<const T> grad() const {
        static const std::vector<T> empty;
        if (impl_->grad.empty()) {
            return {empty.data(), size_t(0)};
        }
        return {impl_->grad.data(), impl_->grad.size()};
    }

    void zero_grad() {
        std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
    }

    // A handle sharing this tensor's values but owning a separate gradient
    // buffer. Lets several workers accumulate gradients for the same
    // parameters without touching each other.
    TensorT grad_view() const {
        TensorT t;
        t.impl_ = std::make_shared<TensorImpl<T>>();
        t.impl_->shape = impl_->shape;
        t.impl_->data = impl_->data;
        t.impl_->requires_grad = impl_->requires_grad;
        return t;
    }

    bool same_impl(const TensorT& other) const { return impl_ == other.impl_; }
    const void* id() const { return impl_.get(); }

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

// Records the forward order of operations; backward replays them in reverse.
// Confined to one logical thread between clear() and backward().
template <class T>
class TapeT {
public:
    using BackwardFn = std::function<void()>;

    void record(TensorT<T> output, BackwardFn fn) {
        records_.push_back({std::move(output), std::move(fn)});
    }

    size_t size() const { return records_.size(); }
    void clear() { records_.clear(); }

    // Seeds d(loss)/d(loss) = 1 and propagates to every recorded input.
    // Gradients accumulate additively across fan-out.
    void backward(TensorT<T> loss) {
        if (!loss.defined() || loss.numel() != 1) {
            fail(ErrorKind::Usage, "backward requires a scalar loss");
        }
        size_t loss_index = records_.size();
        for (size_t i = records_.size(); i-- > 0;) {
            if (records_[i].output.same_impl(loss)) {
                loss_index = i;
                break;
            }
        }
        if (loss_index == records_.size()) {
            fail(ErrorKind::Usage, "loss tensor was not produced on this tape");
        }
        loss.grad()[0] += T(1);
        for (size_t i = loss_index + 1; i-- > 0;) {
            records_[i].fn();
        }
    }

private:
    struct Record {
        TensorT<T> output;
        BackwardFn fn;
    };
    std::vector<Record> records_;
};

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

template <class T>
void backward(TapeT<T>& tape, const TensorT<T>& loss) {
    tape.backward(loss);
}

inline constexpr int32_t kIgnoreTarget = -1;

namespace ops {

namespace detail_ops {

// Branch-free float tanh via exp2 range reduction; absolute error below
// 1e-7, an order of magnitude faster than libm on the MLP activations.
inline float fast_tanh(float x) {
    const float xc = std::min(9.0f, std::max(-9.0f, x));
    const float t = 2.8853900817779268f * xc; // 2x / ln 2
    const float fl = std::floor(t + 0.5f);
    const float z = (t - fl) * 0.6931471805599453f;
    // e^z for |z| <= ln2/2, degree-7 Horner
    float p = 1.0f + z / 7.0f;
    p = 1.0f + z / 6.0f * p;
    p = 1.0f + z / 5.0f * p;
    p = 1.0f + z / 4.0f * p;
    p = 1.0f + z / 3.0f * p;
    p = 1.0f + z / 2.0f * p;
    p = 1.0f + z * p;
    const int e = static_cast<int>(fl);
    union {
        uint32_t bits;
        float value;
    } pow2{static_cast<uint32_t>(e + 127) << 23};
    const float e2x = p * pow2.value;
    return 1.0f - 2.0f / (e2x + 1.0f);
}

inline double fast_tanh(double x) { return std::tanh(x); }

template <class T>
bool want_grad(TapeT<T>* tape, std::initializer_list<const TensorT<T>*> inputs) {
    if (tape == nullptr) {
        return false;
    }
    for (const auto* t : inputs) {
        if (t->requires_grad()) {
            return true;
        }
    }
    return false;
}

template <class T>
void require_matrix(const TensorT<T>& t, const char* op) {
    if (t.shape().size() != 2) {
        fail(ErrorKind::Shape, std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
    }
}

} // namespace detail_ops

template <class T>
TensorT<T> add(TapeT<T>* tape, TensorT<T> a, TensorT<T> b) {
    if (a.shape() != b.shape()) {
        fail(ErrorKind::Shape, "add: shapes differ: " + shape_str(a.shape()) + " vs " +
                                   shape_str(b.shape()));
    }
    auto out = TensorT<T>::zeros(a.shape());
    auto av = a.data();
    auto bv = b.data();
    auto ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) {
        ov[i] = av[i] + bv[i];
    }
    if (detail_ops::want_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record(out, [a, b, out]() mutable {
            auto og = out.grad();
            if (a.requires_grad()) {
                auto ag = a.grad();
                for (size_t i = 0; i < og.size(); ++i) {
                    ag[i] += og[i];
                }
            }
            if (b.requires_grad()) {
                auto bg = b.grad();
                for (size_t i = 0; i < og.size(); ++i) {
                    bg[i] += og[i];
                }
            }
        });
    }
    return out;
}

// Matrix plus a bias row broadcast over rows; the only broadcast this kernel
// supports.
template <class T>
TensorT<T> add_row(TapeT<T>* tape, TensorT<T> a, TensorT<T> bias) {
    detail_ops::require_matrix(a, "add_row");
    if (bias.shape().size() != 1 || bias.shape()[0] != a.shape()[1]) {
        fail(ErrorKind::Shape, "add_row: bias " + shape_str(bias.shape()) +
                                   " does not match matrix " + shape_str(a.shape()));
    }
    const int64_t n = a.shape()[0];
    const int64_t m = a.shape()[1];
    auto out = TensorT<T>::zeros(a.shape());
    auto av = a.data();
    auto bv = bias.data();
    auto ov = out.data();
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < m; ++j) {
            ov[i * m + j] = av[i * m + j] + bv[j];
        }
    }
    if (detail_ops::want_grad(tape, {&a, &bias})) {
        out.set_requires_grad(true);
        tape->record(out, [a, bias, out, n, m]() mutable {
            auto og = out.grad();
            if (a.requires_grad()) {
                auto ag = a.grad();
                for (size_t i = 0; i < og.size(); ++i) {
                    ag[i] += og[i];
                }
            }
            if (bias.requires_grad()) {
                auto bg = bias.grad();
                for (int64_t i = 0; i < n; ++i) {
                    for (int64_t j = 0; j < m; ++j) {
                        bg[j] += og[i * m + j];
                    }
                }
            }
        });
    }
    return out;
}

template <class T>
TensorT<T> scale(TapeT<T>* tape, TensorT<T> a, double factor) {
    auto out = TensorT<T>::zeros(a.shape());
    auto av = a.data();
    auto ov = out.data();
    const T f = static_cast<T>(factor);
    for (size_t i = 0; i < ov.size(); ++i) {
        ov[i] = av[i] * f;
    }
    if (detail_ops::want_grad(tape, {&a})) {
        out.set_requires_grad(true);
        tape->record(out, [a, out, f]() mutable {
            auto og = out.grad();
            auto ag = a.grad();
            for (size_t i = 0; i < og.size(); ++i) {
                ag[i] += og[i] * f;
            }
        });
    }
    return out;
}

template <class T>
TensorT<T> matmul(TapeT<T>* tape, TensorT<T> a, TensorT<T> b) {
    detail_ops::require_matrix(a, "matmul");
    detail_ops::require_matrix(b, "matmul");
    const int64_t n = a.shape()[0];
    const int64_t k = a.shape()[1];
    const int64_t m = b.shape()[1];
    if (b.shape()[0] != k) {
        fail(ErrorKind::Shape, "matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                                   " vs " + shape_str(b.shape()));
    }
    auto out = TensorT<T>::zeros({n, m});
    detail::gemm(false, false, n, m, k, T(1), a.data().data(), k, b.data().data(), m, T(0),
                 out.data().data(), m);
    if (detail_ops::want_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record(out, [a, b, out, n, m, k]() mutable {
            auto og = out.grad();
            if (a.requires_grad()) {
                // dA += dOut * B^T
                detail::gemm(false, true, n, k, m, T(1), og.data(), m, b.data().data(), m, T(1),
                             a.grad().data(), k);
            }
            if (b.requires_grad()) {
                // dB += A^T * dOut
                detail::gemm(true, false, k, m, n, T(1), a.data().data(), k, og.data(), m, T(1),
                             b.grad().data(), m);
            }
        });
    }
    return out;
}

template <class T>
TensorT<T> transpose(TapeT<T>* tape, TensorT<T> a) {
    detail_ops::require_matrix(a, "transpose");
    const int64_t n = a.shape()[0];
    const int64_t m = a.shape()[1];
    auto out = TensorT<T>::zeros({m, n});
    auto av = a.data();
    auto ov = out.data();
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < m; ++j) {
            ov[j * n + i] = av[i * m + j];
        }
    }
    if (detail_ops::want_grad(tape, {&a})) {
        out.set_requires_grad(true);
        tape->record(out, [a, out, n, m]() mutable {
            auto og = out.grad();
            auto ag = a.grad();
            for (int64_t i = 0; i < n; ++i) {
                for (int64_t j = 0; j < m; ++j) {
                    ag[i * m + j] += og[j * n + i];
                }
            }
        });
    }
    return out;
}

template <class T>
TensorT<T> slice_rows(TapeT<T>* tape, TensorT<T> a, int64_t row0, int64_t row1) {
    detail_ops::require_matrix(a, "slice_rows");
    const int64_t n = a.shape()[0];
    const int64_t m = a.shape()[1];
    if (row0 < 0 || row1 > n || row0 >= row1) {
        fail(ErrorKind::Index, "slice_rows: range [" + std::to_string(row0) + ", " +
                                   std::to_string(row1) + ") out of " + shape_str(a.shape()));
    }
    auto out = TensorT<T>::zeros({row1 - row0, m});
    auto av = a.data();
    auto ov = out.data();
    std::copy(av.begin() + row0 * m, av.begin() + row1 * m, ov.begin());
    if (detail_ops::want_grad(tape, {&a})) {
        out.set_requires_grad(true);
        tape->record(out, [a, out, row0, m]() mutable {
            auto og = out.grad();
            auto ag = a.grad();
            for (size_t i = 0; i < og.size(); ++i) {
                ag[static_cast<size_t>(row0 * m) + i] += og[i];
            }
        });
    }
    return out;
}

template <class T>
TensorT<T> slice_cols(TapeT<T>* tape, TensorT<T> a, int64_t col0, int64_t col1) {
    detail_ops::require_matrix(a, "slice_cols");
    const int64_t n = a.shape()[0];
    const int64_t m = a.shape()[1];
    if (col0 < 0 || col1 > m || col0 >= col1) {
        fail(ErrorKind::Index, "slice_cols: range [" + std::to_string(col0) + ", " +
                                   std::to_string(col1) + ") out of " + shape_str(a.shape()));
    }
    const int64_t w = col1 - col0;
    auto out = TensorT<T>::zeros({n, w});
    auto av = a.data();
    auto ov = out.data();
    for (int64_t i = 0; i < n; ++i) {
        std::copy(av.begin() + i * m + col0, av.begin() + i * m + col1, ov.begin() + i * w);
    }
    if (detail_ops::want_grad(tape, {&a})) {
        out.set_requires_grad(true);
        tape->record(out, [a, out, col0, m, w, n]() mutable {
            auto og = out.grad();
            auto ag = a.grad();
            for (int64_t i = 0; i < n; ++i) {
                for (int64_t j = 0; j < w; ++j) {
                    ag[i * m + col0 + j] += og[i * w + j];
                }
            }
        });
    }
    return out;
}

template <class T>
TensorT<T> concat_cols(TapeT<T>* tape, std::vector<TensorT<T>> parts) {
    if (parts.empty()) {
        fail(ErrorKind::Shape, "concat_cols: no inputs");
    }
    const int64_t n = parts[0].shape().size() == 2 ? parts[0].shape()[0] : -1;
    int64_t total = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        detail_ops::require_matrix(p, "concat_cols");
        if (p.shape()[0] != n) {
            fail(ErrorKind::Shape, "concat_cols: row counts differ: " + shape_str(parts[0].shape()) +
                                       " vs " + shape_str(p.shape()));
        }
        total += p.shape()[1];
        any_grad = any_grad || p.requires_grad();
    }
    auto out = TensorT<T>::zeros({n, total});
    auto ov = out.data();
    int64_t offset = 0;
    for (const auto& p : parts) {
        const int64_t w = p.shape()[1];
        auto pv = p.data();
        for (int64_t i = 0; i < n; ++i) {
            std::copy(pv.begin() + i * w, pv.begin() + (i + 1) * w, ov.begin() + i * total + offset);
        }
        offset += w;
    }
    if (tape != nullptr && any_grad) {
        out.set_requires_grad(true);
        tape->record(out, [parts, out, n, total]() mutable {
            auto og = out.grad();
            int64_t offset = 0;
            for (auto& p : parts) {
                const int64_t w = p.shape()[1];
                if (p.requires_grad()) {
                    auto pg = p.grad();
                    for (int64_t i = 0; i < n; ++i) {
                        for (int64_t j = 0; j < w; ++j) {
                            pg[i * w + j] += og[i * total + offset + j];
                        }
                    }
                }
                offset += w;
            }
        });
    }
    return out;
}

template <class T>
TensorT<T> concat_rows(TapeT<T>* tape, std::vector<TensorT<T>> parts) {
    if (parts.empty()) {
        fail(ErrorKind::Shape, "concat_rows: no inputs");
    }
    const int64_t m = parts[0].shape().size() == 2 ? parts[0].shape()[1] : -1;
    int64_t total = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        detail_ops::require_matrix(p, "concat_rows");
        if (p.shape()[1] != m) {
            fail(ErrorKind::Shape, "concat_rows: column counts differ: " +
                                       shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        }
        total += p.shape()[0];
        any_grad = any_grad || p.requires_grad();
    }
    auto out = TensorT<T>::zeros({total, m});
    auto ov = out.data();
    int64_t offset = 0;
    for (const auto& p : parts) {
        auto pv = p.data();
        std::copy(pv.begin(), pv.end(), ov.begin() + offset * m);
        offset += p.shape()[0];
    }
    if (tape != nullptr && any_grad) {
        out.set_requires_grad(true);
        tape->record(out, [parts, out, m]() mutable {
            auto og = out.grad();
            int64_t offset = 0;
            for (auto& p : parts) {
                const int64_t rows = p.shape()[0];
                if (p.requires_grad()) {
                    auto pg = p.grad();
                    for (int64_t i = 0; i < rows * m; ++i) {
                        pg[static_cast<size_t>(i)] += og[static_cast<size_t>(offset * m + i)];
                    }
                }
                offset += rows;
            }
        });
    }
    return out;
}

// Row gather from an embedding table; backward scatter-adds into the table.
template <class T>
TensorT<T> embedding(TapeT<T>* tape, TensorT<T> table, std::vector<int32_t> ids) {
    detail_ops::require_matrix(table, "embedding");
    const int64_t v = table.shape()[0];
    const int64_t d = table.shape()[1];
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= v) {
            fail(ErrorKind::Index, "embedding: id " + std::to_string(ids[i]) + " at position " +
                                       std::to_string(i) + " outside table " +
                                       shape_str(table.shape()));
        }
    }
    const int64_t t = static_cast<int64_t>(ids.size());
    auto out = TensorT<T>::zeros({t, d});
    auto tv = table.data();
    auto ov = out.data();
    for (int64_t i = 0; i < t; ++i) {
        std::copy(tv.begin() + ids[i] * d, tv.begin() + (ids[i] + 1) * d, ov.begin() + i * d);
    }
    if (detail_ops::want_grad(tape, {&table})) {
        out.set_requires_grad(true);
        tape->record(out, [table, out, ids = std::move(ids), d]() mutable {
            auto og = out.grad();
            auto tg = table.grad();
            for (size_t i = 0; i < ids.size(); ++i) {
                for (int64_t j = 0; j < d; ++j) {
                    tg[ids[i] * d + j] += og[i * d + j];
                }
            }
        });
    }
    return out;
}

// Per-row normalization to zero mean / unit population variance, then an
// affine transform. Row statistics accumulate in double for stability.
template <class T>
TensorT<T> layer_norm(TapeT<T>* tape, TensorT<T> x, TensorT<T> gamma, TensorT<T> beta,
                      double eps = 1e-5) {
    detail_ops::require_matrix(x, "layer_norm");
    const int64_t n = x.shape()[0];
    const int64_t d = x.shape()[1];
    if (gamma.numel() != d || beta.numel() != d) {
        fail(ErrorKind::Shape, "layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " +
                                   shape_str(beta.shape()) + " do not match row width " +
                                   std::to_string(d));
    }
    auto out = TensorT<T>::zeros(x.shape());
    auto xv = x.data();
    auto gv = gamma.data();
    auto bv = beta.data();
    auto ov = out.data();
    std::vector<T> inv_std(static_cast<size_t>(n));
    std::vector<T> x_hat(xv.size());
    for (int64_t i = 0; i < n; ++i) {
        double mean = 0;
        for (int64_t j = 0; j < d; ++j) {
            mean += xv[i * d + j];
        }
        mean /= static_cast<double>(d);
        double var = 0;
        for (int64_t j = 0; j < d; ++j) {
            const double c = xv[i * d + j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(i)] = static_cast<T>(istd);
        for (int64_t j = 0; j < d; ++j) {
            const T xh = static_cast<T>((xv[i * d + j] - mean) * istd);
            x_hat[i * d + j] = xh;
            ov[i * d + j] = xh * gv[j] + bv[j];
        }
    }
    if (detail_ops::want_grad(tape, {&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        tape->record(out, [x, gamma, beta, out, inv_std = std::move(inv_std),
                           x_hat = std::move(x_hat), n, d]() mutable {
            auto og = out.grad();
            auto gv = gamma.data();
            if (gamma.requires_grad()) {
                auto gg = gamma.grad();
                for (int64_t i = 0; i < n; ++i) {
                    for (int64_t j = 0; j < d; ++j) {
                        gg[j] += og[i * d + j] * x_hat[i * d + j];
                    }
                }
            }
            if (beta.requires_grad()) {
                auto bg = beta.grad();
                for (int64_t i = 0; i < n; ++i) {
                    for (int64_t j = 0; j < d; ++j) {
                        bg[j] += og[i * d + j];
                    }
                }
            }
            if (x.requires_grad()) {
                auto xg = x.grad();
                for (int64_t i = 0; i < n; ++i) {
                    double sum_dy = 0;
                    double sum_dy_xhat = 0;
                    for (int64_t j = 0; j < d; ++j) {
                        const double dy = og[i * d + j] * gv[j];
                        sum_dy += dy;
                        sum_dy_xhat += dy * x_hat[i * d + j];
                    }
                    const double mean_dy = sum_dy / static_cast<double>(d);
                    const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(d);
                    const double istd = inv_std[static_cast<size_t>(i)];
                    for (int64_t j = 0; j < d; ++j) {
                        const double dy = og[i * d + j] * gv[j];
                        xg[i * d + j] += static_cast<T>(
                            istd * (dy - mean_dy - x_hat[i * d + j] * mean_dy_xhat));
                    }
                }
            }
        });
    }
    return out;
}

// tanh-approximation GELU. The tanh values are cached for the backward pass.
template <class T>
TensorT<T> gelu(TapeT<T>* tape, TensorT<T> x) {
    auto out = TensorT<T>::zeros(x.shape());
    auto xv = x.data();
    auto ov = out.data();
    constexpr T kC = static_cast<T>(0.7978845608028654); // sqrt(2/pi)
    constexpr T kA = static_cast<T>(0.044715);
    const bool want = detail_ops::want_grad(tape, {&x});
    std::vector<T> tanh_u(want ? xv.size() : 0);
    for (size_t i = 0; i < ov.size(); ++i) {
        const T v = xv[i];
        const T u = kC * (v + kA * v * v * v);
        const T th = detail_ops::fast_tanh(u);
        if (want) {
            tanh_u[i] = th;
        }
        ov[i] = T(0.5) * v * (T(1) + th);
    }
    if (want) {
        out.set_requires_grad(true);
        tape->record(out, [x, out, tanh_u = std::move(tanh_u), kC, kA]() mutable {
            auto og = out.grad();
            auto xv = x.data();
            auto xg = x.grad();
            for (size_t i = 0; i < og.size(); ++i) {
                const T v = xv[i];
                const T th = tanh_u[i];
                const T sech2 = T(1) - th * th;
                const T dudv = kC * (T(1) + T(3) * kA * v * v);
                const T d = T(0.5) * (T(1) + th) + T(0.5) * v * sech2 * dudv;
                xg[i] += og[i] * d;
            }
        });
    }
    return out;
}

namespace detail_ops {

template <class T>
void softmax_backward_rows(std::span<const T> probs, std::span<const T> out_grad,
                           std::span<T> in_grad, int64_t n, int64_t m) {
    for (int64_t i = 0; i < n; ++i) {
        double dot = 0;
        for (int64_t j = 0; j < m; ++j) {
            dot += static_cast<double>(out_grad[i * m + j]) * probs[i * m + j];
        }
        for (int64_t j = 0; j < m; ++j) {
            in_grad[i * m + j] +=
                static_cast<T>(probs[i * m + j] * (out_grad[i * m + j] - dot));
        }
    }
}

} // namespace detail_ops

// Row-wise softmax, numerically stabilized by max subtraction.
template <class T>
TensorT<T> softmax_rows(TapeT<T>* tape, TensorT<T> x) {
    detail_ops::require_matrix(x, "softmax_rows");
    const int64_t n = x.shape()[0];
    const int64_t m = x.shape()[1];
    auto out = TensorT<T>::zeros(x.shape());
    auto xv = x.data();
    auto ov = out.data();
    for (int64_t i = 0; i < n; ++i) {
        T mx = xv[i * m];
        for (int64_t j = 1; j < m; ++j) {
            mx = std::max(mx, xv[i * m + j]);
        }
        double denom = 0;
        for (int64_t j = 0; j < m; ++j) {
            const double e = std::exp(static_cast<double>(xv[i * m + j] - mx));
            ov[i * m + j] = static_cast<T>(e);
            denom += e;
        }
        const double inv = 1.0 / denom;
        for (int64_t j = 0; j < m; ++j) {
            ov[i * m + j] = static_cast<T>(ov[i * m + j] * inv);
        }
    }
    if (detail_ops::want_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record(out, [x, out, n, m]() mutable {
            detail_ops::softmax_backward_rows<T>(out.data(), out.grad(), x.grad(), n, m);
        });
    }
    return out;
}

// Softmax over a square score matrix where row i may only attend to columns
// j <= i. Masked entries get probability zero and receive no gradient.
template <class T>
TensorT<T> causal_softmax_rows(TapeT<T>* tape, TensorT<T> x) {
    detail_ops::require_matrix(x, "causal_softmax_rows");
    const int64_t n = x.shape()[0];
    if (x.shape()[1] != n) {
        fail(ErrorKind::Shape, "causal_softmax_rows: matrix must be square, got " +
                                   shape_str(x.shape()));
    }
    auto out = TensorT<T>::zeros(x.shape());
    auto xv = x.data();
    auto ov = out.data();
    for (int64_t i = 0; i < n; ++i) {
        T mx = xv[i * n];
        for (int64_t j = 1; j <= i; ++j) {
            mx = std::max(mx, xv[i * n + j]);
        }
        double denom = 0;
        for (int64_t j = 0; j <= i; ++j) {
            const double e = std::exp(static_cast<double>(xv[i * n + j] - mx));
            ov[i * n + j] = static_cast<T>(e);
            denom += e;
        }
        const double inv = 1.0 / denom;
        for (int64_t j = 0; j <= i; ++j) {
            ov[i * n + j] = static_cast<T>(ov[i * n + j] * inv);
        }
    }
    if (detail_ops::want_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record(out, [x, out, n]() mutable {
            auto og = out.grad();
            auto ov = out.data();
            auto xg = x.grad();
            for (int64_t i = 0; i < n; ++i) {
                double dot = 0;
                for (int64_t j = 0; j <= i; ++j) {
                    dot += static_cast<double>(og[i * n + j]) * ov[i * n + j];
                }
                for (int64_t j = 0; j <= i; ++j) {
                    xg[i * n + j] += static_cast<T>(ov[i * n + j] * (og[i * n + j] - dot));
                }
            }
        });
    }
    return out;
}

// Fused causal attention head: softmax(scale * q k^T, masked to j <= i) * v.
// One op instead of transpose/matmul/scale/softmax/matmul keeps the tape and
// temporary traffic down; the attention probabilities are cached for the
// backward pass.
template <class T>
TensorT<T> causal_attention(TapeT<T>* tape, TensorT<T> q, TensorT<T> k, TensorT<T> v,
                            double scale) {
    detail_ops::require_matrix(q, "causal_attention");
    detail_ops::require_matrix(k, "causal_attention");
    detail_ops::require_matrix(v, "causal_attention");
    if (q.shape() != k.shape() || q.shape() != v.shape()) {
        fail(ErrorKind::Shape, "causal_attention: q/k/v shapes differ: " + shape_str(q.shape()) +
                                   " vs " + shape_str(k.shape()) + " vs " + shape_str(v.shape()));
    }
    const int64_t t = q.shape()[0];
    const int64_t hd = q.shape()[1];

    std::vector<T> probs(static_cast<size_t>(t * t), T(0));
    detail::gemm(false, true, t, t, hd, static_cast<T>(scale), q.data().data(), hd,
                 k.data().data(), hd, T(0), probs.data(), t);
    for (int64_t i = 0; i < t; ++i) {
        T* row = probs.data() + i * t;
        T mx = row[0];
        for (int64_t j = 1; j <= i; ++j) {
            mx = std::max(mx, row[j]);
        }
        double denom = 0;
        for (int64_t j = 0; j <= i; ++j) {
            row[j] = std::exp(row[j] - mx);
            denom += row[j];
        }
        const T inv = static_cast<T>(1.0 / denom);
        for (int64_t j = 0; j <= i; ++j) {
            row[j] *= inv;
        }
        for (int64_t j = i + 1; j < t; ++j) {
            row[j] = T(0);
        }
    }
    auto out = TensorT<T>::zeros({t, hd});
    detail::gemm(false, false, t, hd, t, T(1), probs.data(), t, v.data().data(), hd, T(0),
                 out.data().data(), hd);

    if (detail_ops::want_grad(tape, {&q, &k, &v})) {
        out.set_requires_grad(true);
        tape->record(out, [q, k, v, out, probs = std::move(probs), scale, t, hd]() mutable {
            auto og = out.grad();
            if (v.requires_grad()) {
                detail::gemm(true, false, t, hd, t, T(1), probs.data(), t, og.data(), hd, T(1),
                             v.grad().data(), hd);
            }
            std::vector<T> d_scores(static_cast<size_t>(t * t));
            detail::gemm(false, true, t, t, hd, T(1), og.data(), hd, v.data().data(), hd, T(0),
                         d_scores.data(), t);
            for (int64_t i = 0; i < t; ++i) {
                T* drow = d_scores.data() + i * t;
                const T* prow = probs.data() + i * t;
                double dot = 0;
                for (int64_t j = 0; j <= i; ++j) {
                    dot += static_cast<double>(drow[j]) * prow[j];
                }
                for (int64_t j = 0; j <= i; ++j) {
                    drow[j] = prow[j] * (drow[j] - static_cast<T>(dot));
                }
                for (int64_t j = i + 1; j < t; ++j) {
                    drow[j] = T(0);
                }
            }
            if (q.requires_grad()) {
                detail::gemm(false, false, t, hd, t, static_cast<T>(scale), d_scores.data(), t,
                             k.data().data(), hd, T(1), q.grad().data(), hd);
            }
            if (k.requires_grad()) {
                detail::gemm(true, false, t, hd, t, static_cast<T>(scale), d_scores.data(), t,
                             q.data().data(), hd, T(1), k.grad().data(), hd);
            }
        });
    }
    return out;
}

// Inverted dropout; the caller supplies the rng so that training runs are
// reproducible under a fixed seed.
template <class T>
TensorT<T> dropout(TapeT<T>* tape, TensorT<T> x, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) {
        fail(ErrorKind::Config, "dropout: rate must be in [0, 1), got " + std::to_string(rate));
    }
    if (rate == 0.0) {
        return x;
    }
    auto out = TensorT<T>::zeros(x.shape());
    auto xv = x.data();
    auto ov = out.data();
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    std::vector<T> mask(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) {
        mask[i] = rng.uniform() < rate ? T(0) : keep_scale;
        ov[i] = xv[i] * mask[i];
    }
    if (detail_ops::want_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record(out, [x, out, mask = std::move(mask)]() mutable {
            auto og = out.grad();
            auto xg = x.grad();
            for (size_t i = 0; i < og.size(); ++i) {
                xg[i] += og[i] * mask[i];
            }
        });
    }
    return out;
}

// Mean over non-ignored rows of -log softmax(logits)[target]. Rows whose
// target is kIgnoreTarget contribute neither loss nor gradient.
template <class T>
TensorT<T> softmax_cross_entropy(TapeT<T>* tape, TensorT<T> logits, std::vector<int32_t> targets) {
    detail_ops::require_matrix(logits, "softmax_cross_entropy");
    const int64_t n = logits.shape()[0];
    const int64_t v = logits.shape()[1];
    if (static_cast<int64_t>(targets.size()) != n) {
        fail(ErrorKind::Shape, "softmax_cross_entropy: " + std::to_string(targets.size()) +
                                   " targets for " + std::to_string(n) + " rows");
    }
    int64_t active = 0;
    for (int64_t i = 0; i < n; ++i) {
        if (targets[i] == kIgnoreTarget) {
            continue;
        }
        if (targets[i] < 0 || targets[i] >= v) {
            fail(ErrorKind::Index, "softmax_cross_entropy: target " + std::to_string(targets[i]) +
                                       " at row " + std::to_string(i) + " outside vocab " +
                                       std::to_string(v));
        }
        ++active;
    }
    if (active == 0) {
        fail(ErrorKind::Validation, "empty loss: every row is marked ignore");
    }
    auto lv = logits.data();
    std::vector<T> probs(lv.size(), T(0));
    double total = 0;
    for (int64_t i = 0; i < n; ++i) {
        if (targets[i] == kIgnoreTarget) {
            continue;
        }
        T mx = lv[i * v];
        for (int64_t j = 1; j < v; ++j) {
            mx = std::max(mx, lv[i * v + j]);
        }
        double denom = 0;
        for (int64_t j = 0; j < v; ++j) {
            const double e = std::exp(static_cast<double>(lv[i * v + j] - mx));
            probs[i * v + j] = static_cast<T>(e);
            denom += e;
        }
        const double inv = 1.0 / denom;
        for (int64_t j = 0; j < v; ++j) {
            probs[i * v + j] = static_cast<T>(probs[i * v + j] * inv);
        }
        total += std::log(denom) - static_cast<double>(lv[i * v + targets[i]] - mx);
    }
    auto out = TensorT<T>::scalar(static_cast<T>(total / static_cast<double>(active)));
    if (detail_ops::want_grad(tape, {&logits})) {
        out.set_requires_grad(true);
        tape->record(out, [logits, out, probs = std::move(probs), targets = std::move(targets), n,
                           v, active]() mutable {
            const T g = out.grad()[0];
            auto lg = logits.grad();
            const T inv_active = static_cast<T>(1.0 / static_cast<double>(active));
            for (int64_t i = 0; i < n; ++i) {
                if (targets[i] == kIgnoreTarget) {
                    continue;
                }
                for (int64_t j = 0; j < v; ++j) {
                    T p = probs[i * v + j];
                    if (j == targets[i]) {
                        p -= T(1);
                    }
                    lg[i * v + j] += g * p * inv_active;
                }
            }
        });
    }
    return out;
}

template <class T>
TensorT<T> sum(TapeT<T>* tape, TensorT<T> x) {
    auto xv = x.data();
    double total = 0;
    for (T v : xv) {
        total += v;
    }
    auto out = TensorT<T>::scalar(static_cast<T>(total));
    if (detail_ops::want_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record(out, [x, out]() mutable {
            const T g = out.grad()[0];
            auto xg = x.grad();
            for (size_t i = 0; i < xg.size(); ++i) {
                xg[i] += g;
            }
        });
    }
    return out;
}

} // namespace ops

} // namespace orthoscore
