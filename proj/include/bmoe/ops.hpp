#pragma once

// Differentiable tensor operations. Every op validates shapes up front and
// records a backward rule through detail::make_result.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bmoe/tensor.hpp"

namespace bmoe {

namespace detail {

inline void require_shape(bool ok, const std::string& op, const std::string& what) {
    if (!ok) throw DimensionError(op + ": " + what);
}

// b broadcasts over a when b's shape equals a trailing suffix of a's shape.
inline bool is_suffix(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) return false;
    return std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()));
}

template <typename S>
bool wants_grad(const Node<S>& self, std::size_t i) {
    return self.parents[i]->requires_grad;
}

// Sums values in ascending order so the result does not depend on input order.
template <typename S>
S canonical_sum(std::span<const S> values) {
    std::array<S, 16> small{};
    std::vector<S> big;
    S* buf = small.data();
    if (values.size() > small.size()) {
        big.assign(values.begin(), values.end());
        buf = big.data();
    } else {
        std::copy(values.begin(), values.end(), small.begin());
    }
    std::sort(buf, buf + values.size());
    S total = S(0);
    for (std::size_t i = 0; i < values.size(); ++i) total += buf[i];
    return total;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_shape(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), "matmul",
                          "cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<S> out(m * n, S(0));
    const S* A = a.data().data();
    const S* B = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        S* row = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const S av = A[i * k + p];
            const S* brow = B + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
        }
    }
    return detail::make_result<S>(
        {m, n}, std::move(out), {a, b},
        [m, k, n](Node<S>& self) {
            const auto& A = self.parents[0];
            const auto& B = self.parents[1];
            const S* dC = self.grad.data();
            if (A->requires_grad) {
                S* dA = A->grad.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const S* brow = B->data.data() + p * n;
                        S acc = S(0);
                        for (std::size_t j = 0; j < n; ++j) acc += dC[i * n + j] * brow[j];
                        dA[i * k + p] += acc;
                    }
            }
            if (B->requires_grad) {
                S* dB = B->grad.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const S av = A->data[i * k + p];
                        S* drow = dB + p * n;
                        for (std::size_t j = 0; j < n; ++j) drow[j] += av * dC[i * n + j];
                    }
            }
        },
        "matmul");
}

/// x·W + b for x of shape [m×k] or [k]; W is [k×n], b is [n].
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    const bool vec = x.rank() == 1;
    detail::require_shape(x.rank() <= 2 && w.rank() == 2, "linear", "expected [m x k] input and [k x n] weight");
    const std::size_t m = vec ? 1 : x.dim(0);
    const std::size_t k = x.shape().back();
    const std::size_t n = w.dim(1);
    detail::require_shape(w.dim(0) == k, "linear",
                          "input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
    detail::require_shape(b.rank() == 1 && b.dim(0) == n, "linear",
                          "bias " + shape_str(b.shape()) + " does not match weight " + shape_str(w.shape()));
    std::vector<S> out(m * n);
    const S* X = x.data().data();
    const S* W = w.data().data();
    const S* B = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        S* row = out.data() + i * n;
        std::copy(B, B + n, row);
        for (std::size_t p = 0; p < k; ++p) {
            const S xv = X[i * k + p];
            const S* wrow = W + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += xv * wrow[j];
        }
    }
    Shape shape = vec ? Shape{n} : Shape{m, n};
    return detail::make_result<S>(
        std::move(shape), std::move(out), {x, w, b},
        [m, k, n](Node<S>& self) {
            const auto& X = self.parents[0];
            const auto& W = self.parents[1];
            const auto& Bn = self.parents[2];
            const S* dY = self.grad.data();
            if (X->requires_grad) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const S* wrow = W->data.data() + p * n;
                        S acc = S(0);
                        for (std::size_t j = 0; j < n; ++j) acc += dY[i * n + j] * wrow[j];
                        X->grad[i * k + p] += acc;
                    }
            }
            if (W->requires_grad) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const S xv = X->data[i * k + p];
                        S* drow = W->grad.data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) drow[j] += xv * dY[i * n + j];
                    }
            }
            if (Bn->requires_grad) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) Bn->grad[j] += dY[i * n + j];
            }
        },
        "linear");
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
    detail::require_shape(x.rank() == 2, "transpose", "expected rank 2, got " + shape_str(x.shape()));
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<S> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x.data()[i * n + j];
    return detail::make_result<S>(
        {n, m}, std::move(out), {x},
        [m, n](Node<S>& self) {
            auto& X = self.parents[0];
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) X->grad[i * n + j] += self.grad[j * m + i];
        },
        "transpose");
}

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {
enum class Binary { Add, Sub, Mul };

template <typename S>
Tensor<S> binary(const Tensor<S>& a, const Tensor<S>& b, Binary kind, const char* name) {
    require_shape(is_suffix(a.shape(), b.shape()), name,
                  "cannot combine " + shape_str(a.shape()) + " with " + shape_str(b.shape()));
    const std::size_t inner = b.size();
    const std::size_t total = a.size();
    std::vector<S> out(total);
    const S* A = a.data().data();
    const S* B = b.data().data();
    for (std::size_t i = 0; i < total; ++i) {
        const S bv = B[i % inner];
        switch (kind) {
            case Binary::Add: out[i] = A[i] + bv; break;
            case Binary::Sub: out[i] = A[i] - bv; break;
            case Binary::Mul: out[i] = A[i] * bv; break;
        }
    }
    return make_result<S>(
        a.shape(), std::move(out), {a, b},
        [inner, total, kind](Node<S>& self) {
            auto& A = self.parents[0];
            auto& B = self.parents[1];
            const S* g = self.grad.data();
            if (A->requires_grad) {
                for (std::size_t i = 0; i < total; ++i)
                    A->grad[i] += kind == Binary::Mul ? g[i] * B->data[i % inner] : g[i];
            }
            if (B->requires_grad) {
                for (std::size_t i = 0; i < total; ++i) {
                    S v = g[i];
                    if (kind == Binary::Sub) v = -v;
                    if (kind == Binary::Mul) v *= A->data[i];
                    B->grad[i % inner] += v;
                }
            }
        },
        name);
}

template <typename S, typename F, typename D>
Tensor<S> unary(const Tensor<S>& x, F f, D dfdx, const char* name) {
    std::vector<S> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x.data()[i]);
    return make_result<S>(
        x.shape(), std::move(out), {x},
        [dfdx](Node<S>& self) {
            auto& X = self.parents[0];
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                X->grad[i] += self.grad[i] * dfdx(X->data[i], self.data[i]);
        },
        name);
}
}  // namespace detail

/// a + b, where b may broadcast over a's leading dimensions.
template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary(a, b, detail::Binary::Add, "add");
}
template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary(a, b, detail::Binary::Sub, "sub");
}
/// Elementwise product with the same broadcasting rule as add().
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary(a, b, detail::Binary::Mul, "mul");
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S c) {
    return detail::unary(x, [c](S v) { return v * c; }, [c](S, S) { return c; }, "scale");
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, S c) {
    return detail::unary(x, [c](S v) { return v + c; }, [](S, S) { return S(1); }, "add_scalar");
}

template <typename S>
Tensor<S> square(const Tensor<S>& x) {
    return detail::unary(x, [](S v) { return v * v; }, [](S v, S) { return S(2) * v; }, "square");
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    return detail::unary(
        x, [](S v) { return S(1) / (S(1) + std::exp(-v)); }, [](S, S y) { return y * (S(1) - y); }, "sigmoid");
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& x) {
    return detail::unary(x, [](S v) { return std::tanh(v); }, [](S, S y) { return S(1) - y * y; }, "tanh");
}

/// Tanh-approximated GELU.
template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
    constexpr S c = S(0.7978845608028654);  // sqrt(2/pi)
    constexpr S a = S(0.044715);
    return detail::unary(
        x,
        [](S v) { return S(0.5) * v * (S(1) + std::tanh(c * (v + a * v * v * v))); },
        [](S v, S) {
            const S t = std::tanh(c * (v + a * v * v * v));
            return S(0.5) * (S(1) + t) + S(0.5) * v * (S(1) - t * t) * c * (S(1) + S(3) * a * v * v);
        },
        "gelu");
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
    S total = S(0);
    for (S v : x.data()) total += v;
    return detail::make_result<S>(
        {1}, {total}, {x},
        [](Node<S>& self) {
            auto& X = self.parents[0];
            for (auto& g : X->grad) g += self.grad[0];
        },
        "sum");
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
    return scale(sum(x), S(1) / static_cast<S>(x.size()));
}

/// Mean over the leading axis: [m x ...] -> [...].
template <typename S>
Tensor<S> mean_rows(const Tensor<S>& x) {
    detail::require_shape(x.rank() >= 2, "mean_rows", "expected rank >= 2, got " + shape_str(x.shape()));
    const std::size_t m = x.dim(0);
    const std::size_t inner = x.size() / m;
    std::vector<S> out(inner, S(0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < inner; ++j) out[j] += x.data()[i * inner + j];
    for (auto& v : out) v /= static_cast<S>(m);
    const S inv = S(1) / static_cast<S>(m);
    Shape shape(x.shape().begin() + 1, x.shape().end());
    return detail::make_result<S>(
        std::move(shape), std::move(out), {x},
        [m, inner, inv](Node<S>& self) {
            auto& X = self.parents[0];
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < inner; ++j) X->grad[i * inner + j] += self.grad[j] * inv;
        },
        "mean_rows");
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
    detail::require_shape(numel(shape) == x.size(), "reshape",
                          "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
    return detail::make_result<S>(
        std::move(shape), x.data(), {x},
        [](Node<S>& self) {
            auto& X = self.parents[0];
            for (std::size_t i = 0; i < self.grad.size(); ++i) X->grad[i] += self.grad[i];
        },
        "reshape");
}

/// Concatenates along the leading axis. Rank-1 parts count as single rows.
template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    const std::size_t width = parts[0].shape().back();
    std::size_t rows = 0;
    std::vector<S> out;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        detail::require_shape(p.rank() <= 2 && p.shape().back() == width, "concat_rows",
                              "part " + shape_str(p.shape()) + " does not have width " + std::to_string(width));
        offsets.push_back(out.size());
        out.insert(out.end(), p.data().begin(), p.data().end());
        rows += p.size() / width;
    }
    return detail::make_result<S>(
        {rows, width}, std::move(out), parts,
        [offsets](Node<S>& self) {
            for (std::size_t k = 0; k < self.parents.size(); ++k) {
                auto& P = self.parents[k];
                if (!P->requires_grad) continue;
                for (std::size_t i = 0; i < P->grad.size(); ++i) P->grad[i] += self.grad[offsets[k] + i];
            }
        },
        "concat_rows");
}

// ---------------------------------------------------------------------------
// Normalisation

/// Softmax along `axis`, computed with max subtraction.
template <typename S>
Tensor<S> softmax(const Tensor<S>& x, std::size_t axis) {
    detail::require_shape(axis < x.rank(), "softmax",
                          "axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    const std::size_t n = x.dim(axis);
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    std::vector<S> out(x.size());
    const S* X = x.data().data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            S mx = -std::numeric_limits<S>::infinity();
            for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, X[base + j * inner]);
            S total = S(0);
            for (std::size_t j = 0; j < n; ++j) {
                const S e = std::exp(X[base + j * inner] - mx);
                out[base + j * inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
        }
    return detail::make_result<S>(
        x.shape(), std::move(out), {x},
        [outer, inner, n](Node<S>& self) {
            auto& X = self.parents[0];
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * n * inner + in;
                    S dot = S(0);
                    for (std::size_t j = 0; j < n; ++j) dot += self.data[base + j * inner] * self.grad[base + j * inner];
                    for (std::size_t j = 0; j < n; ++j) {
                        const std::size_t idx = base + j * inner;
                        X->grad[idx] += self.data[idx] * (self.grad[idx] - dot);
                    }
                }
        },
        "softmax");
}

/// Layer normalisation over the last axis with learned gain and bias.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps = S(1e-5)) {
    const std::size_t n = x.shape().back();
    detail::require_shape(gamma.rank() == 1 && gamma.dim(0) == n && beta.rank() == 1 && beta.dim(0) == n,
                          "layer_norm", "gain/bias do not match feature width of " + shape_str(x.shape()));
    const std::size_t rows = x.size() / n;
    std::vector<S> out(x.size());
    std::vector<S> xhat(x.size());
    std::vector<S> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const S* row = x.data().data() + r * n;
        S mu = S(0);
        for (std::size_t j = 0; j < n; ++j) mu += row[j];
        mu /= static_cast<S>(n);
        S var = S(0);
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<S>(n);
        const S is = S(1) / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < n; ++j) {
            const S h = (row[j] - mu) * is;
            xhat[r * n + j] = h;
            out[r * n + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    return detail::make_result<S>(
        x.shape(), std::move(out), {x, gamma, beta},
        [rows, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<S>& self) {
            auto& X = self.parents[0];
            auto& G = self.parents[1];
            auto& B = self.parents[2];
            for (std::size_t r = 0; r < rows; ++r) {
                const S* dy = self.grad.data() + r * n;
                const S* h = xhat.data() + r * n;
                if (G->requires_grad)
                    for (std::size_t j = 0; j < n; ++j) G->grad[j] += dy[j] * h[j];
                if (B->requires_grad)
                    for (std::size_t j = 0; j < n; ++j) B->grad[j] += dy[j];
                if (X->requires_grad) {
                    S mean_d = S(0), mean_dh = S(0);
                    for (std::size_t j = 0; j < n; ++j) {
                        const S d = dy[j] * G->data[j];
                        mean_d += d;
                        mean_dh += d * h[j];
                    }
                    mean_d /= static_cast<S>(n);
                    mean_dh /= static_cast<S>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        const S d = dy[j] * G->data[j];
                        X->grad[r * n + j] += inv_std[r] * (d - mean_d - h[j] * mean_dh);
                    }
                }
            }
        },
        "layer_norm");
}

// ---------------------------------------------------------------------------
// Attention kernels

template <typename S>
struct AttentionResult {
    Tensor<S> output;
    /// Row-major [heads x queries x keys] probabilities.
    std::vector<S> weights;
};

/// Scaled dot-product attention split over `heads` column groups.
/// q is [T x D], k and v are [S x D]; output is [T x D].
template <typename S>
AttentionResult<S> attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v, std::size_t heads) {
    detail::require_shape(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "attention", "expected rank-2 inputs");
    const std::size_t T = q.dim(0), D = q.dim(1), L = k.dim(0);
    detail::require_shape(k.dim(1) == D && v.dim(1) == D && v.dim(0) == L, "attention",
                          "q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                              shape_str(v.shape()) + " are inconsistent");
    if (heads == 0 || D % heads != 0) throw DimensionError("attention: width not divisible by head count");
    const std::size_t hd = D / heads;
    const S sc = S(1) / std::sqrt(static_cast<S>(hd));
    std::vector<S> probs(heads * T * L);
    std::vector<S> out(T * D, S(0));
    const S* Q = q.data().data();
    const S* K = k.data().data();
    const S* V = v.data().data();
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * hd;
        for (std::size_t t = 0; t < T; ++t) {
            S* p = probs.data() + (h * T + t) * L;
            S mx = -std::numeric_limits<S>::infinity();
            for (std::size_t s = 0; s < L; ++s) {
                S dot = S(0);
                for (std::size_t c = 0; c < hd; ++c) dot += Q[t * D + c0 + c] * K[s * D + c0 + c];
                p[s] = dot * sc;
                mx = std::max(mx, p[s]);
            }
            S total = S(0);
            for (std::size_t s = 0; s < L; ++s) {
                p[s] = std::exp(p[s] - mx);
                total += p[s];
            }
            for (std::size_t s = 0; s < L; ++s) p[s] /= total;
            for (std::size_t s = 0; s < L; ++s)
                for (std::size_t c = 0; c < hd; ++c) out[t * D + c0 + c] += p[s] * V[s * D + c0 + c];
        }
    }
    auto result = detail::make_result<S>(
        {T, D}, std::move(out), {q, k, v},
        [T, D, L, heads, hd, sc, probs](Node<S>& self) {
            auto& Qn = self.parents[0];
            auto& Kn = self.parents[1];
            auto& Vn = self.parents[2];
            const S* dO = self.grad.data();
            std::vector<S> dP(L);
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t c0 = h * hd;
                for (std::size_t t = 0; t < T; ++t) {
                    const S* p = probs.data() + (h * T + t) * L;
                    S dot = S(0);
                    for (std::size_t s = 0; s < L; ++s) {
                        S acc = S(0);
                        for (std::size_t c = 0; c < hd; ++c) acc += dO[t * D + c0 + c] * Vn->data[s * D + c0 + c];
                        dP[s] = acc;
                        dot += acc * p[s];
                    }
                    for (std::size_t s = 0; s < L; ++s) {
                        if (Vn->requires_grad)
                            for (std::size_t c = 0; c < hd; ++c) Vn->grad[s * D + c0 + c] += p[s] * dO[t * D + c0 + c];
                        const S ds = p[s] * (dP[s] - dot) * sc;
                        if (Qn->requires_grad)
                            for (std::size_t c = 0; c < hd; ++c) Qn->grad[t * D + c0 + c] += ds * Kn->data[s * D + c0 + c];
                        if (Kn->requires_grad)
                            for (std::size_t c = 0; c < hd; ++c) Kn->grad[s * D + c0 + c] += ds * Qn->data[t * D + c0 + c];
                    }
                }
            }
        },
        "attention");
    return {std::move(result), std::move(probs)};
}

/// Single-query, single-head attention over K rows. Reductions over the K
/// axis are order-independent, so permuting the rows of k and v together
/// permutes the weights and leaves the output bitwise unchanged.
template <typename S>
AttentionResult<S> pooled_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v) {
    detail::require_shape(q.rank() == 1 && k.rank() == 2 && v.rank() == 2, "pooled_attention",
                          "expected [D] query and [K x D] keys/values");
    const std::size_t K = k.dim(0), D = q.dim(0);
    if (K == 0) throw ContractError("pooled_attention: no key rows");
    detail::require_shape(k.dim(1) == D && v.dim(1) == D && v.dim(0) == K, "pooled_attention",
                          "q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                              shape_str(v.shape()) + " are inconsistent");
    const S sc = S(1) / std::sqrt(static_cast<S>(D));
    std::vector<S> w(K);
    S mx = -std::numeric_limits<S>::infinity();
    for (std::size_t j = 0; j < K; ++j) {
        S dot = S(0);
        for (std::size_t c = 0; c < D; ++c) dot += q.data()[c] * k.data()[j * D + c];
        w[j] = dot * sc;
        mx = std::max(mx, w[j]);
    }
    for (auto& x : w) x = std::exp(x - mx);
    const S total = detail::canonical_sum<S>(w);
    for (auto& x : w) x /= total;
    std::vector<S> out(D);
    std::vector<S> terms(K);
    for (std::size_t c = 0; c < D; ++c) {
        for (std::size_t j = 0; j < K; ++j) terms[j] = w[j] * v.data()[j * D + c];
        out[c] = detail::canonical_sum<S>(terms);
    }
    auto result = detail::make_result<S>(
        {D}, std::move(out), {q, k, v},
        [K, D, sc, w](Node<S>& self) {
            auto& Qn = self.parents[0];
            auto& Kn = self.parents[1];
            auto& Vn = self.parents[2];
            const S* dO = self.grad.data();
            std::vector<S> dw(K, S(0));
            S dot = S(0);
            for (std::size_t j = 0; j < K; ++j) {
                for (std::size_t c = 0; c < D; ++c) dw[j] += dO[c] * Vn->data[j * D + c];
                dot += dw[j] * w[j];
            }
            for (std::size_t j = 0; j < K; ++j) {
                if (Vn->requires_grad)
                    for (std::size_t c = 0; c < D; ++c) Vn->grad[j * D + c] += w[j] * dO[c];
                const S ds = w[j] * (dw[j] - dot) * sc;
                if (Qn->requires_grad)
                    for (std::size_t c = 0; c < D; ++c) Qn->grad[c] += ds * Kn->data[j * D + c];
                if (Kn->requires_grad)
                    for (std::size_t c = 0; c < D; ++c) Kn->grad[j * D + c] += ds * Qn->data[c];
            }
        },
        "pooled_attention");
    return {std::move(result), std::move(w)};
}

// ---------------------------------------------------------------------------
// Temporal and spatial kernels

/// Shifts channel groups along the leading (time) axis of x[T x ... x C]:
/// the first `shift` channels take the next frame, the following `shift`
/// take the previous frame, boundaries are zero-filled, the rest are copied.
template <typename S>
Tensor<S> temporal_shift(const Tensor<S>& x, std::size_t shift) {
    detail::require_shape(x.rank() >= 2, "temporal_shift", "expected [T x ... x C], got " + shape_str(x.shape()));
    const std::size_t T = x.dim(0);
    const std::size_t C = x.shape().back();
    detail::require_shape(2 * shift <= C, "temporal_shift", "shift exceeds half the channel count");
    const std::size_t frame = x.size() / T;
    const std::size_t sites = frame / C;
    // Source frame for (t, c), or -1 for zero fill.
    auto source = [T, shift](std::size_t t, std::size_t c) -> std::ptrdiff_t {
        if (c < shift) return t + 1 < T ? static_cast<std::ptrdiff_t>(t + 1) : -1;
        if (c < 2 * shift) return t >= 1 ? static_cast<std::ptrdiff_t>(t - 1) : -1;
        return static_cast<std::ptrdiff_t>(t);
    };
    std::vector<S> out(x.size(), S(0));
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t s = 0; s < sites; ++s)
            for (std::size_t c = 0; c < C; ++c) {
                const auto src = source(t, c);
                if (src >= 0) out[t * frame + s * C + c] = x.data()[static_cast<std::size_t>(src) * frame + s * C + c];
            }
    return detail::make_result<S>(
        x.shape(), std::move(out), {x},
        [T, C, frame, sites, source](Node<S>& self) {
            auto& X = self.parents[0];
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t s = 0; s < sites; ++s)
                    for (std::size_t c = 0; c < C; ++c) {
                        const auto src = source(t, c);
                        if (src >= 0)
                            X->grad[static_cast<std::size_t>(src) * frame + s * C + c] += self.grad[t * frame + s * C + c];
                    }
        },
        "temporal_shift");
}

/// Depthwise temporal convolution of x[T x D] with kernel w[k x D] and
/// bias b[D], zero-padded to keep length T (k odd).
template <typename S>
Tensor<S> depthwise_conv1d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    detail::require_shape(x.rank() == 2 && w.rank() == 2 && w.dim(1) == x.dim(1) && w.dim(0) % 2 == 1 &&
                              b.rank() == 1 && b.dim(0) == x.dim(1),
                          "depthwise_conv1d",
                          "x " + shape_str(x.shape()) + ", kernel " + shape_str(w.shape()) + " are inconsistent");
    const std::size_t T = x.dim(0), D = x.dim(1), k = w.dim(0);
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
    std::vector<S> out(T * D);
    for (std::size_t t = 0; t < T; ++t) {
        S* row = out.data() + t * D;
        std::copy(b.data().begin(), b.data().end(), row);
        for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - half;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
            const S* xr = x.data().data() + static_cast<std::size_t>(src) * D;
            const S* wr = w.data().data() + j * D;
            for (std::size_t d = 0; d < D; ++d) row[d] += wr[d] * xr[d];
        }
    }
    return detail::make_result<S>(
        {T, D}, std::move(out), {x, w, b},
        [T, D, k, half](Node<S>& self) {
            auto& X = self.parents[0];
            auto& W = self.parents[1];
            auto& B = self.parents[2];
            for (std::size_t t = 0; t < T; ++t) {
                const S* g = self.grad.data() + t * D;
                if (B->requires_grad)
                    for (std::size_t d = 0; d < D; ++d) B->grad[d] += g[d];
                for (std::size_t j = 0; j < k; ++j) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - half;
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
                    const std::size_t si = static_cast<std::size_t>(src) * D;
                    for (std::size_t d = 0; d < D; ++d) {
                        if (W->requires_grad) W->grad[j * D + d] += g[d] * X->data[si + d];
                        if (X->requires_grad) X->grad[si + d] += g[d] * W->data[j * D + d];
                    }
                }
            }
        },
        "depthwise_conv1d");
}

/// Per-frame 2-D convolution of x[T x H x W x Ci] with kernel
/// w[k x k x Ci x Co] and bias b[Co], stride 1, zero "same" padding.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    detail::require_shape(x.rank() == 4 && w.rank() == 4 && w.dim(0) == w.dim(1) && w.dim(0) % 2 == 1 &&
                              w.dim(2) == x.dim(3) && b.rank() == 1 && b.dim(0) == w.dim(3),
                          "conv2d", "x " + shape_str(x.shape()) + ", kernel " + shape_str(w.shape()) + ", bias " +
                                        shape_str(b.shape()) + " are inconsistent");
    const std::size_t T = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
    const std::size_t k = w.dim(0), Co = w.dim(3);
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
    std::vector<S> out(T * H * W * Co);
    const S* X = x.data().data();
    const S* Wt = w.data().data();
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx) {
                S* o = out.data() + ((t * H + y) * W + xx) * Co;
                std::copy(b.data().begin(), b.data().end(), o);
                for (std::size_t ky = 0; ky < k; ++ky) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - half;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - half;
                        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
                        const S* in = X + ((t * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)) * Ci;
                        const S* wk = Wt + (ky * k + kx) * Ci * Co;
                        for (std::size_t ci = 0; ci < Ci; ++ci) {
                            const S iv = in[ci];
                            const S* wr = wk + ci * Co;
                            for (std::size_t co = 0; co < Co; ++co) o[co] += iv * wr[co];
                        }
                    }
                }
            }
    return detail::make_result<S>(
        {T, H, W, Co}, std::move(out), {x, w, b},
        [T, H, W, Ci, Co, k, half](Node<S>& self) {
            auto& Xn = self.parents[0];
            auto& Wn = self.parents[1];
            auto& Bn = self.parents[2];
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t xx = 0; xx < W; ++xx) {
                        const S* g = self.grad.data() + ((t * H + y) * W + xx) * Co;
                        if (Bn->requires_grad)
                            for (std::size_t co = 0; co < Co; ++co) Bn->grad[co] += g[co];
                        for (std::size_t ky = 0; ky < k; ++ky) {
                            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - half;
                            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - half;
                                if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
                                const std::size_t in_off =
                                    ((t * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)) * Ci;
                                const std::size_t w_off = (ky * k + kx) * Ci * Co;
                                for (std::size_t ci = 0; ci < Ci; ++ci) {
                                    const S* wr = Wn->data.data() + w_off + ci * Co;
                                    if (Xn->requires_grad) {
                                        S acc = S(0);
                                        for (std::size_t co = 0; co < Co; ++co) acc += g[co] * wr[co];
                                        Xn->grad[in_off + ci] += acc;
                                    }
                                    if (Wn->requires_grad) {
                                        const S iv = Xn->data[in_off + ci];
                                        S* dw = Wn->grad.data() + w_off + ci * Co;
                                        for (std::size_t co = 0; co < Co; ++co) dw[co] += iv * g[co];
                                    }
                                }
                            }
                        }
                    }
        },
        "conv2d");
}

/// 2x2 average pooling of x[T x H x W x C]; odd trailing rows/cols are dropped.
template <typename S>
Tensor<S> avg_pool2(const Tensor<S>& x) {
    detail::require_shape(x.rank() == 4 && x.dim(1) >= 2 && x.dim(2) >= 2, "avg_pool2",
                          "expected [T x H x W x C] with H, W >= 2, got " + shape_str(x.shape()));
    const std::size_t T = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    const std::size_t Ho = H / 2, Wo = W / 2;
    std::vector<S> out(T * Ho * Wo * C, S(0));
    auto in_idx = [H, W, C](std::size_t t, std::size_t y, std::size_t xx, std::size_t c) {
        return ((t * H + y) * W + xx) * C + c;
    };
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t y = 0; y < Ho; ++y)
            for (std::size_t xx = 0; xx < Wo; ++xx)
                for (std::size_t c = 0; c < C; ++c) {
                    S acc = S(0);
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) acc += x.data()[in_idx(t, 2 * y + dy, 2 * xx + dx, c)];
                    out[((t * Ho + y) * Wo + xx) * C + c] = acc * S(0.25);
                }
    return detail::make_result<S>(
        {T, Ho, Wo, C}, std::move(out), {x},
        [T, Ho, Wo, C, in_idx](Node<S>& self) {
            auto& X = self.parents[0];
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t y = 0; y < Ho; ++y)
                    for (std::size_t xx = 0; xx < Wo; ++xx)
                        for (std::size_t c = 0; c < C; ++c) {
                            const S g = self.grad[((t * Ho + y) * Wo + xx) * C + c] * S(0.25);
                            for (std::size_t dy = 0; dy < 2; ++dy)
                                for (std::size_t dx = 0; dx < 2; ++dx) X->grad[in_idx(t, 2 * y + dy, 2 * xx + dx, c)] += g;
                        }
        },
        "avg_pool2");
}

// ---------------------------------------------------------------------------
// Losses

/// -log softmax(logits)[label] for logits[C].
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::size_t label) {
    detail::require_shape(logits.rank() == 1, "cross_entropy", "expected [C] logits, got " + shape_str(logits.shape()));
    const std::size_t C = logits.dim(0);
    if (label >= C) {
        throw ContractError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                            std::to_string(C) + " classes");
    }
    const auto& z = logits.data();
    const S mx = *std::max_element(z.begin(), z.end());
    S total = S(0);
    for (S v : z) total += std::exp(v - mx);
    const S lse = mx + std::log(total);
    std::vector<S> probs(C);
    for (std::size_t c = 0; c < C; ++c) probs[c] = std::exp(z[c] - lse);
    return detail::make_result<S>(
        {1}, {lse - z[label]}, {logits},
        [probs = std::move(probs), label](Node<S>& self) {
            auto& L = self.parents[0];
            for (std::size_t c = 0; c < probs.size(); ++c)
                L->grad[c] += self.grad[0] * (probs[c] - (c == label ? S(1) : S(0)));
        },
        "cross_entropy");
}

/// ||a - b||^2.
template <typename S>
Tensor<S> squared_distance(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_shape(a.shape() == b.shape(), "squared_distance",
                          "cannot compare " + shape_str(a.shape()) + " with " + shape_str(b.shape()));
    S total = S(0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const S d = a.data()[i] - b.data()[i];
        total += d * d;
    }
    return detail::make_result<S>(
        {1}, {total}, {a, b},
        [](Node<S>& self) {
            auto& A = self.parents[0];
            auto& B = self.parents[1];
            const S g = self.grad[0];
            for (std::size_t i = 0; i < A->data.size(); ++i) {
                const S d = S(2) * g * (A->data[i] - B->data[i]);
                if (A->requires_grad) A->grad[i] += d;
                if (B->requires_grad) B->grad[i] -= d;
            }
        },
        "squared_distance");
}

/// Index of the largest element; ties resolve to the lowest index.
template <typename S>
std::size_t argmax(std::span<const S> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

template <typename S>
std::size_t argmax(const Tensor<S>& t) {
    return argmax<S>(std::span<const S>(t.data()));
}

}  // namespace bmoe
