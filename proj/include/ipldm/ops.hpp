#pragma once

#include <Eigen/Dense>

#include "ipldm/tensor.hpp"

namespace ipldm {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using MapCM = Eigen::Map<const MatRM<T>>;

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* what) {
    if (a.shape() != b.shape())
        throw DimError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                       " vs " + shape_str(b.shape()));
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a, b, "add");
    auto ai = a.impl(), bi = b.impl();
    auto out = TensorT<T>::make_op(a.shape(), {a, b}, [ai, bi](TensorImpl<T>& o) {
        if (ai->requires_grad) {
            ai->ensure_grad();
            for (int64_t i = 0; i < o.numel(); ++i) ai->grad[i] += o.grad[i];
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            for (int64_t i = 0; i < o.numel(); ++i) bi->grad[i] += o.grad[i];
        }
    });
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a, b, "sub");
    auto ai = a.impl(), bi = b.impl();
    auto out = TensorT<T>::make_op(a.shape(), {a, b}, [ai, bi](TensorImpl<T>& o) {
        if (ai->requires_grad) {
            ai->ensure_grad();
            for (int64_t i = 0; i < o.numel(); ++i) ai->grad[i] += o.grad[i];
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            for (int64_t i = 0; i < o.numel(); ++i) bi->grad[i] -= o.grad[i];
        }
    });
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a, b, "mul");
    auto ai = a.impl(), bi = b.impl();
    auto out = TensorT<T>::make_op(a.shape(), {a, b}, [ai, bi](TensorImpl<T>& o) {
        if (ai->requires_grad) {
            ai->ensure_grad();
            for (int64_t i = 0; i < o.numel(); ++i) ai->grad[i] += o.grad[i] * bi->data[i];
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            for (int64_t i = 0; i < o.numel(); ++i) bi->grad[i] += o.grad[i] * ai->data[i];
        }
    });
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    return out;
}

template <typename T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a, b, "div");
    auto ai = a.impl(), bi = b.impl();
    auto out = TensorT<T>::make_op(a.shape(), {a, b}, [ai, bi](TensorImpl<T>& o) {
        if (ai->requires_grad) {
            ai->ensure_grad();
            for (int64_t i = 0; i < o.numel(); ++i) ai->grad[i] += o.grad[i] / bi->data[i];
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            for (int64_t i = 0; i < o.numel(); ++i)
                bi->grad[i] -= o.grad[i] * ai->data[i] / (bi->data[i] * bi->data[i]);
        }
    });
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] / b.data()[i];
    return out;
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T s) {
    auto ai = a.impl();
    auto out = TensorT<T>::make_op(a.shape(), {a}, [ai](TensorImpl<T>& o) {
        ai->ensure_grad();
        for (int64_t i = 0; i < o.numel(); ++i) ai->grad[i] += o.grad[i];
    });
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] + s;
    return out;
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& a, T s) {
    auto ai = a.impl();
    auto out = TensorT<T>::make_op(a.shape(), {a}, [ai, s](TensorImpl<T>& o) {
        ai->ensure_grad();
        for (int64_t i = 0; i < o.numel(); ++i) ai->grad[i] += o.grad[i] * s;
    });
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] * s;
    return out;
}

template <typename T>
TensorT<T> neg(const TensorT<T>& a) {
    return mul_scalar(a, T(-1));
}

template <typename T>
TensorT<T> square(const TensorT<T>& a) {
    auto ai = a.impl();
    auto out = TensorT<T>::make_op(a.shape(), {a}, [ai](TensorImpl<T>& o) {
        ai->ensure_grad();
        for (int64_t i = 0; i < o.numel(); ++i)
            ai->grad[i] += o.grad[i] * T(2) * ai->data[i];
    });
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] * a.data()[i];
    return out;
}

template <typename T>
TensorT<T> sqrt(const TensorT<T>& a) {
    auto ai = a.impl();
    auto out = TensorT<T>::make_op(a.shape(), {a}, [ai](TensorImpl<T>& o) {
        ai->ensure_grad();
        for (int64_t i = 0; i < o.numel(); ++i)
            ai->grad[i] += o.grad[i] * T(0.5) / o.data[i];
    });
    for (int64_t i = 0; i < out.numel(); ++i)
        out.data()[i] = std::sqrt(a.data()[i]);
    return out;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& a) {
    auto ai = a.impl();
    auto out = TensorT<T>::make_op(a.shape(), {a}, [ai](TensorImpl<T>& o) {
        ai->ensure_grad();
        for (int64_t i = 0; i < o.numel(); ++i)
            if (ai->data[i] > T(0)) ai->grad[i] += o.grad[i];
    });
    for (int64_t i = 0; i < out.numel(); ++i)
        out.data()[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
    return out;
}

template <typename T>
TensorT<T> silu(const TensorT<T>& a) {
    auto ai = a.impl();
    auto out = TensorT<T>::make_op(a.shape(), {a}, [ai](TensorImpl<T>& o) {
        ai->ensure_grad();
        for (int64_t i = 0; i < o.numel(); ++i) {
            T x = ai->data[i];
            T s = T(1) / (T(1) + std::exp(-x));
            ai->grad[i] += o.grad[i] * s * (T(1) + x * (T(1) - s));
        }
    });
    for (int64_t i = 0; i < out.numel(); ++i) {
        T x = a.data()[i];
        out.data()[i] = x / (T(1) + std::exp(-x));
    }
    return out;
}

template <typename T>
TensorT<T> clamp01(const TensorT<T>& a) {
    auto ai = a.impl();
    auto out = TensorT<T>::make_op(a.shape(), {a}, [ai](TensorImpl<T>& o) {
        ai->ensure_grad();
        for (int64_t i = 0; i < o.numel(); ++i) {
            T x = ai->data[i];
            if (x >= T(0) && x <= T(1)) ai->grad[i] += o.grad[i];
        }
    });
    for (int64_t i = 0; i < out.numel(); ++i)
        out.data()[i] = std::min(T(1), std::max(T(0), a.data()[i]));
    return out;
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> sum(const TensorT<T>& a) {
    auto ai = a.impl();
    auto out = TensorT<T>::make_op({1}, {a}, [ai](TensorImpl<T>& o) {
        ai->ensure_grad();
        for (int64_t i = 0; i < ai->numel(); ++i) ai->grad[i] += o.grad[0];
    });
    T acc = T(0);
    for (int64_t i = 0; i < a.numel(); ++i) acc += a.data()[i];
    out.data()[0] = acc;
    return out;
}

template <typename T>
TensorT<T> mean(const TensorT<T>& a) {
    return mul_scalar(sum(a), T(1) / static_cast<T>(a.numel()));
}

// Per-row sums of a 2-d tensor: [n,m] -> [n].
template <typename T>
TensorT<T> sum_rows(const TensorT<T>& a) {
    if (a.ndim() != 2) throw DimError("sum_rows expects a 2-d tensor");
    int64_t n = a.dim(0), m = a.dim(1);
    auto ai = a.impl();
    auto out = TensorT<T>::make_op({n}, {a}, [ai, n, m](TensorImpl<T>& o) {
        ai->ensure_grad();
        for (int64_t r = 0; r < n; ++r)
            for (int64_t c = 0; c < m; ++c) ai->grad[r * m + c] += o.grad[r];
    });
    for (int64_t r = 0; r < n; ++r) {
        T acc = T(0);
        for (int64_t c = 0; c < m; ++c) acc += a.data()[r * m + c];
        out.data()[r] = acc;
    }
    return out;
}

template <typename T>
TensorT<T> mse_loss(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a, b, "mse_loss");
    auto ai = a.impl(), bi = b.impl();
    int64_t n = a.numel();
    auto out = TensorT<T>::make_op({1}, {a, b}, [ai, bi, n](TensorImpl<T>& o) {
        T scale = o.grad[0] * T(2) / static_cast<T>(n);
        if (ai->requires_grad) {
            ai->ensure_grad();
            for (int64_t i = 0; i < n; ++i)
                ai->grad[i] += scale * (ai->data[i] - bi->data[i]);
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            for (int64_t i = 0; i < n; ++i)
                bi->grad[i] -= scale * (ai->data[i] - bi->data[i]);
        }
    });
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
        acc += d * d;
    }
    out.data()[0] = static_cast<T>(acc / static_cast<double>(n));
    return out;
}

template <typename T>
TensorT<T> l1_loss(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a, b, "l1_loss");
    auto ai = a.impl(), bi = b.impl();
    int64_t n = a.numel();
    auto out = TensorT<T>::make_op({1}, {a, b}, [ai, bi, n](TensorImpl<T>& o) {
        T scale = o.grad[0] / static_cast<T>(n);
        for (int64_t i = 0; i < n; ++i) {
            T d = ai->data[i] - bi->data[i];
            T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
            if (ai->requires_grad) {
                ai->ensure_grad();
                ai->grad[i] += scale * s;
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                bi->grad[i] -= scale * s;
            }
        }
    });
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i)
        acc += std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]));
    out.data()[0] = static_cast<T>(acc / static_cast<double>(n));
    return out;
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw DimError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
    int64_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    auto ai = a.impl(), bi = b.impl();
    auto out = TensorT<T>::make_op({n, m}, {a, b}, [ai, bi, n, k, m](TensorImpl<T>& o) {
        MapCM<T> G(o.grad.data(), n, m);
        if (ai->requires_grad) {
            ai->ensure_grad();
            MapM<T> dA(ai->grad.data(), n, k);
            MapCM<T> B(bi->data.data(), k, m);
            dA.noalias() += G * B.transpose();
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            MapM<T> dB(bi->grad.data(), k, m);
            MapCM<T> A(ai->data.data(), n, k);
            dB.noalias() += A.transpose() * G;
        }
    });
    MapCM<T> A(a.data(), n, k);
    MapCM<T> B(b.data(), k, m);
    MapM<T> C(out.data(), n, m);
    C.noalias() = A * B;
    return out;
}

template <typename T>
TensorT<T> transpose2d(const TensorT<T>& a) {
    if (a.ndim() != 2) throw DimError("transpose2d expects a 2-d tensor");
    int64_t n = a.dim(0), m = a.dim(1);
    auto ai = a.impl();
    auto out = TensorT<T>::make_op({m, n}, {a}, [ai, n, m](TensorImpl<T>& o) {
        ai->ensure_grad();
        for (int64_t r = 0; r < n; ++r)
            for (int64_t c = 0; c < m; ++c) ai->grad[r * m + c] += o.grad[c * n + r];
    });
    for (int64_t r = 0; r < n; ++r)
        for (int64_t c = 0; c < m; ++c) out.data()[c * n + r] = a.data()[r * m + c];
    return out;
}

// x[n,in] * w[out,in]^T + b[out]
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b = {}) {
    if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(1))
        throw DimError("linear: incompatible shapes " + shape_str(x.shape()) + " , " +
                       shape_str(w.shape()));
    int64_t n = x.dim(0), in = x.dim(1), outf = w.dim(0);
    if (b.defined() && (b.ndim() != 1 || b.dim(0) != outf))
        throw DimError("linear: bias shape mismatch");
    auto xi = x.impl(), wi = w.impl();
    std::vector<TensorT<T>> parents{x, w};
    if (b.defined()) parents.push_back(b);
    auto bimpl = b.defined() ? b.impl() : nullptr;
    auto out = TensorT<T>::make_op({n, outf}, parents, [xi, wi, bimpl, n, in, outf](TensorImpl<T>& o) {
        MapCM<T> G(o.grad.data(), n, outf);
        if (xi->requires_grad) {
            xi->ensure_grad();
            MapM<T> dX(xi->grad.data(), n, in);
            MapCM<T> W(wi->data.data(), outf, in);
            dX.noalias() += G * W;
        }
        if (wi->requires_grad) {
            wi->ensure_grad();
            MapM<T> dW(wi->grad.data(), outf, in);
            MapCM<T> X(xi->data.data(), n, in);
            dW.noalias() += G.transpose() * X;
        }
        if (bimpl && bimpl->requires_grad) {
            bimpl->ensure_grad();
            for (int64_t r = 0; r < n; ++r)
                for (int64_t c = 0; c < outf; ++c) bimpl->grad[c] += o.grad[r * outf + c];
        }
    });
    MapCM<T> X(x.data(), n, in);
    MapCM<T> W(w.data(), outf, in);
    MapM<T> O(out.data(), n, outf);
    O.noalias() = X * W.transpose();
    if (b.defined()) {
        for (int64_t r = 0; r < n; ++r)
            for (int64_t c = 0; c < outf; ++c) out.data()[r * outf + c] += b.data()[c];
    }
    return out;
}

template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& a) {
    if (a.ndim() != 2) throw DimError("softmax_rows expects a 2-d tensor");
    int64_t n = a.dim(0), m = a.dim(1);
    auto ai = a.impl();
    auto out = TensorT<T>::make_op({n, m}, {a}, [ai, n, m](TensorImpl<T>& o) {
        ai->ensure_grad();
        for (int64_t r = 0; r < n; ++r) {
            T dot = T(0);
            for (int64_t c = 0; c < m; ++c) dot += o.grad[r * m + c] * o.data[r * m + c];
            for (int64_t c = 0; c < m; ++c)
                ai->grad[r * m + c] += o.data[r * m + c] * (o.grad[r * m + c] - dot);
        }
    });
    for (int64_t r = 0; r < n; ++r) {
        T mx = a.data()[r * m];
        for (int64_t c = 1; c < m; ++c) mx = std::max(mx, a.data()[r * m + c]);
        T z = T(0);
        for (int64_t c = 0; c < m; ++c) {
            T e = std::exp(a.data()[r * m + c] - mx);
            out.data()[r * m + c] = e;
            z += e;
        }
        for (int64_t c = 0; c < m; ++c) out.data()[r * m + c] /= z;
    }
    return out;
}

// softmax(Q K^T / sqrt(d)) V
template <typename T>
TensorT<T> attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v) {
    if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2)
        throw DimError("attention expects 2-d Q, K, V");
    int64_t d = q.dim(1);
    if (d == 0) throw DimError("attention: feature dimension must be >= 1");
    if (k.dim(1) != d) throw DimError("attention: Q/K feature dims differ");
    if (k.dim(0) != v.dim(0)) throw DimError("attention: K/V row counts differ");
    if (v.dim(1) != d) throw DimError("attention: V feature dim differs");
    auto scores = mul_scalar(matmul(q, transpose2d(k)), T(1) / std::sqrt(static_cast<T>(d)));
    return matmul(softmax_rows(scores), v);
}

// ---------------------------------------------------------------------------
// Shape plumbing
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw DimError("reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
                       shape_str(shape));
    auto ai = a.impl();
    auto out = TensorT<T>::make_op(std::move(shape), {a}, [ai](TensorImpl<T>& o) {
        ai->ensure_grad();
        for (int64_t i = 0; i < o.numel(); ++i) ai->grad[i] += o.grad[i];
    });
    std::copy(a.data(), a.data() + a.numel(), out.data());
    return out;
}

// Removes the leading dimension at index n.
template <typename T>
TensorT<T> select_batch(const TensorT<T>& a, int64_t n) {
    if (a.ndim() < 2) throw DimError("select_batch expects at least 2 dims");
    if (n < 0 || n >= a.dim(0)) throw DimError("select_batch: index out of range");
    Shape inner(a.shape().begin() + 1, a.shape().end());
    int64_t stride = shape_numel(inner);
    auto ai = a.impl();
    auto out = TensorT<T>::make_op(inner, {a}, [ai, n, stride](TensorImpl<T>& o) {
        ai->ensure_grad();
        for (int64_t i = 0; i < stride; ++i) ai->grad[n * stride + i] += o.grad[i];
    });
    std::copy(a.data() + n * stride, a.data() + (n + 1) * stride, out.data());
    return out;
}

// Stacks equal-shape tensors along a new leading dimension.
template <typename T>
TensorT<T> stack_batch(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw DimError("stack_batch: empty input");
    Shape inner = parts[0].shape();
    for (const auto& p : parts) require_same_shape(parts[0], p, "stack_batch");
    int64_t stride = shape_numel(inner);
    int64_t n = static_cast<int64_t>(parts.size());
    Shape shape;
    shape.push_back(n);
    shape.insert(shape.end(), inner.begin(), inner.end());
    std::vector<std::shared_ptr<TensorImpl<T>>> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    auto out = TensorT<T>::make_op(shape, parts, [impls, stride](TensorImpl<T>& o) {
        for (std::size_t j = 0; j < impls.size(); ++j) {
            if (!impls[j]->requires_grad) continue;
            impls[j]->ensure_grad();
            for (int64_t i = 0; i < stride; ++i)
                impls[j]->grad[i] += o.grad[static_cast<int64_t>(j) * stride + i];
        }
    });
    for (int64_t j = 0; j < n; ++j)
        std::copy(parts[j].data(), parts[j].data() + stride, out.data() + j * stride);
    return out;
}

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.ndim() != 4 || b.ndim() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) ||
        a.dim(3) != b.dim(3))
        throw DimError("concat_channels: incompatible shapes " + shape_str(a.shape()) +
                       " , " + shape_str(b.shape()));
    int64_t n = a.dim(0), c1 = a.dim(1), c2 = b.dim(1), h = a.dim(2), w = a.dim(3);
    int64_t plane = h * w;
    auto ai = a.impl(), bi = b.impl();
    auto out = TensorT<T>::make_op({n, c1 + c2, h, w}, {a, b},
                                   [ai, bi, n, c1, c2, plane](TensorImpl<T>& o) {
        int64_t co = c1 + c2;
        if (ai->requires_grad) {
            ai->ensure_grad();
            for (int64_t in = 0; in < n; ++in)
                for (int64_t c = 0; c < c1; ++c)
                    for (int64_t p = 0; p < plane; ++p)
                        ai->grad[(in * c1 + c) * plane + p] +=
                            o.grad[(in * co + c) * plane + p];
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            for (int64_t in = 0; in < n; ++in)
                for (int64_t c = 0; c < c2; ++c)
                    for (int64_t p = 0; p < plane; ++p)
                        bi->grad[(in * c2 + c) * plane + p] +=
                            o.grad[(in * co + c1 + c) * plane + p];
        }
    });
    int64_t co = c1 + c2;
    for (int64_t in = 0; in < n; ++in) {
        for (int64_t c = 0; c < c1; ++c)
            std::copy(a.data() + (in * c1 + c) * plane, a.data() + (in * c1 + c + 1) * plane,
                      out.data() + (in * co + c) * plane);
        for (int64_t c = 0; c < c2; ++c)
            std::copy(b.data() + (in * c2 + c) * plane, b.data() + (in * c2 + c + 1) * plane,
                      out.data() + (in * co + c1 + c) * plane);
    }
    return out;
}

template <typename T>
TensorT<T> upsample_nearest2(const TensorT<T>& a) {
    if (a.ndim() != 4) throw DimError("upsample_nearest2 expects [N,C,H,W]");
    int64_t n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    auto ai = a.impl();
    auto out = TensorT<T>::make_op({n, c, 2 * h, 2 * w}, {a}, [ai, n, c, h, w](TensorImpl<T>& o) {
        ai->ensure_grad();
        int64_t W2 = 2 * w;
        for (int64_t nc = 0; nc < n * c; ++nc)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    int64_t base = nc * 4 * h * w;
                    T g = o.grad[base + (2 * y) * W2 + 2 * x] +
                          o.grad[base + (2 * y) * W2 + 2 * x + 1] +
                          o.grad[base + (2 * y + 1) * W2 + 2 * x] +
                          o.grad[base + (2 * y + 1) * W2 + 2 * x + 1];
                    ai->grad[nc * h * w + y * w + x] += g;
                }
    });
    int64_t W2 = 2 * w;
    for (int64_t nc = 0; nc < n * c; ++nc)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                T v = a.data()[nc * h * w + y * w + x];
                int64_t base = nc * 4 * h * w;
                out.data()[base + (2 * y) * W2 + 2 * x] = v;
                out.data()[base + (2 * y) * W2 + 2 * x + 1] = v;
                out.data()[base + (2 * y + 1) * W2 + 2 * x] = v;
                out.data()[base + (2 * y + 1) * W2 + 2 * x + 1] = v;
            }
    return out;
}

template <typename T>
TensorT<T> avg_pool2d(const TensorT<T>& a, int kernel) {
    if (a.ndim() != 4) throw DimError("avg_pool2d expects [N,C,H,W]");
    int64_t n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    if (kernel < 1 || h % kernel || w % kernel)
        throw DimError("avg_pool2d: spatial dims must divide kernel size");
    int64_t ho = h / kernel, wo = w / kernel;
    T inv = T(1) / static_cast<T>(kernel * kernel);
    auto ai = a.impl();
    auto out = TensorT<T>::make_op({n, c, ho, wo}, {a},
                                   [ai, n, c, h, w, ho, wo, kernel, inv](TensorImpl<T>& o) {
        ai->ensure_grad();
        for (int64_t nc = 0; nc < n * c; ++nc)
            for (int64_t y = 0; y < ho; ++y)
                for (int64_t x = 0; x < wo; ++x) {
                    T g = o.grad[nc * ho * wo + y * wo + x] * inv;
                    for (int64_t dy = 0; dy < kernel; ++dy)
                        for (int64_t dx = 0; dx < kernel; ++dx)
                            ai->grad[nc * h * w + (y * kernel + dy) * w + x * kernel + dx] += g;
                }
    });
    for (int64_t nc = 0; nc < n * c; ++nc)
        for (int64_t y = 0; y < ho; ++y)
            for (int64_t x = 0; x < wo; ++x) {
                T acc = T(0);
                for (int64_t dy = 0; dy < kernel; ++dy)
                    for (int64_t dx = 0; dx < kernel; ++dx)
                        acc += a.data()[nc * h * w + (y * kernel + dy) * w + x * kernel + dx];
                out.data()[nc * ho * wo + y * wo + x] = acc * inv;
            }
    return out;
}

// x[N,C,H,W] + v[N,C] broadcast over the spatial plane.
template <typename T>
TensorT<T> add_spatial(const TensorT<T>& x, const TensorT<T>& v) {
    if (x.ndim() != 4 || v.ndim() != 2 || x.dim(0) != v.dim(0) || x.dim(1) != v.dim(1))
        throw DimError("add_spatial: incompatible shapes");
    int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    auto xi = x.impl(), vi = v.impl();
    auto out = TensorT<T>::make_op(x.shape(), {x, v}, [xi, vi, n, c, plane](TensorImpl<T>& o) {
        if (xi->requires_grad) {
            xi->ensure_grad();
            for (int64_t i = 0; i < o.numel(); ++i) xi->grad[i] += o.grad[i];
        }
        if (vi->requires_grad) {
            vi->ensure_grad();
            for (int64_t nc = 0; nc < n * c; ++nc) {
                T acc = T(0);
                for (int64_t p = 0; p < plane; ++p) acc += o.grad[nc * plane + p];
                vi->grad[nc] += acc;
            }
        }
    });
    for (int64_t nc = 0; nc < n * c; ++nc)
        for (int64_t p = 0; p < plane; ++p)
            out.data()[nc * plane + p] = x.data()[nc * plane + p] + v.data()[nc];
    return out;
}

// Horizontal finite difference x[..., 1:] - x[..., :-1]; used by edge losses.
template <typename T>
TensorT<T> diff_h(const TensorT<T>& a) {
    if (a.ndim() != 4) throw DimError("diff_h expects [N,C,H,W]");
    int64_t n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    if (w < 2) throw DimError("diff_h: width must be >= 2");
    auto ai = a.impl();
    auto out = TensorT<T>::make_op({n, c, h, w - 1}, {a}, [ai, n, c, h, w](TensorImpl<T>& o) {
        ai->ensure_grad();
        int64_t wo = w - 1;
        for (int64_t nch = 0; nch < n * c * h; ++nch)
            for (int64_t x = 0; x < wo; ++x) {
                T g = o.grad[nch * wo + x];
                ai->grad[nch * w + x + 1] += g;
                ai->grad[nch * w + x] -= g;
            }
    });
    int64_t wo = w - 1;
    for (int64_t nch = 0; nch < n * c * h; ++nch)
        for (int64_t x = 0; x < wo; ++x)
            out.data()[nch * wo + x] = a.data()[nch * w + x + 1] - a.data()[nch * w + x];
    return out;
}

template <typename T>
TensorT<T> diff_v(const TensorT<T>& a) {
    if (a.ndim() != 4) throw DimError("diff_v expects [N,C,H,W]");
    int64_t n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    if (h < 2) throw DimError("diff_v: height must be >= 2");
    auto ai = a.impl();
    auto out = TensorT<T>::make_op({n, c, h - 1, w}, {a}, [ai, n, c, h, w](TensorImpl<T>& o) {
        ai->ensure_grad();
        int64_t ho = h - 1;
        for (int64_t nc = 0; nc < n * c; ++nc)
            for (int64_t y = 0; y < ho; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    T g = o.grad[nc * ho * w + y * w + x];
                    ai->grad[nc * h * w + (y + 1) * w + x] += g;
                    ai->grad[nc * h * w + y * w + x] -= g;
                }
    });
    int64_t ho = h - 1;
    for (int64_t nc = 0; nc < n * c; ++nc)
        for (int64_t y = 0; y < ho; ++y)
            for (int64_t x = 0; x < w; ++x)
                out.data()[nc * ho * w + y * w + x] =
                    a.data()[nc * h * w + (y + 1) * w + x] - a.data()[nc * h * w + y * w + x];
    return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

namespace detail {

// Shared normalization backward for one contiguous group of m elements whose
// affine channel index is ch_base + i / plane.
template <typename T>
inline void norm_group_backward(const T* g, const T* xhat, const T* gamma,
                                int64_t ch_base, int64_t plane, int64_t m, T inv_std,
                                T* dx_out, T* dgamma, T* dbeta) {
    T mean_g = T(0), mean_gx = T(0);
    for (int64_t i = 0; i < m; ++i) {
        T gh = g[i] * gamma[ch_base + i / plane];
        mean_g += gh;
        mean_gx += gh * xhat[i];
    }
    mean_g /= static_cast<T>(m);
    mean_gx /= static_cast<T>(m);
    for (int64_t i = 0; i < m; ++i) {
        int64_t c = ch_base + i / plane;
        T gh = g[i] * gamma[c];
        if (dx_out) dx_out[i] += (gh - mean_g - xhat[i] * mean_gx) * inv_std;
        if (dgamma) dgamma[c] += g[i] * xhat[i];
        if (dbeta) dbeta[c] += g[i];
    }
}

}  // namespace detail

inline constexpr double kNormEps = 1e-5;

// Group normalization over [N,C,H,W]: stats per (n, group), affine per channel.
template <typename T>
TensorT<T> group_norm(const TensorT<T>& x, int64_t groups, const TensorT<T>& gamma,
                      const TensorT<T>& beta) {
    if (x.ndim() != 4) throw DimError("group_norm expects [N,C,H,W]");
    int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    if (groups < 1 || c % groups) throw DimError("group_norm: channels must divide groups");
    if (gamma.ndim() != 1 || gamma.dim(0) != c || beta.ndim() != 1 || beta.dim(0) != c)
        throw DimError("group_norm: affine shape mismatch");
    int64_t cg = c / groups;
    int64_t m = cg * plane;
    T eps = static_cast<T>(kNormEps);

    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
    // xhat cached for backward.
    auto xhat = std::make_shared<AVec<T>>(static_cast<std::size_t>(x.numel()));
    auto inv_std = std::make_shared<AVec<T>>(static_cast<std::size_t>(n * groups));

    auto out = TensorT<T>::make_op(
        x.shape(), {x, gamma, beta},
        [xi, gi, bi, xhat, inv_std, n, groups, cg, plane, m](TensorImpl<T>& o) {
            if (xi->requires_grad) xi->ensure_grad();
            if (gi->requires_grad) gi->ensure_grad();
            if (bi->requires_grad) bi->ensure_grad();
            for (int64_t in = 0; in < n; ++in)
                for (int64_t g = 0; g < groups; ++g) {
                    int64_t off = (in * groups + g) * m;
                    detail::norm_group_backward<T>(
                        o.grad.data() + off, xhat->data() + off, gi->data.data(), g * cg,
                        plane, m, (*inv_std)[static_cast<std::size_t>(in * groups + g)],
                        xi->requires_grad ? xi->grad.data() + off : nullptr,
                        gi->requires_grad ? gi->grad.data() : nullptr,
                        bi->requires_grad ? bi->grad.data() : nullptr);
                }
        });

    for (int64_t in = 0; in < n; ++in)
        for (int64_t g = 0; g < groups; ++g) {
            int64_t off = (in * groups + g) * m;
            double mu = 0.0;
            for (int64_t j = 0; j < m; ++j) mu += x.data()[off + j];
            mu /= static_cast<double>(m);
            double var = 0.0;
            for (int64_t j = 0; j < m; ++j) {
                double d = x.data()[off + j] - mu;
                var += d * d;
            }
            var /= static_cast<double>(m);
            T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
            (*inv_std)[static_cast<std::size_t>(in * groups + g)] = is;
            for (int64_t j = 0; j < m; ++j) {
                T xh = (x.data()[off + j] - static_cast<T>(mu)) * is;
                (*xhat)[static_cast<std::size_t>(off + j)] = xh;
                int64_t channel = g * cg + j / plane;
                out.data()[off + j] = gamma.data()[channel] * xh + beta.data()[channel];
            }
        }
    return out;
}

// Instance norm on [N,C,H,W]: group_norm with one group per channel.
template <typename T>
TensorT<T> instance_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta) {
    if (x.ndim() == 4) return group_norm(x, x.dim(1), gamma, beta);
    if (x.ndim() != 2) throw DimError("instance_norm expects [N,C,H,W] or [N,D]");
    // 2-d: stats per row, affine per feature.
    int64_t n = x.dim(0), d = x.dim(1);
    if (gamma.ndim() != 1 || gamma.dim(0) != d || beta.ndim() != 1 || beta.dim(0) != d)
        throw DimError("instance_norm: affine shape mismatch");
    T eps = static_cast<T>(kNormEps);
    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
    auto xhat = std::make_shared<AVec<T>>(static_cast<std::size_t>(x.numel()));
    auto inv_std = std::make_shared<AVec<T>>(static_cast<std::size_t>(n));
    auto out = TensorT<T>::make_op(
        x.shape(), {x, gamma, beta}, [xi, gi, bi, xhat, inv_std, n, d](TensorImpl<T>& o) {
            if (xi->requires_grad) xi->ensure_grad();
            if (gi->requires_grad) gi->ensure_grad();
            if (bi->requires_grad) bi->ensure_grad();
            for (int64_t r = 0; r < n; ++r)
                detail::norm_group_backward<T>(
                    o.grad.data() + r * d, xhat->data() + r * d, gi->data.data(), 0, 1, d,
                    (*inv_std)[static_cast<std::size_t>(r)],
                    xi->requires_grad ? xi->grad.data() + r * d : nullptr,
                    gi->requires_grad ? gi->grad.data() : nullptr,
                    bi->requires_grad ? bi->grad.data() : nullptr);
        });
    for (int64_t r = 0; r < n; ++r) {
        double mu = 0.0;
        for (int64_t j = 0; j < d; ++j) mu += x.data()[r * d + j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            double dd = x.data()[r * d + j] - mu;
            var += dd * dd;
        }
        var /= static_cast<double>(d);
        T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        (*inv_std)[static_cast<std::size_t>(r)] = is;
        for (int64_t j = 0; j < d; ++j) {
            T xh = (x.data()[r * d + j] - static_cast<T>(mu)) * is;
            (*xhat)[static_cast<std::size_t>(r * d + j)] = xh;
            out.data()[r * d + j] = gamma.data()[j] * xh + beta.data()[j];
        }
    }
    return out;
}

// Column-wise batch standardization of [B,e]: mean 0, population std 1.
template <typename T>
TensorT<T> standardize_cols(const TensorT<T>& x) {
    if (x.ndim() != 2) throw DimError("standardize_cols expects [B,e]");
    int64_t b = x.dim(0), e = x.dim(1);
    if (b < 2) throw ContractError("standardize_cols requires batch size >= 2");
    T eps = static_cast<T>(kNormEps);
    auto xi = x.impl();
    auto xhat = std::make_shared<AVec<T>>(static_cast<std::size_t>(x.numel()));
    auto inv_std = std::make_shared<AVec<T>>(static_cast<std::size_t>(e));
    auto out = TensorT<T>::make_op(x.shape(), {x}, [xi, xhat, inv_std, b, e](TensorImpl<T>& o) {
        xi->ensure_grad();
        for (int64_t j = 0; j < e; ++j) {
            T mean_g = T(0), mean_gx = T(0);
            for (int64_t r = 0; r < b; ++r) {
                mean_g += o.grad[r * e + j];
                mean_gx += o.grad[r * e + j] * (*xhat)[static_cast<std::size_t>(r * e + j)];
            }
            mean_g /= static_cast<T>(b);
            mean_gx /= static_cast<T>(b);
            T is = (*inv_std)[static_cast<std::size_t>(j)];
            for (int64_t r = 0; r < b; ++r)
                xi->grad[r * e + j] +=
                    (o.grad[r * e + j] - mean_g -
                     (*xhat)[static_cast<std::size_t>(r * e + j)] * mean_gx) *
                    is;
        }
    });
    for (int64_t j = 0; j < e; ++j) {
        double mu = 0.0;
        for (int64_t r = 0; r < b; ++r) mu += x.data()[r * e + j];
        mu /= static_cast<double>(b);
        double var = 0.0;
        for (int64_t r = 0; r < b; ++r) {
            double d = x.data()[r * e + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(b);
        T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        (*inv_std)[static_cast<std::size_t>(j)] = is;
        for (int64_t r = 0; r < b; ++r) {
            T xh = (x.data()[r * e + j] - static_cast<T>(mu)) * is;
            (*xhat)[static_cast<std::size_t>(r * e + j)] = xh;
            out.data()[r * e + j] = xh;
        }
    }
    return out;
}

}  // namespace ipldm
