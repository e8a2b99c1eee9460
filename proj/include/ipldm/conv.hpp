#pragma once

#include "ipldm/ops.hpp"

namespace ipldm {

enum class PadMode { Zero, Circular };

namespace detail {

// col is [K x L] row-major, K = Cin*kh*kw, L = Ho*Wo, for one sample.
template <typename T>
void im2col(const T* x, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, PadMode mode, int64_t ho, int64_t wo, T* col) {
    int64_t L = ho * wo;
    int64_t r = 0;
    for (int64_t c = 0; c < cin; ++c) {
        const T* plane = x + c * h * w;
        for (int64_t i = 0; i < kh; ++i)
            for (int64_t j = 0; j < kw; ++j, ++r) {
                T* row = col + r * L;
                int64_t l = 0;
                for (int64_t oh = 0; oh < ho; ++oh) {
                    int64_t hr = oh * stride - pad + i;
                    if (mode == PadMode::Circular) hr = ((hr % h) + h) % h;
                    bool hok = hr >= 0 && hr < h;
                    for (int64_t ow = 0; ow < wo; ++ow, ++l) {
                        int64_t wr = ow * stride - pad + j;
                        if (mode == PadMode::Circular) wr = ((wr % w) + w) % w;
                        row[l] = (hok && wr >= 0 && wr < w) ? plane[hr * w + wr] : T(0);
                    }
                }
            }
    }
}

template <typename T>
void col2im_accum(const T* col, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
                  int64_t stride, int64_t pad, PadMode mode, int64_t ho, int64_t wo, T* dx) {
    int64_t L = ho * wo;
    int64_t r = 0;
    for (int64_t c = 0; c < cin; ++c) {
        T* plane = dx + c * h * w;
        for (int64_t i = 0; i < kh; ++i)
            for (int64_t j = 0; j < kw; ++j, ++r) {
                const T* row = col + r * L;
                int64_t l = 0;
                for (int64_t oh = 0; oh < ho; ++oh) {
                    int64_t hr = oh * stride - pad + i;
                    if (mode == PadMode::Circular) hr = ((hr % h) + h) % h;
                    bool hok = hr >= 0 && hr < h;
                    for (int64_t ow = 0; ow < wo; ++ow, ++l) {
                        int64_t wr = ow * stride - pad + j;
                        if (mode == PadMode::Circular) wr = ((wr % w) + w) % w;
                        if (hok && wr >= 0 && wr < w) plane[hr * w + wr] += row[l];
                    }
                }
            }
    }
}

template <typename T>
AVec<T>& col_scratch() {
    thread_local AVec<T> buf;
    return buf;
}

}  // namespace detail

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& k, const TensorT<T>& bias,
                  int stride, int padding, PadMode mode = PadMode::Zero) {
    if (x.ndim() != 4 || k.ndim() != 4) throw DimError("conv2d expects 4-d input and kernel");
    int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    int64_t cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    if (k.dim(1) != cin)
        throw DimError("conv2d: input channels " + std::to_string(cin) +
                       " do not match kernel channels " + std::to_string(k.dim(1)));
    if (stride < 1 || padding < 0) throw DimError("conv2d: invalid stride/padding");
    if (kh > h + 2 * padding || kw > w + 2 * padding)
        throw DimError("conv2d: kernel larger than padded input");
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != cout))
        throw DimError("conv2d: bias shape mismatch");
    int64_t ho = (h + 2 * padding - kh) / stride + 1;
    int64_t wo = (w + 2 * padding - kw) / stride + 1;
    int64_t K = cin * kh * kw, L = ho * wo;

    auto xi = x.impl(), ki = k.impl();
    auto bi = bias.defined() ? bias.impl() : nullptr;
    std::vector<TensorT<T>> parents{x, k};
    if (bias.defined()) parents.push_back(bias);

    auto out = TensorT<T>::make_op(
        {n, cout, ho, wo}, parents,
        [xi, ki, bi, n, cin, h, w, cout, kh, kw, stride, padding, mode, ho, wo, K,
         L](TensorImpl<T>& o) {
            bool need_dx = xi->requires_grad;
            bool need_dk = ki->requires_grad;
            bool need_db = bi && bi->requires_grad;
            if (need_dx) xi->ensure_grad();
            if (need_dk) ki->ensure_grad();
            if (need_db) bi->ensure_grad();

            int nchunks = static_cast<int>(std::min<int64_t>(num_threads(), n));
            int64_t per = (n + nchunks - 1) / nchunks;
            // Per-chunk partials for the reduced gradients, merged in chunk order.
            AVec<T> dk_part, db_part;
            if (need_dk) dk_part.assign(static_cast<std::size_t>(nchunks) * cout * K, T(0));
            if (need_db) db_part.assign(static_cast<std::size_t>(nchunks) * cout, T(0));

            parallel_for(nchunks, [&](int64_t clo, int64_t chi) {
                for (int64_t c = clo; c < chi; ++c) {
                    auto& col = detail::col_scratch<T>();
                    col.resize(static_cast<std::size_t>(K) * L);
                    AVec<T> dcol;
                    if (need_dx) dcol.resize(static_cast<std::size_t>(K) * L);
                    T* dkp = need_dk ? dk_part.data() + c * cout * K : nullptr;
                    T* dbp = need_db ? db_part.data() + c * cout : nullptr;
                    int64_t lo = c * per, hi = std::min<int64_t>(n, (c + 1) * per);
                    for (int64_t s = lo; s < hi; ++s) {
                        MapCM<T> G(o.grad.data() + s * cout * L, cout, L);
                        if (need_dk) {
                            detail::im2col(xi->data.data() + s * cin * h * w, cin, h, w, kh,
                                           kw, stride, padding, mode, ho, wo, col.data());
                            MapCM<T> Col(col.data(), K, L);
                            MapM<T> dK(dkp, cout, K);
                            dK.noalias() += G * Col.transpose();
                        }
                        if (need_db)
                            for (int64_t oc = 0; oc < cout; ++oc) {
                                T acc = T(0);
                                const T* gr = o.grad.data() + (s * cout + oc) * L;
                                for (int64_t l = 0; l < L; ++l) acc += gr[l];
                                dbp[oc] += acc;
                            }
                        if (need_dx) {
                            MapCM<T> Km(ki->data.data(), cout, K);
                            MapM<T> dCol(dcol.data(), K, L);
                            dCol.noalias() = Km.transpose() * G;
                            detail::col2im_accum(dcol.data(), cin, h, w, kh, kw, stride,
                                                 padding, mode, ho, wo,
                                                 xi->grad.data() + s * cin * h * w);
                        }
                    }
                }
            });
            if (need_dk)
                for (int c = 0; c < nchunks; ++c)
                    for (int64_t i = 0; i < cout * K; ++i)
                        ki->grad[i] += dk_part[c * cout * K + i];
            if (need_db)
                for (int c = 0; c < nchunks; ++c)
                    for (int64_t i = 0; i < cout; ++i) bi->grad[i] += db_part[c * cout + i];
        });

    parallel_for(n, [&](int64_t lo, int64_t hi) {
        auto& col = detail::col_scratch<T>();
        col.resize(static_cast<std::size_t>(K) * L);
        for (int64_t s = lo; s < hi; ++s) {
            detail::im2col(x.data() + s * cin * h * w, cin, h, w, kh, kw, stride, padding,
                           mode, ho, wo, col.data());
            MapCM<T> Km(k.data(), cout, K);
            MapCM<T> Col(col.data(), K, L);
            MapM<T> O(out.data() + s * cout * L, cout, L);
            O.noalias() = Km * Col;
            if (bias.defined())
                for (int64_t oc = 0; oc < cout; ++oc) {
                    T b = bias.data()[oc];
                    T* op = out.data() + (s * cout + oc) * L;
                    for (int64_t l = 0; l < L; ++l) op[l] += b;
                }
        }
    });
    return out;
}

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& k, int stride, int padding,
                  PadMode mode = PadMode::Zero) {
    return conv2d(x, k, TensorT<T>{}, stride, padding, mode);
}

}  // namespace ipldm
