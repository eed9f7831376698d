#include "polarfuse/conv.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>
#include <string>

namespace polarfuse {

std::pair<std::size_t, std::size_t> ConvSpec::out_size(std::size_t h, std::size_t w) const {
    const long long nh = static_cast<long long>(h) + 2LL * ph - static_cast<long long>(dh) * (kh - 1) - 1;
    const long long nw = static_cast<long long>(w) + 2LL * pw - static_cast<long long>(dw) * (kw - 1) - 1;
    if (nh < 0 || nw < 0)
        throw std::invalid_argument("conv2d: kernel does not fit input " + std::to_string(h) + "x" +
                                    std::to_string(w));
    return {static_cast<std::size_t>(nh / static_cast<long long>(sh) + 1),
            static_cast<std::size_t>(nw / static_cast<long long>(sw) + 1)};
}

std::pair<std::size_t, std::size_t> ConvSpec::transposed_out_size(std::size_t h, std::size_t w) const {
    const long long oh = static_cast<long long>(h - 1) * sh - 2LL * ph + static_cast<long long>(dh) * (kh - 1) + 1;
    const long long ow = static_cast<long long>(w - 1) * sw - 2LL * pw + static_cast<long long>(dw) * (kw - 1) + 1;
    if (oh < 1 || ow < 1)
        throw std::invalid_argument("conv_transpose2d: non-positive output size");
    return {static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)};
}

void ConvSpec::validate_weights(const std::vector<std::size_t>& wshape) const {
    if (wshape.size() != 4 || wshape[0] != out_channels || wshape[1] != in_channels ||
        wshape[2] != kh || wshape[3] != kw)
        throw std::invalid_argument("conv2d: weight shape " + shape_to_string(wshape) +
                                    " does not match spec (" + std::to_string(out_channels) + "x" +
                                    std::to_string(in_channels) + "x" + std::to_string(kh) + "x" +
                                    std::to_string(kw) + ")");
}

namespace {

// C[M,N] += A[M,K] * B[K,N], row-major. Reduction over k runs in a fixed
// ascending order for every output element, so results are deterministic.
template <typename T>
void gemm_acc(const T* A, std::size_t lda, const T* B, std::size_t ldb, T* C, std::size_t ldc,
              std::size_t M, std::size_t K, std::size_t N) {
    std::size_t m = 0;
    for (; m + 4 <= M; m += 4) {
        T* c0 = C + (m + 0) * ldc;
        T* c1 = C + (m + 1) * ldc;
        T* c2 = C + (m + 2) * ldc;
        T* c3 = C + (m + 3) * ldc;
        const T* a0 = A + (m + 0) * lda;
        const T* a1 = A + (m + 1) * lda;
        const T* a2 = A + (m + 2) * lda;
        const T* a3 = A + (m + 3) * lda;
        for (std::size_t k = 0; k < K; ++k) {
            const T* b = B + k * ldb;
            const T w0 = a0[k], w1 = a1[k], w2 = a2[k], w3 = a3[k];
            for (std::size_t n = 0; n < N; ++n) {
                const T bn = b[n];
                c0[n] += w0 * bn;
                c1[n] += w1 * bn;
                c2[n] += w2 * bn;
                c3[n] += w3 * bn;
            }
        }
    }
    for (; m < M; ++m) {
        T* c = C + m * ldc;
        const T* a = A + m * lda;
        for (std::size_t k = 0; k < K; ++k) {
            const T* b = B + k * ldb;
            const T w = a[k];
            for (std::size_t n = 0; n < N; ++n) c[n] += w * b[n];
        }
    }
}

}  // namespace

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const ConvSpec& spec, const TensorT<T>& w,
                          const TensorT<T>* bias) {
    if (x.ndim() != 3)
        throw std::invalid_argument("conv2d: input must be (C,H,W), got " + shape_to_string(x.shape));
    if (x.shape[0] != spec.in_channels)
        throw std::invalid_argument("conv2d: input has " + std::to_string(x.shape[0]) +
                                    " channels, spec expects " + std::to_string(spec.in_channels));
    spec.validate_weights(w.shape);
    if (bias && bias->numel() != spec.out_channels)
        throw std::invalid_argument("conv2d: bias length mismatch");

    const std::size_t H = x.shape[1], W = x.shape[2];
    const auto [Ho, Wo] = spec.out_size(H, W);
    const std::size_t M = spec.out_channels;
    const std::size_t K = spec.in_channels * spec.kh * spec.kw;
    const std::size_t N = Ho * Wo;

    TensorT<T> y({M, Ho, Wo});
    for (std::size_t o = 0; o < M; ++o) {
        const T b = bias ? bias->data[o] : T(0);
        std::fill(y.channel(o), y.channel(o) + N, b);
    }

    const bool pointwise = spec.kh == 1 && spec.kw == 1 && spec.sh == 1 && spec.sw == 1 &&
                           spec.ph == 0 && spec.pw == 0;
    if (pointwise) {
        gemm_acc(w.data.data(), K, x.data.data(), N, y.data.data(), N, M, K, N);
        return y;
    }

    // Tiled im2col keeps the scratch buffer bounded for wide-channel layers.
    const std::size_t max_tile_bytes = 8u << 20;
    const std::size_t budget = std::max<std::size_t>(std::size_t(512), max_tile_bytes / (K * sizeof(T)));
    const std::size_t tile = std::min({N, std::size_t(4096), budget});
    std::vector<T> col(K * tile);

    for (std::size_t p0 = 0; p0 < N; p0 += tile) {
        const std::size_t pn = std::min(tile, N - p0);
        for (std::size_t c = 0; c < spec.in_channels; ++c) {
            const T* xc = x.channel(c);
            for (std::size_t u = 0; u < spec.kh; ++u) {
                for (std::size_t v = 0; v < spec.kw; ++v) {
                    T* row = col.data() + ((c * spec.kh + u) * spec.kw + v) * tile;
                    for (std::size_t p = 0; p < pn; ++p) {
                        const std::size_t oi = (p0 + p) / Wo, oj = (p0 + p) % Wo;
                        const long long ii = static_cast<long long>(oi * spec.sh) - spec.ph + u * spec.dh;
                        const long long jj = static_cast<long long>(oj * spec.sw) - spec.pw + v * spec.dw;
                        row[p] = (ii >= 0 && ii < static_cast<long long>(H) && jj >= 0 &&
                                  jj < static_cast<long long>(W))
                                     ? xc[ii * W + jj]
                                     : T(0);
                    }
                }
            }
        }
        gemm_acc(w.data.data(), K, col.data(), tile, y.data.data() + p0, N, M, K, pn);
    }
    return y;
}

template <typename T>
TensorT<T> conv2d_input_grad(const TensorT<T>& gy, const ConvSpec& spec, const TensorT<T>& w,
                             std::size_t oh, std::size_t ow) {
    spec.validate_weights(w.shape);
    if (gy.ndim() != 3 || gy.shape[0] != spec.out_channels)
        throw std::invalid_argument("conv2d_input_grad: gradient must be (out_channels,H,W)");
    const std::size_t Ho = gy.shape[1], Wo = gy.shape[2];
    const std::size_t O = spec.out_channels, C = spec.in_channels;
    const std::size_t kstride = C * spec.kh * spec.kw;

    TensorT<T> gx({C, oh, ow});
    for (std::size_t c = 0; c < C; ++c) {
        T* out = gx.channel(c);
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                T acc = 0;
                for (std::size_t u = 0; u < spec.kh; ++u) {
                    const long long ti = static_cast<long long>(i) + spec.ph - static_cast<long long>(u * spec.dh);
                    if (ti < 0 || ti % static_cast<long long>(spec.sh)) continue;
                    const std::size_t ii = static_cast<std::size_t>(ti) / spec.sh;
                    if (ii >= Ho) continue;
                    for (std::size_t v = 0; v < spec.kw; ++v) {
                        const long long tj = static_cast<long long>(j) + spec.pw - static_cast<long long>(v * spec.dw);
                        if (tj < 0 || tj % static_cast<long long>(spec.sw)) continue;
                        const std::size_t jj = static_cast<std::size_t>(tj) / spec.sw;
                        if (jj >= Wo) continue;
                        const T* wp = w.data.data() + (c * spec.kh + u) * spec.kw + v;
                        const T* gp = gy.data.data() + ii * Wo + jj;
                        for (std::size_t o = 0; o < O; ++o)
                            acc += wp[o * kstride] * gp[o * Ho * Wo];
                    }
                }
                out[i * ow + j] = acc;
            }
        }
    }
    return gx;
}

template <typename T>
TensorT<T> conv2d_weight_grad(const TensorT<T>& x, const TensorT<T>& gy, const ConvSpec& spec) {
    if (x.ndim() != 3 || x.shape[0] != spec.in_channels)
        throw std::invalid_argument("conv2d_weight_grad: bad input shape");
    if (gy.ndim() != 3 || gy.shape[0] != spec.out_channels)
        throw std::invalid_argument("conv2d_weight_grad: bad gradient shape");
    const std::size_t H = x.shape[1], W = x.shape[2];
    const std::size_t Ho = gy.shape[1], Wo = gy.shape[2];

    TensorT<T> gw({spec.out_channels, spec.in_channels, spec.kh, spec.kw});
    for (std::size_t o = 0; o < spec.out_channels; ++o) {
        const T* g = gy.channel(o);
        T* gwo = gw.data.data() + o * spec.in_channels * spec.kh * spec.kw;
        for (std::size_t i = 0; i < Ho; ++i) {
            for (std::size_t j = 0; j < Wo; ++j) {
                const T gv = g[i * Wo + j];
                if (gv == T(0)) continue;
                for (std::size_t u = 0; u < spec.kh; ++u) {
                    const long long ii = static_cast<long long>(i * spec.sh) - spec.ph + u * spec.dh;
                    if (ii < 0 || ii >= static_cast<long long>(H)) continue;
                    for (std::size_t v = 0; v < spec.kw; ++v) {
                        const long long jj = static_cast<long long>(j * spec.sw) - spec.pw + v * spec.dw;
                        if (jj < 0 || jj >= static_cast<long long>(W)) continue;
                        const T* xrow = x.data.data() + ii * W + jj;
                        for (std::size_t c = 0; c < spec.in_channels; ++c)
                            gwo[(c * spec.kh + u) * spec.kw + v] += gv * xrow[c * H * W];
                    }
                }
            }
        }
    }
    return gw;
}

template <typename T>
TensorT<T> conv_transpose2d_forward(const TensorT<T>& x, const ConvSpec& spec, const TensorT<T>& w,
                                    const TensorT<T>* bias) {
    if (x.ndim() != 3 || x.shape[0] != spec.out_channels)
        throw std::invalid_argument("conv_transpose2d: input must carry spec.out_channels (" +
                                    std::to_string(spec.out_channels) + "), got " +
                                    shape_to_string(x.shape));
    if (bias && bias->numel() != spec.in_channels)
        throw std::invalid_argument("conv_transpose2d: bias length mismatch");
    const auto [oh, ow] = spec.transposed_out_size(x.shape[1], x.shape[2]);
    TensorT<T> y = conv2d_input_grad(x, spec, w, oh, ow);
    if (bias) {
        for (std::size_t c = 0; c < spec.in_channels; ++c) {
            T* yc = y.channel(c);
            const T b = bias->data[c];
            for (std::size_t p = 0; p < oh * ow; ++p) yc[p] += b;
        }
    }
    return y;
}

template TensorT<float> conv2d_forward(const TensorT<float>&, const ConvSpec&, const TensorT<float>&,
                                       const TensorT<float>*);
template TensorT<double> conv2d_forward(const TensorT<double>&, const ConvSpec&, const TensorT<double>&,
                                        const TensorT<double>*);
template TensorT<float> conv2d_input_grad(const TensorT<float>&, const ConvSpec&, const TensorT<float>&,
                                          std::size_t, std::size_t);
template TensorT<double> conv2d_input_grad(const TensorT<double>&, const ConvSpec&, const TensorT<double>&,
                                           std::size_t, std::size_t);
template TensorT<float> conv2d_weight_grad(const TensorT<float>&, const TensorT<float>&, const ConvSpec&);
template TensorT<double> conv2d_weight_grad(const TensorT<double>&, const TensorT<double>&, const ConvSpec&);
template TensorT<float> conv_transpose2d_forward(const TensorT<float>&, const ConvSpec&,
                                                 const TensorT<float>&, const TensorT<float>*);
template TensorT<double> conv_transpose2d_forward(const TensorT<double>&, const ConvSpec&,
                                                  const TensorT<double>&, const TensorT<double>*);

}  // namespace polarfuse
