#pragma once

#include <cstddef>
#include <optional>
#include <utility>

#include "polarfuse/tensor.hpp"

namespace polarfuse {

// Convolution geometry. Weights are stored (out_channels, in_channels, kh, kw).
struct ConvSpec {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kh = 1, kw = 1;
    std::size_t sh = 1, sw = 1;
    std::size_t ph = 0, pw = 0;
    std::size_t dh = 1, dw = 1;
    bool has_bias = false;

    // floor((n + 2p - d*(k-1) - 1) / s) + 1, throws if not positive
    std::pair<std::size_t, std::size_t> out_size(std::size_t h, std::size_t w) const;
    // (n - 1)*s - 2p + d*(k-1) + 1 for the adjoint map
    std::pair<std::size_t, std::size_t> transposed_out_size(std::size_t h, std::size_t w) const;

    void validate_weights(const std::vector<std::size_t>& wshape) const;
};

// y[o,i,j] = sum_{c,u,v} w[o,c,u,v] * x[c, i*sh - ph + u*dh, j*sw - pw + v*dw]  (zero padding)
template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const ConvSpec& spec, const TensorT<T>& w,
                          const TensorT<T>* bias = nullptr);

// Adjoint of conv2d_forward with the same spec/weights; maps out_channels back to
// in_channels. `oh`/`ow` select the reconstruction size (a strided conv may not
// determine it uniquely).
template <typename T>
TensorT<T> conv2d_input_grad(const TensorT<T>& gy, const ConvSpec& spec, const TensorT<T>& w,
                             std::size_t oh, std::size_t ow);

// gw[o,c,u,v] = sum_{i,j} gy[o,i,j] * x[c, i*sh - ph + u*dh, j*sw - pw + v*dw]
template <typename T>
TensorT<T> conv2d_weight_grad(const TensorT<T>& x, const TensorT<T>& gy, const ConvSpec& spec);

// Transposed convolution: the adjoint map applied as a forward operator, with an
// optional bias over its output channels (= spec.in_channels).
template <typename T>
TensorT<T> conv_transpose2d_forward(const TensorT<T>& x, const ConvSpec& spec, const TensorT<T>& w,
                                    const TensorT<T>* bias = nullptr);

}  // namespace polarfuse
