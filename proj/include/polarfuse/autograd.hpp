#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "polarfuse/conv.hpp"
#include "polarfuse/tensor.hpp"

namespace polarfuse::autograd {

bool grad_enabled();

// Disables graph construction for the lifetime of the guard (inference paths).
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <typename T>
struct Node {
    TensorT<T> value;
    TensorT<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backfn;

    TensorT<T>& grad_buffer();
};

// Handle to a node in the computation graph. Copies share the node.
template <typename T>
class VarT {
public:
    VarT() = default;
    explicit VarT(TensorT<T> value, bool requires_grad = false);
    explicit VarT(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    bool defined() const { return node_ != nullptr; }
    const TensorT<T>& value() const { return node_->value; }
    TensorT<T>& value() { return node_->value; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool has_grad() const { return node_ && !node_->grad.data.empty(); }
    const TensorT<T>& grad() const;
    void zero_grad();

    // Reverse pass from a scalar root. Accumulates into .grad of every
    // reachable node with requires_grad set.
    void backward() const;

    std::shared_ptr<Node<T>> node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

using Var = VarT<float>;
using DVar = VarT<double>;

template <typename T>
VarT<T> conv2d(const VarT<T>& x, const ConvSpec& spec, const VarT<T>& w, const VarT<T>& b);
template <typename T>
VarT<T> conv2d(const VarT<T>& x, const ConvSpec& spec, const VarT<T>& w);
template <typename T>
VarT<T> conv_transpose2d(const VarT<T>& x, const ConvSpec& spec, const VarT<T>& w, const VarT<T>& b);
template <typename T>
VarT<T> conv_transpose2d(const VarT<T>& x, const ConvSpec& spec, const VarT<T>& w);

// Normalization with fixed statistics: gamma * (x - mean) / sqrt(var + eps) + beta.
template <typename T>
VarT<T> batchnorm2d(const VarT<T>& x, const VarT<T>& gamma, const VarT<T>& beta,
                    const TensorT<T>& mean, const TensorT<T>& var, T eps);

// Normalization with statistics computed over H*W per channel. Updates the
// running moments in place with the given momentum.
template <typename T>
VarT<T> batchnorm2d_train(const VarT<T>& x, const VarT<T>& gamma, const VarT<T>& beta,
                          TensorT<T>& running_mean, TensorT<T>& running_var, T momentum, T eps);

// Training-mode normalization of a batch stacked along the channel axis:
// x is (n_items*C, H, W) and channel k belongs to feature channel k % C.
// Statistics pool over all items, so the result matches true batched
// batchnorm; n_items == 1 reduces to batchnorm2d_train exactly.
template <typename T>
VarT<T> batchnorm2d_train_stacked(const VarT<T>& x, std::size_t n_items, const VarT<T>& gamma,
                                  const VarT<T>& beta, TensorT<T>& running_mean,
                                  TensorT<T>& running_var, T momentum, T eps);

template <typename T> VarT<T> relu(const VarT<T>& x);
template <typename T> VarT<T> sigmoid(const VarT<T>& x);
// Elementwise clamp to [lo, hi]; gradient passes through strictly inside the band.
template <typename T> VarT<T> clamp(const VarT<T>& x, T lo, T hi);
template <typename T> VarT<T> add(const VarT<T>& a, const VarT<T>& b);
template <typename T> VarT<T> sub(const VarT<T>& a, const VarT<T>& b);
template <typename T> VarT<T> mul(const VarT<T>& a, const VarT<T>& b);
template <typename T> VarT<T> scale(const VarT<T>& x, T c);
template <typename T> VarT<T> sum(const VarT<T>& x);
template <typename T> VarT<T> mean(const VarT<T>& x);
template <typename T> VarT<T> permute_axes(const VarT<T>& x, const std::vector<std::size_t>& perm);
template <typename T> VarT<T> concat_channels(const std::vector<VarT<T>>& xs);
// Copy of channels [begin, begin + count); the adjoint of concat_channels.
template <typename T>
VarT<T> slice_channels(const VarT<T>& x, std::size_t begin, std::size_t count);
template <typename T> VarT<T> scale_channels(const VarT<T>& x, const std::vector<T>& factors);

// Scalar-valued op with a caller-supplied input gradient. Lets loss kernels
// that compute (value, d value / d x) in one pass participate in the graph.
template <typename T>
VarT<T> scalar_with_grad(const VarT<T>& x, T value, TensorT<T> grad_x);

template <typename T>
struct AdamConfig {
    T lr = T(1e-4);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
};

// Bias-corrected Adam over a fixed parameter list.
template <typename T>
class AdamT {
public:
    AdamT(std::vector<VarT<T>> params, AdamConfig<T> cfg);

    void set_lr(T lr) { cfg_.lr = lr; }
    T lr() const { return cfg_.lr; }
    std::size_t step_count() const { return t_; }

    void step();
    void zero_grad();

private:
    std::vector<VarT<T>> params_;
    std::vector<TensorT<T>> m_, v_;
    AdamConfig<T> cfg_;
    std::size_t t_ = 0;
};

using Adam = AdamT<float>;

}  // namespace polarfuse::autograd
