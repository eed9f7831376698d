#pragma once

#include <utility>

#include "polarfuse/autograd.hpp"
#include "polarfuse/tensor.hpp"

namespace polarfuse {

struct LossConfig {
    double gamma = 2.0;     // focal focusing exponent
    double alpha_f = 0.25;  // focal balance for positive cells
    double alpha = 100.0;   // regression term weight
    double eps_p = 1e-6;    // probability clamp

    void validate() const;
};

// Occupancy and regression targets on the output grid. cls is (1, Gr, Ga)
// with values in {0,1}; reg is (C, Gr, Ga), meaningful on positive cells.
struct TargetMaps {
    Tensor cls;
    Tensor reg;

    void validate() const;
    std::size_t positive_count() const;
};

// Mean over all cells of -alpha_t*(1-p_t)^gamma*log(p_t), where p_t is the
// predicted probability of the true class and alpha_t balances the classes.
// Predictions are clamped to [eps_p, 1-eps_p]; the clamp has zero gradient.
// Returns the scalar and its gradient wrt `pred`.
template <typename T>
std::pair<T, TensorT<T>> focal_loss(const TensorT<T>& target, const TensorT<T>& pred,
                                    double gamma, double alpha_f, double eps_p);

// Mean over (positive cell, channel) pairs of the Huber penalty
// 0.5*e^2 for |e| < 1 else |e| - 0.5, with e = pred - target. `mask` has one
// value per cell and broadcasts over channels; an empty mask yields 0.
template <typename T>
std::pair<T, TensorT<T>> smooth_l1(const TensorT<T>& target, const TensorT<T>& pred,
                                   const TensorT<T>& mask);

template <typename T>
struct LossResult {
    T value = T(0);
    T focal_term = T(0);
    T smooth_l1_term = T(0);  // unweighted
    TensorT<T> grad_cls;
    TensorT<T> grad_reg;
};

// focal(cls) + alpha * smooth_l1(reg on positive cells)
template <typename T>
LossResult<T> detection_loss(const TensorT<T>& pred_cls, const TensorT<T>& pred_reg,
                             const TensorT<T>& target_cls, const TensorT<T>& target_reg,
                             const LossConfig& cfg);

namespace autograd {

// Detection loss as a scalar graph node so backward reaches both heads.
Var detection_loss_var(const Var& pred_cls, const Var& pred_reg, const TargetMaps& target,
                       const LossConfig& cfg);

}  // namespace autograd

}  // namespace polarfuse
