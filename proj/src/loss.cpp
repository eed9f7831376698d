#include "polarfuse/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace polarfuse {

void LossConfig::validate() const {
    if (!(gamma >= 0.0)) throw std::invalid_argument("loss config: gamma must be >= 0");
    if (!(alpha_f > 0.0 && alpha_f <= 1.0))
        throw std::invalid_argument("loss config: alpha_f must be in (0, 1]");
    if (!(alpha > 0.0)) throw std::invalid_argument("loss config: alpha must be > 0");
    if (!(eps_p > 0.0 && eps_p <= 1e-3))
        throw std::invalid_argument("loss config: eps_p must be in (0, 1e-3]");
}

void TargetMaps::validate() const {
    if (cls.ndim() != 3 || cls.shape[0] != 1)
        throw std::invalid_argument("target maps: cls must be (1, Gr, Ga), got " +
                                    shape_to_string(cls.shape));
    if (reg.ndim() != 3 || reg.shape[1] != cls.shape[1] || reg.shape[2] != cls.shape[2])
        throw std::invalid_argument("target maps: reg grid " + shape_to_string(reg.shape) +
                                    " does not match cls grid " + shape_to_string(cls.shape));
    for (std::size_t i = 0; i < cls.data.size(); ++i)
        if (cls.data[i] != 0.0f && cls.data[i] != 1.0f)
            throw std::invalid_argument("target maps: cls value at index " + std::to_string(i) +
                                        " is not binary");
    const std::size_t cells = cls.shape[1] * cls.shape[2];
    for (std::size_t c = 0; c < reg.shape[0]; ++c)
        for (std::size_t i = 0; i < cells; ++i)
            if (cls.data[i] == 1.0f && !std::isfinite(reg.data[c * cells + i]))
                throw std::invalid_argument("target maps: non-finite reg value on positive cell");
}

std::size_t TargetMaps::positive_count() const {
    std::size_t n = 0;
    for (float v : cls.data) n += v == 1.0f;
    return n;
}

template <typename T>
std::pair<T, TensorT<T>> focal_loss(const TensorT<T>& target, const TensorT<T>& pred,
                                    double gamma, double alpha_f, double eps_p) {
    if (target.shape != pred.shape)
        throw std::invalid_argument("focal_loss: target shape " + shape_to_string(target.shape) +
                                    " does not match prediction " + shape_to_string(pred.shape));
    const std::size_t n = pred.data.size();
    if (n == 0) throw std::invalid_argument("focal_loss: empty maps");

    TensorT<T> grad(pred.shape);
    double total = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const bool positive = target.data[i] != T(0);
        const double raw = static_cast<double>(pred.data[i]);
        const double p = std::min(std::max(raw, eps_p), 1.0 - eps_p);
        const bool clamped = raw < eps_p || raw > 1.0 - eps_p;
        const double pt = positive ? p : 1.0 - p;
        const double at = positive ? alpha_f : 1.0 - alpha_f;
        const double u = 1.0 - pt;
        total += -at * std::pow(u, gamma) * std::log(pt) * inv_n;
        if (clamped) continue;
        double dpt = -at * std::pow(u, gamma) / pt;
        if (gamma > 0.0) dpt += at * gamma * std::pow(u, gamma - 1.0) * std::log(pt);
        grad.data[i] = static_cast<T>(dpt * (positive ? 1.0 : -1.0) * inv_n);
    }
    return {static_cast<T>(total), std::move(grad)};
}

template <typename T>
std::pair<T, TensorT<T>> smooth_l1(const TensorT<T>& target, const TensorT<T>& pred,
                                   const TensorT<T>& mask) {
    if (target.shape != pred.shape)
        throw std::invalid_argument("smooth_l1: target shape " + shape_to_string(target.shape) +
                                    " does not match prediction " + shape_to_string(pred.shape));
    if (pred.ndim() != 3)
        throw std::invalid_argument("smooth_l1: expected 3-d maps, got " +
                                    shape_to_string(pred.shape));
    const std::size_t cells = pred.shape[1] * pred.shape[2];
    if (mask.data.size() != cells)
        throw std::invalid_argument("smooth_l1: mask size " + std::to_string(mask.data.size()) +
                                    " does not cover the " + std::to_string(cells) + "-cell grid");

    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < cells; ++i) n_pos += mask.data[i] != T(0);
    TensorT<T> grad(pred.shape);
    if (n_pos == 0) return {T(0), std::move(grad)};

    const double inv = 1.0 / static_cast<double>(n_pos * pred.shape[0]);
    double total = 0.0;
    for (std::size_t c = 0; c < pred.shape[0]; ++c) {
        for (std::size_t i = 0; i < cells; ++i) {
            if (mask.data[i] == T(0)) continue;
            const double e =
                static_cast<double>(pred.data[c * cells + i]) - static_cast<double>(target.data[c * cells + i]);
            const double a = std::abs(e);
            total += (a < 1.0 ? 0.5 * e * e : a - 0.5) * inv;
            grad.data[c * cells + i] = static_cast<T>((a < 1.0 ? e : (e > 0.0 ? 1.0 : -1.0)) * inv);
        }
    }
    return {static_cast<T>(total), std::move(grad)};
}

template <typename T>
LossResult<T> detection_loss(const TensorT<T>& pred_cls, const TensorT<T>& pred_reg,
                             const TensorT<T>& target_cls, const TensorT<T>& target_reg,
                             const LossConfig& cfg) {
    auto [focal, grad_cls] = focal_loss(target_cls, pred_cls, cfg.gamma, cfg.alpha_f, cfg.eps_p);
    auto [sl1, grad_reg] = smooth_l1(target_reg, pred_reg, target_cls);
    LossResult<T> out;
    out.focal_term = focal;
    out.smooth_l1_term = sl1;
    out.value = focal + static_cast<T>(cfg.alpha) * sl1;
    out.grad_cls = std::move(grad_cls);
    for (auto& g : grad_reg.data) g *= static_cast<T>(cfg.alpha);
    out.grad_reg = std::move(grad_reg);
    return out;
}

template std::pair<float, Tensor> focal_loss(const Tensor&, const Tensor&, double, double, double);
template std::pair<double, DTensor> focal_loss(const DTensor&, const DTensor&, double, double,
                                               double);
template std::pair<float, Tensor> smooth_l1(const Tensor&, const Tensor&, const Tensor&);
template std::pair<double, DTensor> smooth_l1(const DTensor&, const DTensor&, const DTensor&);
template LossResult<float> detection_loss(const Tensor&, const Tensor&, const Tensor&,
                                          const Tensor&, const LossConfig&);
template LossResult<double> detection_loss(const DTensor&, const DTensor&, const DTensor&,
                                           const DTensor&, const LossConfig&);

namespace autograd {

Var detection_loss_var(const Var& pred_cls, const Var& pred_reg, const TargetMaps& target,
                       const LossConfig& cfg) {
    auto [focal_val, focal_grad] =
        focal_loss(target.cls, pred_cls.value(), cfg.gamma, cfg.alpha_f, cfg.eps_p);
    auto [sl1_val, sl1_grad] = smooth_l1(target.reg, pred_reg.value(), target.cls);
    Var focal = scalar_with_grad(pred_cls, focal_val, std::move(focal_grad));
    Var sl1 = scalar_with_grad(pred_reg, sl1_val, std::move(sl1_grad));
    return add(focal, scale(sl1, static_cast<float>(cfg.alpha)));
}

}  // namespace autograd

}  // namespace polarfuse
