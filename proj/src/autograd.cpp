#include "polarfuse/autograd.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace polarfuse::autograd {

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
void accumulate(TensorT<T>& dst, const TensorT<T>& src) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape != b.shape)
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_to_string(a.shape) +
                                    " vs " + shape_to_string(b.shape));
}

template <typename T>
bool track_any(std::initializer_list<const VarT<T>*> vars) {
    if (!grad_enabled()) return false;
    for (const VarT<T>* v : vars)
        if (v->defined() && v->requires_grad()) return true;
    return false;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

template <typename T>
TensorT<T>& Node<T>::grad_buffer() {
    if (grad.data.empty()) grad = TensorT<T>(value.shape);
    return grad;
}

template <typename T>
VarT<T>::VarT(TensorT<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

template <typename T>
const TensorT<T>& VarT<T>::grad() const {
    if (!has_grad()) throw std::runtime_error("grad: no gradient has been accumulated");
    return node_->grad;
}

template <typename T>
void VarT<T>::zero_grad() {
    if (node_ && !node_->grad.data.empty())
        std::fill(node_->grad.data.begin(), node_->grad.data.end(), T(0));
}

template <typename T>
void VarT<T>::backward() const {
    if (!node_) throw std::runtime_error("backward: undefined variable");
    if (node_->value.numel() != 1) throw std::runtime_error("backward: root must be a scalar");

    // Reverse post-order over the requires_grad subgraph is a topological
    // order, so every node's grad is complete before its backfn runs.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.push_back({node_.get(), 0});
    seen.insert(node_.get());
    while (!stack.empty()) {
        Node<T>* n = stack.back().first;
        const std::size_t i = stack.back().second;
        if (i < n->parents.size()) {
            stack.back().second = i + 1;
            Node<T>* p = n->parents[i].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->grad_buffer().data[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backfn) (*it)->backfn();
}

template <typename T>
static VarT<T> finish(std::shared_ptr<Node<T>> out) {
    return VarT<T>(std::move(out));
}

template <typename T>
VarT<T> conv2d(const VarT<T>& x, const ConvSpec& spec, const VarT<T>& w, const VarT<T>& b) {
    const TensorT<T>* bp = b.defined() ? &b.value() : nullptr;
    auto out = std::make_shared<Node<T>>();
    out->value = conv2d_forward(x.value(), spec, w.value(), bp);
    if (track_any<T>({&x, &w, &b})) {
        out->requires_grad = true;
        out->parents = {x.node(), w.node()};
        if (b.defined()) out->parents.push_back(b.node());
        Node<T>* on = out.get();
        auto xn = x.node(), wn = w.node();
        auto bn = b.defined() ? b.node() : nullptr;
        const std::size_t H = x.value().shape[1], W = x.value().shape[2];
        const ConvSpec sp = spec;
        out->backfn = [on, xn, wn, bn, sp, H, W]() {
            const TensorT<T>& gy = on->grad;
            if (xn->requires_grad)
                accumulate(xn->grad_buffer(), conv2d_input_grad(gy, sp, wn->value, H, W));
            if (wn->requires_grad)
                accumulate(wn->grad_buffer(), conv2d_weight_grad(xn->value, gy, sp));
            if (bn && bn->requires_grad) {
                TensorT<T>& gb = bn->grad_buffer();
                const std::size_t hw = gy.shape[1] * gy.shape[2];
                for (std::size_t o = 0; o < sp.out_channels; ++o) {
                    T s = 0;
                    const T* g = gy.channel(o);
                    for (std::size_t p = 0; p < hw; ++p) s += g[p];
                    gb.data[o] += s;
                }
            }
        };
    }
    return finish(std::move(out));
}

template <typename T>
VarT<T> conv2d(const VarT<T>& x, const ConvSpec& spec, const VarT<T>& w) {
    return conv2d(x, spec, w, VarT<T>());
}

template <typename T>
VarT<T> conv_transpose2d(const VarT<T>& x, const ConvSpec& spec, const VarT<T>& w, const VarT<T>& b) {
    const TensorT<T>* bp = b.defined() ? &b.value() : nullptr;
    auto out = std::make_shared<Node<T>>();
    out->value = conv_transpose2d_forward(x.value(), spec, w.value(), bp);
    if (track_any<T>({&x, &w, &b})) {
        out->requires_grad = true;
        out->parents = {x.node(), w.node()};
        if (b.defined()) out->parents.push_back(b.node());
        Node<T>* on = out.get();
        auto xn = x.node(), wn = w.node();
        auto bn = b.defined() ? b.node() : nullptr;
        const ConvSpec sp = spec;
        out->backfn = [on, xn, wn, bn, sp]() {
            const TensorT<T>& gy = on->grad;
            if (xn->requires_grad)
                accumulate(xn->grad_buffer(),
                           conv2d_forward(gy, sp, wn->value, static_cast<const TensorT<T>*>(nullptr)));
            if (wn->requires_grad)
                accumulate(wn->grad_buffer(), conv2d_weight_grad(gy, xn->value, sp));
            if (bn && bn->requires_grad) {
                TensorT<T>& gb = bn->grad_buffer();
                const std::size_t hw = gy.shape[1] * gy.shape[2];
                for (std::size_t c = 0; c < sp.in_channels; ++c) {
                    T s = 0;
                    const T* g = gy.channel(c);
                    for (std::size_t p = 0; p < hw; ++p) s += g[p];
                    gb.data[c] += s;
                }
            }
        };
    }
    return finish(std::move(out));
}

template <typename T>
VarT<T> conv_transpose2d(const VarT<T>& x, const ConvSpec& spec, const VarT<T>& w) {
    return conv_transpose2d(x, spec, w, VarT<T>());
}

template <typename T>
VarT<T> batchnorm2d(const VarT<T>& x, const VarT<T>& gamma, const VarT<T>& beta,
                    const TensorT<T>& mean, const TensorT<T>& var, T eps) {
    const TensorT<T>& xv = x.value();
    if (xv.ndim() != 3) throw std::invalid_argument("batchnorm2d: input must be (C,H,W)");
    const std::size_t C = xv.shape[0], hw = xv.shape[1] * xv.shape[2];
    if (gamma.value().numel() != C || beta.value().numel() != C || mean.numel() != C || var.numel() != C)
        throw std::invalid_argument("batchnorm2d: per-channel parameter length mismatch");

    std::vector<T> invstd(C);
    for (std::size_t c = 0; c < C; ++c) invstd[c] = T(1) / std::sqrt(var.data[c] + eps);

    auto out = std::make_shared<Node<T>>();
    out->value = TensorT<T>(xv.shape);
    for (std::size_t c = 0; c < C; ++c) {
        const T g = gamma.value().data[c], bt = beta.value().data[c], mu = mean.data[c], is = invstd[c];
        const T* in = xv.channel(c);
        T* o = out->value.channel(c);
        for (std::size_t p = 0; p < hw; ++p) o[p] = g * (in[p] - mu) * is + bt;
    }

    if (track_any<T>({&x, &gamma, &beta})) {
        out->requires_grad = true;
        out->parents = {x.node(), gamma.node(), beta.node()};
        Node<T>* on = out.get();
        auto xn = x.node(), gn = gamma.node(), bn = beta.node();
        TensorT<T> mu = mean;
        out->backfn = [on, xn, gn, bn, mu, invstd, C, hw]() {
            const TensorT<T>& gy = on->grad;
            for (std::size_t c = 0; c < C; ++c) {
                const T is = invstd[c];
                const T* g = gy.channel(c);
                const T* in = xn->value.channel(c);
                if (xn->requires_grad) {
                    const T k = gn->value.data[c] * is;
                    T* gx = xn->grad_buffer().channel(c);
                    for (std::size_t p = 0; p < hw; ++p) gx[p] += k * g[p];
                }
                if (gn->requires_grad) {
                    T s = 0;
                    for (std::size_t p = 0; p < hw; ++p) s += g[p] * (in[p] - mu.data[c]) * is;
                    gn->grad_buffer().data[c] += s;
                }
                if (bn->requires_grad) {
                    T s = 0;
                    for (std::size_t p = 0; p < hw; ++p) s += g[p];
                    bn->grad_buffer().data[c] += s;
                }
            }
        };
    }
    return finish(std::move(out));
}

template <typename T>
VarT<T> batchnorm2d_train(const VarT<T>& x, const VarT<T>& gamma, const VarT<T>& beta,
                          TensorT<T>& running_mean, TensorT<T>& running_var, T momentum, T eps) {
    const TensorT<T>& xv = x.value();
    if (xv.ndim() != 3) throw std::invalid_argument("batchnorm2d_train: input must be (C,H,W)");
    const std::size_t C = xv.shape[0], hw = xv.shape[1] * xv.shape[2];
    if (gamma.value().numel() != C || beta.value().numel() != C || running_mean.numel() != C ||
        running_var.numel() != C)
        throw std::invalid_argument("batchnorm2d_train: per-channel parameter length mismatch");

    std::vector<T> mu(C), invstd(C);
    TensorT<T> xhat(xv.shape);
    for (std::size_t c = 0; c < C; ++c) {
        const T* in = xv.channel(c);
        T m = 0;
        for (std::size_t p = 0; p < hw; ++p) m += in[p];
        m /= static_cast<T>(hw);
        T v = 0;
        for (std::size_t p = 0; p < hw; ++p) v += (in[p] - m) * (in[p] - m);
        v /= static_cast<T>(hw);
        mu[c] = m;
        invstd[c] = T(1) / std::sqrt(v + eps);
        T* xh = xhat.channel(c);
        for (std::size_t p = 0; p < hw; ++p) xh[p] = (in[p] - m) * invstd[c];
        running_mean.data[c] = (T(1) - momentum) * running_mean.data[c] + momentum * m;
        running_var.data[c] = (T(1) - momentum) * running_var.data[c] + momentum * v;
    }

    auto out = std::make_shared<Node<T>>();
    out->value = TensorT<T>(xv.shape);
    for (std::size_t c = 0; c < C; ++c) {
        const T g = gamma.value().data[c], bt = beta.value().data[c];
        const T* xh = xhat.channel(c);
        T* o = out->value.channel(c);
        for (std::size_t p = 0; p < hw; ++p) o[p] = g * xh[p] + bt;
    }

    if (track_any<T>({&x, &gamma, &beta})) {
        out->requires_grad = true;
        out->parents = {x.node(), gamma.node(), beta.node()};
        Node<T>* on = out.get();
        auto xn = x.node(), gn = gamma.node(), bn = beta.node();
        out->backfn = [on, xn, gn, bn, xhat = std::move(xhat), invstd, C, hw]() {
            const TensorT<T>& gy = on->grad;
            const T n = static_cast<T>(hw);
            for (std::size_t c = 0; c < C; ++c) {
                const T* g = gy.channel(c);
                const T* xh = xhat.channel(c);
                T sg = 0, sgx = 0;
                for (std::size_t p = 0; p < hw; ++p) {
                    sg += g[p];
                    sgx += g[p] * xh[p];
                }
                if (gn->requires_grad) gn->grad_buffer().data[c] += sgx;
                if (bn->requires_grad) bn->grad_buffer().data[c] += sg;
                if (xn->requires_grad) {
                    const T k = gn->value.data[c] * invstd[c] / n;
                    T* gx = xn->grad_buffer().channel(c);
                    for (std::size_t p = 0; p < hw; ++p)
                        gx[p] += k * (n * g[p] - sg - xh[p] * sgx);
                }
            }
        };
    }
    return finish(std::move(out));
}

template <typename T>
VarT<T> batchnorm2d_train_stacked(const VarT<T>& x, std::size_t n_items, const VarT<T>& gamma,
                                  const VarT<T>& beta, TensorT<T>& running_mean,
                                  TensorT<T>& running_var, T momentum, T eps) {
    const TensorT<T>& xv = x.value();
    if (xv.ndim() != 3)
        throw std::invalid_argument("batchnorm2d_train_stacked: input must be (N*C,H,W)");
    if (n_items == 0 || xv.shape[0] % n_items != 0)
        throw std::invalid_argument(
            "batchnorm2d_train_stacked: channel count must be a multiple of n_items");
    const std::size_t C = xv.shape[0] / n_items, hw = xv.shape[1] * xv.shape[2];
    const std::size_t n = n_items * hw;
    if (gamma.value().numel() != C || beta.value().numel() != C || running_mean.numel() != C ||
        running_var.numel() != C)
        throw std::invalid_argument(
            "batchnorm2d_train_stacked: per-channel parameter length mismatch");

    std::vector<T> invstd(C);
    TensorT<T> xhat(xv.shape);
    for (std::size_t c = 0; c < C; ++c) {
        T m = 0;
        for (std::size_t i = 0; i < n_items; ++i) {
            const T* in = xv.channel(i * C + c);
            for (std::size_t p = 0; p < hw; ++p) m += in[p];
        }
        m /= static_cast<T>(n);
        T v = 0;
        for (std::size_t i = 0; i < n_items; ++i) {
            const T* in = xv.channel(i * C + c);
            for (std::size_t p = 0; p < hw; ++p) v += (in[p] - m) * (in[p] - m);
        }
        v /= static_cast<T>(n);
        invstd[c] = T(1) / std::sqrt(v + eps);
        for (std::size_t i = 0; i < n_items; ++i) {
            const T* in = xv.channel(i * C + c);
            T* xh = xhat.channel(i * C + c);
            for (std::size_t p = 0; p < hw; ++p) xh[p] = (in[p] - m) * invstd[c];
        }
        running_mean.data[c] = (T(1) - momentum) * running_mean.data[c] + momentum * m;
        running_var.data[c] = (T(1) - momentum) * running_var.data[c] + momentum * v;
    }

    auto out = std::make_shared<Node<T>>();
    out->value = TensorT<T>(xv.shape);
    for (std::size_t k = 0; k < xv.shape[0]; ++k) {
        const T g = gamma.value().data[k % C], bt = beta.value().data[k % C];
        const T* xh = xhat.channel(k);
        T* o = out->value.channel(k);
        for (std::size_t p = 0; p < hw; ++p) o[p] = g * xh[p] + bt;
    }

    if (track_any<T>({&x, &gamma, &beta})) {
        out->requires_grad = true;
        out->parents = {x.node(), gamma.node(), beta.node()};
        Node<T>* on = out.get();
        auto xn = x.node(), gn = gamma.node(), bn = beta.node();
        out->backfn = [on, xn, gn, bn, xhat = std::move(xhat), invstd, C, n_items, hw, n]() {
            const TensorT<T>& gy = on->grad;
            const T nn = static_cast<T>(n);
            for (std::size_t c = 0; c < C; ++c) {
                T sg = 0, sgx = 0;
                for (std::size_t i = 0; i < n_items; ++i) {
                    const T* g = gy.channel(i * C + c);
                    const T* xh = xhat.channel(i * C + c);
                    for (std::size_t p = 0; p < hw; ++p) {
                        sg += g[p];
                        sgx += g[p] * xh[p];
                    }
                }
                if (gn->requires_grad) gn->grad_buffer().data[c] += sgx;
                if (bn->requires_grad) bn->grad_buffer().data[c] += sg;
                if (xn->requires_grad) {
                    const T k = gn->value.data[c] * invstd[c] / nn;
                    for (std::size_t i = 0; i < n_items; ++i) {
                        const T* g = gy.channel(i * C + c);
                        const T* xh = xhat.channel(i * C + c);
                        T* gx = xn->grad_buffer().channel(i * C + c);
                        for (std::size_t p = 0; p < hw; ++p)
                            gx[p] += k * (nn * g[p] - sg - xh[p] * sgx);
                    }
                }
            }
        };
    }
    return finish(std::move(out));
}

template <typename T>
VarT<T> relu(const VarT<T>& x) {
    auto out = std::make_shared<Node<T>>();
    out->value = x.value();
    for (auto& v : out->value.data) v = v > T(0) ? v : T(0);
    if (track_any<T>({&x})) {
        out->requires_grad = true;
        out->parents = {x.node()};
        Node<T>* on = out.get();
        auto xn = x.node();
        out->backfn = [on, xn]() {
            if (!xn->requires_grad) return;
            TensorT<T>& gx = xn->grad_buffer();
            for (std::size_t i = 0; i < gx.data.size(); ++i)
                if (xn->value.data[i] > T(0)) gx.data[i] += on->grad.data[i];
        };
    }
    return finish(std::move(out));
}

template <typename T>
VarT<T> clamp(const VarT<T>& x, T lo, T hi) {
    if (!(lo < hi)) throw std::invalid_argument("clamp: lo must be below hi");
    auto out = std::make_shared<Node<T>>();
    out->value = x.value();
    for (auto& v : out->value.data) v = v < lo ? lo : (v > hi ? hi : v);
    if (track_any<T>({&x})) {
        out->requires_grad = true;
        out->parents = {x.node()};
        Node<T>* on = out.get();
        auto xn = x.node();
        out->backfn = [on, xn, lo, hi]() {
            if (!xn->requires_grad) return;
            TensorT<T>& gx = xn->grad_buffer();
            for (std::size_t i = 0; i < gx.data.size(); ++i) {
                const T v = xn->value.data[i];
                if (v > lo && v < hi) gx.data[i] += on->grad.data[i];
            }
        };
    }
    return finish(std::move(out));
}

template <typename T>
VarT<T> sigmoid(const VarT<T>& x) {
    auto out = std::make_shared<Node<T>>();
    out->value = x.value();
    for (auto& v : out->value.data) v = T(1) / (T(1) + std::exp(-v));
    if (track_any<T>({&x})) {
        out->requires_grad = true;
        out->parents = {x.node()};
        Node<T>* on = out.get();
        auto xn = x.node();
        out->backfn = [on, xn]() {
            if (!xn->requires_grad) return;
            TensorT<T>& gx = xn->grad_buffer();
            for (std::size_t i = 0; i < gx.data.size(); ++i) {
                const T y = on->value.data[i];
                gx.data[i] += on->grad.data[i] * y * (T(1) - y);
            }
        };
    }
    return finish(std::move(out));
}

template <typename T>
VarT<T> add(const VarT<T>& a, const VarT<T>& b) {
    require_same_shape(a.value(), b.value(), "add");
    auto out = std::make_shared<Node<T>>();
    out->value = a.value();
    accumulate(out->value, b.value());
    if (track_any<T>({&a, &b})) {
        out->requires_grad = true;
        out->parents = {a.node(), b.node()};
        Node<T>* on = out.get();
        auto an = a.node(), bn = b.node();
        out->backfn = [on, an, bn]() {
            if (an->requires_grad) accumulate(an->grad_buffer(), on->grad);
            if (bn->requires_grad) accumulate(bn->grad_buffer(), on->grad);
        };
    }
    return finish(std::move(out));
}

template <typename T>
VarT<T> sub(const VarT<T>& a, const VarT<T>& b) {
    require_same_shape(a.value(), b.value(), "sub");
    auto out = std::make_shared<Node<T>>();
    out->value = a.value();
    for (std::size_t i = 0; i < out->value.data.size(); ++i) out->value.data[i] -= b.value().data[i];
    if (track_any<T>({&a, &b})) {
        out->requires_grad = true;
        out->parents = {a.node(), b.node()};
        Node<T>* on = out.get();
        auto an = a.node(), bn = b.node();
        out->backfn = [on, an, bn]() {
            if (an->requires_grad) accumulate(an->grad_buffer(), on->grad);
            if (bn->requires_grad) {
                TensorT<T>& gb = bn->grad_buffer();
                for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] -= on->grad.data[i];
            }
        };
    }
    return finish(std::move(out));
}

template <typename T>
VarT<T> mul(const VarT<T>& a, const VarT<T>& b) {
    require_same_shape(a.value(), b.value(), "mul");
    auto out = std::make_shared<Node<T>>();
    out->value = a.value();
    for (std::size_t i = 0; i < out->value.data.size(); ++i) out->value.data[i] *= b.value().data[i];
    if (track_any<T>({&a, &b})) {
        out->requires_grad = true;
        out->parents = {a.node(), b.node()};
        Node<T>* on = out.get();
        auto an = a.node(), bn = b.node();
        out->backfn = [on, an, bn]() {
            if (an->requires_grad) {
                TensorT<T>& ga = an->grad_buffer();
                for (std::size_t i = 0; i < ga.data.size(); ++i)
                    ga.data[i] += on->grad.data[i] * bn->value.data[i];
            }
            if (bn->requires_grad) {
                TensorT<T>& gb = bn->grad_buffer();
                for (std::size_t i = 0; i < gb.data.size(); ++i)
                    gb.data[i] += on->grad.data[i] * an->value.data[i];
            }
        };
    }
    return finish(std::move(out));
}

template <typename T>
VarT<T> scale(const VarT<T>& x, T c) {
    auto out = std::make_shared<Node<T>>();
    out->value = x.value();
    for (auto& v : out->value.data) v *= c;
    if (track_any<T>({&x})) {
        out->requires_grad = true;
        out->parents = {x.node()};
        Node<T>* on = out.get();
        auto xn = x.node();
        out->backfn = [on, xn, c]() {
            if (!xn->requires_grad) return;
            TensorT<T>& gx = xn->grad_buffer();
            for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += c * on->grad.data[i];
        };
    }
    return finish(std::move(out));
}

template <typename T>
VarT<T> sum(const VarT<T>& x) {
    auto out = std::make_shared<Node<T>>();
    T s = 0;
    for (T v : x.value().data) s += v;
    out->value = TensorT<T>::scalar(s);
    if (track_any<T>({&x})) {
        out->requires_grad = true;
        out->parents = {x.node()};
        Node<T>* on = out.get();
        auto xn = x.node();
        out->backfn = [on, xn]() {
            if (!xn->requires_grad) return;
            TensorT<T>& gx = xn->grad_buffer();
            const T g = on->grad.data[0];
            for (auto& v : gx.data) v += g;
        };
    }
    return finish(std::move(out));
}

template <typename T>
VarT<T> mean(const VarT<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.value().numel()));
}

namespace {

std::vector<std::size_t> inverse_perm(const std::vector<std::size_t>& perm) {
    std::vector<std::size_t> inv(perm.size());
    for (std::size_t k = 0; k < perm.size(); ++k) inv[perm[k]] = k;
    return inv;
}

template <typename T>
TensorT<T> permute3(const TensorT<T>& x, const std::vector<std::size_t>& perm) {
    const std::vector<std::size_t> os = {x.shape[perm[0]], x.shape[perm[1]], x.shape[perm[2]]};
    std::size_t istride[3] = {x.shape[1] * x.shape[2], x.shape[2], 1};
    std::size_t ostride_in[3] = {istride[perm[0]], istride[perm[1]], istride[perm[2]]};
    TensorT<T> out(os);
    std::size_t q = 0;
    for (std::size_t a = 0; a < os[0]; ++a)
        for (std::size_t b = 0; b < os[1]; ++b) {
            const std::size_t base = a * ostride_in[0] + b * ostride_in[1];
            const std::size_t s2 = ostride_in[2];
            for (std::size_t c = 0; c < os[2]; ++c) out.data[q++] = x.data[base + c * s2];
        }
    return out;
}

}  // namespace

template <typename T>
VarT<T> permute_axes(const VarT<T>& x, const std::vector<std::size_t>& perm) {
    if (x.value().ndim() != 3 || perm.size() != 3)
        throw std::invalid_argument("permute_axes: expects a rank-3 tensor and permutation");
    std::vector<bool> hit(3, false);
    for (std::size_t p : perm) {
        if (p > 2 || hit[p]) throw std::invalid_argument("permute_axes: invalid permutation");
        hit[p] = true;
    }
    auto out = std::make_shared<Node<T>>();
    out->value = permute3(x.value(), perm);
    if (track_any<T>({&x})) {
        out->requires_grad = true;
        out->parents = {x.node()};
        Node<T>* on = out.get();
        auto xn = x.node();
        const std::vector<std::size_t> inv = inverse_perm(perm);
        out->backfn = [on, xn, inv]() {
            if (!xn->requires_grad) return;
            accumulate(xn->grad_buffer(), permute3(on->grad, inv));
        };
    }
    return finish(std::move(out));
}

template <typename T>
VarT<T> concat_channels(const std::vector<VarT<T>>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_channels: no inputs");
    const std::size_t H = xs[0].value().shape[1], W = xs[0].value().shape[2];
    std::size_t C = 0;
    for (const auto& x : xs) {
        if (x.value().ndim() != 3 || x.value().shape[1] != H || x.value().shape[2] != W)
            throw std::invalid_argument("concat_channels: spatial shape mismatch");
        C += x.value().shape[0];
    }
    auto out = std::make_shared<Node<T>>();
    out->value = TensorT<T>({C, H, W});
    std::size_t off = 0;
    for (const auto& x : xs) {
        std::copy(x.value().data.begin(), x.value().data.end(), out->value.data.begin() + off);
        off += x.value().numel();
    }
    bool track = false;
    if (grad_enabled())
        for (const auto& x : xs) track = track || x.requires_grad();
    if (track) {
        out->requires_grad = true;
        for (const auto& x : xs) out->parents.push_back(x.node());
        Node<T>* on = out.get();
        out->backfn = [on]() {
            std::size_t o = 0;
            for (auto& p : on->parents) {
                const std::size_t n = p->value.numel();
                if (p->requires_grad) {
                    TensorT<T>& g = p->grad_buffer();
                    for (std::size_t i = 0; i < n; ++i) g.data[i] += on->grad.data[o + i];
                }
                o += n;
            }
        };
    }
    return finish(std::move(out));
}

template <typename T>
VarT<T> slice_channels(const VarT<T>& x, std::size_t begin, std::size_t count) {
    const TensorT<T>& xv = x.value();
    if (xv.ndim() != 3) throw std::invalid_argument("slice_channels: input must be (C,H,W)");
    if (begin + count > xv.shape[0] || count == 0)
        throw std::invalid_argument("slice_channels: channel range out of bounds");
    const std::size_t hw = xv.shape[1] * xv.shape[2];
    auto out = std::make_shared<Node<T>>();
    out->value = TensorT<T>({count, xv.shape[1], xv.shape[2]});
    std::copy(xv.channel(begin), xv.channel(begin) + count * hw, out->value.data.begin());
    if (track_any<T>({&x})) {
        out->requires_grad = true;
        out->parents = {x.node()};
        Node<T>* on = out.get();
        auto xn = x.node();
        out->backfn = [on, xn, begin, count, hw]() {
            if (!xn->requires_grad) return;
            T* gx = xn->grad_buffer().channel(begin);
            const std::size_t len = count * hw;
            for (std::size_t i = 0; i < len; ++i) gx[i] += on->grad.data[i];
        };
    }
    return finish(std::move(out));
}

template <typename T>
VarT<T> scale_channels(const VarT<T>& x, const std::vector<T>& factors) {
    const TensorT<T>& xv = x.value();
    if (xv.ndim() != 3 || factors.size() != xv.shape[0])
        throw std::invalid_argument("scale_channels: factor count must match channels");
    const std::size_t hw = xv.shape[1] * xv.shape[2];
    auto out = std::make_shared<Node<T>>();
    out->value = xv;
    for (std::size_t c = 0; c < factors.size(); ++c) {
        T* o = out->value.channel(c);
        for (std::size_t p = 0; p < hw; ++p) o[p] *= factors[c];
    }
    if (track_any<T>({&x})) {
        out->requires_grad = true;
        out->parents = {x.node()};
        Node<T>* on = out.get();
        auto xn = x.node();
        out->backfn = [on, xn, factors, hw]() {
            if (!xn->requires_grad) return;
            TensorT<T>& gx = xn->grad_buffer();
            for (std::size_t c = 0; c < factors.size(); ++c) {
                T* g = gx.channel(c);
                const T* gupper = on->grad.channel(c);
                for (std::size_t p = 0; p < hw; ++p) g[p] += factors[c] * gupper[p];
            }
        };
    }
    return finish(std::move(out));
}

template <typename T>
VarT<T> scalar_with_grad(const VarT<T>& x, T value, TensorT<T> grad_x) {
    require_same_shape(x.value(), grad_x, "scalar_with_grad");
    auto out = std::make_shared<Node<T>>();
    out->value = TensorT<T>::scalar(value);
    if (track_any<T>({&x})) {
        out->requires_grad = true;
        out->parents = {x.node()};
        Node<T>* on = out.get();
        auto xn = x.node();
        out->backfn = [on, xn, gx = std::move(grad_x)]() {
            if (!xn->requires_grad) return;
            TensorT<T>& dst = xn->grad_buffer();
            const T g = on->grad.data[0];
            for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += g * gx.data[i];
        };
    }
    return finish(std::move(out));
}

template <typename T>
AdamT<T>::AdamT(std::vector<VarT<T>> params, AdamConfig<T> cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p.value().shape);
        v_.emplace_back(p.value().shape);
    }
}

template <typename T>
void AdamT<T>::step() {
    ++t_;
    const T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        if (!params_[k].has_grad()) continue;
        const TensorT<T>& g = params_[k].grad();
        TensorT<T>& p = params_[k].value();
        TensorT<T>& m = m_[k];
        TensorT<T>& v = v_[k];
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            const T gi = g.data[i];
            m.data[i] = cfg_.beta1 * m.data[i] + (T(1) - cfg_.beta1) * gi;
            v.data[i] = cfg_.beta2 * v.data[i] + (T(1) - cfg_.beta2) * gi * gi;
            const T mhat = m.data[i] / bc1;
            const T vhat = v.data[i] / bc2;
            p.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

template <typename T>
void AdamT<T>::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

#define POLARFUSE_INSTANTIATE(T)                                                                      \
    template struct Node<T>;                                                                          \
    template class VarT<T>;                                                                           \
    template class AdamT<T>;                                                                          \
    template VarT<T> conv2d(const VarT<T>&, const ConvSpec&, const VarT<T>&, const VarT<T>&);         \
    template VarT<T> conv2d(const VarT<T>&, const ConvSpec&, const VarT<T>&);                         \
    template VarT<T> conv_transpose2d(const VarT<T>&, const ConvSpec&, const VarT<T>&,                \
                                      const VarT<T>&);                                                \
    template VarT<T> conv_transpose2d(const VarT<T>&, const ConvSpec&, const VarT<T>&);               \
    template VarT<T> batchnorm2d(const VarT<T>&, const VarT<T>&, const VarT<T>&, const TensorT<T>&,   \
                                 const TensorT<T>&, T);                                               \
    template VarT<T> batchnorm2d_train_stacked(const VarT<T>&, std::size_t, const VarT<T>&,           \
                                               const VarT<T>&, TensorT<T>&, TensorT<T>&, T, T);       \
    template VarT<T> batchnorm2d_train(const VarT<T>&, const VarT<T>&, const VarT<T>&, TensorT<T>&,   \
                                       TensorT<T>&, T, T);                                            \
    template VarT<T> relu(const VarT<T>&);                                                            \
    template VarT<T> sigmoid(const VarT<T>&);                                                         \
    template VarT<T> clamp(const VarT<T>&, T, T);                                                     \
    template VarT<T> add(const VarT<T>&, const VarT<T>&);                                             \
    template VarT<T> sub(const VarT<T>&, const VarT<T>&);                                             \
    template VarT<T> mul(const VarT<T>&, const VarT<T>&);                                             \
    template VarT<T> scale(const VarT<T>&, T);                                                        \
    template VarT<T> sum(const VarT<T>&);                                                             \
    template VarT<T> mean(const VarT<T>&);                                                            \
    template VarT<T> permute_axes(const VarT<T>&, const std::vector<std::size_t>&);                   \
    template VarT<T> concat_channels(const std::vector<VarT<T>>&);                                    \
    template VarT<T> slice_channels(const VarT<T>&, std::size_t, std::size_t);                        \
    template VarT<T> scale_channels(const VarT<T>&, const std::vector<T>&);                           \
    template VarT<T> scalar_with_grad(const VarT<T>&, T, TensorT<T>);

POLARFUSE_INSTANTIATE(float)
POLARFUSE_INSTANTIATE(double)

#undef POLARFUSE_INSTANTIATE

}  // namespace polarfuse::autograd
