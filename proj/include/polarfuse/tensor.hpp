#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace polarfuse {

inline std::size_t numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_to_string(const std::vector<std::size_t>& shape);

// Dense row-major tensor. Feature maps use channels-first (C, H, W) order.
template <typename T>
struct TensorT {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(std::vector<std::size_t> s)
        : shape(std::move(s)), data(polarfuse::numel(shape), T(0)) {}
    TensorT(std::vector<std::size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (polarfuse::numel(shape) != data.size())
            throw std::invalid_argument("tensor: shape " + shape_to_string(shape) +
                                        " does not match " + std::to_string(data.size()) + " values");
    }

    std::size_t numel() const { return data.size(); }
    std::size_t ndim() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    // (C, H, W) accessors
    T& at(std::size_t c, std::size_t i, std::size_t j) {
        return data[(c * shape[1] + i) * shape[2] + j];
    }
    T at(std::size_t c, std::size_t i, std::size_t j) const {
        return data[(c * shape[1] + i) * shape[2] + j];
    }
    T& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    T at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    T* channel(std::size_t c) { return data.data() + c * shape[1] * shape[2]; }
    const T* channel(std::size_t c) const { return data.data() + c * shape[1] * shape[2]; }

    static TensorT full(std::vector<std::size_t> s, T v) {
        TensorT t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static TensorT scalar(T v) { return TensorT({1}, {v}); }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.assign(data.begin(), data.end());
        return out;
    }
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

// Throws if any value is non-finite; `where` names the producing operator.
template <typename T>
void check_finite(const TensorT<T>& t, const char* where);

// Deterministic random source. All draws are derived from mt19937_64 with
// fixed transformations so results are bit-stable across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    double uniform() {  // [0, 1)
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {  // Box-Muller, cached spare
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0, u2 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    std::size_t index(std::size_t n) {  // [0, n)
        return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
    }

    template <typename T>
    void fill_uniform(TensorT<T>& t, double lo, double hi) {
        for (auto& v : t.data) v = static_cast<T>(uniform(lo, hi));
    }
    template <typename T>
    void fill_normal(TensorT<T>& t, double sigma) {
        for (auto& v : t.data) v = static_cast<T>(normal() * sigma);
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace polarfuse
