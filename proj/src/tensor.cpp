#include "polarfuse/tensor.hpp"

#include <cmath>
#include <sstream>

namespace polarfuse {

std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

template <typename T>
void check_finite(const TensorT<T>& t, const char* where) {
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        if (!std::isfinite(t.data[i]))
            throw std::runtime_error(std::string(where) + ": non-finite value at flat index " +
                                     std::to_string(i));
    }
}

template void check_finite<float>(const TensorT<float>&, const char*);
template void check_finite<double>(const TensorT<double>&, const char*);

}  // namespace polarfuse
