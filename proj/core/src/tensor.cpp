#include "cascade/tensor.hpp"

#include <cmath>
#include <sstream>

namespace cascade {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

bool shape_eq(const Shape& a, const Shape& b) { return a == b; }

template <typename T>
void check_finite(const Tensor<T>& t, const char* op_name) {
    for (T x : t.v())
        if (!std::isfinite(x))
            throw ValueError(std::string(op_name) + ": non-finite element in strict mode");
}

template void check_finite<float>(const Tensor<float>&, const char*);
template void check_finite<double>(const Tensor<double>&, const char*);

}  // namespace cascade
