#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cascade/common.hpp"

namespace cascade {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool shape_eq(const Shape& a, const Shape& b);

/// N-dimensional real array with an optional same-shape gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage, which is what
/// lets backward closures on the tape write gradients that the caller sees.
/// Use clone() for a deep copy. Extents must be positive.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : s_(std::make_shared<Storage>()) {
        validate_shape(shape);
        s_->shape = std::move(shape);
        s_->v.assign(shape_numel(s_->shape), fill);
    }

    Tensor(Shape shape, std::vector<T> values) : s_(std::make_shared<Storage>()) {
        validate_shape(shape);
        if (values.size() != shape_numel(shape))
            throw ShapeError("tensor value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
        s_->shape = std::move(shape);
        s_->v = std::move(values);
    }

    static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

    bool defined() const { return s_ != nullptr; }
    const Shape& shape() const { return s_->shape; }
    std::size_t ndim() const { return s_->shape.size(); }
    std::size_t dim(std::size_t i) const { return s_->shape[i]; }
    std::size_t size() const { return s_->v.size(); }

    std::span<T> v() { return s_->v; }
    std::span<const T> v() const { return s_->v; }
    T* data() { return s_->v.data(); }
    const T* data() const { return s_->v.data(); }

    /// Value of a 1-element tensor.
    T item() const {
        if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return s_->v[0];
    }

    // --- gradient -----------------------------------------------------------

    bool needs_grad() const { return s_->needs_grad; }
    void set_needs_grad(bool f) { s_->needs_grad = f; }

    bool has_grad() const { return !s_->g.empty(); }
    void ensure_grad() {
        if (s_->g.empty()) s_->g.assign(s_->v.size(), T(0));
    }
    void zero_grad() {
        if (!s_->g.empty()) s_->g.assign(s_->v.size(), T(0));
    }
    std::span<T> g() {
        ensure_grad();
        return s_->g;
    }
    std::span<const T> g() const {
        if (s_->g.empty()) throw ValueError("gradient not allocated");
        return s_->g;
    }

    // --- misc ---------------------------------------------------------------

    /// Deep copy of values and flags. The gradient buffer is not copied.
    Tensor clone() const {
        Tensor out(s_->shape, s_->v);
        out.set_needs_grad(s_->needs_grad);
        return out;
    }

    bool same_storage(const Tensor& o) const { return s_ == o.s_; }

    /// Row-major flat index for a rank-4 tensor.
    std::size_t index4(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
        const Shape& s = s_->shape;
        return ((n * s[1] + c) * s[2] + y) * s[3] + x;
    }

private:
    struct Storage {
        Shape shape;
        std::vector<T> v;
        std::vector<T> g;  // empty until a gradient is requested
        bool needs_grad = false;
    };

    static void validate_shape(const Shape& shape) {
        if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
        for (std::size_t e : shape)
            if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }

    std::shared_ptr<Storage> s_;
};

/// Throws ValueError if any element is non-finite. Used by strict mode.
template <typename T>
void check_finite(const Tensor<T>& t, const char* op_name);

}  // namespace cascade
