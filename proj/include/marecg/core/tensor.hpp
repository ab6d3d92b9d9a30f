#pragma once

#include <cstddef>
#include <cstdint>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace marecg::num {

// Dense row-major tensor. Scalar type S is float for training and double for
// the finite-difference audit mode; the whole compute stack is templated on it.
template <class S>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<S> v;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> sh, S fill = S(0))
        : shape(std::move(sh)), v(numel_of(shape), fill) {}
    Tensor(std::vector<std::size_t> sh, std::vector<S> data)
        : shape(std::move(sh)), v(std::move(data)) {
        if (v.size() != numel_of(shape)) {
            throw std::invalid_argument("tensor data length does not match shape");
        }
    }

    static std::size_t numel_of(const std::vector<std::size_t>& sh) {
        std::size_t n = 1;
        for (std::size_t e : sh) n *= e;
        return n;
    }

    std::size_t numel() const { return v.size(); }
    bool is_scalar() const { return v.size() == 1; }
    S scalar() const {
        if (!is_scalar()) throw std::logic_error("tensor is not a scalar");
        return v[0];
    }

    // 2-D accessors; rank-1 tensors are treated as a single row.
    std::size_t rows() const { return shape.size() >= 2 ? shape[0] : 1; }
    std::size_t cols() const {
        if (shape.empty()) return 1;
        return shape.size() >= 2 ? shape[1] : shape[0];
    }
    S& at(std::size_t r, std::size_t c) { return v[r * cols() + c]; }
    S at(std::size_t r, std::size_t c) const { return v[r * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (S x : v) {
            if (!std::isfinite(static_cast<double>(x))) return false;
        }
        return true;
    }
};

inline std::string shape_str(const std::vector<std::size_t>& sh) {
    std::string s = "[";
    for (std::size_t i = 0; i < sh.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(sh[i]);
    }
    return s + "]";
}

}  // namespace marecg::num
