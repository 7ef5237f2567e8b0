#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "stylecl/errors.hpp"

namespace stylecl {

// Dense H x W x C tensor, row-major with channel fastest:
// index(y, x, c) = (y*w + x)*channels + c.
// Images store float; loss/gradient paths instantiate double.
template <typename T>
struct TensorT {
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<T> data;

    TensorT() = default;
    TensorT(int h_, int w_, int c_, T fill = T(0))
        : h(h_), w(w_), c(c_), data(static_cast<size_t>(h_) * w_ * c_, fill) {
        if (h_ < 1 || w_ < 1 || c_ < 1)
            throw DimensionError("tensor dims must be >= 1");
    }

    T& at(int y, int x, int ch) { return data[(static_cast<size_t>(y) * w + x) * c + ch]; }
    T at(int y, int x, int ch) const { return data[(static_cast<size_t>(y) * w + x) * c + ch]; }

    size_t size() const { return data.size(); }
    bool same_shape(const TensorT& o) const { return h == o.h && w == o.w && c == o.c; }
};

using Tensor3 = TensorT<float>;
using Tensor3d = TensorT<double>;

// H x W label map; 0 = unknown, 255 = ignore
struct LabelMap {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> ids;

    LabelMap() = default;
    LabelMap(int h_, int w_, uint8_t fill = 0)
        : h(h_), w(w_), ids(static_cast<size_t>(h_) * w_, fill) {}

    uint8_t& at(int y, int x) { return ids[static_cast<size_t>(y) * w + x]; }
    uint8_t at(int y, int x) const { return ids[static_cast<size_t>(y) * w + x]; }
};

// 2-D complex plane, row-major; carrier for per-channel spectra
struct ComplexPlane {
    int h = 0;
    int w = 0;
    std::vector<std::complex<double>> data;

    ComplexPlane() = default;
    ComplexPlane(int h_, int w_) : h(h_), w(w_), data(static_cast<size_t>(h_) * w_) {
        if (h_ < 1 || w_ < 1) throw DimensionError("plane dims must be >= 1");
    }

    std::complex<double>& at(int y, int x) { return data[static_cast<size_t>(y) * w + x]; }
    const std::complex<double>& at(int y, int x) const {
        return data[static_cast<size_t>(y) * w + x];
    }
};

constexpr uint8_t kUnknownId = 0;
constexpr uint8_t kIgnoreId = 255;

}  // namespace stylecl
