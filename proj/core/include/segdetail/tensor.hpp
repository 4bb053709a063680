#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "segdetail/error.hpp"

namespace segdetail {

/// Dense rank-4 array in row-major (n, c, h, w) order. The gradient buffer
/// `g` is empty unless the tensor participates in training; when allocated it
/// has the same shape as `v`.
template <typename T>
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> v;
    std::vector<T> g;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_, T fill = T(0))
        : n(n_), c(c_), h(h_), w(w_),
          v(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {
        if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0) {
            throw ArgumentError("Tensor4: negative dimension in " + shape_str());
        }
    }

    std::size_t size() const { return v.size(); }

    std::size_t index(int in, int ic, int iy, int ix) const {
        return ((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix;
    }
    T& at(int in, int ic, int iy, int ix) { return v[index(in, ic, iy, ix)]; }
    const T& at(int in, int ic, int iy, int ix) const { return v[index(in, ic, iy, ix)]; }

    bool same_shape(const Tensor4& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    std::string shape_str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }

    void alloc_grad() { g.assign(v.size(), T(0)); }
    void zero_grad() { g.assign(g.size(), T(0)); }

    template <typename U>
    Tensor4<U> cast() const {
        Tensor4<U> out(n, c, h, w);
        for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

inline void require_same_shape(int an, int ac, int ah, int aw,
                               int bn, int bc, int bh, int bw,
                               const char* what) {
    if (an != bn || ac != bc || ah != bh || aw != bw) {
        throw ShapeError(std::string(what) + ": shape (" + std::to_string(an) + "," +
                         std::to_string(ac) + "," + std::to_string(ah) + "," +
                         std::to_string(aw) + ") vs (" + std::to_string(bn) + "," +
                         std::to_string(bc) + "," + std::to_string(bh) + "," +
                         std::to_string(bw) + ")");
    }
}

}  // namespace segdetail
