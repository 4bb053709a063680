#pragma once

// Test-only reference implementations and finite-difference machinery. These
// stay independent of the GEMM-backed production path they check.

#include <cmath>
#include <functional>
#include <random>

#include "segdetail/ops.hpp"

namespace segdetail::testing {

/// Relative error with an absolute floor of 1 (so near-zero values compare
/// absolutely).
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

/// Plain quadruple-loop cross-correlation, no im2col, no BLAS.
template <typename T>
Tensor4<T> conv2d_reference(const Tensor4<T>& input, const ConvParams<T>& params) {
    const int k = params.k(), s = params.stride, p = params.padding;
    const int oh = conv_out_dim(input.h, k, s, p);
    const int ow = conv_out_dim(input.w, k, s, p);
    Tensor4<T> out(input.n, params.c_out(), oh, ow);
    for (int in = 0; in < input.n; ++in)
        for (int oc = 0; oc < params.c_out(); ++oc)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    T acc = params.bias[oc];
                    for (int ic = 0; ic < input.c; ++ic)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int iy = oy * s - p + ky;
                                const int ix = ox * s - p + kx;
                                if (iy < 0 || iy >= input.h || ix < 0 || ix >= input.w)
                                    continue;
                                acc += input.at(in, ic, iy, ix) *
                                       params.weight.at(oc, ic, ky, kx);
                            }
                    out.at(in, oc, oy, ox) = acc;
                }
    return out;
}

/// Central finite difference of a scalar function at x.
inline double central_diff(const std::function<double(double)>& f, double x,
                           double step = 1e-5) {
    return (f(x + step) - f(x - step)) / (2.0 * step);
}

template <typename T>
Tensor4<T> random_tensor(int n, int c, int h, int w, std::mt19937& rng, double scale = 1.0) {
    Tensor4<T> t(n, c, h, w);
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (auto& v : t.v) v = static_cast<T>(dist(rng));
    return t;
}

template <typename T>
ConvParams<T> random_conv(int c_out, int c_in, int k, int stride, int pad,
                          std::mt19937& rng, double scale = 1.0) {
    ConvParams<T> p;
    p.weight = random_tensor<T>(c_out, c_in, k, k, rng, scale);
    p.bias.resize(c_out);
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (auto& b : p.bias) b = static_cast<T>(dist(rng));
    p.stride = stride;
    p.padding = pad;
    return p;
}

}  // namespace segdetail::testing
