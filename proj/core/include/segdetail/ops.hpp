#pragma once

// Forward and hand-derived backward passes for every operation the network
// needs. All functions are pure; backward passes compute gradients of
// sum(grad_out * output) with respect to the inputs.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "segdetail/gemm.hpp"
#include "segdetail/mask.hpp"
#include "segdetail/tensor.hpp"

namespace segdetail {

template <typename T>
struct ConvParams {
    Tensor4<T> weight;        // (c_out, c_in, k, k)
    std::vector<T> bias;      // c_out
    int stride = 1;
    int padding = 0;

    int c_out() const { return weight.n; }
    int c_in() const { return weight.c; }
    int k() const { return weight.h; }

    void validate() const {
        if (weight.h != weight.w || weight.h < 1) {
            throw ArgumentError("ConvParams: kernel must be square and >= 1, got " +
                                weight.shape_str());
        }
        if (stride < 1 || padding < 0) {
            throw ArgumentError("ConvParams: stride >= 1 and padding >= 0 required");
        }
        if (static_cast<int>(bias.size()) != weight.n) {
            throw ShapeError("ConvParams: bias size " + std::to_string(bias.size()) +
                             " vs c_out " + std::to_string(weight.n));
        }
    }
};

template <typename T>
struct ConvGrads {
    Tensor4<T> input;
    Tensor4<T> weight;
    std::vector<T> bias;
};

inline int conv_out_dim(int in, int k, int stride, int padding) {
    return (in + 2 * padding - k) / stride + 1;
}

namespace detail {

// Unpacks one sample into a (c_in*k*k) x (oh*ow) column block. `row_stride`
// is the full matrix width; `col` points at this sample's first column, so a
// whole batch can share one column matrix.
template <typename T>
void im2col(const T* src, int c, int h, int w, int k, int stride, int pad,
            int oh, int ow, T* col, std::size_t row_stride) {
    const int n_cols = oh * ow;
    for (int ic = 0; ic < c; ++ic) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = col + (static_cast<std::size_t>(ic) * k * k + ky * k + kx) * row_stride;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        std::fill(row + oy * ow, row + (oy + 1) * ow, T(0));
                        continue;
                    }
                    const T* src_row = src + (static_cast<std::size_t>(ic) * h + iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        row[oy * ow + ox] = (ix >= 0 && ix < w) ? src_row[ix] : T(0);
                    }
                }
            }
        }
    }
}

// Scatter-adds one sample's column block back into its gradient.
template <typename T>
void col2im_add(const T* col, int c, int h, int w, int k, int stride, int pad,
                int oh, int ow, T* dst, std::size_t row_stride) {
    const int n_cols = oh * ow;
    for (int ic = 0; ic < c; ++ic) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* row = col + (static_cast<std::size_t>(ic) * k * k + ky * k + kx) * row_stride;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    T* dst_row = dst + (static_cast<std::size_t>(ic) * h + iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) dst_row[ix] += row[oy * ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// Cross-correlation with bias. Output dims (n, c_out, oh, ow) with
/// oh = floor((h + 2*pad - k)/stride) + 1.
template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& input, const ConvParams<T>& params) {
    params.validate();
    if (input.c != params.c_in()) {
        throw ShapeError("conv2d_forward: input " + input.shape_str() + " vs weight " +
                         params.weight.shape_str());
    }
    const int k = params.k(), s = params.stride, p = params.padding;
    const int oh = conv_out_dim(input.h, k, s, p);
    const int ow = conv_out_dim(input.w, k, s, p);
    if (oh < 1 || ow < 1) {
        throw ShapeError("conv2d_forward: empty output for input " + input.shape_str() +
                         " with k=" + std::to_string(k) + " stride=" + std::to_string(s) +
                         " pad=" + std::to_string(p));
    }
    const int kk = input.c * k * k;
    const int n_cols = oh * ow;
    const std::size_t all_cols = static_cast<std::size_t>(input.n) * n_cols;
    Tensor4<T> out(input.n, params.c_out(), oh, ow);

    // One column matrix and one GEMM for the whole batch; the result is
    // scattered back to (n, c_out, oh, ow) layout afterwards.
    std::vector<T> col(static_cast<std::size_t>(kk) * all_cols);
    for (int in = 0; in < input.n; ++in)
        detail::im2col(input.v.data() + input.index(in, 0, 0, 0), input.c, input.h,
                       input.w, k, s, p, oh, ow,
                       col.data() + static_cast<std::size_t>(in) * n_cols, all_cols);
    std::vector<T> out_all(static_cast<std::size_t>(params.c_out()) * all_cols);
    gemm(false, false, params.c_out(), static_cast<int>(all_cols), kk, T(1),
         params.weight.v.data(), kk, col.data(), static_cast<int>(all_cols), T(0),
         out_all.data(), static_cast<int>(all_cols));
    for (int in = 0; in < input.n; ++in)
        for (int oc = 0; oc < params.c_out(); ++oc) {
            const T* src = out_all.data() + static_cast<std::size_t>(oc) * all_cols +
                           static_cast<std::size_t>(in) * n_cols;
            T* dst = out.v.data() + out.index(in, oc, 0, 0);
            const T b = params.bias[oc];
            for (int i = 0; i < n_cols; ++i) dst[i] = src[i] + b;
        }
    return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& input, const ConvParams<T>& params,
                             const Tensor4<T>& grad_out) {
    params.validate();
    const int k = params.k(), s = params.stride, p = params.padding;
    const int oh = conv_out_dim(input.h, k, s, p);
    const int ow = conv_out_dim(input.w, k, s, p);
    require_same_shape(grad_out.n, grad_out.c, grad_out.h, grad_out.w,
                       input.n, params.c_out(), oh, ow, "conv2d_backward grad_out");
    const int kk = input.c * k * k;
    const int n_cols = oh * ow;

    ConvGrads<T> grads;
    grads.input = Tensor4<T>(input.n, input.c, input.h, input.w);
    grads.weight = Tensor4<T>(params.weight.n, params.weight.c, params.weight.h, params.weight.w);
    grads.bias.assign(params.bias.size(), T(0));

    const std::size_t all_cols = static_cast<std::size_t>(input.n) * n_cols;
    std::vector<T> col(static_cast<std::size_t>(kk) * all_cols);
    std::vector<T> go_all(static_cast<std::size_t>(params.c_out()) * all_cols);
    for (int in = 0; in < input.n; ++in) {
        detail::im2col(input.v.data() + input.index(in, 0, 0, 0), input.c, input.h,
                       input.w, k, s, p, oh, ow,
                       col.data() + static_cast<std::size_t>(in) * n_cols, all_cols);
        for (int oc = 0; oc < params.c_out(); ++oc) {
            const T* src = grad_out.v.data() + grad_out.index(in, oc, 0, 0);
            T* dst = go_all.data() + static_cast<std::size_t>(oc) * all_cols +
                     static_cast<std::size_t>(in) * n_cols;
            std::copy_n(src, n_cols, dst);
        }
    }
    // dW = dY * col^T
    gemm(false, true, params.c_out(), kk, static_cast<int>(all_cols), T(1), go_all.data(),
         static_cast<int>(all_cols), col.data(), static_cast<int>(all_cols), T(0),
         grads.weight.v.data(), kk);
    // dX = col2im(W^T * dY)
    std::vector<T> grad_col(static_cast<std::size_t>(kk) * all_cols);
    gemm(true, false, kk, static_cast<int>(all_cols), params.c_out(), T(1),
         params.weight.v.data(), kk, go_all.data(), static_cast<int>(all_cols), T(0),
         grad_col.data(), static_cast<int>(all_cols));
    for (int in = 0; in < input.n; ++in)
        detail::col2im_add(grad_col.data() + static_cast<std::size_t>(in) * n_cols,
                           input.c, input.h, input.w, k, s, p, oh, ow,
                           grads.input.v.data() + grads.input.index(in, 0, 0, 0), all_cols);
    for (int oc = 0; oc < params.c_out(); ++oc) {
        const T* row = go_all.data() + static_cast<std::size_t>(oc) * all_cols;
        T acc = T(0);
        for (std::size_t i = 0; i < all_cols; ++i) acc += row[i];
        grads.bias[oc] = acc;
    }
    return grads;
}

template <typename T>
Tensor4<T> relu(const Tensor4<T>& input) {
    Tensor4<T> out(input.n, input.c, input.h, input.w);
    for (std::size_t i = 0; i < input.v.size(); ++i)
        out.v[i] = input.v[i] > T(0) ? input.v[i] : T(0);
    return out;
}

/// Subgradient 0 at x == 0.
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& input, const Tensor4<T>& grad_out) {
    if (!input.same_shape(grad_out)) {
        throw ShapeError("relu_backward: input " + input.shape_str() + " vs grad " +
                         grad_out.shape_str());
    }
    Tensor4<T> grad(input.n, input.c, input.h, input.w);
    for (std::size_t i = 0; i < input.v.size(); ++i)
        grad.v[i] = input.v[i] > T(0) ? grad_out.v[i] : T(0);
    return grad;
}

namespace detail {
inline int pool_start(int i, int in, int out) { return (i * in) / out; }
inline int pool_end(int i, int in, int out) { return ((i + 1) * in + out - 1) / out; }
}  // namespace detail

/// Each output cell is the mean of its input partition; partition bounds are
/// start = floor(i*in/out), end = ceil((i+1)*in/out).
template <typename T>
Tensor4<T> adaptive_avg_pool(const Tensor4<T>& input, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1)
        throw ArgumentError("adaptive_avg_pool: output dims must be >= 1");
    if (out_h > input.h || out_w > input.w)
        throw ArgumentError("adaptive_avg_pool: output " + std::to_string(out_h) + "x" +
                            std::to_string(out_w) + " exceeds input " + input.shape_str());
    Tensor4<T> out(input.n, input.c, out_h, out_w);
    for (int in = 0; in < input.n; ++in)
        for (int ic = 0; ic < input.c; ++ic)
            for (int oy = 0; oy < out_h; ++oy) {
                const int y0 = detail::pool_start(oy, input.h, out_h);
                const int y1 = detail::pool_end(oy, input.h, out_h);
                for (int ox = 0; ox < out_w; ++ox) {
                    const int x0 = detail::pool_start(ox, input.w, out_w);
                    const int x1 = detail::pool_end(ox, input.w, out_w);
                    T acc = T(0);
                    for (int y = y0; y < y1; ++y)
                        for (int x = x0; x < x1; ++x) acc += input.at(in, ic, y, x);
                    out.at(in, ic, oy, ox) = acc / static_cast<T>((y1 - y0) * (x1 - x0));
                }
            }
    return out;
}

template <typename T>
Tensor4<T> adaptive_avg_pool_backward(const Tensor4<T>& input, const Tensor4<T>& grad_out) {
    Tensor4<T> grad(input.n, input.c, input.h, input.w);
    const int out_h = grad_out.h, out_w = grad_out.w;
    require_same_shape(grad_out.n, grad_out.c, out_h, out_w, input.n, input.c, out_h,
                       out_w, "adaptive_avg_pool_backward grad_out");
    for (int in = 0; in < input.n; ++in)
        for (int ic = 0; ic < input.c; ++ic)
            for (int oy = 0; oy < out_h; ++oy) {
                const int y0 = detail::pool_start(oy, input.h, out_h);
                const int y1 = detail::pool_end(oy, input.h, out_h);
                for (int ox = 0; ox < out_w; ++ox) {
                    const int x0 = detail::pool_start(ox, input.w, out_w);
                    const int x1 = detail::pool_end(ox, input.w, out_w);
                    const T share = grad_out.at(in, ic, oy, ox) /
                                    static_cast<T>((y1 - y0) * (x1 - x0));
                    for (int y = y0; y < y1; ++y)
                        for (int x = x0; x < x1; ++x) grad.at(in, ic, y, x) += share;
                }
            }
    return grad;
}

namespace detail {

// align-corners-false source coordinate, clamped.
template <typename T>
struct LerpIndex {
    int lo, hi;
    T w_hi;
};

template <typename T>
LerpIndex<T> lerp_index(int d, int in, int out) {
    T s = (static_cast<T>(d) + T(0.5)) * static_cast<T>(in) / static_cast<T>(out) - T(0.5);
    if (s < T(0)) s = T(0);
    if (s > static_cast<T>(in - 1)) s = static_cast<T>(in - 1);
    const int lo = static_cast<int>(std::floor(s));
    const int hi = std::min(lo + 1, in - 1);
    return {lo, hi, s - static_cast<T>(lo)};
}

}  // namespace detail

template <typename T>
Tensor4<T> bilinear_upsample(const Tensor4<T>& input, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1)
        throw ArgumentError("bilinear_upsample: output dims must be >= 1");
    Tensor4<T> out(input.n, input.c, out_h, out_w);
    for (int oy = 0; oy < out_h; ++oy) {
        const auto ly = detail::lerp_index<T>(oy, input.h, out_h);
        for (int ox = 0; ox < out_w; ++ox) {
            const auto lx = detail::lerp_index<T>(ox, input.w, out_w);
            for (int in = 0; in < input.n; ++in)
                for (int ic = 0; ic < input.c; ++ic) {
                    const T top = input.at(in, ic, ly.lo, lx.lo) * (T(1) - lx.w_hi) +
                                  input.at(in, ic, ly.lo, lx.hi) * lx.w_hi;
                    const T bot = input.at(in, ic, ly.hi, lx.lo) * (T(1) - lx.w_hi) +
                                  input.at(in, ic, ly.hi, lx.hi) * lx.w_hi;
                    out.at(in, ic, oy, ox) = top * (T(1) - ly.w_hi) + bot * ly.w_hi;
                }
        }
    }
    return out;
}

template <typename T>
Tensor4<T> bilinear_upsample_backward(const Tensor4<T>& input, const Tensor4<T>& grad_out) {
    Tensor4<T> grad(input.n, input.c, input.h, input.w);
    for (int oy = 0; oy < grad_out.h; ++oy) {
        const auto ly = detail::lerp_index<T>(oy, input.h, grad_out.h);
        for (int ox = 0; ox < grad_out.w; ++ox) {
            const auto lx = detail::lerp_index<T>(ox, input.w, grad_out.w);
            for (int in = 0; in < input.n; ++in)
                for (int ic = 0; ic < input.c; ++ic) {
                    const T go = grad_out.at(in, ic, oy, ox);
                    grad.at(in, ic, ly.lo, lx.lo) += go * (T(1) - ly.w_hi) * (T(1) - lx.w_hi);
                    grad.at(in, ic, ly.lo, lx.hi) += go * (T(1) - ly.w_hi) * lx.w_hi;
                    grad.at(in, ic, ly.hi, lx.lo) += go * ly.w_hi * (T(1) - lx.w_hi);
                    grad.at(in, ic, ly.hi, lx.hi) += go * ly.w_hi * lx.w_hi;
                }
        }
    }
    return grad;
}

/// Channel order: a then b. a and b must agree on n, h, w.
template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
    if (a.n != b.n || a.h != b.h || a.w != b.w) {
        throw ShapeError("concat_channels: " + a.shape_str() + " vs " + b.shape_str());
    }
    Tensor4<T> out(a.n, a.c + b.c, a.h, a.w);
    const std::size_t plane = static_cast<std::size_t>(a.h) * a.w;
    for (int in = 0; in < a.n; ++in) {
        std::copy_n(a.v.data() + static_cast<std::size_t>(in) * a.c * plane, a.c * plane,
                    out.v.data() + out.index(in, 0, 0, 0));
        std::copy_n(b.v.data() + static_cast<std::size_t>(in) * b.c * plane, b.c * plane,
                    out.v.data() + out.index(in, a.c, 0, 0));
    }
    return out;
}

/// Splits grad_out back at channel a_c.
template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> concat_channels_backward(const Tensor4<T>& grad_out,
                                                           int a_c) {
    if (a_c < 0 || a_c > grad_out.c)
        throw ShapeError("concat_channels_backward: split " + std::to_string(a_c) +
                         " out of range for " + grad_out.shape_str());
    Tensor4<T> ga(grad_out.n, a_c, grad_out.h, grad_out.w);
    Tensor4<T> gb(grad_out.n, grad_out.c - a_c, grad_out.h, grad_out.w);
    const std::size_t plane = static_cast<std::size_t>(grad_out.h) * grad_out.w;
    for (int in = 0; in < grad_out.n; ++in) {
        std::copy_n(grad_out.v.data() + grad_out.index(in, 0, 0, 0), a_c * plane,
                    ga.v.data() + static_cast<std::size_t>(in) * a_c * plane);
        std::copy_n(grad_out.v.data() + grad_out.index(in, a_c, 0, 0), gb.c * plane,
                    gb.v.data() + static_cast<std::size_t>(in) * gb.c * plane);
    }
    return {std::move(ga), std::move(gb)};
}

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
    if (!a.same_shape(b))
        throw ShapeError("add: " + a.shape_str() + " vs " + b.shape_str());
    Tensor4<T> out(a.n, a.c, a.h, a.w);
    for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] + b.v[i];
    return out;
}

template <typename T>
struct CeResult {
    T loss = T(0);
    Tensor4<T> grad_logits;
};

/// Per-pixel softmax cross-entropy averaged over non-ignored pixels.
/// Pixels whose target equals ignore_value contribute zero loss and zero
/// gradient; when every pixel is ignored, loss = 0 and grad = 0.
template <typename T>
CeResult<T> softmax_ce_ignore(const Tensor4<T>& logits,
                              const std::vector<LabelMask>& target,
                              int ignore_value = kIgnoreLabel) {
    if (static_cast<int>(target.size()) != logits.n)
        throw ShapeError("softmax_ce_ignore: batch " + std::to_string(target.size()) +
                         " vs logits " + logits.shape_str());
    const int C = logits.c;
    CeResult<T> res;
    res.grad_logits = Tensor4<T>(logits.n, C, logits.h, logits.w);

    // First pass: count contributing pixels so the gradient can be scaled by
    // the final mean in one sweep.
    std::size_t live = 0;
    for (int in = 0; in < logits.n; ++in) {
        const LabelMask& m = target[in];
        if (m.h != logits.h || m.w != logits.w)
            throw ShapeError("softmax_ce_ignore: target " + std::to_string(m.h) + "x" +
                             std::to_string(m.w) + " vs logits " + logits.shape_str());
        for (const auto lab : m.v) {
            if (lab == ignore_value) continue;
            if (lab >= C)
                throw DataError("softmax_ce_ignore: class " + std::to_string(int(lab)) +
                                " out of [0," + std::to_string(C) + ")");
            ++live;
        }
    }
    if (live == 0) return res;

    const T inv = T(1) / static_cast<T>(live);
    T loss = T(0);
    std::vector<T> probs(C);
    for (int in = 0; in < logits.n; ++in) {
        const LabelMask& m = target[in];
        for (int y = 0; y < logits.h; ++y)
            for (int x = 0; x < logits.w; ++x) {
                const int lab = m.at(y, x);
                if (lab == ignore_value) continue;
                T mx = logits.at(in, 0, y, x);
                for (int c = 1; c < C; ++c) mx = std::max(mx, logits.at(in, c, y, x));
                T denom = T(0);
                for (int c = 0; c < C; ++c) {
                    probs[c] = std::exp(logits.at(in, c, y, x) - mx);
                    denom += probs[c];
                }
                // Log-sum-exp form: probs[lab] can underflow to zero when the
                // logit gap exceeds float range, but the loss itself is finite.
                loss += (std::log(denom) - (logits.at(in, lab, y, x) - mx)) * inv;
                for (int c = 0; c < C; ++c) {
                    res.grad_logits.at(in, c, y, x) =
                        (probs[c] / denom - (c == lab ? T(1) : T(0))) * inv;
                }
            }
    }
    res.loss = loss;
    return res;
}

/// Nearest-neighbor spatial resampling; preserves value sets exactly.
template <typename T>
Tensor4<T> nearest_resize(const Tensor4<T>& input, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1)
        throw ArgumentError("nearest_resize: output dims must be >= 1");
    Tensor4<T> out(input.n, input.c, out_h, out_w);
    for (int oy = 0; oy < out_h; ++oy) {
        const int sy = std::min(input.h - 1, (2 * oy + 1) * input.h / (2 * out_h));
        for (int ox = 0; ox < out_w; ++ox) {
            const int sx = std::min(input.w - 1, (2 * ox + 1) * input.w / (2 * out_w));
            for (int in = 0; in < input.n; ++in)
                for (int ic = 0; ic < input.c; ++ic)
                    out.at(in, ic, oy, ox) = input.at(in, ic, sy, sx);
        }
    }
    return out;
}

}  // namespace segdetail
