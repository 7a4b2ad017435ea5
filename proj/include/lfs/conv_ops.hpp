// Copyright (c) 2026, The lfs-gan authors
// SPDX-License-Identifier: Apache-2.0
//
// Batched convolution kernels on channel-major activations (C x N*H*W).

#pragma once

#include <algorithm>
#include <array>
#include <cstddef>

#include "lfs/left.hpp"

namespace lfs::ops {

inline constexpr double kLeakySlope = 0.2;

template <typename T>
T lrelu(T x) {
    return x > T(0) ? x : T(kLeakySlope) * x;
}

template <typename T>
T lrelu_grad(T x) {
    return x > T(0) ? T(1) : T(kLeakySlope);
}

// Same-padding, stride-1 im2col. Row index c*K + u*k + v matches the
// (o, i, u, v) weight layout, so conv is W(c_out x c_in*K) * cols.
template <typename T>
Matrix<T> im2col(const Matrix<T>& x, std::size_t n, std::size_t h, std::size_t w, std::size_t k) {
    const std::size_t c = static_cast<std::size_t>(x.rows());
    const std::size_t hw = h * w;
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
    Matrix<T> cols = Matrix<T>::Zero(static_cast<Eigen::Index>(c * k * k), static_cast<Eigen::Index>(n * hw));
    for (std::size_t ch = 0; ch < c; ++ch) {
        const T* src_row = x.data() + ch * n * hw;
        for (std::size_t u = 0; u < k; ++u) {
            for (std::size_t v = 0; v < k; ++v) {
                T* dst_row = cols.data() + ((ch * k + u) * k + v) * n * hw;
                const std::ptrdiff_t du = static_cast<std::ptrdiff_t>(u) - pad;
                const std::ptrdiff_t dv = static_cast<std::ptrdiff_t>(v) - pad;
                for (std::size_t s = 0; s < n; ++s) {
                    const T* src = src_row + s * hw;
                    T* dst = dst_row + s * hw;
                    for (std::size_t y = 0; y < h; ++y) {
                        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + du;
                        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                        const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dv);
                        const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w),
                                                                           static_cast<std::ptrdiff_t>(w) - dv);
                        for (std::ptrdiff_t xx = x0; xx < x1; ++xx) {
                            dst[y * w + static_cast<std::size_t>(xx)] =
                                src[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(xx + dv)];
                        }
                    }
                }
            }
        }
    }
    return cols;
}

template <typename T>
Matrix<T> col2im(const Matrix<T>& cols, std::size_t c, std::size_t n, std::size_t h, std::size_t w, std::size_t k) {
    const std::size_t hw = h * w;
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
    Matrix<T> x = Matrix<T>::Zero(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(n * hw));
    for (std::size_t ch = 0; ch < c; ++ch) {
        T* dst_row = x.data() + ch * n * hw;
        for (std::size_t u = 0; u < k; ++u) {
            for (std::size_t v = 0; v < k; ++v) {
                const T* src_row = cols.data() + ((ch * k + u) * k + v) * n * hw;
                const std::ptrdiff_t du = static_cast<std::ptrdiff_t>(u) - pad;
                const std::ptrdiff_t dv = static_cast<std::ptrdiff_t>(v) - pad;
                for (std::size_t s = 0; s < n; ++s) {
                    const T* src = src_row + s * hw;
                    T* dst = dst_row + s * hw;
                    for (std::size_t y = 0; y < h; ++y) {
                        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + du;
                        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                        const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dv);
                        const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w),
                                                                           static_cast<std::ptrdiff_t>(w) - dv);
                        for (std::ptrdiff_t xx = x0; xx < x1; ++xx) {
                            dst[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(xx + dv)] +=
                                src[y * w + static_cast<std::size_t>(xx)];
                        }
                    }
                }
            }
        }
    }
    return x;
}

template <typename T>
Matrix<T> upsample2(const Matrix<T>& x, std::size_t n, std::size_t h, std::size_t w) {
    const std::size_t c = static_cast<std::size_t>(x.rows());
    const std::size_t h2 = 2 * h, w2 = 2 * w;
    Matrix<T> out(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(n * h2 * w2));
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t s = 0; s < n; ++s) {
            const T* src = x.data() + ch * n * h * w + s * h * w;
            T* dst = out.data() + ch * n * h2 * w2 + s * h2 * w2;
            for (std::size_t y = 0; y < h2; ++y) {
                for (std::size_t xx = 0; xx < w2; ++xx) dst[y * w2 + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    return out;
}

template <typename T>
Matrix<T> upsample2_backward(const Matrix<T>& d_out, std::size_t n, std::size_t h, std::size_t w) {
    const std::size_t c = static_cast<std::size_t>(d_out.rows());
    const std::size_t h2 = 2 * h, w2 = 2 * w;
    Matrix<T> d_in = Matrix<T>::Zero(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(n * h * w));
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t s = 0; s < n; ++s) {
            const T* src = d_out.data() + ch * n * h2 * w2 + s * h2 * w2;
            T* dst = d_in.data() + ch * n * h * w + s * h * w;
            for (std::size_t y = 0; y < h2; ++y) {
                for (std::size_t xx = 0; xx < w2; ++xx) dst[(y / 2) * w + xx / 2] += src[y * w2 + xx];
            }
        }
    }
    return d_in;
}

template <typename T>
Matrix<T> avgpool2(const Matrix<T>& x, std::size_t n, std::size_t h, std::size_t w) {
    const std::size_t c = static_cast<std::size_t>(x.rows());
    const std::size_t h2 = h / 2, w2 = w / 2;
    Matrix<T> out = Matrix<T>::Zero(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(n * h2 * w2));
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t s = 0; s < n; ++s) {
            const T* src = x.data() + ch * n * h * w + s * h * w;
            T* dst = out.data() + ch * n * h2 * w2 + s * h2 * w2;
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t xx = 0; xx < w; ++xx) dst[(y / 2) * w2 + xx / 2] += T(0.25) * src[y * w + xx];
            }
        }
    }
    return out;
}

template <typename T>
Matrix<T> avgpool2_backward(const Matrix<T>& d_out, std::size_t n, std::size_t h, std::size_t w) {
    const std::size_t c = static_cast<std::size_t>(d_out.rows());
    const std::size_t h2 = h / 2, w2 = w / 2;
    Matrix<T> d_in(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(n * h * w));
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t s = 0; s < n; ++s) {
            const T* src = d_out.data() + ch * n * h2 * w2 + s * h2 * w2;
            T* dst = d_in.data() + ch * n * h * w + s * h * w;
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t xx = 0; xx < w; ++xx) dst[y * w + xx] = T(0.25) * src[(y / 2) * w2 + xx / 2];
            }
        }
    }
    return d_in;
}

template <typename T>
Eigen::Map<const Matrix<T>> weight_matrix(const ConvWeight<T>& w) {
    return {w.data.data(), static_cast<Eigen::Index>(w.shape.c_out),
            static_cast<Eigen::Index>(w.shape.c_in * w.shape.kernel_area())};
}

template <typename T>
Eigen::Map<Matrix<T>> weight_matrix(ConvWeight<T>& w) {
    return {w.data.data(), static_cast<Eigen::Index>(w.shape.c_out),
            static_cast<Eigen::Index>(w.shape.c_in * w.shape.kernel_area())};
}


// Nearest-neighbour 2x upsampling followed by a same-padded 3x3 conv,
// computed as four 2x2 sub-pixel convolutions on the low-resolution input.
// For output parity p and low-res offset a (row offset a - 1 + p), the
// original kernel rows folded together are kFoldedTaps[p][a].
inline constexpr std::array<std::array<std::array<int, 2>, 2>, 2> kFoldedTaps{{
    {{{0, -1}, {1, 2}}},
    {{{0, 1}, {2, -1}}},
}};

template <typename T>
Matrix<T> folded_weight(const ConvWeight<T>& w, std::size_t py, std::size_t px) {
    const std::size_t c_out = w.shape.c_out, c_in = w.shape.c_in;
    Matrix<T> out = Matrix<T>::Zero(static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(c_in * 4));
    for (std::size_t o = 0; o < c_out; ++o) {
        for (std::size_t c = 0; c < c_in; ++c) {
            for (std::size_t a = 0; a < 2; ++a) {
                for (std::size_t b = 0; b < 2; ++b) {
                    T acc = T(0);
                    for (int u : kFoldedTaps[py][a]) {
                        if (u < 0) continue;
                        for (int v : kFoldedTaps[px][b]) {
                            if (v < 0) continue;
                            acc += w.at(o, c, static_cast<std::size_t>(u), static_cast<std::size_t>(v));
                        }
                    }
                    out(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(c * 4 + a * 2 + b)) = acc;
                }
            }
        }
    }
    return out;
}

// Rows of a low-res 3x3 im2col used by parity (py, px), as c_in*4 rows.
template <typename T>
Matrix<T> gather_parity_cols(const Matrix<T>& cols3, std::size_t c_in, std::size_t py, std::size_t px) {
    const Eigen::Index width = cols3.cols();
    Matrix<T> out(static_cast<Eigen::Index>(c_in * 4), width);
    for (std::size_t c = 0; c < c_in; ++c) {
        for (std::size_t a = 0; a < 2; ++a) {
            for (std::size_t b = 0; b < 2; ++b) {
                out.row(static_cast<Eigen::Index>(c * 4 + a * 2 + b)) =
                    cols3.row(static_cast<Eigen::Index>(c * 9 + (a + py) * 3 + (b + px)));
            }
        }
    }
    return out;
}

// x is the low-res input (c_in x n*h*w); cols3 receives its 3x3 im2col.
// Returns c_out x n*(2h)*(2w).
template <typename T>
Matrix<T> upsample_conv3x3(const Matrix<T>& x, std::size_t n, std::size_t h, std::size_t w, const ConvWeight<T>& weight,
                           Matrix<T>& cols3) {
    const std::size_t c_in = weight.shape.c_in;
    const std::size_t c_out = weight.shape.c_out;
    const std::size_t h2 = 2 * h, w2 = 2 * w;
    cols3 = im2col(x, n, h, w, 3);
    Matrix<T> y(static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(n * h2 * w2));
    for (std::size_t py = 0; py < 2; ++py) {
        for (std::size_t px = 0; px < 2; ++px) {
            Matrix<T> yp = folded_weight(weight, py, px) * gather_parity_cols(cols3, c_in, py, px);
            for (std::size_t o = 0; o < c_out; ++o) {
                for (std::size_t s = 0; s < n; ++s) {
                    const T* src = yp.data() + o * yp.cols() + s * h * w;
                    T* dst = y.data() + o * y.cols() + s * h2 * w2;
                    for (std::size_t i = 0; i < h; ++i) {
                        T* row = dst + (2 * i + py) * w2 + px;
                        for (std::size_t j = 0; j < w; ++j) row[2 * j] = src[i * w + j];
                    }
                }
            }
        }
    }
    return y;
}

// Gradients of upsample_conv3x3. d_x is only computed when requested.
template <typename T>
void upsample_conv3x3_backward(const Matrix<T>& d_y, const Matrix<T>& cols3, std::size_t n, std::size_t h, std::size_t w,
                               const ConvWeight<T>& weight, ConvWeight<T>& d_weight, Matrix<T>* d_x) {
    const std::size_t c_in = weight.shape.c_in;
    const std::size_t c_out = weight.shape.c_out;
    const std::size_t h2 = 2 * h, w2 = 2 * w;
    d_weight = ConvWeight<T>(weight.shape);
    Matrix<T> d_cols3;
    if (d_x != nullptr) d_cols3 = Matrix<T>::Zero(cols3.rows(), cols3.cols());
    Matrix<T> d_yp(static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(n * h * w));
    for (std::size_t py = 0; py < 2; ++py) {
        for (std::size_t px = 0; px < 2; ++px) {
            for (std::size_t o = 0; o < c_out; ++o) {
                for (std::size_t s = 0; s < n; ++s) {
                    const T* src = d_y.data() + o * d_y.cols() + s * h2 * w2;
                    T* dst = d_yp.data() + o * d_yp.cols() + s * h * w;
                    for (std::size_t i = 0; i < h; ++i) {
                        const T* row = src + (2 * i + py) * w2 + px;
                        for (std::size_t j = 0; j < w; ++j) dst[i * w + j] = row[2 * j];
                    }
                }
            }
            Matrix<T> colsp = gather_parity_cols(cols3, c_in, py, px);
            Matrix<T> d_folded = d_yp * colsp.transpose();
            for (std::size_t o = 0; o < c_out; ++o) {
                for (std::size_t c = 0; c < c_in; ++c) {
                    for (std::size_t a = 0; a < 2; ++a) {
                        for (std::size_t b = 0; b < 2; ++b) {
                            const T g = d_folded(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(c * 4 + a * 2 + b));
                            for (int u : kFoldedTaps[py][a]) {
                                if (u < 0) continue;
                                for (int v : kFoldedTaps[px][b]) {
                                    if (v < 0) continue;
                                    d_weight.at(o, c, static_cast<std::size_t>(u), static_cast<std::size_t>(v)) += g;
                                }
                            }
                        }
                    }
                }
            }
            if (d_x != nullptr) {
                Matrix<T> d_colsp = folded_weight(weight, py, px).transpose() * d_yp;
                for (std::size_t c = 0; c < c_in; ++c) {
                    for (std::size_t a = 0; a < 2; ++a) {
                        for (std::size_t b = 0; b < 2; ++b) {
                            d_cols3.row(static_cast<Eigen::Index>(c * 9 + (a + py) * 3 + (b + px))) +=
                                d_colsp.row(static_cast<Eigen::Index>(c * 4 + a * 2 + b));
                        }
                    }
                }
            }
        }
    }
    if (d_x != nullptr) *d_x = col2im(d_cols3, c_in, n, h, w, 3);
}

}  // namespace lfs::ops
