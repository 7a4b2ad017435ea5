// Copyright (c) 2026, The lfs-gan authors
// SPDX-License-Identifier: Apache-2.0
//
// Learnable factorized tensor (LeFT) modulators. A frozen weight W is
// modulated as W * Gamma + Beta, where Gamma and Beta are reconstructed from
// rank-constrained factor matrices.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace lfs {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ConvShape {
    std::size_t c_out = 1;
    std::size_t c_in = 1;
    std::size_t k = 1;

    std::size_t kernel_area() const { return k * k; }
    std::size_t numel() const { return c_out * c_in * k * k; }
    void validate() const {
        if (c_out == 0 || c_in == 0 || k == 0) throw ShapeError("conv shape dimensions must be >= 1");
    }
    bool operator==(const ConvShape&) const = default;
};

struct FcShape {
    std::size_t d_out = 1;
    std::size_t d_in = 1;

    void validate() const {
        if (d_out == 0 || d_in == 0) throw ShapeError("fc shape dimensions must be >= 1");
    }
    bool operator==(const FcShape&) const = default;
};

// Stable numeric ids; they are written into checkpoints.
enum class ActivationKind : std::uint8_t {
    Identity = 0,
    Sigmoid = 1,
    Tanh = 2,
    LeakyReLU = 3,
    GELU = 4,
    SiLU = 5,
    ReLU = 6,
};

inline constexpr ActivationKind kAllActivations[] = {
    ActivationKind::Identity, ActivationKind::Sigmoid, ActivationKind::Tanh, ActivationKind::LeakyReLU,
    ActivationKind::GELU,     ActivationKind::SiLU,    ActivationKind::ReLU,
};

std::string_view activation_name(ActivationKind act);
ActivationKind parse_activation(std::string_view name);
ActivationKind activation_from_id(std::uint8_t id);

template <typename T>
T activate(ActivationKind act, T x) {
    switch (act) {
    case ActivationKind::Identity: return x;
    case ActivationKind::Sigmoid: return T(1) / (T(1) + std::exp(-x));
    case ActivationKind::Tanh: return std::tanh(x);
    case ActivationKind::LeakyReLU: return x > T(0) ? x : T(0.2) * x;
    case ActivationKind::GELU: return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
    case ActivationKind::SiLU: return x / (T(1) + std::exp(-x));
    case ActivationKind::ReLU: return x > T(0) ? x : T(0);
    }
    return x;
}

template <typename T>
T activate_grad(ActivationKind act, T x) {
    switch (act) {
    case ActivationKind::Identity: return T(1);
    case ActivationKind::Sigmoid: {
        const T s = T(1) / (T(1) + std::exp(-x));
        return s * (T(1) - s);
    }
    case ActivationKind::Tanh: {
        const T t = std::tanh(x);
        return T(1) - t * t;
    }
    case ActivationKind::LeakyReLU: return x > T(0) ? T(1) : T(0.2);
    case ActivationKind::GELU: {
        const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
        const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * T(M_PI));
        return cdf + x * pdf;
    }
    case ActivationKind::SiLU: {
        const T s = T(1) / (T(1) + std::exp(-x));
        return s + x * s * (T(1) - s);
    }
    case ActivationKind::ReLU: return x > T(0) ? T(1) : T(0);
    }
    return T(1);
}

// Factors for one conv layer. a1_out / a1_inst are empty when with_bias is false.
template <typename T>
struct LeftConvModulator {
    ConvShape shape;
    std::size_t rank = 1;
    ActivationKind act = ActivationKind::ReLU;
    bool with_bias = true;

    Matrix<T> m1_out;   // c_out x r
    Matrix<T> m1_inst;  // r x (r*K)
    Matrix<T> m2_in;    // c_in x r
    Matrix<T> a1_out;   // c_out x r
    Matrix<T> a1_inst;  // r x K
    Matrix<T> a2_in;    // c_in x r
    Matrix<T> a2_inst;  // r x K

    void validate() const;
    std::size_t param_count() const;

    // Visits factor matrices in checkpoint order.
    template <typename F>
    void for_each_factor(F&& f) {
        f("m1_out", m1_out);
        f("m1_inst", m1_inst);
        f("m2_in", m2_in);
        if (with_bias) {
            f("a1_out", a1_out);
            f("a1_inst", a1_inst);
        }
        f("a2_in", a2_in);
        f("a2_inst", a2_inst);
    }
    template <typename F>
    void for_each_factor(F&& f) const {
        const_cast<LeftConvModulator*>(this)->for_each_factor(
            [&](const char* name, Matrix<T>& m) { f(name, static_cast<const Matrix<T>&>(m)); });
    }
};

template <typename T>
struct LeftFcModulator {
    FcShape shape;
    std::size_t rank = 1;

    Matrix<T> m_out;   // d_out x r
    Matrix<T> m_in;    // r x d_in
    Matrix<T> a_out;   // d_out x r
    Matrix<T> a_in;    // r x d_in
    Matrix<T> gamma_b; // d_out x 1
    Matrix<T> beta_b;  // d_out x 1

    void validate() const;
    std::size_t param_count() const;

    template <typename F>
    void for_each_factor(F&& f) {
        f("m_out", m_out);
        f("m_in", m_in);
        f("a_out", a_out);
        f("a_in", a_in);
        f("gamma_b", gamma_b);
        f("beta_b", beta_b);
    }
    template <typename F>
    void for_each_factor(F&& f) const {
        const_cast<LeftFcModulator*>(this)->for_each_factor(
            [&](const char* name, Matrix<T>& m) { f(name, static_cast<const Matrix<T>&>(m)); });
    }
};

// Flat c_out x c_in x k x k weight tensor, row-major.
template <typename T>
struct ConvWeight {
    ConvShape shape;
    std::vector<T> data;

    ConvWeight() = default;
    explicit ConvWeight(ConvShape s, T fill = T(0)) : shape(s), data(s.numel(), fill) {}

    T& at(std::size_t o, std::size_t i, std::size_t u, std::size_t v) {
        return data[((o * shape.c_in + i) * shape.k + u) * shape.k + v];
    }
    const T& at(std::size_t o, std::size_t i, std::size_t u, std::size_t v) const {
        return data[((o * shape.c_in + i) * shape.k + u) * shape.k + v];
    }
};

template <typename T>
struct FcReconstruction {
    Matrix<T> gamma_w;
    Matrix<T> beta_w;
    Matrix<T> gamma_b;
    Matrix<T> beta_b;
};

// ---- reshapes --------------------------------------------------------------

// c_out x (r*K) -> r x (c_out*K) over the row-major element stream.
template <typename T>
Matrix<T> reshape_r1(const Matrix<T>& m, const ConvShape& shape, std::size_t rank) {
    const auto K = static_cast<Eigen::Index>(shape.kernel_area());
    const auto r = static_cast<Eigen::Index>(rank);
    const auto c_out = static_cast<Eigen::Index>(shape.c_out);
    if (m.rows() != c_out || m.cols() != r * K) throw ShapeError("reshape_r1: expected c_out x (r*K)");
    return Eigen::Map<const Matrix<T>>(m.data(), r, c_out * K);
}

// Inverse of reshape_r1.
template <typename T>
Matrix<T> reshape_r1_inverse(const Matrix<T>& m, const ConvShape& shape, std::size_t rank) {
    const auto K = static_cast<Eigen::Index>(shape.kernel_area());
    const auto r = static_cast<Eigen::Index>(rank);
    const auto c_out = static_cast<Eigen::Index>(shape.c_out);
    if (m.rows() != r || m.cols() != c_out * K) throw ShapeError("reshape_r1_inverse: expected r x (c_out*K)");
    return Eigen::Map<const Matrix<T>>(m.data(), c_out, r * K);
}

// c_out x K -> r x (c_out*K): flatten row-major, then repeat the row r times.
template <typename T>
Matrix<T> repeat_r2(const Matrix<T>& a1, const ConvShape& shape, std::size_t rank) {
    const auto K = static_cast<Eigen::Index>(shape.kernel_area());
    const auto c_out = static_cast<Eigen::Index>(shape.c_out);
    if (a1.rows() != c_out || a1.cols() != K) throw ShapeError("repeat_r2: expected c_out x K");
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> row(a1.data(), c_out * K);
    return row.replicate(static_cast<Eigen::Index>(rank), 1);
}

// ---- conv modulator --------------------------------------------------------

template <typename T>
void LeftConvModulator<T>::validate() const {
    shape.validate();
    if (rank == 0) throw ShapeError("rank must be >= 1");
    const auto r = static_cast<Eigen::Index>(rank);
    const auto K = static_cast<Eigen::Index>(shape.kernel_area());
    const auto co = static_cast<Eigen::Index>(shape.c_out);
    const auto ci = static_cast<Eigen::Index>(shape.c_in);
    auto check = [](const Matrix<T>& m, Eigen::Index rows, Eigen::Index cols, const char* name) {
        if (m.rows() != rows || m.cols() != cols) {
            throw ShapeError(std::string("conv modulator factor ") + name + " has wrong dimensions");
        }
    };
    check(m1_out, co, r, "m1_out");
    check(m1_inst, r, r * K, "m1_inst");
    check(m2_in, ci, r, "m2_in");
    if (with_bias) {
        check(a1_out, co, r, "a1_out");
        check(a1_inst, r, K, "a1_inst");
    } else if (a1_out.size() != 0 || a1_inst.size() != 0) {
        throw ShapeError("conv modulator without bias must not carry a1 factors");
    }
    check(a2_in, ci, r, "a2_in");
    check(a2_inst, r, K, "a2_inst");
}

inline std::size_t conv_param_count(const ConvShape& s, std::size_t r, bool with_bias) {
    const std::size_t K = s.kernel_area();
    const std::size_t gamma = s.c_out * r + r * r * K + s.c_in * r;
    const std::size_t beta = s.c_in * r + r * K;
    const std::size_t bias = with_bias ? s.c_out * r + r * K : 0;
    return gamma + beta + bias;
}

inline std::size_t fc_param_count(const FcShape& s, std::size_t r) {
    return 2 * (s.d_out * r + r * s.d_in) + 2 * s.d_out;
}

template <typename T>
std::size_t LeftConvModulator<T>::param_count() const {
    return conv_param_count(shape, rank, with_bias);
}

// Pre-activation intermediate R1(M1) + R2(A1), r x (c_out*K).
template <typename T>
Matrix<T> gamma_preactivation(const LeftConvModulator<T>& mod) {
    Matrix<T> m1 = mod.m1_out * mod.m1_inst;
    Matrix<T> pre = reshape_r1(m1, mod.shape, mod.rank);
    if (mod.with_bias) {
        Matrix<T> a1 = mod.a1_out * mod.a1_inst;
        pre += repeat_r2(a1, mod.shape, mod.rank);
    }
    return pre;
}

// Gamma[o,i,u,v] = M2[i, o*K + u*k + v].
template <typename T>
ConvWeight<T> reconstruct_gamma_conv(const LeftConvModulator<T>& mod) {
    mod.validate();
    Matrix<T> m1p = gamma_preactivation(mod).unaryExpr([&](T x) { return activate(mod.act, x); });
    Matrix<T> m2 = mod.m2_in * m1p;  // c_in x (c_out*K)
    const ConvShape& s = mod.shape;
    const std::size_t K = s.kernel_area();
    ConvWeight<T> gamma(s);
    for (std::size_t o = 0; o < s.c_out; ++o) {
        for (std::size_t i = 0; i < s.c_in; ++i) {
            T* dst = gamma.data.data() + (o * s.c_in + i) * K;
            const T* src = m2.data() + i * m2.cols() + o * K;
            std::copy(src, src + K, dst);
        }
    }
    return gamma;
}

// Beta[o,i,u,v] = A2[i, u*k + v] for every o.
template <typename T>
ConvWeight<T> reconstruct_beta_conv(const LeftConvModulator<T>& mod) {
    mod.validate();
    Matrix<T> a2 = mod.a2_in * mod.a2_inst;  // c_in x K
    const ConvShape& s = mod.shape;
    const std::size_t block = s.c_in * s.kernel_area();
    ConvWeight<T> beta(s);
    for (std::size_t o = 0; o < s.c_out; ++o) std::copy(a2.data(), a2.data() + block, beta.data.data() + o * block);
    return beta;
}

template <typename T>
ConvWeight<T> modulate(const ConvWeight<T>& w, const ConvWeight<T>& gamma, const ConvWeight<T>& beta) {
    if (!(w.shape == gamma.shape) || !(w.shape == beta.shape)) throw ShapeError("modulate: shape mismatch");
    ConvWeight<T> out(w.shape);
    for (std::size_t j = 0; j < w.data.size(); ++j) out.data[j] = w.data[j] * gamma.data[j] + beta.data[j];
    return out;
}

template <typename T>
ConvWeight<T> modulate_conv(const ConvWeight<T>& w, const LeftConvModulator<T>& mod) {
    if (!(w.shape == mod.shape)) throw ShapeError("modulate_conv: weight shape differs from modulator shape");
    return modulate(w, reconstruct_gamma_conv(mod), reconstruct_beta_conv(mod));
}

// Accumulates factor gradients given dL/dGamma and dL/dBeta.
template <typename T>
void reconstruct_conv_backward(const LeftConvModulator<T>& mod, const ConvWeight<T>& d_gamma,
                               const ConvWeight<T>& d_beta, LeftConvModulator<T>& grad) {
    const ConvShape& s = mod.shape;
    const std::size_t K = s.kernel_area();
    const auto co = static_cast<Eigen::Index>(s.c_out);
    const auto ci = static_cast<Eigen::Index>(s.c_in);
    const auto Ki = static_cast<Eigen::Index>(K);

    // Beta path.
    Matrix<T> d_a2 = Matrix<T>::Zero(ci, Ki);
    for (std::size_t o = 0; o < s.c_out; ++o) {
        d_a2 += Eigen::Map<const Matrix<T>>(d_beta.data.data() + o * s.c_in * K, ci, Ki);
    }
    grad.a2_in += d_a2 * mod.a2_inst.transpose();
    grad.a2_inst += mod.a2_in.transpose() * d_a2;

    // Gamma path.
    Matrix<T> pre = gamma_preactivation(mod);
    Matrix<T> m1p = pre.unaryExpr([&](T x) { return activate(mod.act, x); });
    Matrix<T> d_m2(ci, co * Ki);
    for (std::size_t o = 0; o < s.c_out; ++o) {
        for (std::size_t i = 0; i < s.c_in; ++i) {
            const T* src = d_gamma.data.data() + (o * s.c_in + i) * K;
            std::copy(src, src + K, d_m2.data() + i * d_m2.cols() + o * K);
        }
    }
    grad.m2_in += d_m2 * m1p.transpose();
    Matrix<T> d_pre = (mod.m2_in.transpose() * d_m2).cwiseProduct(
        pre.unaryExpr([&](T x) { return activate_grad(mod.act, x); }));
    if (mod.with_bias) {
        Eigen::Matrix<T, 1, Eigen::Dynamic> col_sum = d_pre.colwise().sum();
        Eigen::Map<const Matrix<T>> d_a1(col_sum.data(), co, Ki);
        grad.a1_out += d_a1 * mod.a1_inst.transpose();
        grad.a1_inst += mod.a1_out.transpose() * d_a1;
    }
    Matrix<T> d_m1 = reshape_r1_inverse(d_pre, s, mod.rank);
    grad.m1_out += d_m1 * mod.m1_inst.transpose();
    grad.m1_inst += mod.m1_out.transpose() * d_m1;
}

// Backward of modulate_conv: accumulates factor gradients from dL/dW_hat.
template <typename T>
void modulate_conv_backward(const ConvWeight<T>& w, const LeftConvModulator<T>& mod, const ConvWeight<T>& d_what,
                            LeftConvModulator<T>& grad) {
    ConvWeight<T> d_gamma(w.shape);
    for (std::size_t j = 0; j < w.data.size(); ++j) d_gamma.data[j] = d_what.data[j] * w.data[j];
    reconstruct_conv_backward(mod, d_gamma, d_what, grad);
}

// ---- fc modulator ----------------------------------------------------------

template <typename T>
void LeftFcModulator<T>::validate() const {
    shape.validate();
    if (rank == 0) throw ShapeError("rank must be >= 1");
    const auto r = static_cast<Eigen::Index>(rank);
    const auto dout = static_cast<Eigen::Index>(shape.d_out);
    const auto din = static_cast<Eigen::Index>(shape.d_in);
    auto check = [](const Matrix<T>& m, Eigen::Index rows, Eigen::Index cols, const char* name) {
        if (m.rows() != rows || m.cols() != cols) {
            throw ShapeError(std::string("fc modulator factor ") + name + " has wrong dimensions");
        }
    };
    check(m_out, dout, r, "m_out");
    check(m_in, r, din, "m_in");
    check(a_out, dout, r, "a_out");
    check(a_in, r, din, "a_in");
    check(gamma_b, dout, 1, "gamma_b");
    check(beta_b, dout, 1, "beta_b");
}

template <typename T>
std::size_t LeftFcModulator<T>::param_count() const {
    return fc_param_count(shape, rank);
}

template <typename T>
FcReconstruction<T> reconstruct_fc(const LeftFcModulator<T>& mod) {
    mod.validate();
    return {mod.m_out * mod.m_in, mod.a_out * mod.a_in, mod.gamma_b, mod.beta_b};
}

template <typename T>
struct FcParams {
    Matrix<T> weight;  // d_out x d_in
    Matrix<T> bias;    // d_out x 1
};

template <typename T>
FcParams<T> modulate_fc(const Matrix<T>& w, const Matrix<T>& b, const LeftFcModulator<T>& mod) {
    if (w.rows() != static_cast<Eigen::Index>(mod.shape.d_out) || w.cols() != static_cast<Eigen::Index>(mod.shape.d_in) ||
        b.rows() != w.rows() || b.cols() != 1) {
        throw ShapeError("modulate_fc: weight/bias shape differs from modulator shape");
    }
    FcReconstruction<T> rec = reconstruct_fc(mod);
    return {w.cwiseProduct(rec.gamma_w) + rec.beta_w, b.cwiseProduct(rec.gamma_b) + rec.beta_b};
}

template <typename T>
void modulate_fc_backward(const Matrix<T>& w, const Matrix<T>& b, const LeftFcModulator<T>& mod,
                          const Matrix<T>& d_what, const Matrix<T>& d_bhat, LeftFcModulator<T>& grad) {
    Matrix<T> d_gamma_w = d_what.cwiseProduct(w);
    grad.m_out += d_gamma_w * mod.m_in.transpose();
    grad.m_in += mod.m_out.transpose() * d_gamma_w;
    grad.a_out += d_what * mod.a_in.transpose();
    grad.a_in += mod.a_out.transpose() * d_what;
    grad.gamma_b += d_bhat.cwiseProduct(b);
    grad.beta_b += d_bhat;
}

// ---- initialization --------------------------------------------------------

inline constexpr double kInitNoiseStd = 0.01;

// Factors such that Gamma == 1 and Beta == 0. The additive paths keep one
// factor at zero and the other at small noise so gradients reach both.
template <typename T>
LeftConvModulator<T> init_identity_conv(const ConvShape& shape, std::size_t rank, bool with_bias, ActivationKind act,
                                        std::mt19937_64& rng) {
    shape.validate();
    if (rank == 0) throw ShapeError("rank must be >= 1");
    const auto r = static_cast<Eigen::Index>(rank);
    const auto K = static_cast<Eigen::Index>(shape.kernel_area());
    const auto co = static_cast<Eigen::Index>(shape.c_out);
    const auto ci = static_cast<Eigen::Index>(shape.c_in);
    std::normal_distribution<double> noise(0.0, kInitNoiseStd);
    auto noisy = [&](Eigen::Index rows, Eigen::Index cols) {
        Matrix<T> m(rows, cols);
        for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = static_cast<T>(noise(rng));
        return m;
    };

    LeftConvModulator<T> mod;
    mod.shape = shape;
    mod.rank = rank;
    mod.act = act;
    mod.with_bias = with_bias;
    mod.m1_out = Matrix<T>::Ones(co, r);
    mod.m1_inst = Matrix<T>::Constant(r, r * K, T(1) / static_cast<T>(rank));
    const T post = activate(act, T(1));
    mod.m2_in = Matrix<T>::Constant(ci, r, T(1) / (static_cast<T>(rank) * post));
    if (with_bias) {
        mod.a1_out = Matrix<T>::Zero(co, r);
        mod.a1_inst = noisy(r, K);
    }
    mod.a2_in = Matrix<T>::Zero(ci, r);
    mod.a2_inst = noisy(r, K);
    return mod;
}

template <typename T>
LeftFcModulator<T> init_identity_fc(const FcShape& shape, std::size_t rank, std::mt19937_64& rng) {
    shape.validate();
    if (rank == 0) throw ShapeError("rank must be >= 1");
    const auto r = static_cast<Eigen::Index>(rank);
    const auto dout = static_cast<Eigen::Index>(shape.d_out);
    const auto din = static_cast<Eigen::Index>(shape.d_in);
    std::normal_distribution<double> noise(0.0, kInitNoiseStd);

    LeftFcModulator<T> mod;
    mod.shape = shape;
    mod.rank = rank;
    mod.m_out = Matrix<T>::Ones(dout, r);
    mod.m_in = Matrix<T>::Constant(r, din, T(1) / static_cast<T>(rank));
    mod.a_out = Matrix<T>::Zero(dout, r);
    mod.a_in = Matrix<T>(r, din);
    for (Eigen::Index j = 0; j < mod.a_in.size(); ++j) mod.a_in.data()[j] = static_cast<T>(noise(rng));
    mod.gamma_b = Matrix<T>::Ones(dout, 1);
    mod.beta_b = Matrix<T>::Zero(dout, 1);
    return mod;
}

// Same-shaped all-zero factors, used as gradient accumulators.
template <typename T>
LeftConvModulator<T> zeros_like(const LeftConvModulator<T>& mod) {
    LeftConvModulator<T> z = mod;
    z.for_each_factor([](const char*, Matrix<T>& m) { m.setZero(); });
    return z;
}

template <typename T>
LeftFcModulator<T> zeros_like(const LeftFcModulator<T>& mod) {
    LeftFcModulator<T> z = mod;
    z.for_each_factor([](const char*, Matrix<T>& m) { m.setZero(); });
    return z;
}

// ---- parameter accounting --------------------------------------------------

using LayerShape = std::variant<ConvShape, FcShape>;

struct LayerBudget {
    std::string name;
    std::size_t count = 0;
};

struct ParamBudget {
    std::size_t total = 0;
    std::vector<LayerBudget> layers;
};

struct NamedLayerShape {
    std::string name;
    LayerShape shape;
};

ParamBudget param_count(std::span<const NamedLayerShape> layers, std::size_t rank, bool with_bias);

}  // namespace lfs
