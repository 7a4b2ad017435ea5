// Copyright (c) 2026, The lfs-gan authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstring>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lfs/left.hpp"

namespace lfs {

template <typename T>
using LayerModulator = std::variant<LeftConvModulator<T>, LeftFcModulator<T>>;

// All trainable state of one task: one modulator per modulated generator layer.
template <typename T>
struct ModulatorSet {
    std::string task_id;
    std::size_t rank = 1;
    bool with_bias = true;
    ActivationKind act = ActivationKind::ReLU;
    std::map<std::string, LayerModulator<T>> layers;

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& [name, mod] : layers) n += std::visit([](const auto& m) { return m.param_count(); }, mod);
        return n;
    }

    // Every factor matrix in a fixed order (layer name order, then factor order).
    std::vector<Matrix<T>*> factors() {
        std::vector<Matrix<T>*> out;
        for (auto& [name, mod] : layers) {
            std::visit([&](auto& m) { m.for_each_factor([&](const char*, Matrix<T>& f) { out.push_back(&f); }); },
                       mod);
        }
        return out;
    }
    std::vector<const Matrix<T>*> factors() const {
        std::vector<const Matrix<T>*> out;
        for (const auto& [name, mod] : layers) {
            std::visit(
                [&](const auto& m) { m.for_each_factor([&](const char*, const Matrix<T>& f) { out.push_back(&f); }); },
                mod);
        }
        return out;
    }

    template <typename U>
    ModulatorSet<U> cast() const {
        ModulatorSet<U> out;
        out.task_id = task_id;
        out.rank = rank;
        out.with_bias = with_bias;
        out.act = act;
        for (const auto& [name, mod] : layers) {
            std::visit(
                [&](const auto& m) {
                    using M = std::decay_t<decltype(m)>;
                    if constexpr (std::is_same_v<M, LeftConvModulator<T>>) {
                        LeftConvModulator<U> c;
                        c.shape = m.shape;
                        c.rank = m.rank;
                        c.act = m.act;
                        c.with_bias = m.with_bias;
                        c.m1_out = m.m1_out.template cast<U>();
                        c.m1_inst = m.m1_inst.template cast<U>();
                        c.m2_in = m.m2_in.template cast<U>();
                        c.a1_out = m.a1_out.template cast<U>();
                        c.a1_inst = m.a1_inst.template cast<U>();
                        c.a2_in = m.a2_in.template cast<U>();
                        c.a2_inst = m.a2_inst.template cast<U>();
                        out.layers.emplace(name, std::move(c));
                    } else {
                        LeftFcModulator<U> f;
                        f.shape = m.shape;
                        f.rank = m.rank;
                        f.m_out = m.m_out.template cast<U>();
                        f.m_in = m.m_in.template cast<U>();
                        f.a_out = m.a_out.template cast<U>();
                        f.a_in = m.a_in.template cast<U>();
                        f.gamma_b = m.gamma_b.template cast<U>();
                        f.beta_b = m.beta_b.template cast<U>();
                        out.layers.emplace(name, std::move(f));
                    }
                },
                mod);
        }
        return out;
    }
};

template <typename T>
ModulatorSet<T> zeros_like(const ModulatorSet<T>& set) {
    ModulatorSet<T> z = set;
    for (Matrix<T>* m : z.factors()) m->setZero();
    return z;
}

// Bitwise equality of every factor and of the header fields.
template <typename T>
bool identical(const ModulatorSet<T>& a, const ModulatorSet<T>& b) {
    if (a.task_id != b.task_id || a.rank != b.rank || a.with_bias != b.with_bias || a.act != b.act) return false;
    if (a.layers.size() != b.layers.size()) return false;
    for (auto ia = a.layers.begin(), ib = b.layers.begin(); ia != a.layers.end(); ++ia, ++ib) {
        if (ia->first != ib->first || ia->second.index() != ib->second.index()) return false;
    }
    auto fa = a.factors();
    auto fb = b.factors();
    for (std::size_t j = 0; j < fa.size(); ++j) {
        if (fa[j]->rows() != fb[j]->rows() || fa[j]->cols() != fb[j]->cols()) return false;
        if (std::memcmp(fa[j]->data(), fb[j]->data(), sizeof(T) * static_cast<std::size_t>(fa[j]->size())) != 0) {
            return false;
        }
    }
    return true;
}

}  // namespace lfs
