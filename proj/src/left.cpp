// Copyright (c) 2026, The lfs-gan authors
// SPDX-License-Identifier: Apache-2.0
//

#include "lfs/left.hpp"

#include <algorithm>
#include <cctype>

namespace lfs {

std::string_view activation_name(ActivationKind act) {
    switch (act) {
    case ActivationKind::Identity: return "identity";
    case ActivationKind::Sigmoid: return "sigmoid";
    case ActivationKind::Tanh: return "tanh";
    case ActivationKind::LeakyReLU: return "leaky_relu";
    case ActivationKind::GELU: return "gelu";
    case ActivationKind::SiLU: return "silu";
    case ActivationKind::ReLU: return "relu";
    }
    return "unknown";
}

ActivationKind parse_activation(std::string_view name) {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    for (ActivationKind act : kAllActivations) {
        if (activation_name(act) == lower) return act;
    }
    if (lower == "none") return ActivationKind::Identity;
    if (lower == "lrelu" || lower == "leakyrelu") return ActivationKind::LeakyReLU;
    throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

ActivationKind activation_from_id(std::uint8_t id) {
    if (id > static_cast<std::uint8_t>(ActivationKind::ReLU)) {
        throw std::invalid_argument("activation id " + std::to_string(id) + " out of range");
    }
    return static_cast<ActivationKind>(id);
}

ParamBudget param_count(std::span<const NamedLayerShape> layers, std::size_t rank, bool with_bias) {
    ParamBudget budget;
    budget.layers.reserve(layers.size());
    for (const auto& layer : layers) {
        std::size_t n = std::visit(
            [&](const auto& s) -> std::size_t {
                using S = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<S, ConvShape>) {
                    return conv_param_count(s, rank, with_bias);
                } else {
                    return fc_param_count(s, rank);
                }
            },
            layer.shape);
        budget.layers.push_back({layer.name, n});
        budget.total += n;
    }
    return budget;
}

}  // namespace lfs
