// Copyright (c) 2026, The lfs-gan authors
// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale style-based generator and a plain conv discriminator, both with
// hand-written batched reverse-mode passes. Activations are kept channel-major
// over the whole batch: a C x (N*H*W) matrix, column index n*H*W + y*W + x.

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "lfs/left.hpp"
#include "lfs/modulator_set.hpp"

namespace lfs {

class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

struct GeneratorConfig {
    std::size_t z_dim = 64;
    std::size_t w_dim = 64;
    std::size_t mapping_layers = 3;
    std::size_t base_resolution = 4;
    std::size_t target_resolution = 32;
    std::size_t const_channels = 128;
    std::vector<std::size_t> channels{128, 64, 32};
    bool noise_injection = false;
    // Style affine layers are frozen unless this is set.
    bool modulate_affine = false;

    std::size_t block_count() const;
    std::size_t resolution_of_block(std::size_t block) const { return base_resolution << (block + 1); }
    void validate() const;
};

struct DiscriminatorConfig {
    std::size_t resolution = 32;
    std::vector<std::size_t> channels{32, 64, 128, 128};
    // Reserved for a patch discriminator; only the single-logit head exists.
    bool patch_output = false;

    void validate() const;
};

template <typename T>
struct DenseLayer {
    Matrix<T> weight;  // d_out x d_in
    Matrix<T> bias;    // d_out x 1
};

template <typename T>
struct ConvLayer {
    ConvWeight<T> weight;
    std::vector<T> bias;
};

template <typename T>
struct SynthesisBlock {
    ConvLayer<T> conv;
    DenseLayer<T> affine;  // w_dim -> c_out per-channel scales
    T noise_strength = T(0);
};

// Frozen base generator parameters.
template <typename T>
struct GeneratorWeights {
    GeneratorConfig config;
    std::vector<DenseLayer<T>> mapping;
    std::vector<T> const_input;  // const_channels x base x base
    std::vector<SynthesisBlock<T>> blocks;
    ConvLayer<T> to_rgb;

    static GeneratorWeights init(const GeneratorConfig& cfg, std::uint64_t seed);

    std::size_t param_count() const;
    // Flat little-endian float32 serialization used for hashing and storage.
    std::vector<std::uint8_t> serialize() const;
    static GeneratorWeights deserialize(std::span<const std::uint8_t> bytes);

    template <typename U>
    GeneratorWeights<U> cast() const;
};

// Layer names and shapes of every modulated layer, in forward order.
std::vector<NamedLayerShape> modulated_layers(const GeneratorConfig& cfg);

template <typename T>
ModulatorSet<T> init_identity_set(const GeneratorConfig& cfg, const std::string& task_id, std::size_t rank,
                                  bool with_bias, ActivationKind act, std::uint64_t seed);

// Activations of one sample, in double precision for loss computation.
struct ForwardRecord {
    std::vector<double> z;
    std::vector<double> w;
    std::vector<std::vector<double>> features;  // per synthesis block, C x H x W
    std::vector<double> image;                  // 3 x R x R
    std::size_t resolution = 0;
};

template <typename T>
struct Activation {
    Matrix<T> value;  // C x (N*H*W)
    std::size_t n = 0;
    std::size_t h = 0;
    std::size_t w = 0;
};

// Weights after applying modulators: what the forward pass actually uses.
template <typename T>
struct EffectiveWeights {
    std::vector<DenseLayer<T>> mapping;
    std::vector<ConvWeight<T>> conv;
    std::vector<DenseLayer<T>> affine;
    ConvWeight<T> to_rgb;
};

template <typename T>
struct GeneratorCache {
    std::size_t n = 0;
    Matrix<T> z;                       // n x z_dim (raw latents)
    std::vector<Matrix<T>> map_inputs;  // per mapping layer, n x d_in
    std::vector<Matrix<T>> map_pre;     // per mapping layer, n x d_out
    Matrix<T> w;                        // n x w_dim
    std::vector<Matrix<T>> cols;        // per block, 3x3 im2col of the low-res input
    std::vector<Matrix<T>> conv_out;    // per block, C x (n*HW)
    std::vector<Matrix<T>> styles;      // per block, n x C
    std::vector<Matrix<T>> pre_act;     // per block
    std::vector<Activation<T>> features;
    Activation<T> image;
};

// Upstream gradients into a forward pass. Empty members mean zero.
template <typename T>
struct GeneratorUpstream {
    Matrix<T> d_w;                      // n x w_dim
    std::vector<Matrix<T>> d_features;  // per block, C x (n*HW)
    Matrix<T> d_image;                  // 3 x (n*HW)
};

template <typename T>
struct EffectiveGrads {
    std::vector<DenseLayer<T>> mapping;
    std::vector<ConvWeight<T>> conv;
    std::vector<DenseLayer<T>> affine;
    ConvWeight<T> to_rgb;
};

template <typename T>
class Generator {
public:
    explicit Generator(GeneratorWeights<T> base);

    const GeneratorConfig& config() const { return base_.config; }
    const GeneratorWeights<T>& base() const { return base_; }

    // Validates that mods covers exactly the modulated layers with matching shapes.
    void check_modulators(const ModulatorSet<T>& mods) const;

    EffectiveWeights<T> effective(const ModulatorSet<T>* mods) const;

    // z is n x z_dim. noise_rng is only consulted when noise injection is on.
    GeneratorCache<T> forward(const EffectiveWeights<T>& eff, const Matrix<T>& z,
                              std::mt19937_64* noise_rng = nullptr) const;

    ForwardRecord record(const GeneratorCache<T>& cache, std::size_t i) const;
    std::vector<ForwardRecord> records(const GeneratorCache<T>& cache) const;

    EffectiveGrads<T> backward(const EffectiveWeights<T>& eff, const GeneratorCache<T>& cache,
                               const GeneratorUpstream<T>& upstream) const;

    // Chains effective-weight gradients into modulator factor gradients.
    // Only the named layers are filled; all others stay zero. A name that
    // refers to a frozen base parameter ("base." prefix) or to a layer
    // without a modulator violates the training contract.
    ModulatorSet<T> modulator_grads(const ModulatorSet<T>& mods, const EffectiveGrads<T>& grads,
                                    std::span<const std::string> requested = {}) const;

private:
    GeneratorWeights<T> base_;
};

// Samples n latents from N(0, I) with a seeded stream.
template <typename T>
Matrix<T> sample_latents(std::size_t n, std::size_t z_dim, std::mt19937_64& rng);

// Convenience: full forward of n latents, returning one record per latent.
template <typename T>
std::vector<ForwardRecord> generator_forward(const Generator<T>& gen, const std::type_identity_t<ModulatorSet<T>>* mods,
                                             const Matrix<T>& z);

// ---- discriminator ---------------------------------------------------------

template <typename T>
struct DiscriminatorWeights {
    DiscriminatorConfig config;
    std::vector<ConvLayer<T>> blocks;
    DenseLayer<T> head;  // 1 x (C_last * r * r)

    static DiscriminatorWeights init(const DiscriminatorConfig& cfg, std::uint64_t seed);
    template <typename U>
    DiscriminatorWeights<U> cast() const;
};

template <typename T>
struct DiscriminatorCache {
    std::size_t n = 0;
    std::vector<Matrix<T>> cols;
    std::vector<Matrix<T>> pre_act;
    std::vector<std::size_t> res;  // input resolution per block
    Matrix<T> flat;                // n x features
    Matrix<T> logits;              // n x 1
};

template <typename T>
struct DiscriminatorGrads {
    DiscriminatorWeights<T> weights;  // same layout, holds gradients
    Matrix<T> d_input;                // 3 x (n*HW)
};

template <typename T>
class Discriminator {
public:
    explicit Discriminator(DiscriminatorWeights<T> weights) : weights_(std::move(weights)) {}

    const DiscriminatorWeights<T>& weights() const { return weights_; }
    DiscriminatorWeights<T>& weights() { return weights_; }

    // images is 3 x (n*R*R); returns n logits.
    std::vector<T> forward(const Activation<T>& images, DiscriminatorCache<T>* cache = nullptr) const;
    DiscriminatorGrads<T> backward(const DiscriminatorCache<T>& cache, std::span<const T> d_logits,
                                   bool want_weight_grads = true) const;

private:
    DiscriminatorWeights<T> weights_;
};

// Packs CHW sample images (each 3 x R x R) into a batch activation.
template <typename T>
Activation<T> pack_images(std::span<const std::vector<double>> images, std::size_t resolution);
template <typename T>
Activation<T> pack_images(std::span<const std::vector<float>> images, std::size_t resolution);

// Adam over an arbitrary list of flat parameter buffers.
template <typename T>
class Adam {
public:
    Adam(double lr, double beta1, double beta2, double eps = 1e-8) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(const std::vector<std::span<T>>& params, const std::vector<std::span<const T>>& grads);
    std::size_t steps() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

template <typename T>
std::vector<std::span<T>> parameter_spans(ModulatorSet<T>& set);
template <typename T>
std::vector<std::span<const T>> parameter_spans(const ModulatorSet<T>& set);
template <typename T>
std::vector<std::span<T>> parameter_spans(DiscriminatorWeights<T>& w);

}  // namespace lfs
