// Copyright (c) 2026, The lfs-gan authors
// SPDX-License-Identifier: Apache-2.0
//

#include "lfs/netlab.hpp"

#include "lfs/conv_ops.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

namespace lfs {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

namespace {

using namespace ops;

std::vector<double> normal_vector(std::size_t n, double std, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

DenseLayer<double> init_dense(std::size_t d_out, std::size_t d_in, double std, double bias, std::mt19937_64& rng) {
    DenseLayer<double> layer;
    layer.weight.resize(static_cast<Eigen::Index>(d_out), static_cast<Eigen::Index>(d_in));
    auto v = normal_vector(d_out * d_in, std, rng);
    std::copy(v.begin(), v.end(), layer.weight.data());
    layer.bias = Matrix<double>::Constant(static_cast<Eigen::Index>(d_out), 1, bias);
    return layer;
}

ConvLayer<double> init_conv(ConvShape shape, double std, std::mt19937_64& rng) {
    ConvLayer<double> layer;
    layer.weight = ConvWeight<double>(shape);
    layer.weight.data = normal_vector(shape.numel(), std, rng);
    layer.bias.assign(shape.c_out, 0.0);
    return layer;
}

template <typename U, typename T>
DenseLayer<U> cast_dense(const DenseLayer<T>& l) {
    return {l.weight.template cast<U>(), l.bias.template cast<U>()};
}

template <typename U, typename T>
ConvWeight<U> cast_conv_weight(const ConvWeight<T>& w) {
    ConvWeight<U> out(w.shape);
    std::transform(w.data.begin(), w.data.end(), out.data.begin(), [](T x) { return static_cast<U>(x); });
    return out;
}

template <typename U, typename T>
ConvLayer<U> cast_conv(const ConvLayer<T>& l) {
    ConvLayer<U> out;
    out.weight = cast_conv_weight<U>(l.weight);
    out.bias.assign(l.bias.begin(), l.bias.end());
    return out;
}

// ---- byte streams ----------------------------------------------------------

class ByteWriter {
public:
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void f32(float v) { raw(&v, sizeof v); }
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }
    template <typename T>
    void floats(const T* p, std::size_t n) {
        for (std::size_t j = 0; j < n; ++j) f32(static_cast<float>(p[j]));
    }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> b) : bytes_(b) {}
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, sizeof v);
        return v;
    }
    float f32() {
        float v;
        raw(&v, sizeof v);
        return v;
    }
    void raw(void* p, std::size_t n) {
        if (pos_ + n > bytes_.size()) throw std::runtime_error("base weights: truncated data");
        std::memcpy(p, bytes_.data() + pos_, n);
        pos_ += n;
    }
    template <typename T>
    void floats(T* p, std::size_t n) {
        for (std::size_t j = 0; j < n; ++j) p[j] = static_cast<T>(f32());
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

constexpr char kBaseMagic[4] = {'L', 'F', 'S', 'B'};
constexpr std::uint32_t kBaseVersion = 1;

}  // namespace

// ---- configs ---------------------------------------------------------------

std::size_t GeneratorConfig::block_count() const {
    std::size_t blocks = 0;
    for (std::size_t r = base_resolution; r < target_resolution; r *= 2) ++blocks;
    return blocks;
}

void GeneratorConfig::validate() const {
    if (z_dim == 0 || w_dim == 0) throw std::invalid_argument("generator: latent sizes must be >= 1");
    if (mapping_layers == 0) throw std::invalid_argument("generator: mapping_layers must be >= 1");
    if (target_resolution != 16 && target_resolution != 32 && target_resolution != 64) {
        throw std::invalid_argument("generator: target_resolution must be 16, 32 or 64");
    }
    if (base_resolution == 0 || !std::has_single_bit(base_resolution) || base_resolution >= target_resolution) {
        throw std::invalid_argument("generator: base_resolution must be a power of two below the target");
    }
    if (const_channels == 0) throw std::invalid_argument("generator: const_channels must be >= 1");
    if (channels.size() != block_count()) {
        throw std::invalid_argument("generator: need " + std::to_string(block_count()) +
                                    " channel widths for the configured resolutions");
    }
    for (std::size_t c : channels) {
        if (c == 0) throw std::invalid_argument("generator: channel widths must be >= 1");
    }
}

void DiscriminatorConfig::validate() const {
    if (channels.empty()) throw std::invalid_argument("discriminator: need at least one block");
    if (patch_output) throw std::invalid_argument("discriminator: patch output is not implemented");
    std::size_t r = resolution;
    for (std::size_t j = 0; j < channels.size(); ++j) {
        if (r < 2 || r % 2 != 0) throw std::invalid_argument("discriminator: resolution too small for block count");
        r /= 2;
    }
}

// ---- generator weights -----------------------------------------------------

template <>
GeneratorWeights<double> GeneratorWeights<double>::init(const GeneratorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    GeneratorWeights<double> g;
    g.config = cfg;
    for (std::size_t j = 0; j < cfg.mapping_layers; ++j) {
        const std::size_t d_in = j == 0 ? cfg.z_dim : cfg.w_dim;
        g.mapping.push_back(init_dense(cfg.w_dim, d_in, std::sqrt(2.0 / static_cast<double>(d_in)), 0.0, rng));
    }
    g.const_input = normal_vector(cfg.const_channels * cfg.base_resolution * cfg.base_resolution, 1.0, rng);
    std::size_t c_in = cfg.const_channels;
    for (std::size_t c_out : cfg.channels) {
        SynthesisBlock<double> b;
        b.conv = init_conv({c_out, c_in, 3}, std::sqrt(2.0 / static_cast<double>(c_in * 9)), rng);
        b.affine = init_dense(c_out, cfg.w_dim, 0.5 / std::sqrt(static_cast<double>(cfg.w_dim)), 1.0, rng);
        b.noise_strength = cfg.noise_injection ? 0.1 : 0.0;
        g.blocks.push_back(std::move(b));
        c_in = c_out;
    }
    g.to_rgb = init_conv({3, c_in, 1}, std::sqrt(1.0 / static_cast<double>(c_in)), rng);
    return g;
}

template <>
GeneratorWeights<float> GeneratorWeights<float>::init(const GeneratorConfig& cfg, std::uint64_t seed) {
    return GeneratorWeights<double>::init(cfg, seed).cast<float>();
}

template <typename T>
template <typename U>
GeneratorWeights<U> GeneratorWeights<T>::cast() const {
    GeneratorWeights<U> g;
    g.config = config;
    for (const auto& l : mapping) g.mapping.push_back(cast_dense<U>(l));
    g.const_input.assign(const_input.begin(), const_input.end());
    for (const auto& b : blocks) {
        SynthesisBlock<U> nb;
        nb.conv = cast_conv<U>(b.conv);
        nb.affine = cast_dense<U>(b.affine);
        nb.noise_strength = static_cast<U>(b.noise_strength);
        g.blocks.push_back(std::move(nb));
    }
    g.to_rgb = cast_conv<U>(to_rgb);
    return g;
}

template <typename T>
std::size_t GeneratorWeights<T>::param_count() const {
    std::size_t n = const_input.size();
    for (const auto& l : mapping) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    for (const auto& b : blocks) {
        n += b.conv.weight.data.size() + b.conv.bias.size();
        n += static_cast<std::size_t>(b.affine.weight.size() + b.affine.bias.size());
        if (config.noise_injection) n += 1;
    }
    n += to_rgb.weight.data.size() + to_rgb.bias.size();
    return n;
}

template <typename T>
std::vector<std::uint8_t> GeneratorWeights<T>::serialize() const {
    ByteWriter out;
    out.raw(kBaseMagic, 4);
    out.u32(kBaseVersion);
    const auto& c = config;
    for (std::size_t v : {c.z_dim, c.w_dim, c.mapping_layers, c.base_resolution, c.target_resolution, c.const_channels,
                          static_cast<std::size_t>(c.noise_injection), static_cast<std::size_t>(c.modulate_affine),
                          c.channels.size()}) {
        out.u32(static_cast<std::uint32_t>(v));
    }
    for (std::size_t ch : c.channels) out.u32(static_cast<std::uint32_t>(ch));
    for (const auto& l : mapping) {
        out.floats(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
        out.floats(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
    out.floats(const_input.data(), const_input.size());
    for (const auto& b : blocks) {
        out.floats(b.conv.weight.data.data(), b.conv.weight.data.size());
        out.floats(b.conv.bias.data(), b.conv.bias.size());
        out.floats(b.affine.weight.data(), static_cast<std::size_t>(b.affine.weight.size()));
        out.floats(b.affine.bias.data(), static_cast<std::size_t>(b.affine.bias.size()));
        out.f32(static_cast<float>(b.noise_strength));
    }
    out.floats(to_rgb.weight.data.data(), to_rgb.weight.data.size());
    out.floats(to_rgb.bias.data(), to_rgb.bias.size());
    return out.take();
}

template <typename T>
GeneratorWeights<T> GeneratorWeights<T>::deserialize(std::span<const std::uint8_t> bytes) {
    ByteReader in(bytes);
    char magic[4];
    in.raw(magic, 4);
    if (std::memcmp(magic, kBaseMagic, 4) != 0) throw std::runtime_error("base weights: bad magic");
    if (in.u32() != kBaseVersion) throw std::runtime_error("base weights: unsupported version");
    GeneratorConfig c;
    c.z_dim = in.u32();
    c.w_dim = in.u32();
    c.mapping_layers = in.u32();
    c.base_resolution = in.u32();
    c.target_resolution = in.u32();
    c.const_channels = in.u32();
    c.noise_injection = in.u32() != 0;
    c.modulate_affine = in.u32() != 0;
    c.channels.resize(in.u32());
    for (auto& ch : c.channels) ch = in.u32();
    c.validate();

    // Allocate with the right shapes, then overwrite every value.
    GeneratorWeights<T> g = GeneratorWeights<double>::init(c, 0).template cast<T>();
    for (auto& l : g.mapping) {
        in.floats(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
        in.floats(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
    in.floats(g.const_input.data(), g.const_input.size());
    for (auto& b : g.blocks) {
        in.floats(b.conv.weight.data.data(), b.conv.weight.data.size());
        in.floats(b.conv.bias.data(), b.conv.bias.size());
        in.floats(b.affine.weight.data(), static_cast<std::size_t>(b.affine.weight.size()));
        in.floats(b.affine.bias.data(), static_cast<std::size_t>(b.affine.bias.size()));
        b.noise_strength = static_cast<T>(in.f32());
    }
    in.floats(g.to_rgb.weight.data.data(), g.to_rgb.weight.data.size());
    in.floats(g.to_rgb.bias.data(), g.to_rgb.bias.size());
    if (!in.done()) throw std::runtime_error("base weights: trailing bytes");
    return g;
}

std::vector<NamedLayerShape> modulated_layers(const GeneratorConfig& cfg) {
    cfg.validate();
    std::vector<NamedLayerShape> layers;
    for (std::size_t j = 0; j < cfg.mapping_layers; ++j) {
        layers.push_back({"mapping." + std::to_string(j), FcShape{cfg.w_dim, j == 0 ? cfg.z_dim : cfg.w_dim}});
    }
    std::size_t c_in = cfg.const_channels;
    for (std::size_t l = 0; l < cfg.channels.size(); ++l) {
        const std::size_t c_out = cfg.channels[l];
        if (cfg.modulate_affine) layers.push_back({"synthesis." + std::to_string(l) + ".affine", FcShape{c_out, cfg.w_dim}});
        layers.push_back({"synthesis." + std::to_string(l) + ".conv", ConvShape{c_out, c_in, 3}});
        c_in = c_out;
    }
    layers.push_back({"to_rgb", ConvShape{3, c_in, 1}});
    return layers;
}

template <typename T>
ModulatorSet<T> init_identity_set(const GeneratorConfig& cfg, const std::string& task_id, std::size_t rank,
                                  bool with_bias, ActivationKind act, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ModulatorSet<T> set;
    set.task_id = task_id;
    set.rank = rank;
    set.with_bias = with_bias;
    set.act = act;
    for (const auto& layer : modulated_layers(cfg)) {
        if (const auto* conv = std::get_if<ConvShape>(&layer.shape)) {
            set.layers.emplace(layer.name, init_identity_conv<T>(*conv, rank, with_bias, act, rng));
        } else {
            set.layers.emplace(layer.name, init_identity_fc<T>(std::get<FcShape>(layer.shape), rank, rng));
        }
    }
    return set;
}

// ---- generator -------------------------------------------------------------

template <typename T>
Generator<T>::Generator(GeneratorWeights<T> base) : base_(std::move(base)) {
    base_.config.validate();
}

template <typename T>
void Generator<T>::check_modulators(const ModulatorSet<T>& mods) const {
    const auto expected = modulated_layers(base_.config);
    if (mods.layers.size() != expected.size()) {
        throw ShapeError("modulator set has " + std::to_string(mods.layers.size()) + " layers, generator expects " +
                         std::to_string(expected.size()));
    }
    for (const auto& layer : expected) {
        auto it = mods.layers.find(layer.name);
        if (it == mods.layers.end()) throw ShapeError("modulator set lacks layer " + layer.name);
        if (const auto* conv = std::get_if<ConvShape>(&layer.shape)) {
            const auto* m = std::get_if<LeftConvModulator<T>>(&it->second);
            if (m == nullptr || !(m->shape == *conv)) throw ShapeError("modulator shape mismatch at " + layer.name);
            m->validate();
        } else {
            const auto* m = std::get_if<LeftFcModulator<T>>(&it->second);
            if (m == nullptr || !(m->shape == std::get<FcShape>(layer.shape))) {
                throw ShapeError("modulator shape mismatch at " + layer.name);
            }
            m->validate();
        }
    }
}

template <typename T>
EffectiveWeights<T> Generator<T>::effective(const ModulatorSet<T>* mods) const {
    if (mods != nullptr) check_modulators(*mods);
    auto fc = [&](const std::string& name, const DenseLayer<T>& base) -> DenseLayer<T> {
        if (mods == nullptr) return base;
        auto it = mods->layers.find(name);
        if (it == mods->layers.end()) return base;
        auto p = modulate_fc(base.weight, base.bias, std::get<LeftFcModulator<T>>(it->second));
        return {std::move(p.weight), std::move(p.bias)};
    };
    auto conv = [&](const std::string& name, const ConvWeight<T>& base) -> ConvWeight<T> {
        if (mods == nullptr) return base;
        return modulate_conv(base, std::get<LeftConvModulator<T>>(mods->layers.at(name)));
    };

    EffectiveWeights<T> eff;
    for (std::size_t j = 0; j < base_.mapping.size(); ++j) eff.mapping.push_back(fc("mapping." + std::to_string(j), base_.mapping[j]));
    for (std::size_t l = 0; l < base_.blocks.size(); ++l) {
        const std::string prefix = "synthesis." + std::to_string(l);
        eff.conv.push_back(conv(prefix + ".conv", base_.blocks[l].conv.weight));
        eff.affine.push_back(fc(prefix + ".affine", base_.blocks[l].affine));
    }
    eff.to_rgb = conv("to_rgb", base_.to_rgb.weight);
    return eff;
}

template <typename T>
GeneratorCache<T> Generator<T>::forward(const EffectiveWeights<T>& eff, const Matrix<T>& z,
                                        std::mt19937_64* noise_rng) const {
    const GeneratorConfig& cfg = base_.config;
    if (static_cast<std::size_t>(z.cols()) != cfg.z_dim) throw ShapeError("generator_forward: latent size mismatch");
    GeneratorCache<T> c;
    c.n = static_cast<std::size_t>(z.rows());
    const auto n = static_cast<Eigen::Index>(c.n);
    c.z = z;

    // Pixel norm, then the mapping MLP.
    Matrix<T> h = z;
    for (Eigen::Index s = 0; s < n; ++s) {
        const T rms = std::sqrt(h.row(s).squaredNorm() / static_cast<T>(cfg.z_dim) + T(1e-8));
        h.row(s) /= rms;
    }
    for (const auto& layer : eff.mapping) {
        c.map_inputs.push_back(h);
        Matrix<T> pre = h * layer.weight.transpose();
        pre.rowwise() += layer.bias.col(0).transpose();
        h = pre.unaryExpr([](T x) { return lrelu(x); });
        c.map_pre.push_back(std::move(pre));
    }
    c.w = h;

    // Synthesis.
    const std::size_t b = cfg.base_resolution;
    Matrix<T> x(static_cast<Eigen::Index>(cfg.const_channels), n * static_cast<Eigen::Index>(b * b));
    for (std::size_t ch = 0; ch < cfg.const_channels; ++ch) {
        for (std::size_t s = 0; s < c.n; ++s) {
            std::copy(base_.const_input.begin() + static_cast<std::ptrdiff_t>(ch * b * b),
                      base_.const_input.begin() + static_cast<std::ptrdiff_t>((ch + 1) * b * b),
                      x.data() + (ch * c.n + s) * b * b);
        }
    }
    std::size_t res = b;
    for (std::size_t l = 0; l < base_.blocks.size(); ++l) {
        const auto& block = base_.blocks[l];
        Matrix<T> cols;
        Matrix<T> y = upsample_conv3x3(x, c.n, res, res, eff.conv[l], cols);
        res *= 2;
        const std::size_t hw = res * res;
        Matrix<T> style = c.w * eff.affine[l].weight.transpose();
        style.rowwise() += eff.affine[l].bias.col(0).transpose();

        Matrix<T> pre(y.rows(), y.cols());
        std::vector<T> noise;
        if (cfg.noise_injection && noise_rng != nullptr) {
            std::normal_distribution<double> nd(0.0, 1.0);
            noise.resize(c.n * hw);
            for (auto& v : noise) v = static_cast<T>(nd(*noise_rng));
        }
        for (Eigen::Index ch = 0; ch < y.rows(); ++ch) {
            const T bias = block.conv.bias[static_cast<std::size_t>(ch)];
            for (std::size_t s = 0; s < c.n; ++s) {
                const T sc = style(static_cast<Eigen::Index>(s), ch);
                const T* src = y.data() + ch * y.cols() + static_cast<Eigen::Index>(s * hw);
                T* dst = pre.data() + ch * pre.cols() + static_cast<Eigen::Index>(s * hw);
                for (std::size_t p = 0; p < hw; ++p) dst[p] = src[p] * sc + bias;
                if (!noise.empty()) {
                    for (std::size_t p = 0; p < hw; ++p) dst[p] += block.noise_strength * noise[s * hw + p];
                }
            }
        }
        x = pre.unaryExpr([](T v) { return lrelu(v); });
        c.cols.push_back(std::move(cols));
        c.conv_out.push_back(std::move(y));
        c.styles.push_back(std::move(style));
        c.pre_act.push_back(std::move(pre));
        c.features.push_back({x, c.n, res, res});
    }

    Matrix<T> img = weight_matrix(eff.to_rgb) * x;
    for (Eigen::Index ch = 0; ch < img.rows(); ++ch) img.row(ch).array() += base_.to_rgb.bias[static_cast<std::size_t>(ch)];
    c.image = {std::move(img), c.n, res, res};
    return c;
}

template <typename T>
ForwardRecord Generator<T>::record(const GeneratorCache<T>& cache, std::size_t i) const {
    if (i >= cache.n) throw std::out_of_range("record index out of range");
    auto sample = [&](const Activation<T>& a) {
        const std::size_t hw = a.h * a.w;
        std::vector<double> out(static_cast<std::size_t>(a.value.rows()) * hw);
        for (Eigen::Index ch = 0; ch < a.value.rows(); ++ch) {
            const T* src = a.value.data() + ch * a.value.cols() + static_cast<Eigen::Index>(i * hw);
            std::copy(src, src + hw, out.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ch) * hw));
        }
        return out;
    };
    ForwardRecord r;
    r.z.assign(cache.z.row(static_cast<Eigen::Index>(i)).begin(), cache.z.row(static_cast<Eigen::Index>(i)).end());
    r.w.assign(cache.w.row(static_cast<Eigen::Index>(i)).begin(), cache.w.row(static_cast<Eigen::Index>(i)).end());
    for (const auto& f : cache.features) r.features.push_back(sample(f));
    r.image = sample(cache.image);
    r.resolution = cache.image.h;
    return r;
}

template <typename T>
std::vector<ForwardRecord> Generator<T>::records(const GeneratorCache<T>& cache) const {
    std::vector<ForwardRecord> out;
    out.reserve(cache.n);
    for (std::size_t i = 0; i < cache.n; ++i) out.push_back(record(cache, i));
    return out;
}

template <typename T>
EffectiveGrads<T> Generator<T>::backward(const EffectiveWeights<T>& eff, const GeneratorCache<T>& c,
                                         const GeneratorUpstream<T>& up) const {
    const GeneratorConfig& cfg = base_.config;
    const auto n = static_cast<Eigen::Index>(c.n);
    const std::size_t L = base_.blocks.size();
    EffectiveGrads<T> g;
    g.conv.resize(L);
    g.affine.resize(L);
    g.mapping.resize(eff.mapping.size());

    Matrix<T> d_w = up.d_w.size() != 0 ? up.d_w : Matrix<T>::Zero(n, static_cast<Eigen::Index>(cfg.w_dim));
    if (d_w.rows() != n || d_w.cols() != static_cast<Eigen::Index>(cfg.w_dim)) throw ShapeError("backward: d_w shape");

    // to_rgb
    const Activation<T>& last = c.features.back();
    Matrix<T> d_x;
    g.to_rgb = ConvWeight<T>(eff.to_rgb.shape);
    if (up.d_image.size() != 0) {
        if (up.d_image.rows() != c.image.value.rows() || up.d_image.cols() != c.image.value.cols()) {
            throw ShapeError("backward: d_image shape");
        }
        weight_matrix(g.to_rgb) = up.d_image * last.value.transpose();
        d_x = weight_matrix(eff.to_rgb).transpose() * up.d_image;
    } else {
        d_x = Matrix<T>::Zero(last.value.rows(), last.value.cols());
    }

    for (std::size_t li = L; li-- > 0;) {
        const Activation<T>& feat = c.features[li];
        const std::size_t hw = feat.h * feat.w;
        if (li < up.d_features.size() && up.d_features[li].size() != 0) {
            if (up.d_features[li].rows() != d_x.rows() || up.d_features[li].cols() != d_x.cols()) {
                throw ShapeError("backward: d_features shape");
            }
            d_x += up.d_features[li];
        }
        const Matrix<T>& pre = c.pre_act[li];
        const Matrix<T>& y = c.conv_out[li];
        const Matrix<T>& style = c.styles[li];
        Matrix<T> d_pre = d_x.cwiseProduct(pre.unaryExpr([](T v) { return lrelu_grad(v); }));
        Matrix<T> d_style(n, y.rows());
        Matrix<T> d_y(y.rows(), y.cols());
        for (Eigen::Index ch = 0; ch < y.rows(); ++ch) {
            for (std::size_t s = 0; s < c.n; ++s) {
                const Eigen::Index off = ch * y.cols() + static_cast<Eigen::Index>(s * hw);
                const T sc = style(static_cast<Eigen::Index>(s), ch);
                T acc = T(0);
                for (std::size_t p = 0; p < hw; ++p) {
                    acc += d_pre.data()[off + static_cast<Eigen::Index>(p)] * y.data()[off + static_cast<Eigen::Index>(p)];
                    d_y.data()[off + static_cast<Eigen::Index>(p)] = d_pre.data()[off + static_cast<Eigen::Index>(p)] * sc;
                }
                d_style(static_cast<Eigen::Index>(s), ch) = acc;
            }
        }
        g.affine[li].weight = d_style.transpose() * c.w;
        g.affine[li].bias = d_style.colwise().sum().transpose();
        d_w += d_style * eff.affine[li].weight;

        upsample_conv3x3_backward(d_y, c.cols[li], c.n, feat.h / 2, feat.w / 2, eff.conv[li], g.conv[li],
                                  li > 0 ? &d_x : nullptr);
    }

    Matrix<T> d_h = std::move(d_w);
    for (std::size_t j = eff.mapping.size(); j-- > 0;) {
        Matrix<T> d_pre = d_h.cwiseProduct(c.map_pre[j].unaryExpr([](T v) { return lrelu_grad(v); }));
        g.mapping[j].weight = d_pre.transpose() * c.map_inputs[j];
        g.mapping[j].bias = d_pre.colwise().sum().transpose();
        if (j > 0) d_h = d_pre * eff.mapping[j].weight;
    }
    return g;
}

template <typename T>
ModulatorSet<T> Generator<T>::modulator_grads(const ModulatorSet<T>& mods, const EffectiveGrads<T>& grads,
                                              std::span<const std::string> requested) const {
    std::vector<std::string> names;
    if (requested.empty()) {
        for (const auto& [name, m] : mods.layers) names.push_back(name);
    } else {
        names.assign(requested.begin(), requested.end());
    }
    ModulatorSet<T> out = zeros_like(mods);
    for (const std::string& name : names) {
        if (name.rfind("base.", 0) == 0) {
            throw ContractError("gradient requested for frozen base parameter '" + name + "'");
        }
        auto it = mods.layers.find(name);
        if (it == mods.layers.end()) throw ContractError("gradient requested for unknown or frozen layer '" + name + "'");
        auto& dst = out.layers.at(name);
        if (name.rfind("mapping.", 0) == 0) {
            const std::size_t j = std::stoul(name.substr(8));
            modulate_fc_backward(base_.mapping[j].weight, base_.mapping[j].bias, std::get<LeftFcModulator<T>>(it->second),
                                 grads.mapping[j].weight, grads.mapping[j].bias, std::get<LeftFcModulator<T>>(dst));
        } else if (name == "to_rgb") {
            modulate_conv_backward(base_.to_rgb.weight, std::get<LeftConvModulator<T>>(it->second), grads.to_rgb,
                                   std::get<LeftConvModulator<T>>(dst));
        } else {
            const std::size_t l = std::stoul(name.substr(10));
            if (name.ends_with(".conv")) {
                modulate_conv_backward(base_.blocks[l].conv.weight, std::get<LeftConvModulator<T>>(it->second),
                                       grads.conv[l], std::get<LeftConvModulator<T>>(dst));
            } else {
                modulate_fc_backward(base_.blocks[l].affine.weight, base_.blocks[l].affine.bias,
                                     std::get<LeftFcModulator<T>>(it->second), grads.affine[l].weight,
                                     grads.affine[l].bias, std::get<LeftFcModulator<T>>(dst));
            }
        }
    }
    return out;
}

template <typename T>
Matrix<T> sample_latents(std::size_t n, std::size_t z_dim, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Matrix<T> z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(z_dim));
    for (Eigen::Index j = 0; j < z.size(); ++j) z.data()[j] = static_cast<T>(nd(rng));
    return z;
}

template <typename T>
std::vector<ForwardRecord> generator_forward(const Generator<T>& gen, const std::type_identity_t<ModulatorSet<T>>* mods,
                                             const Matrix<T>& z) {
    return gen.records(gen.forward(gen.effective(mods), z));
}

// ---- discriminator ---------------------------------------------------------

template <>
DiscriminatorWeights<double> DiscriminatorWeights<double>::init(const DiscriminatorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    DiscriminatorWeights<double> d;
    d.config = cfg;
    std::size_t c_in = 3;
    std::size_t res = cfg.resolution;
    for (std::size_t c_out : cfg.channels) {
        d.blocks.push_back(init_conv({c_out, c_in, 3}, std::sqrt(2.0 / static_cast<double>(c_in * 9)), rng));
        c_in = c_out;
        res /= 2;
    }
    const std::size_t features = c_in * res * res;
    d.head = init_dense(1, features, std::sqrt(1.0 / static_cast<double>(features)), 0.0, rng);
    return d;
}

template <>
DiscriminatorWeights<float> DiscriminatorWeights<float>::init(const DiscriminatorConfig& cfg, std::uint64_t seed) {
    return DiscriminatorWeights<double>::init(cfg, seed).cast<float>();
}

template <typename T>
template <typename U>
DiscriminatorWeights<U> DiscriminatorWeights<T>::cast() const {
    DiscriminatorWeights<U> d;
    d.config = config;
    for (const auto& b : blocks) d.blocks.push_back(cast_conv<U>(b));
    d.head = cast_dense<U>(head);
    return d;
}

template <typename T>
std::vector<T> Discriminator<T>::forward(const Activation<T>& images, DiscriminatorCache<T>* cache) const {
    const auto& cfg = weights_.config;
    if (images.value.rows() != 3 || images.h != cfg.resolution || images.w != cfg.resolution) {
        throw ShapeError("discriminator: expected 3 x " + std::to_string(cfg.resolution) + " x " +
                         std::to_string(cfg.resolution) + " images");
    }
    const std::size_t n = images.n;
    DiscriminatorCache<T> local;
    DiscriminatorCache<T>& c = cache != nullptr ? *cache : local;
    c = DiscriminatorCache<T>{};
    c.n = n;
    Matrix<T> x = images.value;
    std::size_t res = cfg.resolution;
    for (const auto& block : weights_.blocks) {
        Matrix<T> cols = im2col(x, n, res, res, 3);
        Matrix<T> pre = weight_matrix(block.weight) * cols;
        for (Eigen::Index ch = 0; ch < pre.rows(); ++ch) pre.row(ch).array() += block.bias[static_cast<std::size_t>(ch)];
        x = avgpool2(Matrix<T>(pre.unaryExpr([](T v) { return lrelu(v); })), n, res, res);
        c.res.push_back(res);
        if (cache != nullptr) {
            c.cols.push_back(std::move(cols));
            c.pre_act.push_back(std::move(pre));
        }
        res /= 2;
    }
    const std::size_t hw = res * res;
    const auto feat = static_cast<Eigen::Index>(static_cast<std::size_t>(x.rows()) * hw);
    Matrix<T> flat(static_cast<Eigen::Index>(n), feat);
    for (Eigen::Index ch = 0; ch < x.rows(); ++ch) {
        for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t p = 0; p < hw; ++p) {
                flat(static_cast<Eigen::Index>(s), ch * static_cast<Eigen::Index>(hw) + static_cast<Eigen::Index>(p)) =
                    x(ch, static_cast<Eigen::Index>(s * hw + p));
            }
        }
    }
    Matrix<T> logits = flat * weights_.head.weight.transpose();
    logits.array() += weights_.head.bias(0, 0);
    c.flat = std::move(flat);
    c.logits = logits;
    return std::vector<T>(logits.data(), logits.data() + logits.size());
}

template <typename T>
DiscriminatorGrads<T> Discriminator<T>::backward(const DiscriminatorCache<T>& c, std::span<const T> d_logits,
                                                 bool want_weight_grads) const {
    if (d_logits.size() != c.n) throw ShapeError("discriminator backward: logit gradient count mismatch");
    if (c.cols.size() != weights_.blocks.size()) throw ContractError("discriminator backward needs a recorded forward");
    const std::size_t n = c.n;
    DiscriminatorGrads<T> g;
    g.weights.config = weights_.config;
    Eigen::Map<const Matrix<T>> dl(d_logits.data(), static_cast<Eigen::Index>(n), 1);
    if (want_weight_grads) {
        g.weights.head.weight = dl.transpose() * c.flat;
        g.weights.head.bias = Matrix<T>::Constant(1, 1, dl.sum());
    }
    Matrix<T> d_flat = dl * weights_.head.weight;

    const std::size_t last_res = c.res.back() / 2;
    const std::size_t hw = last_res * last_res;
    const auto channels = static_cast<Eigen::Index>(weights_.blocks.back().weight.shape.c_out);
    Matrix<T> d_x(channels, static_cast<Eigen::Index>(n * hw));
    for (Eigen::Index ch = 0; ch < channels; ++ch) {
        for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t p = 0; p < hw; ++p) {
                d_x(ch, static_cast<Eigen::Index>(s * hw + p)) =
                    d_flat(static_cast<Eigen::Index>(s), ch * static_cast<Eigen::Index>(hw) + static_cast<Eigen::Index>(p));
            }
        }
    }

    g.weights.blocks.resize(weights_.blocks.size());
    for (std::size_t l = weights_.blocks.size(); l-- > 0;) {
        const std::size_t res = c.res[l];
        Matrix<T> d_act = avgpool2_backward(d_x, n, res, res);
        Matrix<T> d_pre = d_act.cwiseProduct(c.pre_act[l].unaryExpr([](T v) { return lrelu_grad(v); }));
        const auto& block = weights_.blocks[l];
        if (want_weight_grads) {
            g.weights.blocks[l].weight = ConvWeight<T>(block.weight.shape);
            weight_matrix(g.weights.blocks[l].weight) = d_pre * c.cols[l].transpose();
            Vector<T> db = d_pre.rowwise().sum();
            g.weights.blocks[l].bias.assign(db.data(), db.data() + db.size());
        }
        Matrix<T> d_cols = weight_matrix(block.weight).transpose() * d_pre;
        d_x = col2im(d_cols, block.weight.shape.c_in, n, res, res, 3);
    }
    g.d_input = std::move(d_x);
    return g;
}

template <typename T>
Activation<T> pack_images(std::span<const std::vector<double>> images, std::size_t resolution) {
    const std::size_t hw = resolution * resolution;
    Activation<T> a{Matrix<T>(3, static_cast<Eigen::Index>(images.size() * hw)), images.size(), resolution, resolution};
    for (std::size_t s = 0; s < images.size(); ++s) {
        if (images[s].size() != 3 * hw) throw ShapeError("pack_images: image resolution mismatch");
        for (std::size_t ch = 0; ch < 3; ++ch) {
            for (std::size_t p = 0; p < hw; ++p) {
                a.value(static_cast<Eigen::Index>(ch), static_cast<Eigen::Index>(s * hw + p)) =
                    static_cast<T>(images[s][ch * hw + p]);
            }
        }
    }
    return a;
}

template <typename T>
Activation<T> pack_images(std::span<const std::vector<float>> images, std::size_t resolution) {
    const std::size_t hw = resolution * resolution;
    Activation<T> a{Matrix<T>(3, static_cast<Eigen::Index>(images.size() * hw)), images.size(), resolution, resolution};
    for (std::size_t s = 0; s < images.size(); ++s) {
        if (images[s].size() != 3 * hw) throw ShapeError("pack_images: image resolution mismatch");
        for (std::size_t ch = 0; ch < 3; ++ch) {
            for (std::size_t p = 0; p < hw; ++p) {
                a.value(static_cast<Eigen::Index>(ch), static_cast<Eigen::Index>(s * hw + p)) =
                    static_cast<T>(images[s][ch * hw + p]);
            }
        }
    }
    return a;
}

// ---- optimizer -------------------------------------------------------------

template <typename T>
void Adam<T>::step(const std::vector<std::span<T>>& params, const std::vector<std::span<const T>>& grads) {
    if (params.size() != grads.size()) throw ShapeError("adam: parameter/gradient count mismatch");
    if (m_.empty()) {
        for (const auto& p : params) {
            m_.emplace_back(p.size(), T(0));
            v_.emplace_back(p.size(), T(0));
        }
    }
    if (m_.size() != params.size()) throw ShapeError("adam: parameter list changed between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const T step = static_cast<T>(lr_ * std::sqrt(bc2) / bc1);
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    const T eps = static_cast<T>(eps_ * std::sqrt(bc2));
    for (std::size_t j = 0; j < params.size(); ++j) {
        if (params[j].size() != grads[j].size() || params[j].size() != m_[j].size()) {
            throw ShapeError("adam: parameter size changed between steps");
        }
        for (std::size_t e = 0; e < params[j].size(); ++e) {
            const T g = grads[j][e];
            m_[j][e] = b1 * m_[j][e] + (T(1) - b1) * g;
            v_[j][e] = b2 * v_[j][e] + (T(1) - b2) * g * g;
            params[j][e] -= step * m_[j][e] / (std::sqrt(v_[j][e]) + eps);
        }
    }
}

template <typename T>
std::vector<std::span<T>> parameter_spans(ModulatorSet<T>& set) {
    std::vector<std::span<T>> out;
    for (Matrix<T>* m : set.factors()) out.emplace_back(m->data(), static_cast<std::size_t>(m->size()));
    return out;
}

template <typename T>
std::vector<std::span<const T>> parameter_spans(const ModulatorSet<T>& set) {
    std::vector<std::span<const T>> out;
    for (const Matrix<T>* m : set.factors()) out.emplace_back(m->data(), static_cast<std::size_t>(m->size()));
    return out;
}

template <typename T>
std::vector<std::span<T>> parameter_spans(DiscriminatorWeights<T>& w) {
    std::vector<std::span<T>> out;
    for (auto& b : w.blocks) {
        out.emplace_back(b.weight.data.data(), b.weight.data.size());
        out.emplace_back(b.bias.data(), b.bias.size());
    }
    out.emplace_back(w.head.weight.data(), static_cast<std::size_t>(w.head.weight.size()));
    out.emplace_back(w.head.bias.data(), static_cast<std::size_t>(w.head.bias.size()));
    return out;
}

#define LFS_INSTANTIATE(T)                                                                                          \
    template struct GeneratorWeights<T>;                                                                            \
    template GeneratorWeights<float> GeneratorWeights<T>::cast<float>() const;                                      \
    template GeneratorWeights<double> GeneratorWeights<T>::cast<double>() const;                                    \
    template struct DiscriminatorWeights<T>;                                                                        \
    template DiscriminatorWeights<float> DiscriminatorWeights<T>::cast<float>() const;                              \
    template DiscriminatorWeights<double> DiscriminatorWeights<T>::cast<double>() const;                            \
    template class Generator<T>;                                                                                    \
    template class Discriminator<T>;                                                                                \
    template class Adam<T>;                                                                                         \
    template ModulatorSet<T> init_identity_set<T>(const GeneratorConfig&, const std::string&, std::size_t, bool,    \
                                                  ActivationKind, std::uint64_t);                                   \
    template Matrix<T> sample_latents<T>(std::size_t, std::size_t, std::mt19937_64&);                              \
    template std::vector<ForwardRecord> generator_forward<T>(const Generator<T>&, const std::type_identity_t<ModulatorSet<T>>*,           \
                                                             const Matrix<T>&);                                     \
    template Activation<T> pack_images<T>(std::span<const std::vector<double>>, std::size_t);                      \
    template Activation<T> pack_images<T>(std::span<const std::vector<float>>, std::size_t);                       \
    template std::vector<std::span<T>> parameter_spans<T>(ModulatorSet<T>&);                                        \
    template std::vector<std::span<const T>> parameter_spans<T>(const ModulatorSet<T>&);                            \
    template std::vector<std::span<T>> parameter_spans<T>(DiscriminatorWeights<T>&);

LFS_INSTANTIATE(float)
LFS_INSTANTIATE(double)

#undef LFS_INSTANTIATE

}  // namespace lfs
